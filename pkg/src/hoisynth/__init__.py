"""Text-guided synthesis of human-object interaction sequences from decoupled stages."""
from .config import ConfigError, RolloutConfig, load_config
from .errors import DivergenceError, GeometryError, HoiError
from .export import InteractionSequence, export_sequence, load_sequence
from .metrics import ContactProfile, contact_profile, metric_cmd, metric_pene, metric_pose_err
from .pipeline import StageError, run_rollout

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "RolloutConfig", "load_config", "DivergenceError", "GeometryError", "HoiError",
    "InteractionSequence", "export_sequence", "load_sequence", "ContactProfile", "contact_profile",
    "metric_cmd", "metric_pene", "metric_pose_err", "StageError", "run_rollout",
]
