from .controls import ControlSet, control_features, hold_last, pose_window, sample_control_vertices
from .net import (
    DynamicsNet,
    DynamicsSample,
    TrainConfig,
    UntrainedNetError,
    learned_step,
    load_net,
    save_net,
    train_dynamics,
)
from .oracle import oracle_step
from .state import DynamicsConfig, ObjectStateSeq, transform_from_record, transform_to_record

__all__ = [
    "ControlSet", "control_features", "hold_last", "pose_window", "sample_control_vertices", "DynamicsNet",
    "DynamicsSample", "TrainConfig", "UntrainedNetError", "learned_step", "load_net", "save_net",
    "train_dynamics", "oracle_step", "DynamicsConfig", "ObjectStateSeq", "transform_from_record",
    "transform_to_record",
]
