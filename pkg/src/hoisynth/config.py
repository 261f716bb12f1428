"""TOML run configuration: file paths, planner and provider choice, and stage settings."""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import HoiError
from .refine import RefineConfig
from .worldmodel import DynamicsConfig, TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(HoiError):
    """The configuration file is missing, malformed or points at files that do not exist."""


@dataclass(frozen=True)
class PlannerSpec:
    kind: str = "rules"  # "rules" or "llm"
    lexicon: Path | None = None
    base_url: str = ""
    model: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    api_key_env: str | None = "OPENAI_API_KEY"
    max_in_flight: int = 4
    template: Path | None = None
    replay: Path | None = None  # recorded exchanges served instead of the network


@dataclass(frozen=True)
class ProviderSpec:
    kind: str = "clips"
    clips: Path | None = None


@dataclass(frozen=True)
class DynamicsSpec:
    backend: str = "oracle"  # "oracle" or "learned"
    net: Path | None = None
    initial_net: Path | None = None
    settings: DynamicsConfig = DynamicsConfig()


@dataclass(frozen=True)
class RetrievalSpec:
    mode: str = "proportional"
    iterations: int = 300
    step: float = 0.01
    body_sdf_cell: float = 0.02


@dataclass(frozen=True)
class TrainSpec:
    samples: int = 2000
    corpus: Path | None = None
    output: Path | None = None
    settings: TrainConfig = TrainConfig()


@dataclass(frozen=True)
class EvalItem:
    text: str
    gt: Path | None = None


@dataclass(frozen=True)
class EvalSpec:
    workers: int = 1
    items: tuple[EvalItem, ...] = ()
    planner_labels: Path | None = None


@dataclass(frozen=True)
class RolloutConfig:
    rig: Path
    db: Path
    text: str = ""
    seed: int = 0
    objects: Path | None = None
    output: Path | None = None
    planner: PlannerSpec = PlannerSpec()
    provider: ProviderSpec = ProviderSpec()
    dynamics: DynamicsSpec = DynamicsSpec()
    refine: RefineConfig = RefineConfig()
    refine_enabled: bool = True
    retrieval: RetrievalSpec = RetrievalSpec()
    export_meshes: bool = False
    gt: Path | None = None
    train: TrainSpec = TrainSpec()
    eval: EvalSpec = EvalSpec()
    source: Path | None = field(default=None, compare=False)

    def with_seed(self, seed: int) -> "RolloutConfig":
        return dataclasses.replace(self, seed=int(seed))

    def with_text(self, text: str, gt: Path | None = None) -> "RolloutConfig":
        return dataclasses.replace(self, text=text, gt=gt)


_TOP_KEYS = {"seed", "text", "rig", "db", "objects", "output", "planner", "provider", "dynamics", "refine",
             "retrieval", "export", "train", "eval"}


def _table(doc: dict, name: str) -> dict:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(value)


def _reject_unknown(section: str, table: dict, allowed) -> None:
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(extra)}")


def _path(base: Path, value, key: str, must_exist: bool = True) -> Path | None:
    if value is None:
        return None
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{key} must be a non-empty path string")
    p = Path(value)
    p = p if p.is_absolute() else base / p
    if must_exist and not p.exists():
        raise ConfigError(f"{key}: {p} does not exist")
    return p


def _dataclass_from(cls, section: str, table: dict, base=None):
    """Build ``cls`` from a table whose keys are a subset of its fields, with type checks."""
    base = base or cls()
    names = {f.name: f for f in dataclasses.fields(cls)}
    _reject_unknown(section, table, names)
    where = section.strip("[]")
    updates = {}
    for key, value in table.items():
        current = getattr(base, key)
        if isinstance(current, bool) or isinstance(value, bool):
            if not isinstance(value, bool) or not isinstance(current, bool):
                raise ConfigError(f"{where}.{key} has the wrong type")
        elif isinstance(current, int) and not isinstance(value, int):
            raise ConfigError(f"{where}.{key} must be an integer")
        elif isinstance(current, float):
            if not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{key} must be a number")
            value = float(value)
        elif isinstance(current, str) and not isinstance(value, str):
            raise ConfigError(f"{where}.{key} must be a string")
        updates[key] = value
    try:
        return dataclasses.replace(base, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _planner(base: Path, t: dict) -> PlannerSpec:
    simple = {k: v for k, v in t.items() if k not in ("lexicon", "template", "replay")}
    spec = _dataclass_from(PlannerSpec, "[planner]", {k: v for k, v in simple.items() if k != "api_key_env"})
    if "api_key_env" in t:
        if t["api_key_env"] is not None and not isinstance(t["api_key_env"], str):
            raise ConfigError("planner.api_key_env must be a string")
        spec = dataclasses.replace(spec, api_key_env=t["api_key_env"] or None)
    spec = dataclasses.replace(
        spec,
        lexicon=_path(base, t.get("lexicon"), "planner.lexicon"),
        template=_path(base, t.get("template"), "planner.template"),
        replay=_path(base, t.get("replay"), "planner.replay"),
    )
    if spec.kind not in ("rules", "llm"):
        raise ConfigError(f"planner.kind must be 'rules' or 'llm', not {spec.kind!r}")
    if spec.kind == "llm" and not (spec.base_url and spec.model):
        raise ConfigError("the llm planner needs planner.base_url and planner.model")
    if spec.timeout <= 0 or spec.max_in_flight < 1 or spec.max_retries < 0:
        raise ConfigError("planner needs timeout > 0, max_in_flight >= 1 and max_retries >= 0")
    return spec


def _dynamics(base: Path, t: dict) -> DynamicsSpec:
    backend = t.pop("backend", "oracle")
    net = _path(base, t.pop("net", None), "dynamics.net")
    initial = _path(base, t.pop("initial_net", None), "dynamics.initial_net")
    settings = _dataclass_from(DynamicsConfig, "[dynamics]", t)
    if backend not in ("oracle", "learned"):
        raise ConfigError(f"dynamics.backend must be 'oracle' or 'learned', not {backend!r}")
    if backend == "learned" and net is None:
        raise ConfigError("the learned dynamics backend needs dynamics.net")
    return DynamicsSpec(backend, net, initial, settings)


def _train(base: Path, t: dict) -> TrainSpec:
    samples = t.pop("samples", 2000)
    if not isinstance(samples, int) or isinstance(samples, bool) or samples < 1:
        raise ConfigError("train.samples must be a positive integer")
    corpus = _path(base, t.pop("corpus", None), "train.corpus")
    output = _path(base, t.pop("output", None), "train.output", must_exist=False)
    return TrainSpec(samples, corpus, output, _dataclass_from(TrainConfig, "[train]", t))


def _eval(base: Path, t: dict) -> EvalSpec:
    _reject_unknown("[eval]", t, {"workers", "items", "planner_labels"})
    workers = t.get("workers", 1)
    if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
        raise ConfigError("eval.workers must be a positive integer")
    items = []
    for i, rec in enumerate(t.get("items", [])):
        if not isinstance(rec, dict) or not isinstance(rec.get("text"), str) or not rec["text"].strip():
            raise ConfigError(f"eval.items[{i}] needs a text")
        _reject_unknown(f"eval.items[{i}]", rec, {"text", "gt"})
        items.append(EvalItem(rec["text"], _path(base, rec.get("gt"), f"eval.items[{i}].gt")))
    return EvalSpec(workers, tuple(items), _path(base, t.get("planner_labels"), "eval.planner_labels"))


def parse_config(doc: dict, base: Path) -> RolloutConfig:
    """Validate a decoded TOML document; relative paths resolve against ``base``."""
    base = Path(base)
    _reject_unknown("the config file", doc, _TOP_KEYS)
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    text = doc.get("text", "")
    if not isinstance(text, str):
        raise ConfigError("text must be a string")
    for key in ("rig", "db"):
        if key not in doc:
            raise ConfigError(f"missing required key {key!r}")
    provider_t = _table(doc, "provider")
    _reject_unknown("[provider]", provider_t, {"kind", "clips"})
    provider = ProviderSpec(provider_t.get("kind", "clips"), _path(base, provider_t.get("clips"), "provider.clips"))
    if provider.kind != "clips":
        raise ConfigError(f"provider.kind must be 'clips', not {provider.kind!r}")
    refine_t = _table(doc, "refine")
    enabled = refine_t.pop("enabled", True)
    if not isinstance(enabled, bool):
        raise ConfigError("refine.enabled must be true or false")
    export_t = _table(doc, "export")
    _reject_unknown("[export]", export_t, {"meshes", "gt"})
    if not isinstance(export_t.get("meshes", False), bool):
        raise ConfigError("export.meshes must be true or false")
    retrieval = _dataclass_from(RetrievalSpec, "[retrieval]", _table(doc, "retrieval"))
    if retrieval.mode not in ("proportional", "argmax"):
        raise ConfigError("retrieval.mode must be 'proportional' or 'argmax'")
    db = _path(base, doc["db"], "db")
    return RolloutConfig(
        rig=_path(base, doc["rig"], "rig"),
        db=db,
        text=text,
        seed=seed,
        objects=_path(base, doc.get("objects"), "objects"),
        output=_path(base, doc.get("output"), "output", must_exist=False),
        planner=_planner(base, _table(doc, "planner")),
        provider=provider,
        dynamics=_dynamics(base, _table(doc, "dynamics")),
        refine=_dataclass_from(RefineConfig, "[refine]", refine_t),
        refine_enabled=enabled,
        retrieval=retrieval,
        export_meshes=export_t.get("meshes", False),
        gt=_path(base, export_t.get("gt"), "export.gt"),
        train=_train(base, _table(doc, "train")),
        eval=_eval(base, _table(doc, "eval")),
    )


def load_config(path) -> RolloutConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(doc, path.resolve().parent)
    return dataclasses.replace(cfg, source=path)
