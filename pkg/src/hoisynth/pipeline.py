"""One text-to-interaction rollout: plan, first action, initial object state, then segment by segment."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .body import BodyPose, BodyRig, PoseSequence, body_sdf, load_rig, skin
from .config import PlannerSpec, RolloutConfig
from .errors import HoiError
from .export import InteractionSequence, export_sequence, load_sequence
from .geometry import SdfGrid, TriMesh, load_obj
from .motion import ActionProvider, ClipProvider, load_library
from .planning import (
    LlmClient,
    LlmEndpoint,
    Plan,
    ReplayTransport,
    load_lexicon,
    load_recording,
    load_template,
    plan_llm,
    plan_rules,
)
from .refine import RefineResult, refine
from .retrieval import FitSettings, InteractionDB, load_db, retrieve_initial_state
from .worldmodel import (
    DynamicsNet,
    ObjectStateSeq,
    control_features,
    learned_step,
    load_net,
    oracle_step,
    pose_window,
    sample_control_vertices,
)
from .worldmodel.corpus import object_grid

log = logging.getLogger(__name__)

STAGES = ("load", "plan", "motion", "retrieve", "dynamics", "refine", "export")


class StageError(HoiError):
    """A rollout stage failed. ``partial`` is whatever sequence had been assembled by then."""

    def __init__(self, stage: str, cause: BaseException, partial: InteractionSequence | None = None):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.partial = partial
        self.persisted: Path | None = None


class _Stage:
    def __init__(self, runner: "RolloutRunner", name: str):
        self.runner, self.name = runner, name

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        if exc is None or isinstance(exc, StageError) or not isinstance(exc, Exception):
            return False
        raise StageError(self.name, exc, self.runner.partial()) from exc


def make_planner(spec: PlannerSpec, categories, part_names) -> Callable[[str], Plan]:
    """Text -> Plan callable for the configured planner."""
    if spec.kind == "rules":
        lexicon = load_lexicon(spec.lexicon)
        return lambda text: plan_rules(text, lexicon)
    endpoint = LlmEndpoint(spec.base_url, spec.model, spec.timeout, spec.max_retries, spec.api_key_env)
    transport = ReplayTransport(load_recording(spec.replay)) if spec.replay is not None else None
    client = LlmClient(endpoint, transport, spec.max_in_flight)
    template = load_template(spec.template)
    cats, parts = list(categories), list(part_names)
    return lambda text: plan_llm(client, template, text, cats, parts)


@dataclass
class Assets:
    rig: BodyRig
    db: InteractionDB
    provider: ActionProvider
    net: DynamicsNet | None = None
    initial_net: DynamicsNet | None = None


def load_assets(config: RolloutConfig) -> Assets:
    rig = load_rig(config.rig)
    db = load_db(config.db)
    if config.objects is not None:
        manifest = json.loads(config.objects.read_text(encoding="utf-8"))
        for cat, rel in manifest.get("objects", {}).items():
            db.add_template(cat, load_obj(config.objects.parent / rel))
    if config.provider.clips is None:
        raise ValueError("provider.clips is not set")
    provider = ClipProvider(load_library(config.provider.clips), config.dynamics.settings.m)
    net = initial = None
    if config.dynamics.backend == "learned":
        net = load_net(config.dynamics.net)
        if config.dynamics.initial_net is not None:
            initial = load_net(config.dynamics.initial_net)
    return Assets(rig, db, provider, net, initial)


def _tail(frames, n: int) -> list:
    """The last ``n`` frames, padded at the front with the first one when the clip is shorter."""
    frames = list(frames)[-n:]
    return [frames[0]] * (n - len(frames)) + frames


def world_step(rig: BodyRig, mesh: TriMesh, grid: SdfGrid, human: PoseSequence, prev: ObjectStateSeq,
               delta1: float, delta2: float, net: DynamicsNet | None = None) -> tuple[ObjectStateSeq, int]:
    """Forecast the object over ``len(human) - len(prev)`` frames; returns (forecast, control count).

    ``human`` covers the history frames followed by the forecast frames.
    """
    history = len(prev)
    future = len(human) - history
    verts = np.stack([skin(rig, f) for f in human.frames])
    ids = sample_control_vertices(verts[:history], grid, prev.frames, delta1, delta2)
    controls = control_features(rig, ids, verts[:, ids], mesh, pose_window(prev.frames, history, future))
    pred = oracle_step(prev, controls) if net is None else learned_step(net, prev, controls)
    return pred, len(ids)


def _energy(r) -> float | None:
    return None if r is None else float(r.total)


class RolloutRunner:
    """Runs one rollout; after :meth:`run` the plan, object mesh and refine results stay available."""

    def __init__(self, config: RolloutConfig, assets: Assets | None = None,
                 planner: Callable[[str], Plan] | None = None):
        self.config = config
        self._assets = assets
        self._planner = planner
        self.plan: Plan | None = None
        self.mesh: TriMesh | None = None
        self.refine_results: list[RefineResult] = []
        self.timings: dict[str, float] = {}
        self._human: list[BodyPose] = []
        self._object: list = []
        self._provenance: list[dict] = []

    @property
    def assets(self) -> Assets:
        return self._assets

    def partial(self) -> InteractionSequence | None:
        n = min(len(self._human), len(self._object))
        if n == 0:
            return None
        rate = self._assets.provider.frame_rate if self._assets else 30.0
        return InteractionSequence(PoseSequence(tuple(self._human[:n]), rate), ObjectStateSeq(tuple(self._object[:n]), rate),
                                   self.plan.object_category if self.plan else "", tuple(self._provenance))

    def _stage(self, name: str) -> _Stage:
        return _Stage(self, name)

    def _refine(self, human: PoseSequence, obj: ObjectStateSeq, n_fixed: int, prov: dict):
        cfg = self.config
        if not cfg.refine_enabled:
            prov.update(refined=False, gated=None, iterations=0, energy_before=None, energy_after=None)
            return human, obj
        fixed = np.arange(len(human)) < n_fixed if n_fixed else None
        res = refine(self._assets.rig, self.mesh, human, obj, cfg.refine, fixed_frames=fixed)
        self.refine_results.append(res)
        prov.update(refined=not res.gated, gated=res.gated, iterations=max(0, len(res.trace) - 1),
                    energy_before=_energy(res.initial), energy_after=_energy(res.final))
        return res.human, res.object

    def run(self) -> InteractionSequence:
        cfg = self.config
        dyn = cfg.dynamics.settings
        t0 = time.perf_counter()
        with self._stage("load"):
            if self._assets is None:
                self._assets = load_assets(cfg)
            rig, db, provider = self._assets.rig, self._assets.db, self._assets.provider
            planner = self._planner or make_planner(cfg.planner, db.categories, rig.part_names)
        with self._stage("plan"):
            if not cfg.text.strip():
                raise ValueError("no description text configured")
            self.plan = planner(cfg.text)
            log.info("plan: %s with %s", self.plan.object_category, ", ".join(self.plan.contact_parts))
        with self._stage("motion"):
            a1 = provider.initial_action(self.plan, cfg.seed)
        with self._stage("retrieve"):
            self.mesh = db.template(self.plan.object_category)
            grid0 = body_sdf(rig, a1[0], cfg.retrieval.body_sdf_cell)
            settings = FitSettings(cfg.retrieval.iterations, cfg.retrieval.step)
            chosen, results = retrieve_initial_state(db, self.plan.contact_parts, self.plan.object_category,
                                                     skin(rig, a1[0]), grid0, np.random.default_rng([cfg.seed, 1]),
                                                     settings=settings, mode=cfg.retrieval.mode)
            ogrid = object_grid(self.mesh)
        self.timings["setup"] = time.perf_counter() - t0
        with self._stage("dynamics"):
            # The first forecast sees only the retrieved state and the rest of the opening action.
            s1 = ObjectStateSeq((chosen.object_state,), provider.frame_rate)
            window = a1 + provider.lookahead(dyn.initial_future - (len(a1) - 1))
            net0 = self._assets.initial_net
            pred, n_ctrl = world_step(rig, self.mesh, ogrid, window, s1, dyn.delta1, dyn.delta2, net0)
            obj1 = s1 + pred[: len(a1) - 1] if len(a1) > 1 else s1
        prov = {"segment": 0, "start": 0, "stop": len(a1), "dynamics": "learned" if net0 is not None else "oracle",
                "history": 1, "future": dyn.initial_future, "n_controls": n_ctrl,
                "retrieval": {"source_id": chosen.source_id, "e_fit": chosen.e_fit, "e_cont": chosen.e_cont,
                              "e_pene": chosen.e_pene, "candidates": len(results)}}
        with self._stage("refine"):
            h_ref, o_ref = self._refine(a1, obj1, 0, prov)
        self._human.extend(h_ref.frames)
        self._object.extend(o_ref.frames)
        self._provenance.append(prov)
        actions = [a1]
        end = provider.exhausted
        while not end:
            k = len(self._provenance)
            with self._stage("motion"):
                action, end = provider.next_action(self._object[-1], actions, self.plan, cfg.seed)
                actions.append(action)
                future = provider.lookahead(dyn.future - len(action))
            with self._stage("dynamics"):
                prev = ObjectStateSeq(tuple(_tail(self._object, dyn.history)), provider.frame_rate)
                hist = PoseSequence(tuple(_tail(self._human, dyn.history)), provider.frame_rate)
                net = self._assets.net
                pred, n_ctrl = world_step(rig, self.mesh, ogrid, hist + action + future, prev, dyn.delta1,
                                          dyn.delta2, net)
                new_obj = pred[: len(action)]
            start = len(self._human)
            prov = {"segment": k, "start": start, "stop": start + len(action),
                    "dynamics": "learned" if net is not None else "oracle", "history": dyn.history,
                    "future": dyn.future, "n_controls": n_ctrl}
            with self._stage("refine"):
                # The previous segment rides along, frozen, so the velocity term sees the seam.
                lead = self._provenance[-1]["stop"] - self._provenance[-1]["start"]
                h_win = PoseSequence(tuple(self._human[-lead:]), provider.frame_rate) + action
                o_win = ObjectStateSeq(tuple(self._object[-lead:]), provider.frame_rate) + new_obj
                h_ref, o_ref = self._refine(h_win, o_win, lead, prov)
            self._human.extend(h_ref.frames[lead:])
            self._object.extend(o_ref.frames[lead:])
            self._provenance.append(prov)
        self.timings["total"] = time.perf_counter() - t0
        return self.partial()


def run_rollout(config: RolloutConfig, assets: Assets | None = None) -> InteractionSequence:
    return RolloutRunner(config, assets).run()


def persist_failure(err: StageError, directory) -> Path:
    """Write the failing stage, message and any partial sequence under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    info = {"stage": err.stage, "error": str(err.cause), "error_type": type(err.cause).__name__,
            "frames": len(err.partial) if err.partial is not None else 0}
    (directory / "failure.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if err.partial is not None:
        export_sequence(err.partial, directory / "partial")
    err.persisted = directory
    return directory


def load_ground_truth(path) -> InteractionSequence:
    return load_sequence(path)


def rollout_to_dir(config: RolloutConfig, output=None, assets: Assets | None = None) -> tuple[InteractionSequence, Path]:
    """Run, then export sequence, metadata and metrics; a failure is persisted before re-raising."""
    output = Path(output) if output is not None else config.output
    if output is None:
        raise ValueError("no output directory configured")
    runner = RolloutRunner(config, assets)
    try:
        seq = runner.run()
    except StageError as err:
        persist_failure(err, output)
        raise
    try:
        gt = load_ground_truth(config.gt) if config.gt is not None else None
        meta = {"text": config.text, "seed": config.seed, "plan": runner.plan.to_record(),
                "dynamics_backend": config.dynamics.backend}
        export_sequence(seq, output, runner.assets.rig, runner.mesh, config.export_meshes, gt, meta)
    except Exception as exc:
        err = StageError("export", exc, seq)
        persist_failure(err, output)
        raise err from exc
    return seq, output
