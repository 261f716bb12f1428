"""Post-hoc refinement of a human-object sequence by gradient descent on pose parameters."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.spatial import cKDTree

from .body import BodyRig, PoseSequence, body_sdf, skin
from .determinism import single_thread
from .errors import DivergenceError
from .geometry import SdfGrid, TriMesh
from .worldmodel.state import ObjectStateSeq

log = logging.getLogger(__name__)
DTYPE = torch.float64
ACTIVE_BAND = 0.05  # object vertices farther than this from the body are skipped until they drift closer


@dataclass(frozen=True)
class RefineConfig:
    w_fit: float = 1.0
    w_vel: float = 1.0
    w_cont: float = 5.0
    w_pene: float = 10.0
    eps: float = 0.02
    iterations: int = 300
    step: float = 0.01
    max_update: float = 0.01  # largest change of any single parameter per iteration
    gate_threshold: float = 0.05
    sdf_cell: float = 0.02
    sdf_margin: float = 0.1
    rebuild_every: int = 25
    huber_delta: float = 1e-3  # width of the rounded corner of |x| in the fit and velocity terms
    softmin_temperature: float = 1e-3
    pene_smoothing: float = 1e-3  # depth over which the penetration hinge blends in
    stall_window: int = 25  # stop once this many accepted steps together gain less than stall_tol
    stall_tol: float = 1e-5  # relative to the current energy

    def __post_init__(self):
        if min(self.w_fit, self.w_vel, self.w_cont, self.w_pene) < 0:
            raise ValueError("energy weights must be nonnegative")
        if self.iterations < 0 or self.step <= 0 or self.eps <= 0 or self.max_update <= 0:
            raise ValueError("need iterations >= 0 and positive step, max_update and eps")
        if min(self.huber_delta, self.softmin_temperature, self.pene_smoothing) <= 0:
            raise ValueError("smoothing widths must be positive")
        if self.stall_window < 1 or self.stall_tol < 0:
            raise ValueError("need stall_window >= 1 and stall_tol >= 0")

    @property
    def weights(self) -> tuple[float, float, float, float]:
        return self.w_fit, self.w_vel, self.w_cont, self.w_pene


@dataclass(frozen=True)
class EnergyReport:
    total: float
    fit: float
    vel: float
    cont: float
    pene: float
    iteration: int = 0
    epoch: int = 0


# --- differentiable kinematics ---------------------------------------------


def rodrigues(rotvec: torch.Tensor) -> torch.Tensor:
    """(..., 3) axis-angle -> (..., 3, 3), with series terms near zero so gradients stay finite."""
    theta2 = (rotvec * rotvec).sum(-1, keepdim=True)
    small = theta2 < 1e-10
    safe2 = torch.where(small, torch.ones_like(theta2), theta2)
    theta = torch.sqrt(safe2)
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / safe2)
    x, y, z = rotvec.unbind(-1)
    zero = torch.zeros_like(x)
    k = torch.stack([zero, -z, y, z, zero, -x, -y, x, zero], -1).reshape(rotvec.shape[:-1] + (3, 3))
    eye = torch.eye(3, dtype=rotvec.dtype).expand(k.shape)
    return eye + a[..., None] * k + b[..., None] * (k @ k)


class TorchRig:
    def __init__(self, rig: BodyRig):
        self.rig = rig
        self.parents = [int(p) for p in rig.parents]
        self.joints = torch.tensor(rig.joints, dtype=DTYPE)
        self.weights = torch.tensor(rig.weights, dtype=DTYPE)
        self.template = torch.tensor(rig.template.vertices, dtype=DTYPE)
        offsets = rig.joints.copy()
        offsets[1:] -= rig.joints[rig.parents[1:]]
        self.offsets = torch.tensor(offsets, dtype=DTYPE)

    def skin(self, params: torch.Tensor, ids: torch.Tensor | None = None) -> torch.Tensor:
        """(L, 3 + 3J) pose parameters -> (L, V, 3) vertices, matching :func:`body.skin`.

        ``ids`` restricts the output to a subset of vertices.
        """
        n_j = len(self.parents)
        root_t = params[:, :3]
        rots = rodrigues(params[:, 3:].reshape(-1, n_j, 3))
        g_rot = [rots[:, 0]]
        g_t = [self.offsets[0].expand(params.shape[0], 3)]
        for j in range(1, n_j):
            p = self.parents[j]
            g_rot.append(g_rot[p] @ rots[:, j])
            g_t.append(g_t[p] + (g_rot[p] @ self.offsets[j][:, None])[..., 0])
        rot = torch.stack(g_rot, 1)  # (L, J, 3, 3)
        trans = torch.stack(g_t, 1) + root_t[:, None, :]
        bind = trans - (rot @ self.joints[None, :, :, None])[..., 0]
        weights, template = (self.weights, self.template) if ids is None else (self.weights[ids], self.template[ids])
        r_blend = torch.einsum("vj,ljab->lvab", weights, rot)
        t_blend = torch.einsum("vj,lja->lva", weights, bind)
        return (r_blend @ template[None, :, :, None])[..., 0] + t_blend


def object_points(params: torch.Tensor, local: torch.Tensor) -> torch.Tensor:
    """(L, 6) [translation, rotvec] -> (L, Vo, 3)."""
    rot = rodrigues(params[:, 3:])
    return torch.einsum("lab,vb->lva", rot, local) + params[:, None, :3]


def _catmull_rom(t: torch.Tensor) -> torch.Tensor:
    """(..., 4) cubic weights for the samples at offsets -1, 0, 1, 2."""
    t2, t3 = t * t, t * t * t
    return 0.5 * torch.stack([-t3 + 2 * t2 - t, 3 * t3 - 5 * t2 + 2, -3 * t3 + 4 * t2 + t, t3 - t2], dim=-1)


class TorchSdf:
    """Tricubic (Catmull-Rom) lookup in one SDF grid per frame, continuously differentiable.

    Points outside a grid add their distance to it.
    """

    def __init__(self, grids: list[SdfGrid]):
        self.grids = list(grids)
        dims = np.array([g.dims for g in self.grids])
        top = dims.max(axis=0)
        # One extra edge-valued layer on every side keeps the 4x4x4 stencil inside the array.
        values = np.stack([np.pad(g.values.astype(np.float64), [(1, t - d + 1) for t, d in zip(top, g.dims)],
                                  mode="edge") for g in self.grids])
        shape = values.shape[1:]
        self.values = torch.tensor(values, dtype=DTYPE).reshape(len(self.grids), -1)  # (L, X*Y*Z)
        self.strides = torch.tensor([shape[1] * shape[2], shape[2], 1])
        k = np.arange(4)
        self.stencil = torch.tensor((k[:, None, None] * shape[1] * shape[2] + k[None, :, None] * shape[2]
                                     + k[None, None, :]).reshape(-1))
        self.origin = torch.tensor(np.stack([g.origin for g in self.grids]), dtype=DTYPE)[:, None, :]
        self.upper = torch.tensor(np.stack([g.upper for g in self.grids]), dtype=DTYPE)[:, None, :]
        self.cell = torch.tensor([float(g.cell) for g in self.grids], dtype=DTYPE)[:, None, None]
        self.last = torch.tensor(dims - 2)[:, None, :]

    def __call__(self, p: torch.Tensor) -> torch.Tensor:
        """(L, P, 3) world points -> (L, P) signed distances."""
        clamped = torch.minimum(torch.maximum(p, self.origin), self.upper)
        ex2 = ((p - clamped) ** 2).sum(-1)
        outside = ex2 > 0
        excess = torch.where(outside, torch.sqrt(torch.where(outside, ex2, torch.ones_like(ex2))), torch.zeros_like(ex2))
        u = (clamped - self.origin) / self.cell
        i0 = torch.minimum(torch.clamp(torch.floor(u.detach()).long(), min=0), self.last)
        w = _catmull_rom(u - i0)  # (L, P, 3, 4)
        # In padded coordinates the stencil starts at i0 - 1 + 1.
        base = (i0 * self.strides).sum(-1)
        flat = (base[..., None] + self.stencil).reshape(p.shape[0], -1)
        cube = torch.gather(self.values, 1, flat).reshape(p.shape[:2] + (4, 4, 4))
        return torch.einsum("lpabc,lpa,lpb,lpc->lp", cube, w[:, :, 0], w[:, :, 1], w[:, :, 2]) + excess


def soft_abs(x: torch.Tensor, delta: float) -> torch.Tensor:
    """sqrt(x^2 + delta^2) - delta: |x| with a smooth corner, zero at zero."""
    return torch.sqrt(x * x + delta * delta) - delta


def soft_hinge(u: torch.Tensor, tau: float) -> torch.Tensor:
    """max(u, 0) with a twice-differentiable blend over [0, tau]; exactly zero for u <= 0."""
    t = torch.clamp(u / tau, 0.0, 1.0)
    return torch.where(u >= tau, u - 0.5 * tau, tau * (t ** 3 - 0.5 * t ** 4))


# --- problem setup ----------------------------------------------------------


def contact_set(human_vertices, object_vertices, eps: float) -> list[np.ndarray]:
    """Per frame, the human vertices within ``eps`` of some object vertex (sorted indices)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = []
    for hv, ov in zip(np.asarray(human_vertices), np.asarray(object_vertices)):
        d, _ = cKDTree(ov).query(hv, distance_upper_bound=eps * (1 + 1e-12) + 1e-15)
        out.append(np.flatnonzero(d <= eps))
    return out


def frame_sdfs(rig: BodyRig, human: PoseSequence, object_seq: ObjectStateSeq, mesh: TriMesh,
               cell: float, margin: float) -> list[SdfGrid]:
    """Body SDF per frame over a region around the posed object."""
    grids = []
    for pose, opose in zip(human.frames, object_seq.frames):
        pts = opose.apply(mesh.vertices)
        bounds = (pts.min(axis=0) - margin, pts.max(axis=0) + margin)
        grids.append(body_sdf(rig, pose, cell, padding=0.0, bounds=bounds))
    return grids


class RefineProblem:
    """Energy of an iterate against a fixed reference, with frozen contact sets and body SDFs."""

    def __init__(self, rig: BodyRig, mesh: TriMesh, ref_human: PoseSequence, ref_object: ObjectStateSeq,
                 config: RefineConfig = RefineConfig(), grids: list[SdfGrid] | None = None, contacts=None,
                 trig: TorchRig | None = None):
        if len(ref_human) != len(ref_object):
            raise ValueError(f"human has {len(ref_human)} frames, object has {len(ref_object)}")
        self.rig, self.mesh, self.config = rig, mesh, config
        self.trig = trig or TorchRig(rig)
        self.ref_h = torch.tensor(ref_human.params(), dtype=DTYPE)
        self.ref_o = torch.tensor(ref_object.params(), dtype=DTYPE)
        self.local = torch.tensor(mesh.vertices, dtype=DTYPE)
        self.frame_rate = ref_human.frame_rate
        if contacts is None:
            hv = np.stack([skin(rig, f) for f in ref_human.frames])
            ov = np.stack([p.apply(mesh.vertices) for p in ref_object.frames])
            contacts = contact_set(hv, ov, config.eps)
        self.contacts = [np.asarray(c, dtype=np.int64) for c in contacts]
        if len(self.contacts) != self.n_frames:
            raise ValueError("need one contact set per frame")
        # Only vertices that appear in some contact set are skinned.
        union = np.unique(np.concatenate([np.zeros(0, np.int64)] + self.contacts))
        width = max([len(c) for c in self.contacts] + [0])
        slots = np.zeros((self.n_frames, width), dtype=np.int64)
        mask = np.zeros((self.n_frames, width), dtype=bool)
        for i, c in enumerate(self.contacts):
            slots[i, : len(c)] = np.searchsorted(union, c)
            mask[i, : len(c)] = True
        self._union = torch.tensor(union)
        self._slots = torch.tensor(slots)
        self._mask = torch.tensor(mask, dtype=DTYPE)
        self.radius = float(np.linalg.norm(mesh.vertices, axis=1).max())
        self.band: float | None = None
        self._active = None
        self.set_grids(grids)

    @property
    def n_frames(self) -> int:
        return self.ref_h.shape[0]

    def set_grids(self, grids):
        if grids is not None and len(grids) != self.n_frames:
            raise ValueError("need one body SDF per frame")
        self.grids = None if grids is None else TorchSdf(grids)
        self._active = None

    def use_band(self, band: float | None) -> None:
        """Evaluate contact and penetration only on object vertices that can matter.

        Candidates are reselected whenever the iterate may have moved any relevant vertex by
        more than ``band / 2`` since the last selection, which keeps energies exact. ``None``
        evaluates every object vertex.
        """
        if band is not None and band <= 0:
            raise ValueError("band must be positive")
        self.band = band
        self._active = None

    @staticmethod
    def _padded(keep: torch.Tensor):
        width = max(1, int(keep.sum(dim=1).max()))
        ids = torch.zeros((keep.shape[0], width), dtype=torch.long)
        valid = torch.zeros((keep.shape[0], width), dtype=torch.bool)
        for i in range(keep.shape[0]):
            k = torch.nonzero(keep[i]).reshape(-1)
            ids[i, : len(k)] = k
            valid[i, : len(k)] = True
        return ids, valid

    def _select(self, xo: torch.Tensor, pts: torch.Tensor | None) -> None:
        band = self.band
        ov = object_points(xo, self.local)
        pene = None
        if self.grids is not None:
            pene = self._padded(self.grids(ov) < band)
        cont = None
        if pts is not None:
            d2 = ((pts[:, :, None, :] - ov[:, None, :, :]) ** 2).sum(-1)
            reach = torch.sqrt(d2.min(dim=2, keepdim=True).values) + band
            near = (d2 <= reach * reach) & (self._mask[:, :, None] > 0)
            cont = self._padded(near.any(dim=1))
        self._active = {"xo": xo.clone(), "pts": None if pts is None else pts.clone(), "pene": pene, "cont": cont}

    def _drift(self, xo: torch.Tensor, pts: torch.Tensor | None) -> float:
        a = self._active
        obj = (xo[:, :3] - a["xo"][:, :3]).norm(dim=1) + (xo[:, 3:] - a["xo"][:, 3:]).norm(dim=1) * self.radius
        move = float(obj.max())
        if pts is not None:
            move += float((pts - a["pts"]).norm(dim=-1).max())
        return move

    def _gather(self, xo: torch.Tensor, sel):
        """Posed object vertices (L, m, 3) for a padded selection, or all of them."""
        if sel is None:
            return object_points(xo, self.local), None
        ids, valid = sel
        rot = rodrigues(xo[:, 3:])
        return torch.einsum("lab,lmb->lma", rot, self.local[ids]) + xo[:, None, :3], valid

    def terms(self, xh: torch.Tensor, xo: torch.Tensor, smooth: bool = True) -> dict[str, torch.Tensor]:
        cfg = self.config
        if xh.shape != self.ref_h.shape or xo.shape != self.ref_o.shape:
            raise ValueError("iterate and reference lengths differ")
        l1 = (lambda x: soft_abs(x, cfg.huber_delta)) if smooth else torch.abs
        fit = l1(xh - self.ref_h).sum() + l1(xo - self.ref_o).sum()
        vel = l1(xh[1:] - xh[:-1]).sum() + l1(xo[1:] - xo[:-1]).sum()
        zero = xh.new_zeros(())
        want_cont = (cfg.w_cont > 0 or not smooth) and self._slots.shape[1] > 0
        pts = None
        if want_cont:
            hv = self.trig.skin(xh, self._union)
            pts = hv[torch.arange(self.n_frames)[:, None], self._slots]  # (L, n, 3)
        sel_cont = sel_pene = None
        if self.band is not None:
            with torch.no_grad():
                p_det = None if pts is None else pts.detach()
                if self._active is None or self._drift(xo.detach(), p_det) > 0.5 * self.band:
                    self._select(xo.detach(), p_det)
            sel_cont, sel_pene = self._active["cont"], self._active["pene"]
        cont = zero
        if want_cont:
            ov, valid = self._gather(xo, sel_cont)
            d2 = ((pts[:, :, None, :] - ov[:, None, :, :]) ** 2).sum(-1)  # (L, n, m)
            if valid is not None:
                d2 = torch.where(valid[:, None, :], d2, torch.full_like(d2, 1e6))
            if smooth:
                d = torch.sqrt(d2 + 1e-12)
                w = torch.softmax(-d / cfg.softmin_temperature, dim=2)
                per = (w * d).sum(-1)
            else:
                per = torch.sqrt(d2.min(dim=2).values)
            cont = (per * self._mask).sum()
        pene = zero
        if self.grids is not None:
            ov, valid = self._gather(xo, sel_pene)
            sd = self.grids(ov)
            depth = soft_hinge(-sd, cfg.pene_smoothing) if smooth else torch.relu(-sd)
            pene = (depth if valid is None else depth * valid).sum()
        w = cfg.weights
        total = w[0] * fit + w[1] * vel + w[2] * cont + w[3] * pene
        return {"total": total, "fit": fit, "vel": vel, "cont": cont, "pene": pene}

    def report(self, xh, xo, smooth: bool = True, iteration: int = 0, epoch: int = 0) -> EnergyReport:
        with torch.no_grad():
            t = self.terms(xh, xo, smooth)
        return _report(t, iteration, epoch)

    def gradient(self, xh: torch.Tensor, xo: torch.Tensor, term: str = "total"):
        """(value, d/dhuman, d/dobject) of one smoothed term."""
        _, gh, go, t = self._gradient(xh, xo, term)
        return float(t[term]), gh, go

    def _gradient(self, xh, xo, term="total"):
        xh = xh.detach().clone().requires_grad_(True)
        xo = xo.detach().clone().requires_grad_(True)
        t = self.terms(xh, xo)
        val = t[term]
        if not val.requires_grad:
            return val.item(), torch.zeros_like(xh), torch.zeros_like(xo), t
        gh, go = torch.autograd.grad(val, (xh, xo), allow_unused=True)
        gh = torch.zeros_like(xh) if gh is None else gh
        go = torch.zeros_like(xo) if go is None else go
        return val.item(), gh.detach(), go.detach(), {k: v.detach() for k, v in t.items()}


def _report(t, iteration: int = 0, epoch: int = 0) -> EnergyReport:
    return EnergyReport(float(t["total"]), float(t["fit"]), float(t["vel"]), float(t["cont"]), float(t["pene"]),
                        iteration, epoch)


def sequences_to_params(human: PoseSequence, obj: ObjectStateSeq) -> tuple[torch.Tensor, torch.Tensor]:
    return torch.tensor(human.params(), dtype=DTYPE), torch.tensor(obj.params(), dtype=DTYPE)


def params_to_sequences(xh, xo, frame_rate: float) -> tuple[PoseSequence, ObjectStateSeq]:
    return (PoseSequence.from_params(xh.detach().numpy(), frame_rate),
            ObjectStateSeq.from_params(xo.detach().numpy(), frame_rate))


def energy(rig: BodyRig, mesh: TriMesh, human: PoseSequence, obj: ObjectStateSeq, ref_human: PoseSequence,
           ref_object: ObjectStateSeq, config: RefineConfig = RefineConfig(), smooth: bool = False,
           grids: list[SdfGrid] | None = None) -> EnergyReport:
    """Energy of an iterate; body SDFs default to those of the iterate's own poses."""
    if len(human) != len(ref_human) or len(obj) != len(ref_object) or len(human) != len(obj):
        raise ValueError("iterate and reference lengths differ")
    if grids is None:
        grids = frame_sdfs(rig, human, obj, mesh, config.sdf_cell, config.sdf_margin)
    prob = RefineProblem(rig, mesh, ref_human, ref_object, config, grids)
    xh, xo = sequences_to_params(human, obj)
    return prob.report(xh, xo, smooth)


@dataclass
class RefineResult:
    human: PoseSequence
    object: ObjectStateSeq
    gated: bool
    trace: list[EnergyReport] = field(default_factory=list)
    initial: EnergyReport | None = None
    final: EnergyReport | None = None
    initial_exact: EnergyReport | None = None
    final_exact: EnergyReport | None = None


def refine(rig: BodyRig, mesh: TriMesh, ref_human: PoseSequence, ref_object: ObjectStateSeq,
           config: RefineConfig = RefineConfig(), fixed_frames=None) -> RefineResult:
    """Gated gradient descent with step halving; accepted steps strictly lower the energy.

    Every ``rebuild_every`` iterations the body SDFs are rebuilt from the iterate if any body
    vertex moved more than a quarter cell since the last build. A rebuild starts a new epoch
    in the trace, and monotonicity holds within each epoch.
    """
    with single_thread():
        return _refine(rig, mesh, ref_human, ref_object, config, fixed_frames)


def _refine(rig, mesh, ref_human, ref_object, config, fixed_frames) -> RefineResult:
    grids = frame_sdfs(rig, ref_human, ref_object, mesh, config.sdf_cell, config.sdf_margin)
    prob = RefineProblem(rig, mesh, ref_human, ref_object, config, grids)
    xh, xo = sequences_to_params(ref_human, ref_object)
    free = torch.ones(prob.n_frames, 1, dtype=DTYPE)
    if fixed_frames is not None:
        free[torch.as_tensor(np.asarray(fixed_frames, dtype=bool))] = 0.0
    first = prob.report(xh, xo)
    first_exact = prob.report(xh, xo, smooth=False)
    if first.total <= config.gate_threshold:
        return RefineResult(ref_human, ref_object, True, [first], first, first, first_exact, first_exact)
    prob.use_band(ACTIVE_BAND)
    total, gh, go, t = prob._gradient(xh, xo)
    trace = [_report(t)]
    step = config.step
    epoch = 0
    recent = [total]
    with torch.no_grad():
        built_v = prob.trig.skin(xh)
    for it in range(1, config.iterations + 1):
        if it % config.rebuild_every == 0:
            with torch.no_grad():
                verts = prob.trig.skin(xh)
            if float((verts - built_v).norm(dim=-1).max()) > 0.25 * config.sdf_cell:
                h_seq, o_seq = params_to_sequences(xh, xo, prob.frame_rate)
                prob.set_grids(frame_sdfs(rig, h_seq, o_seq, mesh, config.sdf_cell, config.sdf_margin))
                built_v = verts
                epoch += 1
                total, gh, go, t = prob._gradient(xh, xo)
                trace.append(_report(t, it, epoch))
                recent = [total]
        if not np.isfinite(total) or not (torch.isfinite(gh).all() and torch.isfinite(go).all()):
            raise DivergenceError(f"refinement energy diverged at iteration {it}", trace)
        gh, go = gh * free, go * free
        g_max = float(max(gh.abs().max(), go.abs().max()))
        if g_max == 0.0:
            break
        step = min(step, config.max_update / g_max)
        accepted = False
        while step > 1e-14:
            ch, co = xh - step * gh, xo - step * go
            with torch.no_grad():
                cand = float(prob.terms(ch, co)["total"])
            if not np.isfinite(cand):
                raise DivergenceError(f"refinement energy diverged at iteration {it}", trace)
            if cand < total:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            log.debug("refine: no descent step at iteration %d", it)
            break
        xh, xo = ch, co
        step = min(2.0 * step, config.step)
        total, gh, go, t = prob._gradient(xh, xo)
        trace.append(_report(t, it, epoch))
        recent.append(total)
        if len(recent) > config.stall_window:
            if recent[-config.stall_window - 1] - total <= config.stall_tol * abs(total):
                log.debug("refine: stalled at iteration %d", it)
                break
            del recent[0]
    human, obj = params_to_sequences(xh, xo, prob.frame_rate)
    if fixed_frames is not None:
        # Hand back the caller's frames untouched rather than a parameter round trip of them.
        keep = np.asarray(fixed_frames, dtype=bool)
        human = PoseSequence(tuple(r if k else f for f, r, k in zip(human.frames, ref_human.frames, keep)),
                             human.frame_rate)
        obj = ObjectStateSeq(tuple(r if k else f for f, r, k in zip(obj.frames, ref_object.frames, keep)),
                             obj.frame_rate)
    prob.set_grids(frame_sdfs(rig, human, obj, mesh, config.sdf_cell, config.sdf_margin))
    prob.use_band(None)
    return RefineResult(human, obj, False, trace, first, prob.report(xh, xo), first_exact,
                        prob.report(xh, xo, smooth=False))


def write_trace_csv(trace, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "epoch", "total", "fit", "vel", "cont", "pene"])
        for r in trace:
            w.writerow([r.iteration, r.epoch, repr(r.total), repr(r.fit), repr(r.vel), repr(r.cont), repr(r.pene)])
