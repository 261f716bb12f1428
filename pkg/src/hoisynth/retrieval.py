"""Contact-map database and the handcrafted initial object pose fit."""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DivergenceError, HoiError
from .geometry import (
    RigidTransform,
    SdfGrid,
    TriMesh,
    kabsch_fit,
    load_obj,
    penetration_depth,
    query_sdf_grad,
    rotvec_to_matrix,
    save_obj,
)
from .geometry.transforms import orthonormalize

DEFAULT_CONTACT_THRESHOLD = 0.03
PART_SEPARATOR = "+"


class RetrievalError(HoiError):
    pass


def part_key(parts) -> str:
    """Canonical database key for one or several body parts."""
    if isinstance(parts, str):
        parts = parts.split(PART_SEPARATOR)
    return PART_SEPARATOR.join(sorted({p.strip().lower() for p in parts if p.strip()}))


@dataclass(frozen=True)
class ContactMap:
    part: str
    category: str
    pairs: tuple[tuple[int, int], ...]
    source_id: str = ""

    def __post_init__(self):
        pairs = tuple((int(h), int(o)) for h, o in self.pairs)
        if not pairs:
            raise ValueError("contact map needs at least one pair")
        if len(set(pairs)) != len(pairs):
            raise ValueError("duplicate contact pairs")
        if min(min(p) for p in pairs) < 0:
            raise ValueError("negative vertex index in contact map")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "part", part_key(self.part))
        object.__setattr__(self, "category", self.category.strip().lower())

    @property
    def key(self) -> tuple[str, str]:
        return self.part, self.category

    @property
    def human_ids(self) -> np.ndarray:
        return np.array([h for h, _ in self.pairs], dtype=np.int64)

    @property
    def object_ids(self) -> np.ndarray:
        return np.array([o for _, o in self.pairs], dtype=np.int64)

    def to_record(self) -> dict:
        return {"part": self.part, "category": self.category, "pairs": [list(p) for p in self.pairs],
                "source_id": self.source_id}

    @classmethod
    def from_record(cls, rec: dict) -> "ContactMap":
        return cls(rec["part"], rec["category"], tuple(tuple(p) for p in rec["pairs"]), rec.get("source_id", ""))


class InteractionDB:
    """Multimap (part key, category) -> ContactMap plus one template mesh per category.

    Reads work on snapshots; ingestion holds a lock.
    """

    def __init__(self, part_names, object_templates: dict[str, TriMesh] | None = None):
        self.part_names = tuple(part_names)
        self.object_templates: dict[str, TriMesh] = {}
        self._entries: list[ContactMap] = []
        self._lock = threading.Lock()
        for cat, mesh in (object_templates or {}).items():
            self.add_template(cat, mesh)

    def add_template(self, category: str, mesh: TriMesh) -> None:
        with self._lock:
            self.object_templates[category.strip().lower()] = mesh

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(sorted(self.object_templates))

    @property
    def entries(self) -> tuple[ContactMap, ...]:
        return tuple(self._entries)

    def __len__(self):
        return len(self._entries)

    def template(self, category: str) -> TriMesh:
        try:
            return self.object_templates[category.strip().lower()]
        except KeyError:
            raise RetrievalError(f"unknown object category {category!r}; known: {', '.join(self.categories)}") from None

    def _check_part(self, part: str) -> str:
        key = part_key(part)
        unknown = [p for p in key.split(PART_SEPARATOR) if p not in self.part_names]
        if unknown or not key:
            raise RetrievalError(f"unknown body part {unknown or part!r}; valid parts: {', '.join(self.part_names)}")
        return key

    def add(self, cmap: ContactMap) -> None:
        self._check_part(cmap.part)
        n_o = self.template(cmap.category).n_vertices
        if cmap.object_ids.max() >= n_o:
            raise RetrievalError(f"object index out of range for {cmap.category!r} ({n_o} vertices)")
        with self._lock:
            self._entries.append(cmap)

    def query(self, part, category: str) -> list[ContactMap]:
        key = (part_key(part), category.strip().lower())
        return [m for m in self.entries if m.key == key]


def ingest_frame(db: InteractionDB, body_vertices, object_pose: RigidTransform, part, category: str,
                 contact_threshold: float = DEFAULT_CONTACT_THRESHOLD, source_id: str = "",
                 object_mesh: TriMesh | None = None) -> ContactMap | None:
    """Record every body vertex within ``contact_threshold`` of its nearest object vertex.

    Returns None (nothing stored) when no vertex is close enough.
    """
    if contact_threshold <= 0:
        raise ValueError("contact_threshold must be positive")
    key = db._check_part(part)
    template = db.template(category)
    mesh = template if object_mesh is None else object_mesh
    if mesh.n_vertices != template.n_vertices:
        raise RetrievalError("object mesh does not match the category template")
    posed = object_pose.apply(mesh.vertices)
    dist, idx = cKDTree(posed).query(np.asarray(body_vertices, dtype=np.float64))
    hits = np.flatnonzero(dist <= contact_threshold)
    if hits.size == 0:
        return None
    cmap = ContactMap(key, category, tuple((int(h), int(idx[h])) for h in hits), source_id)
    db.add(cmap)
    return cmap


# --- persistence ------------------------------------------------------------

MAPS_FILE = "contact_maps.jsonl"
MANIFEST_FILE = "objects.json"


def save_db(db: InteractionDB, directory) -> Path:
    directory = Path(directory)
    (directory / "objects").mkdir(parents=True, exist_ok=True)
    manifest = {"parts": list(db.part_names), "objects": {}}
    for cat in db.categories:
        rel = f"objects/{cat}.obj"
        save_obj(db.object_templates[cat], directory / rel)
        manifest["objects"][cat] = rel
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    lines = [json.dumps(m.to_record()) for m in db.entries]
    (directory / MAPS_FILE).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return directory


def load_db(directory) -> InteractionDB:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_FILE).read_text(encoding="utf-8"))
    db = InteractionDB(manifest["parts"])
    for cat, rel in manifest["objects"].items():
        db.add_template(cat, load_obj(directory / rel))
    maps_path = directory / MAPS_FILE
    if maps_path.exists():
        for line in maps_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                db.add(ContactMap.from_record(json.loads(line)))
    return db


# --- initial pose fit -------------------------------------------------------


@dataclass(frozen=True)
class RetrievalWeights:
    fit: float = 1.0
    cont: float = 1.0
    pene: float = 10.0

    def __post_init__(self):
        if min(self.fit, self.cont, self.pene) < 0:
            raise ValueError("retrieval weights must be nonnegative")


@dataclass(frozen=True)
class FitSettings:
    iterations: int = 300
    step: float = 0.01
    min_step: float = 1e-12
    smoothing: float = 1e-4  # metres; distances enter the descent as sqrt(d^2 + s^2) - s


@dataclass(frozen=True)
class RetrievalResult:
    object_state: RigidTransform
    e_fit: float
    e_cont: float
    e_pene: float
    source_id: str = ""
    n_pairs: int = 0
    trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def energies(self) -> tuple[float, float, float]:
        return self.e_fit, self.e_cont, self.e_pene

    @property
    def score(self) -> float:
        return selection_score(self.e_cont, self.e_pene)

    @property
    def mean_contact_distance(self) -> float:
        return self.e_fit / self.n_pairs if self.n_pairs else float("nan")


def selection_score(e_cont: float, e_pene: float) -> float:
    if e_pene > 0:
        return 0.0
    return 1.0 / max(e_cont, 1e-12)


def _soft_rows(d: np.ndarray, eta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row norms, their smoothed values and the gradient of the smoothed values."""
    n = np.linalg.norm(d, axis=1)
    if eta > 0:
        root = np.sqrt(n * n + eta * eta)
        return n, root - eta, d / root[:, None]
    safe = np.where(n > 0, n, 1.0)
    return n, n, d / safe[:, None] * (n > 0)[:, None]


class _FitProblem:
    def __init__(self, cmap, body_vertices, template, weights, body_grid, contact_ids, eta: float = 0.0):
        self.eta = eta
        self.h = np.asarray(body_vertices, dtype=np.float64)
        self.v = template.vertices
        self.pair_h = self.h[cmap.human_ids]
        self.pair_o = cmap.object_ids
        self.w = weights
        self.grid = body_grid
        ids = cmap.human_ids if contact_ids is None else np.asarray(contact_ids, dtype=np.int64)
        self.contact = self.h[np.unique(ids)]

    def energies(self, pose: RigidTransform, with_grad: bool = False):
        p = pose.apply(self.v)
        c = p.mean(axis=0)
        g_p = np.zeros_like(p) if with_grad else None
        n, soft, u = _soft_rows(p[self.pair_o] - self.pair_h, self.eta)
        e_fit = float(n.sum())
        s_cont = e_cont = 0.0
        if self.w.cont > 0 or not with_grad:
            _, near = cKDTree(p).query(self.contact)
            dc, soft_c, uc = _soft_rows(p[near] - self.contact, self.eta)
            e_cont, s_cont = float(dc.sum()), float(soft_c.sum())
        e_pene = 0.0
        if self.grid is not None:
            sd, sd_grad = query_sdf_grad(self.grid, p)
            depth = penetration_depth(sd)
            e_pene = float(depth.sum())
        total = self.w.fit * float(soft.sum()) + self.w.cont * s_cont + self.w.pene * e_pene
        if not with_grad:
            return total, (e_fit, e_cont, e_pene)
        np.add.at(g_p, self.pair_o, self.w.fit * u)
        if self.w.cont > 0:
            np.add.at(g_p, near, self.w.cont * uc)
        if self.grid is not None and self.w.pene > 0:
            active = depth > 0
            g_p[active] -= self.w.pene * sd_grad[active]
        g_t = g_p.sum(axis=0)
        g_w = np.cross(p - c, g_p).sum(axis=0)
        return total, (e_fit, e_cont, e_pene), g_t, g_w, c


def _increment(pose: RigidTransform, dt, dw, center) -> RigidTransform:
    r = rotvec_to_matrix(dw)
    rot = orthonormalize(r @ pose.rotation)
    trans = r @ (pose.translation - center) + center + dt
    return RigidTransform(rot, trans)


def initial_guess(cmap: ContactMap, body_vertices, template: TriMesh) -> RigidTransform:
    src = template.vertices[cmap.object_ids]
    dst = np.asarray(body_vertices, dtype=np.float64)[cmap.human_ids]
    if len(src) >= 3:
        try:
            return kabsch_fit(src, dst)[0]
        except ValueError:
            pass
    return RigidTransform(np.eye(3), dst.mean(axis=0) - src.mean(axis=0))


def fit_initial_pose(cmap: ContactMap, body_vertices, template: TriMesh, weights: RetrievalWeights = RetrievalWeights(),
                     init: RigidTransform | None = None, body_grid: SdfGrid | None = None,
                     contact_ids=None, settings: FitSettings = FitSettings()) -> RetrievalResult:
    """Gradient descent with step halving over the object pose.

    Translation and a rotation increment about the posed centroid are updated jointly; a
    step is accepted only if the weighted energy decreases.
    """
    if cmap.object_ids.max() >= template.n_vertices:
        raise RetrievalError("contact map does not fit the object template")
    prob = _FitProblem(cmap, body_vertices, template, weights, body_grid, contact_ids, settings.smoothing)
    pose = initial_guess(cmap, body_vertices, template) if init is None else init
    # Rotation is stepped in arc length at the object's RMS radius so both blocks share units.
    local = template.vertices - template.vertices.mean(axis=0)
    rot_scale = 1.0 / max(float(np.mean(np.sum(local ** 2, axis=1))), 1e-12)
    step = settings.step
    trace = []
    total, _, g_t, g_w, c = prob.energies(pose, with_grad=True)
    trace.append(total)
    for it in range(settings.iterations):
        if not np.isfinite(total) or not (np.all(np.isfinite(g_t)) and np.all(np.isfinite(g_w))):
            raise DivergenceError(f"retrieval energy diverged at iteration {it}", trace)
        accepted = False
        while step >= settings.min_step:
            cand = _increment(pose, -step * g_t, -step * rot_scale * g_w, c)
            cand_total, _ = prob.energies(cand)
            if not np.isfinite(cand_total):
                raise DivergenceError(f"retrieval energy diverged at iteration {it}", trace + [cand_total])
            if cand_total < total:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        pose = cand
        step = min(2.0 * step, settings.step)
        total, _, g_t, g_w, c = prob.energies(pose, with_grad=True)
        trace.append(total)
    _, (e_fit, e_cont, e_pene) = prob.energies(pose)
    return RetrievalResult(pose, e_fit, e_cont, e_pene, cmap.source_id, len(cmap.pairs), tuple(trace))


def select_pose(candidates, rng=None, mode: str = "proportional") -> RetrievalResult:
    """Pick one candidate by score (proportional sampling or argmax).

    When no candidate is penetration free, the least penetrating one is returned.
    """
    candidates = list(candidates)
    if not candidates:
        raise RetrievalError("no candidate poses to select from")
    scores = np.array([c.score for c in candidates])
    if scores.sum() <= 0:
        return candidates[int(np.argmin([c.e_pene for c in candidates]))]
    if mode == "argmax":
        return candidates[int(np.argmax(scores))]
    if mode != "proportional":
        raise ValueError(f"unknown selection mode {mode!r}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return candidates[int(gen.choice(len(candidates), p=scores / scores.sum()))]


def retrieve_initial_state(db: InteractionDB, parts, category: str, body_vertices, body_grid: SdfGrid | None,
                           rng=None, weights: RetrievalWeights = RetrievalWeights(),
                           settings: FitSettings = FitSettings(), mode: str = "proportional"):
    """Fit every stored map for (parts, category) and select one; returns (chosen, all results)."""
    maps = db.query(parts, category)
    if not maps:
        raise RetrievalError(f"no contact map for parts {part_key(parts)!r} and category {category!r}")
    template = db.template(category)
    results = [fit_initial_pose(m, body_vertices, template, weights, body_grid=body_grid, settings=settings)
               for m in maps]
    return select_pose(results, rng, mode), results
