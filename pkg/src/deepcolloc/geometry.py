"""Box domains, face boundary conditions and Monte Carlo collocation sets.

Random streams come from numpy's Philox-4x64 counter-based generator keyed by
``SeedSequence([seed, stream])``.  Stream 0 is the interior; streams 1..6 are
the faces in ``FACES`` order, so every point class is reproducible on its own.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import InconsistentBCs

FACES = ("x0", "x1", "y0", "y1", "z0", "z1")
# face -> (fixed axis, at upper bound?)
_FACE_AXIS = {f: ("xyz".index(f[0]), f[1] == "1") for f in FACES}

Target = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box with a corner at the origin.

    ``L`` is the extent along x, ``H`` along y and ``D`` along z.
    """

    L: float = 4.0
    H: float = 1.0
    D: float = 1.0

    def __post_init__(self):
        if not (self.L > 0 and self.H > 0 and self.D > 0):
            raise ValueError("box extents must be positive")

    @property
    def extents(self) -> np.ndarray:
        return np.array([self.L, self.H, self.D])

    def normal(self, face: str) -> np.ndarray:
        axis, upper = _FACE_AXIS[face]
        n = np.zeros(3)
        n[axis] = 1.0 if upper else -1.0
        return n

    def face_area(self, face: str) -> float:
        axis, _ = _FACE_AXIS[face]
        ext = self.extents
        return float(np.prod(np.delete(ext, axis)))

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        p = np.asarray(points)
        return np.all((p >= -tol) & (p <= self.extents + tol), axis=-1)


@dataclass
class Essential:
    """Prescribed displacement on the components where ``mask`` is 1."""

    target: Target = field(default_factory=lambda: np.zeros(3))
    mask: tuple = (1, 1, 1)


@dataclass
class Traction:
    """Prescribed traction (force per reference area) on the face."""

    target: Target = field(default_factory=lambda: np.zeros(3))


@dataclass
class BoundarySpec:
    faces: dict

    def validate(self):
        missing = [f for f in FACES if f not in self.faces]
        if missing:
            raise InconsistentBCs(f"no boundary condition on faces {missing}")
        unknown = set(self.faces) - set(FACES)
        if unknown:
            raise InconsistentBCs(f"unknown faces {sorted(unknown)}")
        for f, bc in self.faces.items():
            if not isinstance(bc, (Essential, Traction)):
                raise InconsistentBCs(f"face {f}: unsupported condition {bc!r}")

    def faces_of(self, kind) -> list[str]:
        return [f for f in FACES if isinstance(self.faces.get(f), kind)]


def cantilever_bcs(C: float) -> BoundarySpec:
    """Clamped x=0 face, y-displacement ``C`` on x=L, traction-free lateral faces."""
    return BoundarySpec(
        {
            "x0": Essential(np.zeros(3), (1, 1, 1)),
            "x1": Essential(np.array([0.0, C, 0.0]), (0, 1, 0)),
            "y0": Traction(),
            "y1": Traction(),
            "z0": Traction(),
            "z1": Traction(),
        }
    )


@dataclass
class CollocationSet:
    interior: np.ndarray
    essential_points: np.ndarray
    essential_targets: np.ndarray
    essential_masks: np.ndarray
    essential_faces: np.ndarray
    traction_points: np.ndarray
    traction_normals: np.ndarray
    traction_targets: np.ndarray
    traction_faces: np.ndarray

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.interior), len(self.essential_points), len(self.traction_points)

    def permuted(self, seed: int) -> "CollocationSet":
        """Same points in a shuffled order within each class."""
        rng = make_rng(seed, 99)
        pi = rng.permutation(len(self.interior))
        pu = rng.permutation(len(self.essential_points))
        pt = rng.permutation(len(self.traction_points))
        return CollocationSet(
            self.interior[pi],
            self.essential_points[pu],
            self.essential_targets[pu],
            self.essential_masks[pu],
            self.essential_faces[pu],
            self.traction_points[pt],
            self.traction_normals[pt],
            self.traction_targets[pt],
            self.traction_faces[pt],
        )


def _uniform_open(rng, n: int, dims: int) -> np.ndarray:
    u = rng.random((n, dims))
    bad = u == 0.0
    while np.any(bad):
        u[bad] = rng.random(int(bad.sum()))
        bad = u == 0.0
    return u


def sample_interior(box: BoxDomain, n: int, rng_seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return _uniform_open(make_rng(rng_seed, 0), n, 3) * box.extents


def sample_face(box: BoxDomain, face: str, n: int, rng_seed: int) -> np.ndarray:
    if face not in FACES:
        raise ValueError(f"unknown face {face!r}")
    if n < 1:
        raise ValueError("n must be >= 1")
    axis, upper = _FACE_AXIS[face]
    rng = make_rng(rng_seed, 1 + FACES.index(face))
    pts = _uniform_open(rng, n, 3) * box.extents
    pts[:, axis] = box.extents[axis] if upper else 0.0
    return pts


def allocate(total: int, weights) -> list[int]:
    """Split ``total`` proportionally to ``weights`` (largest remainder, ties by order)."""
    w = np.asarray(weights, dtype=float)
    exact = total * w / w.sum()
    counts = np.floor(exact).astype(int)
    rem = exact - counts
    order = sorted(range(len(w)), key=lambda i: (-rem[i], i))
    for i in order[: total - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def _evaluate_target(target: Target, pts: np.ndarray) -> np.ndarray:
    if callable(target):
        vals = np.asarray(target(pts), dtype=float)
    else:
        vals = np.broadcast_to(np.asarray(target, dtype=float), pts.shape)
    return np.array(vals, dtype=float).reshape(pts.shape)


def build_collocation_set(
    box: BoxDomain, bcs: BoundarySpec, n_interior: int, n_essential: int, n_traction: int, seed: int
) -> CollocationSet:
    """Sample the interior and distribute boundary points over faces by area.

    Callable traction targets receive ``(points, normal)``; callable
    displacement targets receive ``points``.
    """
    bcs.validate()
    if min(n_interior, n_essential, n_traction) < 1:
        raise ValueError("every point count must be >= 1")
    ess_faces = bcs.faces_of(Essential)
    tr_faces = bcs.faces_of(Traction)
    if not ess_faces or not tr_faces:
        raise InconsistentBCs("need at least one essential and one traction face")

    interior = sample_interior(box, n_interior, seed)

    pts, tgt, msk, fid = [], [], [], []
    for face, n in zip(ess_faces, allocate(n_essential, [box.face_area(f) for f in ess_faces])):
        if n == 0:
            continue
        bc = bcs.faces[face]
        p = sample_face(box, face, n, seed)
        pts.append(p)
        tgt.append(_evaluate_target(bc.target, p))
        msk.append(np.broadcast_to(np.asarray(bc.mask, dtype=float), p.shape).copy())
        fid.append(np.full(n, FACES.index(face)))

    tpts, tnrm, ttgt, tfid = [], [], [], []
    for face, n in zip(tr_faces, allocate(n_traction, [box.face_area(f) for f in tr_faces])):
        if n == 0:
            continue
        bc = bcs.faces[face]
        p = sample_face(box, face, n, seed)
        normal = box.normal(face)
        tpts.append(p)
        tnrm.append(np.broadcast_to(normal, p.shape).copy())
        if callable(bc.target):
            ttgt.append(np.asarray(bc.target(p, normal), dtype=float).reshape(p.shape))
        else:
            ttgt.append(_evaluate_target(bc.target, p))
        tfid.append(np.full(n, FACES.index(face)))

    return CollocationSet(
        interior,
        np.concatenate(pts),
        np.concatenate(tgt),
        np.concatenate(msk),
        np.concatenate(fid),
        np.concatenate(tpts),
        np.concatenate(tnrm),
        np.concatenate(ttgt),
        np.concatenate(tfid),
    )


def export_collocation_csv(colloc: CollocationSet, path, header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "set_tag"])
        for tag, pts in (
            ("interior", colloc.interior),
            ("essential", colloc.essential_points),
            ("traction", colloc.traction_points),
        ):
            for p in pts:
                w.writerow([repr(float(c)) for c in p] + [tag])
