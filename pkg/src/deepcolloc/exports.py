"""Field, path, trace and report writers (CSV, legacy VTK, JSON).

Numbers are written with ``repr`` so files round-trip exactly and are
byte-identical for identical inputs.  Every file starts with a comment line
carrying the run's config hash and seed.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .errors import PathOutsideDomain
from .geometry import BoxDomain

log = logging.getLogger(__name__)

EP_COMPONENTS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def query_grid(box: BoxDomain, shape=(80, 20, 20)) -> np.ndarray:
    """Regular lattice including the box faces, x varying slowest."""
    axes = [np.linspace(0.0, e, n) if n > 1 else np.array([0.5 * e]) for e, n in zip(box.extents, shape)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)


def field_columns(solution, points) -> tuple[list[str], np.ndarray]:
    """Column names and values ``x, y, z, ux, uy, uz, vm[, alpha, ep11, ...]``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    ev = solution.evaluate(pts)
    names = ["x", "y", "z", "ux", "uy", "uz", "vm"]
    cols = [pts, ev["u"], ev["vm"][:, None]]
    if "state" in ev:
        st = ev["state"]
        names += ["alpha"] + [f"ep{i + 1}{j + 1}" for i, j in EP_COMPONENTS]
        cols += [st.alpha[:, None], np.stack([st.e_p[:, i, j] for i, j in EP_COMPONENTS], axis=1)]
    return names, np.concatenate(cols, axis=1)


def _write_csv(path, header, names, rows):
    with open(path, "w", newline="") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def export_field_csv(solution, points, path, header: str = "") -> None:
    names, data = field_columns(solution, points)
    _write_csv(path, header, names, data)


def export_vtk(solution, points, path, header: str = "") -> None:
    """Legacy ASCII VTK 3.0 POLYDATA point cloud with point data."""
    names, data = field_columns(solution, points)
    n = len(data)
    title = (header or "deep collocation field").splitlines()[0][:255]
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA", f"POINTS {n} double"]
    lines += [" ".join(repr(float(v)) for v in p) for p in data[:, :3]]
    lines.append(f"VERTICES {n} {2 * n}")
    lines += [f"1 {i}" for i in range(n)]
    lines.append(f"POINT_DATA {n}")
    lines.append("VECTORS displacement double")
    lines += [" ".join(repr(float(v)) for v in u) for u in data[:, 3:6]]
    for k, name in enumerate(names[6:], start=6):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [repr(float(v)) for v in data[:, k]]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_points(path) -> np.ndarray:
    """Minimal reader for the files written by :func:`export_vtk`."""
    tokens = Path(path).read_text().split("\n")
    for i, line in enumerate(tokens):
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            return np.array([[float(v) for v in tokens[i + 1 + k].split()] for k in range(n)])
    raise ValueError("no POINTS section")


def path_points(box: BoxDomain, start, end, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` uniformly spaced samples on a segment and their arclength.

    Raises :class:`PathOutsideDomain` if an endpoint lies outside the closed
    box.  Equal endpoints give a single sample and a warning.
    """
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    for name, p in (("start", a), ("end", b)):
        if not box.contains(p):
            raise PathOutsideDomain(f"path {name} {p.tolist()} lies outside the domain")
    if n < 1:
        raise ValueError("n must be >= 1")
    length = float(np.linalg.norm(b - a))
    if length == 0.0:
        log.warning("degenerate path: start and end coincide, exporting a single point")
        return a[None, :], np.zeros(1)
    t = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    return a + t[:, None] * (b - a), t * length


def export_path(solution, box: BoxDomain, start, end, n: int, path, header: str = "") -> np.ndarray:
    pts, s = path_points(box, start, end, n)
    names, data = field_columns(solution, pts)
    rows = np.concatenate([s[:, None], data], axis=1)
    _write_csv(path, header, ["s"] + names, rows)
    return rows


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
