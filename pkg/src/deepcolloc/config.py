"""JSON run configuration: strict parsing, validation and conversion to a ProblemSpec.

Unknown keys are rejected.  Keys starting with ``_`` are free-form comments
and ignored wherever they appear.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigParseError, ConfigValidationError
from .geometry import BoxDomain, cantilever_bcs
from .loss import PenaltyWeights
from .materials import MaterialConstants
from .network import NetworkArch
from .optim import Schedule
from .solver import MODEL_KINDS, ProblemSpec

# section -> allowed keys; None marks a leaf value
SCHEMA = {
    "model": None,
    "seed": None,
    "geometry": {"L": None, "H": None, "D": None},
    "load": {"C": None, "steps": None, "load_factors": None},
    "material": {"E": None, "nu": None, "lam": None, "mu": None, "kappa": None, "sigma_y": None, "K": None, "H": None},
    "network": {"layers": None, "activation": None},
    "sampling": {"n_interior": None, "n_essential": None, "n_traction": None},
    "penalty": {"lam_u": None, "lam_t": None},
    "optimizer": {k: None for k in Schedule.__dataclass_fields__},
    "step_optimizer": {k: None for k in Schedule.__dataclass_fields__},
    "step_loss_tol": None,
    "barrier": None,
    "displacement_scale": None,
    "verification": {"layers": None, "counts": None, "adam_iters": None, "lbfgs_iters": None, "tolerance": None},
    "output": {
        "directory": None,
        "field_csv": None,
        "vtk": None,
        "path_csv": None,
        "trace_csv": None,
        "checkpoint": None,
        "collocation_csv": None,
        "grid": None,
        "path": {"start": None, "end": None, "n": None},
    },
    "verbosity": None,
}

REQUIRED = ("model", "material")


@dataclass
class PathSpec:
    start: tuple = (0.0, 1.0, 0.5)
    end: tuple = (4.0, 1.0, 0.5)
    n: int = 100


@dataclass
class OutputSpec:
    directory: str = "out"
    field_csv: bool = True
    vtk: bool = True
    path_csv: bool = True
    trace_csv: bool = True
    checkpoint: bool = True
    collocation_csv: bool = False
    grid: tuple = (80, 20, 20)
    path: PathSpec = field(default_factory=PathSpec)


@dataclass
class VerificationSpec:
    layers: tuple = (3, 30, 30, 30, 3)
    counts: tuple = (2000, 1000, 1000)
    adam_iters: int = 1000
    lbfgs_iters: int = 3000
    tolerance: float = 5e-2


@dataclass
class RunConfig:
    spec: ProblemSpec
    output: OutputSpec
    verification: VerificationSpec
    raw: dict
    config_hash: str
    verbosity: int = 1
    source: str | None = None

    def header(self) -> str:
        return f"config_sha256={self.config_hash} seed={self.spec.seed}"


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigParseError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _check_keys(obj: dict, schema: dict, text: str, where: str = ""):
    for key, value in obj.items():
        if key.startswith("_"):
            continue
        path = f"{where}.{key}" if where else key
        if key not in schema:
            line = _line_of(text, key)
            at = f" (line {line})" if line else ""
            raise ConfigParseError(f"unknown key {path!r}{at}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(value, dict):
                raise ConfigParseError(f"key {path!r} must be an object")
            _check_keys(value, sub, text, path)


def _strip_comments(obj):
    if isinstance(obj, dict):
        return {k: _strip_comments(v) for k, v in obj.items() if not k.startswith("_")}
    return obj


def config_hash(raw: dict) -> str:
    canon = json.dumps(_strip_comments(raw), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def parse_config(text: str, source: str | None = None) -> RunConfig:
    try:
        raw = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as err:
        raise ConfigParseError(f"{source or 'config'}: line {err.lineno}, column {err.colno}: {err.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigParseError("top level must be a JSON object")
    _check_keys(raw, SCHEMA, text)
    for key in REQUIRED:
        if key not in raw:
            raise ConfigParseError(f"missing required key {key!r}")
    cfg = build_config(_strip_comments(raw))
    cfg.raw = raw
    cfg.config_hash = config_hash(raw)
    cfg.source = source
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def _num(section: dict, key: str, default=None, *, positive=False, nonneg=False, integer=False, where=""):
    v = section.get(key, default)
    name = f"{where}.{key}" if where else key
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigValidationError(f"{name} must be a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigValidationError(f"{name} must be an integer, got {v!r}")
    if not math.isfinite(v) and not (key == "sigma_y" and v == math.inf):
        raise ConfigValidationError(f"{name} must be finite")
    if positive and not v > 0:
        raise ConfigValidationError(f"{name} must be positive, got {v!r}")
    if nonneg and v < 0:
        raise ConfigValidationError(f"{name} must be non-negative, got {v!r}")
    return int(v) if integer else float(v)


def _bool(section: dict, key: str, default: bool, where: str) -> bool:
    v = section.get(key, default)
    if not isinstance(v, bool):
        raise ConfigValidationError(f"{where}.{key} must be true or false")
    return v


def _vec(v, n, name):
    if not isinstance(v, (list, tuple)) or len(v) != n or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigValidationError(f"{name} must be a list of {n} numbers")
    return tuple(float(x) for x in v)


def _material(m: dict) -> MaterialConstants:
    w = "material"
    has_young = "E" in m or "nu" in m
    has_lame = "lam" in m or "mu" in m
    if has_young == has_lame:
        raise ConfigValidationError("material needs either E and nu, or lam and mu")
    kw = {
        "sigma_y": _num(m, "sigma_y", math.inf, positive=True, where=w),
        "K": _num(m, "K", 0.0, nonneg=True, where=w),
        "H": _num(m, "H", 0.0, nonneg=True, where=w),
    }
    if has_young:
        E = _num(m, "E", None, positive=True, where=w)
        nu = _num(m, "nu", None, where=w)
        if E is None or nu is None:
            raise ConfigValidationError("material needs both E and nu")
        if not -1.0 < nu < 0.5:
            raise ConfigValidationError(f"material.nu must lie in (-1, 0.5), got {nu}")
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        mu = E / (2.0 * (1.0 + nu))
    else:
        lam = _num(m, "lam", None, where=w)
        mu = _num(m, "mu", None, positive=True, where=w)
        if lam is None or mu is None:
            raise ConfigValidationError("material needs both lam and mu")
    kappa = _num(m, "kappa", None, positive=True, where=w)
    if kappa is not None and abs(kappa - (lam + 2.0 * mu / 3.0)) > 1e-12 * abs(kappa):
        raise ConfigValidationError(f"material.kappa={kappa} violates kappa = lam + 2 mu / 3 = {lam + 2.0 * mu / 3.0}")
    if lam + 2.0 * mu / 3.0 <= 0:
        raise ConfigValidationError("bulk modulus lam + 2 mu / 3 must be positive")
    try:
        return MaterialConstants(lam=lam, mu=mu, kappa=kappa, **kw)
    except ValueError as err:
        raise ConfigValidationError(f"material: {err}") from None


def _schedule(o: dict, where: str, base: Schedule | None = None) -> Schedule:
    base = base or Schedule()
    kw = {}
    for name, f in Schedule.__dataclass_fields__.items():
        integer = f.type in ("int", int)
        default = getattr(base, name)
        v = _num(o, name, default, integer=integer, nonneg=True, where=where)
        kw[name] = v
    if not 0 < kw["c1"] < kw["c2"] < 1:
        raise ConfigValidationError(f"{where}: Wolfe constants need 0 < c1 < c2 < 1")
    if not (0 <= kw["beta1"] < 1 and 0 <= kw["beta2"] < 1):
        raise ConfigValidationError(f"{where}: Adam betas must lie in [0, 1)")
    if kw["history"] < 1 or kw["stall_window"] < 1:
        raise ConfigValidationError(f"{where}: history and stall_window must be >= 1")
    if not kw["adam_lr"] > 0:
        raise ConfigValidationError(f"{where}.adam_lr must be positive")
    return Schedule(**kw)


def build_config(d: dict) -> RunConfig:
    model = d.get("model")
    if model not in MODEL_KINDS:
        raise ConfigValidationError(f"model must be one of {MODEL_KINDS}, got {model!r}")
    seed = _num(d, "seed", 0, integer=True, nonneg=True)

    g = d.get("geometry", {})
    box = BoxDomain(
        _num(g, "L", 4.0, positive=True, where="geometry"),
        _num(g, "H", 1.0, positive=True, where="geometry"),
        _num(g, "D", 1.0, positive=True, where="geometry"),
    )

    ld = d.get("load", {})
    C = _num(ld, "C", 0.25, where="load")
    steps = _num(ld, "steps", 1, integer=True, where="load")
    if steps < 1:
        raise ConfigValidationError("load.steps must be >= 1")
    factors = ld.get("load_factors")
    if factors is not None:
        factors = _vec(factors, steps, "load.load_factors")
        if any(abs(b) < abs(a) for a, b in zip(factors, factors[1:])):
            raise ConfigValidationError("load.load_factors must be nondecreasing in magnitude")

    mats = _material(d["material"])
    if model == "j2plastic" and not math.isfinite(mats.sigma_y):
        raise ConfigValidationError("the plastic model needs a finite material.sigma_y")

    nw = d.get("network", {})
    layers = nw.get("layers", [3, 60, 60, 60, 60, 3])
    act = nw.get("activation", "tanh")
    if act != "tanh":
        raise ConfigValidationError(f"network.activation must be 'tanh', got {act!r}")
    try:
        arch = NetworkArch(tuple(int(w) for w in layers))
    except (TypeError, ValueError) as err:
        raise ConfigValidationError(f"network.layers: {err}") from None

    sm = d.get("sampling", {})
    counts = [
        _num(sm, k, v, integer=True, where="sampling")
        for k, v in (("n_interior", 7500), ("n_essential", 4000), ("n_traction", 4000))
    ]
    if min(counts) < 1:
        raise ConfigValidationError("every sampling count must be >= 1")

    pen = d.get("penalty", {})
    weights = PenaltyWeights(
        _num(pen, "lam_u", 1.0, nonneg=True, where="penalty"), _num(pen, "lam_t", 1.0, nonneg=True, where="penalty")
    )
    schedule = _schedule(d.get("optimizer", {}), "optimizer")
    step_schedule = _schedule(d["step_optimizer"], "step_optimizer", schedule) if "step_optimizer" in d else None

    spec = ProblemSpec(
        model=model,
        mats=mats,
        box=box,
        bcs=cantilever_bcs(C),
        C=C,
        arch=arch,
        n_interior=counts[0],
        n_essential=counts[1],
        n_traction=counts[2],
        seed=seed,
        weights=weights,
        schedule=schedule,
        step_schedule=step_schedule,
        steps=steps,
        load_factors=factors,
        step_loss_tol=_num(d, "step_loss_tol", None, positive=True),
        barrier=_num(d, "barrier", 1e3, positive=True),
        displacement_scale=_num(d, "displacement_scale", None, positive=True),
    )

    o = d.get("output", {})
    grid = o.get("grid", [80, 20, 20])
    if not (isinstance(grid, list) and len(grid) == 3 and all(isinstance(n, int) and n >= 1 for n in grid)):
        raise ConfigValidationError("output.grid must be three positive integers")
    p = o.get("path", {})
    path = PathSpec(
        _vec(p.get("start", [0.0, box.H, box.D / 2]), 3, "output.path.start"),
        _vec(p.get("end", [box.L, box.H, box.D / 2]), 3, "output.path.end"),
        _num(p, "n", 100, integer=True, positive=True, where="output.path"),
    )
    out = OutputSpec(
        directory=str(o.get("directory", "out")),
        field_csv=_bool(o, "field_csv", True, "output"),
        vtk=_bool(o, "vtk", True, "output"),
        path_csv=_bool(o, "path_csv", True, "output"),
        trace_csv=_bool(o, "trace_csv", True, "output"),
        checkpoint=_bool(o, "checkpoint", True, "output"),
        collocation_csv=_bool(o, "collocation_csv", False, "output"),
        grid=tuple(grid),
        path=path,
    )

    v = d.get("verification", {})
    ver = VerificationSpec(
        tuple(int(w) for w in v.get("layers", (3, 30, 30, 30, 3))),
        tuple(int(n) for n in v.get("counts", (2000, 1000, 1000))),
        _num(v, "adam_iters", 1000, integer=True, nonneg=True, where="verification"),
        _num(v, "lbfgs_iters", 3000, integer=True, nonneg=True, where="verification"),
        _num(v, "tolerance", 5e-2, positive=True, where="verification"),
    )
    if len(ver.counts) != 3 or min(ver.counts) < 1:
        raise ConfigValidationError("verification.counts must be three positive integers")

    verbosity = _num(d, "verbosity", 1, integer=True, nonneg=True)
    return RunConfig(spec, out, ver, d, "", verbosity)
