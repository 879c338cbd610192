"""Command line front-end: ``solve``, ``verify``, ``export`` and ``gradcheck``.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .config import RunConfig, load_config
from .errors import (
    ConfigParseError,
    ConfigValidationError,
    DCMError,
    InconsistentBCs,
    PathOutsideDomain,
)
from .exports import export_field_csv, export_path, export_vtk, query_grid, write_report
from .geometry import export_collocation_csv
from .network import NetworkArch, load_checkpoint, save_checkpoint
from .optim import Schedule
from .solver import (
    SolutionField,
    affine_field,
    build_problem,
    mms_verify,
    quadratic_field,
    solve,
    trigonometric_field,
)

log = logging.getLogger("deepcolloc")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _step_name(stem: str, t: int, steps: int, ext: str) -> str:
    return f"{stem}.{ext}" if steps == 1 else f"{stem}_step{t:02d}.{ext}"


def write_outputs(cfg: RunConfig, sols: list[SolutionField], out: Path) -> None:
    """Traces and checkpoints per step; field, VTK and path exports of the last step."""
    o = cfg.output
    header = cfg.header()
    steps = len(sols)
    for sol in sols:
        if o.trace_csv and sol.trace is not None:
            sol.trace.write_csv(out / _step_name("trace", sol.step, steps, "csv"), header)
        if o.checkpoint:
            save_checkpoint(sol.params, out / _step_name("params", sol.step, steps, "dcm"))
    export_fields(cfg, sols[-1], out)


def export_fields(cfg: RunConfig, sol: SolutionField, out: Path) -> None:
    o = cfg.output
    header = cfg.header()
    box = cfg.spec.box
    if o.field_csv or o.vtk:
        grid = query_grid(box, o.grid)
        if o.field_csv:
            export_field_csv(sol, grid, out / "field.csv", header)
        if o.vtk:
            export_vtk(sol, grid, out / "field.vtk", header)
    if o.path_csv:
        export_path(sol, box, o.path.start, o.path.end, o.path.n, out / "path.csv", header)


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.spec
    spec.threads = args.threads
    t0 = time.perf_counter()
    colloc = build_problem(spec)
    if cfg.output.collocation_csv:
        export_collocation_csv(colloc, out / "collocation.csv", cfg.header())
    sols = solve(spec, colloc)
    write_outputs(cfg, sols, out)
    report = {
        "config": cfg.raw,
        "config_sha256": cfg.config_hash,
        "seed": spec.seed,
        "threads": args.threads,
        "steps": [s.report for s in sols],
        "wall_time_s": time.perf_counter() - t0,
        "version": __version__,
    }
    write_report(report, out / "report.json")
    final = sols[-1].report["final"]
    print(f"solved {spec.model}: final loss {final['total']:.6e} "
          f"(g {final['mse_g']:.3e}, u {final['mse_u']:.3e}, t {final['mse_t']:.3e}) -> {out}")
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.spec
    history = [load_checkpoint(p) for p in (args.history or [])]
    params = load_checkpoint(args.checkpoint)
    if params.arch != spec.arch:
        raise ConfigValidationError(f"checkpoint architecture {params.arch.layer_widths} does not match the config")
    if spec.model == "j2plastic" and not history:
        log.warning("no --history given: plastic state is evaluated as if this were the first step")
    colloc = build_problem(spec)
    sol = SolutionField(params, spec.model, spec.mats, history=history + [params], scale=spec.scale_for(colloc))
    export_fields(cfg, sol, out)
    print(f"exported fields -> {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    spec, v = cfg.spec, cfg.verification
    arch = NetworkArch(v.layers)
    schedule = Schedule(**{**spec.schedule.__dict__, "adam_iters": v.adam_iters, "lbfgs_iters": v.lbfgs_iters})
    fields = [
        affine_field([[1e-3, 2e-3, 0.0], [0.0, -1e-3, 5e-4], [1e-3, 0.0, 2e-3]], [1e-3, 0.0, -1e-3]),
        quadratic_field(1e-2),
        trigonometric_field(spec.box, 1e-2),
    ]
    ok = True
    results = []
    for f in fields:
        tol = 1e-3 if f.name == "affine" else v.tolerance
        r = mms_verify(f, spec.mats, spec.box, v.counts, spec.seed, arch, schedule)
        passed = r["l2_error"] < tol
        ok &= passed
        results.append({"field": f.name, "l2_error": r["l2_error"], "tolerance": tol, "passed": passed})
        print(f"{'PASS' if passed else 'FAIL'} mms {f.name}: l2_error {r['l2_error']:.3e} (tolerance {tol:g})")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_report({"config_sha256": cfg.config_hash, "results": results}, Path(args.out) / "verify.json")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    ok, results = run_all(seed=args.seed, tol=args.tol)
    for name, err in results.items():
        print(f"{'PASS' if err < args.tol else 'FAIL'} {name}: max relative error {err:.3e}")
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepcolloc", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1, help="loss-evaluation workers (1 = bitwise reproducible)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("solve", help="train the network for a configured problem")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="run the manufactured-solution suite")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export", help="re-evaluate fields from a checkpoint without training")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--history", nargs="*", help="checkpoints of earlier pseudo-time steps, in order")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all derivatives")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        # BLAS threads would change reduction order; the worker pool is the only parallelism
        with threadpool_limits(limits=1):
            return args.func(args)
    except (ConfigParseError, ConfigValidationError, InconsistentBCs, PathOutsideDomain, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except DCMError as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
