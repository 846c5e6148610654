"""Command-line entry point: ``swerom {fom,rom,compare,tensors-bench}``."""

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .exceptions import ExperimentError, SweRomError
from .experiment import (
    ExperimentConfig,
    emit_error_table,
    emit_invariant_table,
    emit_timing_table,
    run_experiment,
    run_fom,
)
from .fom import Physics
from .grid_ops import GridSpec, build_diff_ops
from .pod import PodBasis
from .tensor_rom import BUILDERS, build_block_ops

logger = logging.getLogger("swerom")

OVERRIDES = (
    ("--grid", str, "grid size, e.g. 100x100"),
    ("--scheme", str, "FOM integrator: avf or kahan"),
    ("--rom", str, "none, pod, pod-deim or tpod"),
    ("--n", int, "POD modes per variable"),
    ("--m", int, "DEIM points per component"),
    ("--kappa", float, "energy tolerance; implies rank_rule=energy"),
    ("--T", float, "final time"),
    ("--dt", float, "time step"),
    ("--g", float, "gravity"),
    ("--f", float, "constant Coriolis parameter"),
    ("--builder", str, "reduced tensor builder for tpod"),
    ("--linear-solver", str, "auto, direct or krylov"),
    ("--repeats", int, "timing repeats (median after a warm-up run)"),
    ("--out", str, "output directory"),
)


def _add_run_options(p):
    p.add_argument("--config", type=Path, help="key=value configuration file")
    for flag, typ, helptext in OVERRIDES:
        p.add_argument(flag, type=typ, help=helptext)
    p.add_argument("--save-snapshots", action="store_true")
    p.add_argument("--save-model", action="store_true")


def _config(args, **forced):
    mapping = {
        "grid": args.grid, "scheme": args.scheme, "rom": args.rom, "n": args.n,
        "m": args.m, "kappa": args.kappa, "T": args.T, "dt": args.dt, "g": args.g,
        "f": args.f, "builder": args.builder, "linear_solver": args.linear_solver,
        "timing_repeats": args.repeats, "out": args.out,
    }
    if args.kappa is not None:
        mapping["rank_rule"] = "energy"
    if args.save_snapshots:
        mapping["save_snapshots"] = True
    if args.save_model:
        mapping["save_model"] = True
    mapping.update({k: v for k, v in forced.items() if v is not None})
    if args.config is not None:
        return ExperimentConfig.from_file(args.config, mapping)
    return ExperimentConfig.from_mapping(mapping)


def _print_report(report):
    print(f"method      {report.method}")
    print(f"steps       {report.n_steps}")
    if report.modes is not None:
        print(f"modes       {report.modes}")
        print("rel. L2     " + "  ".join(f"{w}={report.errors[w]:.4e}" for w in "uvh"))
        print("ROM drift   " + "  ".join(f"{k}={v:.4e}" for k, v in report.rom_invariant_errors.items()))
    if report.fom_invariant_errors:
        print("FOM drift   " + "  ".join(f"{k}={v:.4e}" for k, v in report.fom_invariant_errors.items()))
    t = report.timings
    print(f"time [s]    fom={t['fom']:.3f}  offline={t['offline']:.3f}  online={t['online']:.3f}")
    if report.modes is not None:
        print(f"speed-up    total={report.speedup_total:.3g}  online={report.speedup_online:.3g}")


def cmd_fom(args):
    cfg = _config(args, rom="none")
    _print_report(run_experiment(cfg))


def cmd_rom(args):
    cfg = _config(args)
    if cfg.rom == "none":
        cfg = ExperimentConfig.from_mapping({"rom": "tpod"}, base=cfg)
    _print_report(run_experiment(cfg))


def cmd_compare(args):
    base = _config(args)
    roms = [r.strip() for r in args.roms.split(",") if r.strip()]
    modes = [int(k) for k in args.modes.split(",")]
    fom_cache = {}
    reports = []
    for rom in roms:
        for n in modes:
            cfg = ExperimentConfig.from_mapping({"rom": rom, "n": n, "out": None}, base=base)
            key = cfg.fom_scheme
            if key not in fom_cache:
                logger.info("running FOM (%s)", key)
                fom_cache[key] = run_fom(cfg)
            logger.info("running %s with n=%d", rom, n)
            report = run_experiment(cfg, fom=fom_cache[key])
            reports.append(report)
            _print_report(report)
            print()
    if base.out:
        out = Path(base.out)
        out.mkdir(parents=True, exist_ok=True)
        emit_error_table(reports, out / "errors.csv")
        emit_invariant_table(reports, out / "invariants.csv")
        emit_timing_table(reports, out / "timings.csv")


def _orthonormal_basis(N, n, rng):
    blocks = [np.linalg.qr(rng.standard_normal((N, n)))[0] for _ in range(3)]
    return PodBasis(*blocks)


def bench_builders(grids, modes, builders, repeats=3):
    """Wall-clock times of the reduced tensor builders; rows ``(N, n, builder, seconds)``.

    Timings do not depend on the basis values, so a fixed random orthonormal
    basis is used.
    """
    rows = []
    rng = np.random.default_rng(0)
    for nx, ny in grids:
        grid = GridSpec(nx, ny)
        blocks = build_block_ops(build_diff_ops(grid), Physics())
        for n in modes:
            basis = _orthonormal_basis(grid.N, n, rng)
            for name in builders:
                build = BUILDERS[name]
                build(basis, blocks)  # warm-up
                times = []
                for _ in range(repeats):
                    start = time.perf_counter()
                    build(basis, blocks)
                    times.append(time.perf_counter() - start)
                rows.append((grid.N, n, name, float(np.median(times))))
                logger.info("N=%d n=%d %s: %.3fs", grid.N, n, name, rows[-1][3])
    return rows


def cmd_bench(args):
    grids = [tuple(int(s) for s in g.lower().split("x")) for g in args.grids.split(",")]
    modes = [int(k) for k in args.modes.split(",")]
    builders = args.builders.split(",")
    for b in builders:
        if b not in BUILDERS:
            raise SystemExit(f"unknown builder {b!r}; choose from {sorted(BUILDERS)}")
    rows = bench_builders(grids, modes, builders, args.repeats)
    lines = ["N,n,builder,seconds"] + [f"{N},{n},{b},{t:.6g}" for N, n, b, t in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="swerom", description="Structure-preserving reduced models of the shallow water equations."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fom", help="run the full-order model")
    _add_run_options(p)
    p.set_defaults(func=cmd_fom)

    p = sub.add_parser("rom", help="run the FOM and one reduced model")
    _add_run_options(p)
    p.set_defaults(func=cmd_rom)

    p = sub.add_parser("compare", help="errors, invariants and timings over models and mode counts")
    _add_run_options(p)
    p.add_argument("--roms", default="tpod,pod-deim")
    p.add_argument("--modes", default="10,20,30,40,50")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("tensors-bench", help="time the reduced tensor builders")
    p.add_argument("--grids", default="20x20,50x50,100x100")
    p.add_argument("--modes", default="10,20,30,40,50")
    p.add_argument("--builders", default="mumode,rowwise-batched")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", help="CSV output file")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        args.func(args)
    except ExperimentError as exc:
        print(f"swerom: error {exc}", file=sys.stderr)
        return 1
    except (SweRomError, ValueError, OSError) as exc:
        print(f"swerom: error [setup] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
