"""Experiment configuration, runs, timings and CSV output."""

import csv
import dataclasses
import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .deim_rom import PodDeimAVF
from .exceptions import ExperimentError
from .fom import Physics, SolverOptions, TimeSpec, integrate
from .grid_ops import GridSpec, build_diff_ops, paper_initial_condition
from .invariants import InvariantSeries, invariant_error_series, relative_l2_error
from .io import save_model, write_snapshots
from .tensor_rom import TpodKahan

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "RunReport",
    "run_fom",
    "run_experiment",
    "emit_invariant_csv",
    "emit_error_table",
    "read_invariant_csv",
]

ROMS = ("none", "pod", "pod-deim", "tpod")
SCHEMES = ("avf", "kahan")
METHOD_NAMES = {"none": "FOM", "pod": "POD-AVF", "pod-deim": "POD-DEIM-AVF", "tpod": "TPOD-Kahan"}
# each reduced model is trained on snapshots of the integrator it mimics
NATURAL_SCHEME = {"none": "kahan", "pod": "avf", "pod-deim": "avf", "tpod": "kahan"}


def _parse_grid(text):
    try:
        nx, ny = (int(s) for s in str(text).lower().split("x"))
    except ValueError:
        raise ValueError(f"grid must look like 100x100, got {text!r}") from None
    return nx, ny


def _optional(cast):
    def parse(text):
        if text is None or str(text).strip().lower() in ("", "none"):
            return None
        return cast(text)

    return parse


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    """All settings of one run. Runs are deterministic; there is no seed.

    ``scheme`` is the FOM integrator; when unset it follows ``rom``
    (Kahan for TPOD, AVF for the POD and POD-DEIM models).
    """

    nx: int = 100
    ny: int = 100
    bounds: tuple = (0.0, 1.0, 0.0, 1.0)
    g: float = 1.0
    f: float = 0.0
    dt: float = 0.04
    T: float = 50.0
    scheme: Optional[str] = None
    rom: str = "none"
    n: int = 50
    m: Optional[int] = 90
    kappa: Optional[float] = None
    rank_rule: str = "fixed"
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    linear_solver: str = "auto"
    builder: str = "rowwise-batched"
    timing_repeats: int = 1
    save_snapshots: bool = False
    save_model: bool = False
    out: Optional[str] = None

    _PARSERS = {
        "nx": int, "ny": int, "g": float, "f": float, "dt": float, "T": float,
        "scheme": _optional(str), "rom": str, "n": int, "m": _optional(int),
        "kappa": _optional(float), "rank_rule": str, "newton_tol": float,
        "newton_max_iter": int, "linear_solver": str, "builder": str,
        "timing_repeats": int, "save_snapshots": _bool, "save_model": _bool,
        "out": _optional(str),
        "bounds": lambda s: tuple(float(x) for x in str(s).replace(",", " ").split()),
    }

    def __post_init__(self):
        if self.rom not in ROMS:
            raise ValueError(f"rom must be one of {ROMS}, got {self.rom!r}")
        if self.scheme is not None and self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.rank_rule not in ("fixed", "energy"):
            raise ValueError("rank_rule must be 'fixed' or 'energy'")
        if self.rank_rule == "energy" and self.kappa is None:
            raise ValueError("rank_rule=energy needs kappa")
        if self.timing_repeats < 1:
            raise ValueError("timing_repeats must be >= 1")
        if len(self.bounds) != 4:
            raise ValueError("bounds takes four numbers a b c d")
        if self.rom == "pod-deim" and self.m is not None and self.m < self.n:
            warnings.warn(f"m={self.m} is smaller than n={self.n}", stacklevel=2)
        self.time_spec  # validates dt/T

    # construction ---------------------------------------------------------
    @classmethod
    def from_mapping(cls, mapping, base=None):
        """Apply ``key=value`` style settings (strings or typed values)."""
        values = dataclasses.asdict(base) if base is not None else {}
        for key, raw in mapping.items():
            if raw is None:
                continue
            if key == "grid":
                values["nx"], values["ny"] = _parse_grid(raw)
                continue
            if key not in cls._PARSERS:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = cls._PARSERS[key](raw) if isinstance(raw, str) else raw
        return cls(**values)

    @classmethod
    def from_file(cls, path, overrides=None):
        mapping = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            mapping[key] = value
        cfg = cls.from_mapping(mapping)
        return cls.from_mapping(overrides or {}, base=cfg)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "bounds":
                value = " ".join(repr(float(b)) for b in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    # derived objects -----------------------------------------------------
    @property
    def grid(self):
        return GridSpec(self.nx, self.ny, *self.bounds)

    @property
    def physics(self):
        return Physics(g=self.g, f=self.f)

    @property
    def time_spec(self):
        return TimeSpec.from_final_time(self.T, self.dt)

    @property
    def solver_options(self):
        return SolverOptions(self.newton_tol, self.newton_max_iter, self.linear_solver)

    @property
    def fom_scheme(self):
        return self.scheme or NATURAL_SCHEME[self.rom]

    def make_rom(self):
        """Unfitted reduced-model estimator for ``rom`` (None for ``rom=none``)."""
        modes = dict(n_modes=self.n, energy_tol=None)
        if self.rank_rule == "energy":
            modes = dict(n_modes=None, energy_tol=self.kappa)
        if self.rom == "tpod":
            return TpodKahan(grid=self.grid, physics=self.physics, builder=self.builder, **modes)
        if self.rom in ("pod", "pod-deim"):
            n_deim = self.m if self.rom == "pod-deim" else None
            deim_tol = self.kappa if self.rom == "pod-deim" and self.rank_rule == "energy" else None
            return PodDeimAVF(
                grid=self.grid, physics=self.physics, n_deim=n_deim, deim_energy_tol=deim_tol,
                newton_tol=self.newton_tol, newton_max_iter=self.newton_max_iter, **modes,
            )
        return None


@dataclass
class RunReport:
    """Errors, invariant drifts and timings of one run.

    ``speedup_total`` is FOM time over offline plus online time and
    ``speedup_online`` is FOM time over online time.
    """

    method: str
    modes: Optional[tuple]
    n_steps: int
    errors: dict = field(default_factory=lambda: {"u": 0.0, "v": 0.0, "h": 0.0})
    fom_invariant_errors: dict = field(default_factory=dict)
    rom_invariant_errors: dict = field(default_factory=dict)
    timings: dict = field(default_factory=lambda: {"fom": 0.0, "offline": 0.0, "online": 0.0})
    fom_series: Optional[InvariantSeries] = field(default=None, repr=False)
    rom_series: Optional[InvariantSeries] = field(default=None, repr=False)

    def __post_init__(self):
        if any(t < 0 for t in self.timings.values()):
            raise ValueError("timings must be nonnegative")

    @property
    def speedup_total(self):
        denom = self.timings["offline"] + self.timings["online"]
        return self.timings["fom"] / denom if denom > 0 else float("nan")

    @property
    def speedup_online(self):
        online = self.timings["online"]
        return self.timings["fom"] / online if online > 0 else float("nan")

    def to_dict(self):
        return {
            "method": self.method,
            "modes": list(self.modes) if self.modes is not None else None,
            "n_steps": self.n_steps,
            "errors": self.errors,
            "fom_invariant_errors": self.fom_invariant_errors,
            "rom_invariant_errors": self.rom_invariant_errors,
            "timings": self.timings,
            "speedup_total": self.speedup_total,
            "speedup_online": self.speedup_online,
        }


# running ------------------------------------------------------------------
def _clock():
    return time.perf_counter()


def run_fom(cfg, ops=None):
    """Integrate the FOM; returns ``(states, seconds)`` with states at ``t_0..t_{N_t}``."""
    ops = ops or build_diff_ops(cfg.grid)
    ts = cfg.time_spec
    z0 = paper_initial_condition(cfg.grid)
    states = np.empty((ts.n_steps + 1, z0.size))
    states[0] = z0

    def sink(k, t, z):
        states[k] = z

    start = _clock()
    try:
        integrate(z0, cfg.fom_scheme, ts, ops, cfg.physics, cfg.solver_options, sink)
    except Exception as exc:
        raise ExperimentError("fom", exc) from exc
    return states, _clock() - start


def _timed(fn, repeats):
    """Result and time of ``fn``; with ``repeats > 1`` a warm-up call is
    discarded and the median of ``repeats`` timed calls is reported."""
    if repeats == 1:
        start = _clock()
        result = fn()
        return result, _clock() - start
    fn()
    times = []
    for _ in range(repeats):
        start = _clock()
        result = fn()
        times.append(_clock() - start)
    return result, float(np.median(times))


def run_experiment(cfg, fom=None):
    """Run the FOM (or reuse ``fom = (states, seconds)``) and the requested ROM.

    Writes artifacts to ``cfg.out`` when it is set.
    """
    ops = build_diff_ops(cfg.grid)
    phys = cfg.physics
    ts = cfg.time_spec
    states, fom_time = fom if fom is not None else run_fom(cfg, ops)
    if states.shape != (ts.n_steps + 1, 3 * ops.N):
        raise ValueError("FOM trajectory does not match the configuration")
    fom_series = InvariantSeries.from_trajectory(ts.times, states, ops, phys)
    report = RunReport(
        method=METHOD_NAMES[cfg.rom] if cfg.rom != "none" else f"FOM-{cfg.fom_scheme.upper()}",
        modes=None,
        n_steps=ts.n_steps,
        fom_invariant_errors=invariant_error_series(fom_series) if ts.n_steps else {},
        timings={"fom": fom_time, "offline": 0.0, "online": 0.0},
        fom_series=fom_series,
    )
    if cfg.rom != "none" and ts.n_steps > 0:
        est = cfg.make_rom()
        train = states[1:]
        try:
            _, offline = _timed(lambda: est.fit(train), cfg.timing_repeats)
        except Exception as exc:
            raise ExperimentError("offline", exc) from exc
        try:
            reduced, online = _timed(
                lambda: est.simulate(states[0], ts.dt, ts.n_steps), cfg.timing_repeats
            )
            lifted = est.inverse_transform(reduced)
            rom_series = InvariantSeries.from_trajectory(ts.times, lifted, ops, phys)
        except Exception as exc:
            raise ExperimentError("online", exc) from exc
        report.modes = est.basis_.n
        report.errors = relative_l2_error(states[1:], lifted[1:], cfg.grid)
        report.rom_invariant_errors = invariant_error_series(rom_series)
        report.rom_series = rom_series
        report.timings.update(offline=offline, online=online)
    else:
        est = None
    if cfg.out:
        _write_artifacts(cfg, report, states, est)
    return report


def _write_artifacts(cfg, report, states, est):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    emit_invariant_csv(report.fom_series, out / "fom_invariants.csv")
    if report.rom_series is not None:
        emit_invariant_csv(report.rom_series, out / "rom_invariants.csv")
        emit_error_table(report, out / "errors.csv")
    if cfg.save_snapshots:
        write_snapshots(out / "snapshots.bin", states)
    if cfg.save_model and est is not None:
        save_model(est, out / "model")


# CSV output -----------------------------------------------------------------
def _fmt(x):
    return f"{x:.16e}"


def emit_invariant_csv(series, path):
    """Write ``t,H,Z,M,V`` rows with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write("t,H,Z,M,V\n")
        for row in zip(series.t, series.H, series.Z, series.M, series.V):
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def read_invariant_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return InvariantSeries(**{k: np.array([float(r[k]) for r in rows]) for k in "tHZMV"})


def emit_error_table(reports, path):
    """Write ``method,modes,err_u,err_v,err_h`` rows for one or more reports."""
    if isinstance(reports, RunReport):
        reports = [reports]
    with open(path, "w", newline="") as fh:
        fh.write("method,modes,err_u,err_v,err_h\n")
        for r in reports:
            modes = "" if r.modes is None else "/".join(str(k) for k in sorted(set(r.modes)))
            errs = ",".join(_fmt(r.errors[w]) for w in "uvh")
            fh.write(f"{r.method},{modes},{errs}\n")


def emit_invariant_table(reports, path):
    """Time-averaged invariant errors of the reduced models, one row per report."""
    with open(path, "w", newline="") as fh:
        fh.write("method,modes,energy,enstrophy,mass,vorticity\n")
        for r in reports:
            e = r.rom_invariant_errors
            modes = "" if r.modes is None else "/".join(str(k) for k in sorted(set(r.modes)))
            fh.write(f"{r.method},{modes}," + ",".join(_fmt(e[k]) for k in "HZMV") + "\n")


def emit_timing_table(reports, path):
    with open(path, "w", newline="") as fh:
        fh.write("method,modes,fom,offline,online,speedup_total,speedup_online\n")
        for r in reports:
            t = r.timings
            modes = "" if r.modes is None else "/".join(str(k) for k in sorted(set(r.modes)))
            vals = (t["fom"], t["offline"], t["online"], r.speedup_total, r.speedup_online)
            fh.write(f"{r.method},{modes}," + ",".join(f"{v:.6g}" for v in vals) + "\n")
