"""Discrete conserved quantities and FOM/ROM error measures."""

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateReferenceError
from .fom import check_positive, split

__all__ = [
    "InvariantSeries",
    "energy",
    "enstrophy",
    "mass_and_vorticity",
    "invariant_series",
    "invariant_error_series",
    "relative_l2_error",
]


def _relative_vorticity(z, ops, phys):
    u, v, _ = split(z)
    return ops.Dx @ v - ops.Dy @ u + phys.coriolis(ops.N)


def energy(z, grid, phys):
    u, v, h = split(z)
    return 0.5 * np.sum((u * u + v * v + phys.g * h) * h) * grid.cell_area


def enstrophy(z, ops, grid, phys):
    h = split(z)[2]
    check_positive(h)
    w = _relative_vorticity(z, ops, phys)
    return 0.5 * np.sum(w * w / h) * grid.cell_area


def mass_and_vorticity(z, ops, grid, phys):
    h = split(z)[2]
    M = np.sum(h) * grid.cell_area
    V = np.sum(_relative_vorticity(z, ops, phys)) * grid.cell_area
    return M, V


@dataclass
class InvariantSeries:
    """Energy ``H``, enstrophy ``Z``, mass ``M`` and vorticity ``V`` over time."""

    t: np.ndarray
    H: np.ndarray
    Z: np.ndarray
    M: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), dtype=float) for k in "tHZMV"]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ValueError("invariant series must be 1-D and of equal length")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("invariant series contains non-finite values")
        self.t, self.H, self.Z, self.M, self.V = arrays

    def __len__(self):
        return self.t.size

    @classmethod
    def from_trajectory(cls, times, states, ops, phys):
        grid = ops.grid
        rows = []
        for z in states:
            M, V = mass_and_vorticity(z, ops, grid, phys)
            rows.append((energy(z, grid, phys), enstrophy(z, ops, grid, phys), M, V))
        H, Z, M, V = np.array(rows, dtype=float).reshape(-1, 4).T
        return cls(t=np.asarray(times, dtype=float), H=H, Z=Z, M=M, V=V)


invariant_series = InvariantSeries.from_trajectory


def invariant_error_series(series):
    """Time-averaged absolute deviation of each quantity from its initial value.

    The first entry of ``series`` is the reference state ``z^0``; the average
    runs over the remaining ``N_t`` entries.
    """
    if len(series) < 2:
        raise ValueError("need the initial state plus at least one step")
    return {
        name: float(np.mean(np.abs(values[1:] - values[0])))
        for name, values in (("H", series.H), ("Z", series.Z), ("M", series.M), ("V", series.V))
    }


def relative_l2_error(fom_traj, rom_traj, grid):
    """Time-averaged relative discrete L2 error per variable.

    Both trajectories have shape ``(N_t, 3N)`` and hold the states at
    ``t_1, ..., t_{N_t}``.
    """
    fom_traj = np.atleast_2d(np.asarray(fom_traj, dtype=float))
    rom_traj = np.atleast_2d(np.asarray(rom_traj, dtype=float))
    if fom_traj.shape != rom_traj.shape:
        raise ValueError(f"shape mismatch {fom_traj.shape} vs {rom_traj.shape}")
    n_t, n3 = fom_traj.shape
    N = n3 // 3
    ref = fom_traj.reshape(n_t, 3, N)
    diff = (fom_traj - rom_traj).reshape(n_t, 3, N)
    # cell area cancels in the ratio
    area = grid.cell_area
    num = np.sqrt(np.sum(diff * diff, axis=2) * area)
    den = np.sqrt(np.sum(ref * ref, axis=2) * area)
    if np.any(den == 0):
        k, var = np.argwhere(den == 0)[0]
        raise DegenerateReferenceError(f"zero reference norm for {'uvh'[var]} at step {k}")
    rel = np.mean(num / den, axis=0)
    return dict(zip(("u", "v", "h"), map(float, rel)))
