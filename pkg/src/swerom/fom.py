"""Full-order shallow water models and their structure-preserving integrators.

Two semi-discretizations share the state layout ``z = (u; v; h)``:

* the Poisson form ``z' = J(z) grad H(z)`` stepped by the average vector
  field (AVF) method, which conserves the discrete energy exactly;
* the f-plane linear-quadratic form ``z' = R1(z) + R2(z) + L(z)`` stepped by
  Kahan's linearly implicit method (one linear solve per step).
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import (
    DivergenceError,
    LinearSolveError,
    PositivityError,
    StepError,
)

logger = logging.getLogger(__name__)

# state sizes up to this use sparse LU under linear_solver="auto"
AUTO_DIRECT_MAX = 12_000
KRYLOV_RTOL = 1e-13

__all__ = [
    "Physics",
    "TimeSpec",
    "SolverOptions",
    "split",
    "check_positive",
    "potential_vorticity",
    "rhs_hamiltonian",
    "poisson_apply",
    "poisson_matrix",
    "grad_hamiltonian",
    "avf_integral",
    "avf_residual",
    "avf_step",
    "rhs_fplane",
    "fplane_quadratic_parts",
    "fplane_linear_matrix",
    "jacobian_fplane",
    "kahan_step",
    "integrate",
]


@dataclass(frozen=True)
class Physics:
    """Gravity constant ``g`` and Coriolis parameter ``f`` (scalar or per node)."""

    g: float = 1.0
    f: object = 0.0

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError(f"gravity must be positive, got {self.g}")

    def coriolis(self, N):
        return np.broadcast_to(np.asarray(self.f, dtype=float), (N,))


@dataclass(frozen=True)
class TimeSpec:
    dt: float
    n_steps: int

    @classmethod
    def from_final_time(cls, T, dt):
        n_steps = int(round(T / dt))
        if abs(n_steps * dt - T) > 1e-12 * max(abs(T), 1.0):
            raise ValueError(f"T={T} is not a multiple of dt={dt}")
        return cls(dt=T / n_steps if n_steps else dt, n_steps=n_steps)

    @property
    def T(self):
        return self.dt * self.n_steps

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    linear_solver: str = "auto"

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")
        if self.linear_solver not in ("auto", "direct", "krylov"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


def split(z):
    """Views ``(u, v, h)`` of a packed state."""
    N = z.shape[0] // 3
    return z[:N], z[N : 2 * N], z[2 * N :]


def check_positive(h):
    bad = np.flatnonzero(~(h > 0))
    if bad.size:
        raise PositivityError(bad[0], h[bad[0]])


# Poisson (Hamiltonian) form --------------------------------------------------
def potential_vorticity(z, ops, phys):
    u, v, h = split(z)
    check_positive(h)
    return (ops.Dx @ v - ops.Dy @ u + phys.coriolis(ops.N)) / h


def grad_hamiltonian(z, phys):
    """Gradient of the discrete energy without the cell-area factor."""
    u, v, h = split(z)
    return np.concatenate([u * h, v * h, 0.5 * (u * u + v * v) + phys.g * h])


def poisson_apply(z_mid, w, ops, phys, q=None):
    """Apply ``J(z_mid)`` to ``w`` using the diagonal structure of the q-blocks."""
    if q is None:
        q = potential_vorticity(z_mid, ops, phys)
    w1, w2, w3 = split(w)
    return np.concatenate(
        [
            q * w2 - ops.Dx @ w3,
            -q * w1 - ops.Dy @ w3,
            -(ops.Dx @ w1) - ops.Dy @ w2,
        ]
    )


def poisson_matrix(z, ops, phys):
    """Assemble ``J(z)`` as a sparse ``3N x 3N`` matrix."""
    qd = sp.diags(potential_vorticity(z, ops, phys))
    Dx, Dy = ops.Dx, ops.Dy
    return sp.bmat([[None, qd, -Dx], [-qd, None, -Dy], [-Dx, -Dy, None]], format="csr")


def rhs_hamiltonian(z, ops, phys):
    u, v, h = split(z)
    q = potential_vorticity(z, ops, phys)
    Phi = 0.5 * (u * u + v * v) + phys.g * h
    return np.concatenate(
        [
            q * v * h - ops.Dx @ Phi,
            -q * u * h - ops.Dy @ Phi,
            -(ops.Dx @ (u * h)) - ops.Dy @ (v * h),
        ]
    )


def avf_integral(z0, z1, phys):
    """Exact average of ``grad H`` along the segment from ``z0`` to ``z1``."""
    u0, v0, h0 = split(z0)
    u1, v1, h1 = split(z1)
    return np.concatenate(
        [
            (u1 * h1 + u0 * h0) / 3 + (u1 * h0 + u0 * h1) / 6,
            (v1 * h1 + v0 * h0) / 3 + (v1 * h0 + v0 * h1) / 6,
            (u1 * u1 + u1 * u0 + u0 * u0) / 6
            + (v1 * v1 + v1 * v0 + v0 * v0) / 6
            + phys.g * (h1 + h0) / 2,
        ]
    )


def avf_residual(z1, z0, dt, ops, phys):
    mid = 0.5 * (z0 + z1)
    return z1 - z0 - dt * poisson_apply(mid, avf_integral(z0, z1, phys), ops, phys)


def _avf_jacobian(z1, z0, dt, ops, phys):
    """Analytic Jacobian of :func:`avf_residual` with respect to ``z1``."""
    N = ops.N
    Dx, Dy = ops.Dx, ops.Dy
    u0, v0, h0 = split(z0)
    u1, v1, h1 = split(z1)
    mid = 0.5 * (z0 + z1)
    hm = split(mid)[2]
    q = potential_vorticity(mid, ops, phys)
    w1, w2, _ = split(avf_integral(z0, z1, phys))
    d = sp.diags

    # d(integral)/d(z1)
    a_uh = d(h1 / 3 + h0 / 6)
    a_hu = d(u1 / 3 + u0 / 6)
    a_vh = d(h1 / 3 + h0 / 6)
    a_hv = d(v1 / 3 + v0 / 6)
    a_3u = d((2 * u1 + u0) / 6)
    a_3v = d((2 * v1 + v0) / 6)
    a_3h = d(np.full(N, phys.g / 2))
    dI = sp.bmat([[a_uh, None, a_hu], [None, a_vh, a_hv], [a_3u, a_3v, a_3h]])
    J = poisson_matrix(mid, ops, phys)

    # d(J(mid) w)/d(mid) for fixed w; only the q-blocks depend on the state
    s2 = d(w2 / hm)
    s1 = d(w1 / hm)
    dJw = sp.bmat(
        [
            [-(s2 @ Dy), s2 @ Dx, d(-q * w2 / hm)],
            [s1 @ Dy, -(s1 @ Dx), d(q * w1 / hm)],
            [None, None, sp.csr_matrix((N, N))],
        ]
    )
    return (sp.identity(3 * N) - dt * (J @ dI + 0.5 * dJw)).tocsc()


class WavePreconditioner:
    """Exact inverse of ``I - alpha * L0`` where ``L0`` linearizes the system
    about a fluid at rest with uniform depth.

    ``L0`` is block-circulant on the periodic grid, so its inverse reduces to
    one 3x3 solve per Fourier mode. It captures the stiff gravity-wave
    coupling of both the Kahan and the AVF Newton matrices.
    """

    def __init__(self, grid, alpha, depth, f, g):
        self.shape = (grid.nx, grid.ny)
        tx = 2 * np.pi * np.arange(grid.nx) / grid.nx
        ty = 2 * np.pi * np.arange(grid.ny) / grid.ny
        sx = (1j * np.sin(tx) / grid.dx)[:, None] * np.ones((1, grid.ny))
        sy = np.ones((grid.nx, 1)) * (1j * np.sin(ty) / grid.dy)[None, :]
        M = np.zeros(self.shape + (3, 3), dtype=complex)
        M[..., 0, 0] = M[..., 1, 1] = M[..., 2, 2] = 1.0
        M[..., 0, 1] = -alpha * f
        M[..., 1, 0] = alpha * f
        M[..., 0, 2] = alpha * g * sx
        M[..., 1, 2] = alpha * g * sy
        M[..., 2, 0] = alpha * depth * sx
        M[..., 2, 1] = alpha * depth * sy
        self._inv = np.linalg.inv(M)

    def __call__(self, r):
        R = np.fft.fft2(r.reshape((3,) + self.shape), axes=(1, 2))
        Y = np.einsum("xyij,jxy->ixy", self._inv, R)
        return np.fft.ifft2(Y, axes=(1, 2)).real.ravel()


@lru_cache(maxsize=8)
def _wave_preconditioner(grid, alpha, depth, f, g):
    return WavePreconditioner(grid, alpha, depth, f, g)


def _preconditioner_for(z, dt, ops, phys):
    # rounded so that roundoff-level changes of the mean depth reuse the cache
    depth = float(f"{split(z)[2].mean():.6g}")
    f = float(f"{np.mean(phys.coriolis(ops.N)):.6g}")
    return _wave_preconditioner(ops.grid, 0.5 * dt, depth, f, float(phys.g))


def _resolve_solver(name, size):
    if name == "auto":
        return "direct" if size <= AUTO_DIRECT_MAX else "krylov"
    return name


def _solve(A, b, linear_solver="direct", precond=None):
    if linear_solver == "krylov" and precond is not None:
        M = spla.LinearOperator(A.shape, precond)
        x, info = spla.gmres(A, b, M=M, rtol=KRYLOV_RTOL, atol=0.0, restart=60, maxiter=10)
        if info == 0:
            return x
        logger.warning("GMRES stalled (info=%d); falling back to sparse LU", info)
    try:
        lu = spla.splu(A.tocsc())
    except RuntimeError as exc:
        raise LinearSolveError(f"sparse LU failed: {exc}") from None
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        diag = np.abs(lu.U.diagonal())
        cond = diag.max() / max(diag.min(), np.finfo(float).tiny)
        raise LinearSolveError("singular system matrix", condition=cond)
    return x


def avf_step(z0, dt, ops, phys, opts=SolverOptions()):
    """One AVF step solved by Newton's method started from ``z0``."""
    check_positive(split(z0)[2])
    tol = opts.newton_tol * (1.0 + np.linalg.norm(z0))
    solver = _resolve_solver(opts.linear_solver, z0.size)
    z1 = z0.copy()
    r = avf_residual(z1, z0, dt, ops, phys)
    rnorm = np.linalg.norm(r)
    it = 0
    while rnorm > tol:
        if it == opts.newton_max_iter:
            raise DivergenceError(rnorm, it)
        A = _avf_jacobian(z1, z0, dt, ops, phys)
        z1 = z1 - _solve(A, r, solver, _preconditioner_for(z0, dt, ops, phys))
        r = avf_residual(z1, z0, dt, ops, phys)
        rnorm = np.linalg.norm(r)
        it += 1
    logger.debug("AVF step converged in %d iterations, residual %.2e", it, rnorm)
    check_positive(split(z1)[2])
    return z1


# f-plane (linear-quadratic) form ---------------------------------------------
def fplane_quadratic_parts(z, ops):
    """The quadratic fields ``R1(z)`` (x-advection) and ``R2(z)`` (y-advection)."""
    u, v, h = split(z)
    Dx, Dy = ops.Dx, ops.Dy
    R1 = np.concatenate([-u * (Dx @ u), -u * (Dx @ v), -(Dx @ (u * h))])
    R2 = np.concatenate([-v * (Dy @ u), -v * (Dy @ v), -(Dy @ (v * h))])
    return R1, R2


def fplane_linear_matrix(ops, phys):
    """Sparse matrix of the linear part: gravity and Coriolis terms."""
    N = ops.N
    fd = sp.diags(phys.coriolis(N).copy())
    g = phys.g
    return sp.bmat(
        [
            [sp.csr_matrix((N, N)), fd, -g * ops.Dx],
            [-fd, None, -g * ops.Dy],
            [None, None, sp.csr_matrix((N, N))],
        ],
        format="csr",
    )


def rhs_fplane(z, ops, phys):
    u, v, h = split(z)
    Dx, Dy = ops.Dx, ops.Dy
    f = phys.coriolis(ops.N)
    g = phys.g
    return np.concatenate(
        [
            -u * (Dx @ u) - v * (Dy @ u) - g * (Dx @ h) + f * v,
            -u * (Dx @ v) - v * (Dy @ v) - g * (Dy @ h) - f * u,
            -(Dx @ (u * h)) - Dy @ (v * h),
        ]
    )


def jacobian_fplane(z, ops, phys):
    """Analytic Jacobian of :func:`rhs_fplane` as a sparse CSR matrix."""
    u, v, h = split(z)
    Dx, Dy = ops.Dx, ops.Dy
    d = sp.diags
    f = phys.coriolis(ops.N)
    g = phys.g
    du = d(u)
    dv = d(v)
    Juu = -(d(Dx @ u) + du @ Dx + dv @ Dy)
    Juv = -d(Dy @ u) + d(f)
    Jvu = -d(Dx @ v) - d(f)
    Jvv = -(du @ Dx + d(Dy @ v) + dv @ Dy)
    Jhu = -(Dx @ d(h))
    Jhv = -(Dy @ d(h))
    Jhh = -(Dx @ du + Dy @ dv)
    return sp.bmat(
        [[Juu, Juv, -g * Dx], [Jvu, Jvv, -g * Dy], [Jhu, Jhv, Jhh]], format="csr"
    )


def kahan_step(z0, dt, ops, phys, opts=SolverOptions(), stats=None):
    """One Kahan step: a single sparse solve with ``I - dt/2 F'(z0)``.

    ``stats``, if given, is a dict whose ``"linear_solves"`` entry is
    incremented per solve.
    """
    A = sp.identity(z0.shape[0], format="csr") - (0.5 * dt) * jacobian_fplane(z0, ops, phys)
    solver = _resolve_solver(opts.linear_solver, z0.size)
    precond = _preconditioner_for(z0, dt, ops, phys) if solver == "krylov" else None
    delta = _solve(A, dt * rhs_fplane(z0, ops, phys), solver, precond)
    if stats is not None:
        stats["linear_solves"] = stats.get("linear_solves", 0) + 1
    return z0 + delta


_STEPPERS = {"avf": avf_step, "kahan": kahan_step}


def integrate(
    z0,
    scheme,
    ts,
    ops,
    phys,
    opts=SolverOptions(),
    sink: Optional[Callable] = None,
):
    """Advance ``ts.n_steps`` steps, calling ``sink(k, t_k, z_k)`` after each."""
    try:
        step = _STEPPERS[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}") from None
    z = np.array(z0, dtype=float)
    for k in range(1, ts.n_steps + 1):
        try:
            z = step(z, ts.dt, ops, phys, opts)
            if scheme == "kahan":
                check_positive(split(z)[2])
        except Exception as exc:
            raise StepError(k, exc) from exc
        if sink is not None:
            sink(k, k * ts.dt, z)
    return z
