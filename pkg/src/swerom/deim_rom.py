"""POD-Galerkin reduction of the Poisson-form model with DEIM hyper-reduction.

The three components of the right-hand side are each interpolated from a
few sampled grid rows. Sampled rows are evaluated from the lifted state at
the rows themselves and their stencil neighbours only, so the online cost
does not depend on the grid size.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateBasisError, DivergenceError, PositivityError
from .fom import Physics, SolverOptions, rhs_hamiltonian
from .grid_ops import build_diff_ops
from .pod import assemble_snapshots, compute_pod_basis, project, lift, thin_svd, select_rank

logger = logging.getLogger(__name__)

__all__ = [
    "NonlinearSnapshotSet",
    "DeimOperator",
    "SampledEvaluator",
    "collect_nonlinearity_snapshots",
    "deim_points",
    "build_deim_operator",
    "reduced_rhs_deim",
    "avf_step_reduced",
    "PodDeimAVF",
]


@dataclass
class NonlinearSnapshotSet:
    G_1: np.ndarray
    G_2: np.ndarray
    G_3: np.ndarray

    @property
    def matrices(self):
        return (self.G_1, self.G_2, self.G_3)


def collect_nonlinearity_snapshots(trajectory, ops, phys):
    """Columns of ``G_i`` are the i-th component of ``F(z^k)`` for each row ``z^k``."""
    X = np.atleast_2d(np.asarray(trajectory, dtype=float))
    if X.shape[1] != 3 * ops.N:
        raise ValueError(f"states have length {X.shape[1]}, grid needs {3 * ops.N}")
    F = np.empty((3 * ops.N, X.shape[0]))
    for k, z in enumerate(X):
        F[:, k] = rhs_hamiltonian(z, ops, phys)
    N = ops.N
    return NonlinearSnapshotSet(G_1=F[:N], G_2=F[N : 2 * N], G_3=F[2 * N :])


def deim_points(V_F):
    """Greedy DEIM interpolation indices (0-based) for the columns of ``V_F``.

    Ties in ``argmax`` resolve to the smallest index.
    """
    V_F = np.asarray(V_F, dtype=float)
    if V_F.ndim == 1:
        V_F = V_F[:, None]
    N, m = V_F.shape
    if m == 0 or m > N:
        raise DegenerateBasisError(f"cannot pick {m} points from {N} rows")
    p = [int(np.argmax(np.abs(V_F[:, 0])))]
    for j in range(1, m):
        A = V_F[p, :j]
        try:
            c = la.solve(A, V_F[p, j])
        except la.LinAlgError:
            raise DegenerateBasisError(f"interpolation system singular at step {j}") from None
        r = V_F[:, j] - V_F[:, :j] @ c
        p.append(int(np.argmax(np.abs(r))))
    if len(set(p)) != m:
        raise DegenerateBasisError("DEIM selected a repeated index")
    return np.array(p, dtype=np.int64)


@dataclass
class DeimOperator:
    """Per-component DEIM data.

    ``coefficients[i]`` is ``V_w^T V_F (P^T V_F)^{-1}`` of shape ``n x m``.
    """

    indices: list
    coefficients: list
    bases: list = field(repr=False)
    conditions: list

    @property
    def m(self):
        return tuple(len(p) for p in self.indices)


def build_deim_operator(basis, nonlinear_bases, points=None):
    """Precompute the DEIM projection matrices for all three components."""
    if points is None:
        points = [deim_points(V_F) for V_F in nonlinear_bases]
    indices, coeffs, conds = [], [], []
    for V, V_F, p in zip(basis.blocks, nonlinear_bases, points):
        p = np.asarray(p, dtype=np.int64)
        if V_F.shape[0] != V.shape[0] or V_F.shape[1] != p.size:
            raise ValueError("nonlinear basis, points and POD basis are inconsistent")
        if np.unique(p).size != p.size or p.min() < 0 or p.max() >= V.shape[0]:
            raise DegenerateBasisError("DEIM indices must be distinct and in range")
        PV = V_F[p]
        cond = np.linalg.cond(PV)
        if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
            raise DegenerateBasisError(f"interpolation matrix is singular (cond={cond:.3e})")
        # V^T V_F (P^T V_F)^{-1} = ((P^T V_F)^{-T} V_F^T V)^T
        coeffs.append(la.solve(PV.T, V_F.T @ V).T)
        indices.append(p)
        conds.append(float(cond))
    return DeimOperator(indices=indices, coefficients=coeffs, bases=list(nonlinear_bases), conditions=conds)


class SampledEvaluator:
    """Evaluates sampled rows of the full right-hand sides from reduced states.

    Only the nodes in ``nodes`` (sampled rows plus their stencil neighbours)
    are ever lifted. ``entry_evaluations`` counts lifted grid nodes per
    evaluated state.
    """

    def __init__(self, indices, basis, mean, ops, phys):
        N = ops.N
        self.indices = [np.asarray(p, dtype=np.int64) for p in indices]
        rows = np.unique(np.concatenate(self.indices))
        neighbours = [rows]
        for D in (ops.Dx, ops.Dy):
            neighbours.append(D[rows].indices)
        self.nodes = np.unique(np.concatenate(neighbours))
        loc = {int(g): i for i, g in enumerate(self.nodes)}
        self._pos = [np.array([loc[int(g)] for g in p], dtype=np.int64) for p in self.indices]
        self._Dx = [ops.Dx[p][:, self.nodes].tocsr() for p in self.indices]
        self._Dy = [ops.Dy[p][:, self.nodes].tocsr() for p in self.indices]
        self._f = [phys.coriolis(N)[p] for p in self.indices]
        self.g = phys.g
        off = basis.offsets
        self._off = off
        self._V = [V[self.nodes] for V in basis.blocks]
        self._mean = [mean[i * N + self.nodes] for i in range(3)]
        self.entry_evaluations = 0

    def lift_local(self, z_r):
        """Lifted ``(u, v, h)`` at ``self.nodes``; batched over trailing axis."""
        z_r = np.asarray(z_r, dtype=float)
        batch = z_r.ndim == 2
        Z = z_r if batch else z_r[:, None]
        off = self._off
        out = []
        for i in range(3):
            out.append(self._mean[i][:, None] + self._V[i] @ Z[off[i] : off[i + 1]])
        self.entry_evaluations += self.nodes.size * Z.shape[1]
        return out

    def _q(self, i, u, v, h):
        hp = h[self._pos[i]]
        bad = np.argwhere(~(hp > 0))
        if bad.size:
            node = self.indices[i][bad[0, 0]]
            raise PositivityError(node, hp[tuple(bad[0])])
        return (self._Dx[i] @ v - self._Dy[i] @ u + self._f[i][:, None]) / hp

    def rhs(self, local):
        """Sampled rows ``P_i^T F_i`` of the Poisson-form right-hand side."""
        u, v, h = local
        Phi = 0.5 * (u * u + v * v) + self.g * h
        p1, p2, p3 = self._pos
        F1 = self._q(0, u, v, h) * v[p1] * h[p1] - self._Dx[0] @ Phi
        F2 = -self._q(1, u, v, h) * u[p2] * h[p2] - self._Dy[1] @ Phi
        F3 = -(self._Dx[2] @ (u * h)) - self._Dy[2] @ (v * h)
        return F1, F2, F3

    def avf(self, local0, local1):
        """Sampled rows of ``J((a+b)/2) avf_integral(a, b)``."""
        u0, v0, h0 = local0
        u1, v1, h1 = local1
        um, vm, hm = 0.5 * (u0 + u1), 0.5 * (v0 + v1), 0.5 * (h0 + h1)
        I1 = (u1 * h1 + u0 * h0) / 3 + (u1 * h0 + u0 * h1) / 6
        I2 = (v1 * h1 + v0 * h0) / 3 + (v1 * h0 + v0 * h1) / 6
        I3 = (u1 * u1 + u1 * u0 + u0 * u0) / 6 + (v1 * v1 + v1 * v0 + v0 * v0) / 6 + self.g * (h1 + h0) / 2
        p1, p2, _ = self._pos
        F1 = self._q(0, um, vm, hm) * I2[p1] - self._Dx[0] @ I3
        F2 = -self._q(1, um, vm, hm) * I1[p2] - self._Dy[1] @ I3
        F3 = -(self._Dx[2] @ I1) - self._Dy[2] @ I2
        return F1, F2, F3


def _project_sampled(op, sampled):
    return np.concatenate([C @ F for C, F in zip(op.coefficients, sampled)], axis=0)


def reduced_rhs_deim(z_r, op, evaluator):
    """DEIM-approximated reduced right-hand side ``[V_i P_i^T F_i(z_hat)]_i``."""
    z_r = np.asarray(z_r, dtype=float)
    out = _project_sampled(op, evaluator.rhs(evaluator.lift_local(z_r)))
    return out if z_r.ndim == 2 else out[:, 0]


def avf_step_reduced(z_r, dt, op, evaluator, opts=SolverOptions()):
    """Reduced AVF step by Newton with a forward-difference Jacobian."""
    z_r = np.asarray(z_r, dtype=float)
    n3 = z_r.size
    local0 = evaluator.lift_local(z_r)

    def residual(Y):
        F = _project_sampled(op, evaluator.avf(local0, evaluator.lift_local(Y)))
        return Y - z_r[:, None] - dt * F

    tol = opts.newton_tol * (1.0 + np.linalg.norm(z_r))
    y = z_r.copy()
    r = residual(y[:, None])[:, 0]
    rnorm = np.linalg.norm(r)
    it = 0
    while rnorm > tol:
        if it == opts.newton_max_iter:
            raise DivergenceError(rnorm, it)
        step = np.sqrt(np.finfo(float).eps) * (1.0 + np.abs(y))
        Yp = y[:, None] + np.diag(step)
        Jac = (residual(Yp) - r[:, None]) / step
        y = y - la.solve(Jac, r)
        r = residual(y[:, None])[:, 0]
        rnorm = np.linalg.norm(r)
        it += 1
    logger.debug("reduced AVF step: %d iterations, residual %.2e", it, rnorm)
    h = evaluator.lift_local(y)[2]
    if np.any(h <= 0):
        i = int(np.argmin(h[:, 0]))
        raise PositivityError(evaluator.nodes[i], h[i, 0])
    return y


class PodDeimAVF(BaseEstimator):
    """POD-DEIM reduced model of the Poisson-form equations with AVF stepping.

    Parameters
    ----------
    grid : GridSpec
    physics : Physics
    n_modes : int or tuple, optional
        POD modes per variable. Ignored if ``energy_tol`` is set.
    n_deim : int, optional
        DEIM modes per component. ``None`` disables hyper-reduction: every
        grid row is sampled, giving the plain POD-Galerkin model.
    energy_tol, deim_energy_tol : float, optional
        Cumulative-energy criteria for choosing ``n_modes`` / ``n_deim``.
    newton_tol, newton_max_iter : Newton settings of the reduced AVF step.

    The training data passed to :meth:`fit` are the FOM states at
    ``t_1, ..., t_{N_t}``, one per row.
    """

    def __init__(
        self,
        grid=None,
        physics=None,
        n_modes=30,
        n_deim=90,
        energy_tol=None,
        deim_energy_tol=None,
        newton_tol=1e-10,
        newton_max_iter=25,
    ):
        self.grid = grid
        self.physics = physics
        self.n_modes = n_modes
        self.n_deim = n_deim
        self.energy_tol = energy_tol
        self.deim_energy_tol = deim_energy_tol
        self.newton_tol = newton_tol
        self.newton_max_iter = newton_max_iter

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        phys = self.physics or Physics()
        ops = build_diff_ops(self.grid)
        snap = assemble_snapshots(X)
        if self.energy_tol is not None:
            basis = compute_pod_basis(snap, kappa=self.energy_tol)
        else:
            basis = compute_pod_basis(snap, n=self.n_modes)
        N = ops.N
        if self.n_deim is None and self.deim_energy_tol is None:
            # P = I and V_F = I: the coefficients reduce to V^T
            op = DeimOperator(
                indices=[np.arange(N, dtype=np.int64)] * 3,
                coefficients=[np.ascontiguousarray(V.T) for V in basis.blocks],
                bases=[None] * 3,
                conditions=[1.0] * 3,
            )
            self.nonlinear_singular_values_ = None
        else:
            G = collect_nonlinearity_snapshots(X, ops, phys)
            bases, sigmas = [], []
            for Gi in G.matrices:
                U, s = thin_svd(Gi)
                m = select_rank(s, self.deim_energy_tol) if self.deim_energy_tol is not None else self.n_deim
                bases.append(np.ascontiguousarray(U[:, :m]))
                sigmas.append(s)
            op = build_deim_operator(basis, bases)
            self.nonlinear_singular_values_ = sigmas
        self.ops_ = ops
        self.physics_ = phys
        self.basis_ = basis
        self.mean_ = snap.mean
        self.deim_ = op
        self.evaluator_ = SampledEvaluator(op.indices, basis, snap.mean, ops, phys)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def options_(self):
        return SolverOptions(newton_tol=self.newton_tol, newton_max_iter=self.newton_max_iter)

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return project(check_array(X, dtype=np.float64), self.basis_, self.mean_)

    def inverse_transform(self, X):
        check_is_fitted(self, "basis_")
        return lift(check_array(X, dtype=np.float64), self.basis_, self.mean_)

    def rhs(self, z_r):
        check_is_fitted(self, "deim_")
        return reduced_rhs_deim(z_r, self.deim_, self.evaluator_)

    def step(self, z_r, dt):
        check_is_fitted(self, "deim_")
        return avf_step_reduced(z_r, dt, self.deim_, self.evaluator_, self.options_)

    def simulate(self, z0, dt, n_steps, sink=None):
        """Reduced trajectory ``(n_steps + 1, 3n)`` starting from the projection of ``z0``."""
        check_is_fitted(self, "deim_")
        out = np.empty((n_steps + 1, self.basis_.offsets[-1]))
        out[0] = project(np.asarray(z0, dtype=float), self.basis_, self.mean_)
        for k in range(1, n_steps + 1):
            out[k] = self.step(out[k - 1], dt)
            if sink is not None:
                sink(k, k * dt, out[k])
        return out

    def predict(self, z0, dt, n_steps):
        """Lifted approximations of the states at ``t_0, ..., t_{n_steps}``."""
        return lift(self.simulate(z0, dt, n_steps), self.basis_, self.mean_)
