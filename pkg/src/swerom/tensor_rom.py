"""Tensorial POD for the f-plane model.

The quadratic part of the f-plane system is written with Kronecker products,

    R1(z) = -A_x Q((u; u; u) kron (B_x z)),
    R2(z) = -A_y Q((v; v; v) kron (B_y z)),

where ``Q`` is the matricized 3-tensor with ``Q(a kron b) = a * b``. Its
Galerkin projection is precomputed exactly, so online evaluation of the
reduced right-hand side never touches the full grid.

Reduced tensors use the layout ``Q_r[a, p * nz + q]`` where ``p`` runs over
the columns of the replicated basis ``blockdiag(V_w, V_w, V_w)`` and ``q``
over the columns of ``V_z``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import LinearSolveError, MemoryGuardError
from .fom import Physics, fplane_linear_matrix, rhs_fplane, split
from .grid_ops import build_diff_ops
from .pod import assemble_snapshots, compute_pod_basis, lift, project

logger = logging.getLogger(__name__)

__all__ = [
    "BlockOps",
    "TpodModel",
    "build_block_ops",
    "quadratic_action",
    "quadratic_selection_matrix",
    "full_quadratic_form",
    "build_reduced_quadratic_naive",
    "build_reduced_quadratic_mumode",
    "build_reduced_quadratic_rowwise",
    "build_affine_terms",
    "build_tpod_model",
    "reduced_rhs_tpod",
    "reduced_jacobian_tpod",
    "kahan_step_reduced",
    "TpodKahan",
]

NAIVE_MAX_ENTRIES = 10**7
DEFAULT_MAX_BYTES = 256 * 2**20


@dataclass(frozen=True)
class BlockOps:
    """Block-diagonal operators of the Kronecker form plus the linear part ``L``."""

    A_x: sp.csr_matrix = field(repr=False)
    A_y: sp.csr_matrix = field(repr=False)
    B_x: sp.csr_matrix = field(repr=False)
    B_y: sp.csr_matrix = field(repr=False)
    L: sp.csr_matrix = field(repr=False)

    @property
    def N(self):
        return self.A_x.shape[0] // 3


def build_block_ops(ops, phys):
    I = sp.identity(ops.N, format="csr")
    bd = lambda *b: sp.block_diag(b, format="csr")
    return BlockOps(
        A_x=bd(I, I, ops.Dx),
        A_y=bd(I, I, ops.Dy),
        B_x=bd(ops.Dx, ops.Dx, I),
        B_y=bd(ops.Dy, ops.Dy, I),
        L=fplane_linear_matrix(ops, phys),
    )


def quadratic_action(a, b):
    """``Q(a kron b)``, which is the elementwise product ``a * b``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    return a * b


def quadratic_selection_matrix(n):
    """Explicit sparse ``n x n^2`` matrix ``Q`` (tiny sizes only)."""
    i = np.arange(n)
    return sp.csr_matrix((np.ones(n), (i, i * n + i)), shape=(n, n * n))


def _replicate(w):
    return np.concatenate([w, w, w])


def full_quadratic_form(z, blocks):
    """Right-hand side of the f-plane system evaluated in Kronecker form."""
    u, v, _ = split(z)
    R1 = -(blocks.A_x @ quadratic_action(_replicate(u), blocks.B_x @ z))
    R2 = -(blocks.A_y @ quadratic_action(_replicate(v), blocks.B_y @ z))
    return R1 + R2 + blocks.L @ z


# Reduced quadratic tensors ---------------------------------------------------
def _direction(blocks, which):
    if which == "u":
        return blocks.A_x, blocks.B_x, 0
    if which == "v":
        return blocks.A_y, blocks.B_y, 1
    raise ValueError(which)


def _count(counter, n):
    if counter is not None:
        counter["multiplies"] = counter.get("multiplies", 0) + int(n)


def _naive_one(basis, blocks, which):
    A, B, var = _direction(blocks, which)
    Vz = basis.block_matrix()
    Vw = basis.blocks[var]
    Vstar = la.block_diag(Vw, Vw, Vw)
    G = B @ Vz
    n3N = Vz.shape[0]
    if n3N * Vstar.shape[1] * G.shape[1] > NAIVE_MAX_ENTRIES or (
        n3N**2 * Vstar.shape[1] * G.shape[1] > 5 * NAIVE_MAX_ENTRIES
    ):
        raise MemoryGuardError("naive Kronecker builder is for tiny sizes only")
    K = np.kron(Vstar, G)
    QK = quadratic_selection_matrix(n3N) @ K
    return -(Vz.T @ (A @ QK))


def build_reduced_quadratic_naive(basis, blocks):
    """Reference builder: materializes ``V* kron G`` and the explicit ``Q``."""
    return _naive_one(basis, blocks, "u"), _naive_one(basis, blocks, "v")


def _chunks(total, per_item_bytes, max_bytes):
    per_item_bytes = max(per_item_bytes, 1)
    if per_item_bytes > max_bytes:
        raise MemoryGuardError(
            f"one slice needs {per_item_bytes} bytes, above the {max_bytes} byte limit"
        )
    step = max(1, int(max_bytes // per_item_bytes))
    for start in range(0, total, step):
        yield slice(start, min(start + step, total))


def _mumode_one(basis, blocks, which, max_bytes, counter):
    A, B, var = _direction(blocks, which)
    Vz = basis.block_matrix()
    Vw = basis.blocks[var]
    Vstar = la.block_diag(Vw, Vw, Vw)
    nz = Vz.shape[1]
    npp = Vstar.shape[1]
    n3N = Vz.shape[0]
    # step 1: Y = -Vz^T A Q has only the diagonal fibres Y[:, i, i] = Y1[:, i]
    Y1 = -np.asarray((A.T @ Vz).T)
    G = np.asarray(B @ Vz)
    out = np.zeros((nz, npp, nz))
    for sl in _chunks(n3N, 8 * nz * nz, max_bytes):
        # step 2: mode product with G^T along the second factor axis
        Z = Y1[:, sl, None] * G[None, sl, :]
        _count(counter, Z.size)
        # step 3: mode product with Vstar^T along the first factor axis,
        # done on the unfolding with the grid axis as rows
        Z3 = np.ascontiguousarray(Z.transpose(1, 0, 2)).reshape(Z.shape[1], nz * nz)
        out += (Vstar[sl].T @ Z3).reshape(npp, nz, nz).transpose(1, 0, 2)
        _count(counter, npp * Z3.size)
    return out.reshape(nz, npp * nz)


def build_reduced_quadratic_mumode(basis, blocks, max_bytes=DEFAULT_MAX_BYTES, counter=None):
    """Three successive mode products with dense unfoldings.

    Only the diagonal-fibre sparsity of ``Q`` is used; the grid axis is
    processed in slices that keep the intermediate tensor under
    ``max_bytes``.
    """
    return (
        _mumode_one(basis, blocks, "u", max_bytes, counter),
        _mumode_one(basis, blocks, "v", max_bytes, counter),
    )


def _rowwise_one(basis, blocks, which, batched, max_bytes, counter):
    A, B, var = _direction(blocks, which)
    N = basis.N
    Vw = basis.blocks[var]
    nw = Vw.shape[1]
    off = basis.offsets
    nz = off[-1]
    Q = np.zeros((nz, 3 * nw, nz))
    # V*, G = B Vz and A^T Vz are all block diagonal, so row i of the
    # face-splitting product V*(i,:) kron G(i,:) is supported on a single
    # (n_w x n_b) block, and only block b of -Vz^T A touches rows of block b.
    for b in range(3):
        rows = slice(b * N, (b + 1) * N)
        Vb = basis.blocks[b]
        nb = Vb.shape[1]
        Gb = np.asarray(B[rows, rows] @ Vb)
        Cb = -np.asarray((A[rows, rows].T @ Vb).T)
        acc = np.zeros((nb, nw * nb))
        if batched:
            for sl in _chunks(N, 8 * nw * nb, max_bytes):
                Nrows = (Vw[sl, :, None] * Gb[sl, None, :]).reshape(Vw[sl].shape[0], nw * nb)
                acc += Cb[:, sl] @ Nrows
        else:
            for i in range(N):
                acc += np.outer(Cb[:, i], np.outer(Vw[i], Gb[i]).ravel())
        _count(counter, N * nw * nb + N * nb * nw * nb)
        Q[off[b] : off[b + 1], b * nw : (b + 1) * nw, off[b] : off[b + 1]] = acc.reshape(nb, nw, nb)
    return Q.reshape(nz, 3 * nw * nz)


def build_reduced_quadratic_rowwise(
    basis, blocks, batched=True, max_bytes=DEFAULT_MAX_BYTES, counter=None
):
    """Builder based on the row-wise Kronecker (face-splitting) identity.

    With ``batched=True`` all row outer products of a slice are formed in a
    single broadcast and contracted with ``-Vz^T A`` in one matrix product;
    otherwise rows are accumulated one at a time.
    """
    return (
        _rowwise_one(basis, blocks, "u", batched, max_bytes, counter),
        _rowwise_one(basis, blocks, "v", batched, max_bytes, counter),
    )


BUILDERS = {
    "naive": build_reduced_quadratic_naive,
    "mumode": build_reduced_quadratic_mumode,
    "rowwise": lambda basis, blocks: build_reduced_quadratic_rowwise(basis, blocks, batched=False),
    "rowwise-batched": build_reduced_quadratic_rowwise,
}


def build_affine_terms(basis, mean, blocks):
    """Constant ``c_r`` and linear ``L_r`` of the reduced model.

    Collects the mean-mean terms, the two mean-cross terms of each quadratic
    part, and the projected gravity/Coriolis operator.
    """
    N = basis.N
    Vz = basis.block_matrix()
    off = basis.offsets
    nz = off[-1]
    ub, vb, _ = split(mean)
    c = blocks.L @ mean
    Lfull = np.asarray(blocks.L @ Vz)
    for (A, B, var, wbar) in ((blocks.A_x, blocks.B_x, 0, ub), (blocks.A_y, blocks.B_y, 1, vb)):
        wstar = _replicate(wbar)
        Bz = np.asarray(B @ mean)
        c = c - A @ (wstar * Bz)
        # d/dz_r of  wstar * (B Vz z_r) + (Vstar E z_r) * (B zbar)
        Vw = basis.blocks[var]
        cross = wstar[:, None] * np.asarray(B @ Vz)
        cross[:, off[var] : off[var + 1]] += Bz[:, None] * np.vstack([Vw, Vw, Vw])
        Lfull -= np.asarray(A @ cross)
    c_r = Vz.T @ c
    L_r = Vz.T @ Lfull
    return c_r, L_r


@dataclass
class TpodModel:
    """Precomputed reduced linear-quadratic model.

    ``F_r(z_r) = c_r + L_r z_r + Q_ur (u~_r kron z_r) + Q_vr (v~_r kron z_r)``
    with ``u~_r = (u_r; u_r; u_r)``.
    """

    Q_ur: np.ndarray = field(repr=False)
    Q_vr: np.ndarray = field(repr=False)
    L_r: np.ndarray = field(repr=False)
    c_r: np.ndarray = field(repr=False)
    basis: object = field(repr=False)
    mean: np.ndarray = field(repr=False)

    def __post_init__(self):
        off = self.basis.offsets
        nz = off[-1]
        self._slices = (slice(off[0], off[1]), slice(off[1], off[2]))
        # sum the three replicated blocks of the first factor: (nz, n_w, nz)
        self._T = []
        for Q, var in ((self.Q_ur, 0), (self.Q_vr, 1)):
            nw = self.basis.n[var]
            T = Q.reshape(nz, 3, nw, nz).sum(axis=1)
            self._T.append(np.ascontiguousarray(T))

    @property
    def n_reduced(self):
        return self.L_r.shape[0]

    def quadratic(self, z_r):
        out = np.zeros_like(self.c_r)
        for T, sl in zip(self._T, self._slices):
            out += np.einsum("ajq,j,q->a", T, z_r[sl], z_r, optimize=True)
        return out


def build_tpod_model(basis, mean, blocks, builder="rowwise-batched", phys=None, ops=None):
    """Assemble a :class:`TpodModel`; checks ``c_r`` against ``V^T F(mean)`` if
    ``ops`` and ``phys`` are given."""
    Q_ur, Q_vr = BUILDERS[builder](basis, blocks)
    c_r, L_r = build_affine_terms(basis, mean, blocks)
    if ops is not None and phys is not None:
        ref = project(rhs_fplane(mean, ops, phys), basis, np.zeros_like(mean))
        err = np.linalg.norm(ref - c_r)
        if err > 1e-10 * (1.0 + np.linalg.norm(ref)):
            raise RuntimeError(f"reduced constant term inconsistent (error {err:.3e})")
    return TpodModel(Q_ur=Q_ur, Q_vr=Q_vr, L_r=L_r, c_r=c_r, basis=basis, mean=mean)


def reduced_rhs_tpod(z_r, model):
    z_r = np.asarray(z_r, dtype=float)
    return model.c_r + model.L_r @ z_r + model.quadratic(z_r)


def reduced_jacobian_tpod(z_r, model):
    z_r = np.asarray(z_r, dtype=float)
    J = model.L_r.copy()
    for T, sl in zip(model._T, model._slices):
        J[:, sl] += T @ z_r
        J += np.einsum("ajq,j->aq", T, z_r[sl])
    return J


def kahan_step_reduced(z_r, dt, model):
    """Kahan step of the reduced system: one dense solve."""
    z_r = np.asarray(z_r, dtype=float)
    A = np.eye(z_r.size) - 0.5 * dt * reduced_jacobian_tpod(z_r, model)
    try:
        lu = la.lu_factor(A, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise LinearSolveError(f"reduced Kahan matrix: {exc}") from None
    diag = np.abs(np.diag(lu[0]))
    if diag.min() == 0:
        raise LinearSolveError("singular reduced Kahan matrix", condition=np.inf)
    return z_r + la.lu_solve(lu, dt * reduced_rhs_tpod(z_r, model))


class TpodKahan(BaseEstimator):
    """Tensorial POD reduced model of the f-plane equations with Kahan stepping.

    Parameters
    ----------
    grid : GridSpec
    physics : Physics
    n_modes : int or tuple, optional
        POD modes per variable. Ignored if ``energy_tol`` is set.
    energy_tol : float, optional
    builder : {"rowwise-batched", "rowwise", "mumode", "naive"}
        Algorithm for the reduced quadratic tensors.
    """

    def __init__(self, grid=None, physics=None, n_modes=30, energy_tol=None, builder="rowwise-batched"):
        self.grid = grid
        self.physics = physics
        self.n_modes = n_modes
        self.energy_tol = energy_tol
        self.builder = builder

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        phys = self.physics or Physics()
        ops = build_diff_ops(self.grid)
        snap = assemble_snapshots(X)
        if self.energy_tol is not None:
            basis = compute_pod_basis(snap, kappa=self.energy_tol)
        else:
            basis = compute_pod_basis(snap, n=self.n_modes)
        self.basis_ = basis
        self.mean_ = snap.mean
        self.fit_basis_only(ops, phys)
        self.n_features_in_ = X.shape[1]
        return self

    def fit_basis_only(self, ops, phys):
        """Build the reduced operators from ``basis_`` and ``mean_``."""
        blocks = build_block_ops(ops, phys)
        self.model_ = build_tpod_model(
            self.basis_, self.mean_, blocks, builder=self.builder, phys=phys, ops=ops
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return project(check_array(X, dtype=np.float64), self.basis_, self.mean_)

    def inverse_transform(self, X):
        check_is_fitted(self, "basis_")
        return lift(check_array(X, dtype=np.float64), self.basis_, self.mean_)

    def rhs(self, z_r):
        check_is_fitted(self, "model_")
        return reduced_rhs_tpod(z_r, self.model_)

    def step(self, z_r, dt):
        check_is_fitted(self, "model_")
        return kahan_step_reduced(z_r, dt, self.model_)

    def simulate(self, z0, dt, n_steps, sink=None):
        check_is_fitted(self, "model_")
        out = np.empty((n_steps + 1, self.model_.n_reduced))
        out[0] = project(np.asarray(z0, dtype=float), self.basis_, self.mean_)
        for k in range(1, n_steps + 1):
            out[k] = kahan_step_reduced(out[k - 1], dt, self.model_)
            if sink is not None:
                sink(k, k * dt, out[k])
        return out

    def predict(self, z0, dt, n_steps):
        return lift(self.simulate(z0, dt, n_steps), self.basis_, self.mean_)
