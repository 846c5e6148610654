"""Proper orthogonal decomposition of mean-centered snapshot matrices.

Trajectories follow the scikit-learn layout: one state per row, so an array
of shape ``(n_snapshots, 3N)``. Internally each variable's snapshot matrix is
stored column-wise, ``N x n_snapshots``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = [
    "SnapshotSet",
    "PodBasis",
    "POD",
    "assemble_snapshots",
    "compute_pod_basis",
    "select_rank",
    "lift",
    "project",
    "thin_svd",
]

VARIABLES = ("u", "v", "h")


class ReducedRankWarning(UserWarning):
    """Fewer POD modes were available than requested."""


@dataclass
class SnapshotSet:
    """Mean-centered snapshots ``S_w`` (``N x N_t``) and means for ``w = u, v, h``."""

    S_u: np.ndarray
    S_v: np.ndarray
    S_h: np.ndarray
    u_mean: np.ndarray
    v_mean: np.ndarray
    h_mean: np.ndarray

    @property
    def matrices(self):
        return (self.S_u, self.S_v, self.S_h)

    @property
    def mean(self):
        return np.concatenate([self.u_mean, self.v_mean, self.h_mean])

    @property
    def n_snapshots(self):
        return self.S_u.shape[1]


@dataclass
class PodBasis:
    """Per-variable orthonormal bases and their full singular value spectra."""

    V_u: np.ndarray
    V_v: np.ndarray
    V_h: np.ndarray
    sigma_u: np.ndarray = field(default=None, repr=False)
    sigma_v: np.ndarray = field(default=None, repr=False)
    sigma_h: np.ndarray = field(default=None, repr=False)
    reduced_rank: bool = False

    @property
    def blocks(self):
        return (self.V_u, self.V_v, self.V_h)

    @property
    def N(self):
        return self.V_u.shape[0]

    @property
    def n(self):
        """Retained modes per variable as a tuple."""
        return tuple(V.shape[1] for V in self.blocks)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.n)])

    def block_matrix(self, sparse=False):
        """The block-diagonal ``3N x sum(n)`` basis matrix."""
        if sparse:
            return sp.block_diag(self.blocks, format="csr")
        return la.block_diag(*self.blocks)

    def truncate(self, n):
        n = _as_triple(n)
        return PodBasis(
            *(V[:, :k] for V, k in zip(self.blocks, n)),
            self.sigma_u,
            self.sigma_v,
            self.sigma_h,
            self.reduced_rank,
        )


def _as_triple(n):
    if np.isscalar(n):
        return (int(n),) * 3
    n = tuple(int(k) for k in n)
    if len(n) != 3:
        raise ValueError("expected one mode count per variable")
    return n


def assemble_snapshots(trajectory):
    """Center the states ``z^1, ..., z^{N_t}`` (rows of ``trajectory``)."""
    X = np.atleast_2d(np.asarray(trajectory, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty trajectory")
    if X.shape[1] % 3:
        raise ValueError(f"state length {X.shape[1]} is not a multiple of 3")
    N = X.shape[1] // 3
    mean = X.mean(axis=0)
    S = (X - mean).T
    return SnapshotSet(
        S_u=S[:N], S_v=S[N : 2 * N], S_h=S[2 * N :],
        u_mean=mean[:N], v_mean=mean[N : 2 * N], h_mean=mean[2 * N :],
    )


def thin_svd(S):
    """Left singular vectors and singular values of ``S`` with a fixed sign.

    Each singular vector is flipped so that its largest-magnitude entry is
    positive. Wide matrices go through the eigendecomposition of ``S S^T``.
    """
    S = np.asarray(S, dtype=float)
    N, k = S.shape
    if k <= N:
        U, s, _ = la.svd(S, full_matrices=False, lapack_driver="gesdd")
    else:
        w, U = la.eigh(S @ S.T)
        order = np.argsort(w)[::-1]
        U = U[:, order]
        s = np.sqrt(np.clip(w[order], 0.0, None))
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, s


def select_rank(sigma, kappa):
    """Smallest ``n`` whose cumulative energy fraction exceeds ``1 - kappa``."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size == 0 or not np.any(sigma > 0):
        raise ValueError("singular values are all zero")
    if np.any(sigma < 0) or np.any(np.diff(sigma) > 0):
        raise ValueError("singular values must be nonnegative and nonincreasing")
    # scaling by sigma[0] keeps tiny values from underflowing when squared
    e = (sigma / sigma[0]) ** 2
    energy = np.cumsum(e) / np.sum(e)
    hits = np.flatnonzero(energy > 1.0 - kappa)
    # roundoff can leave the full sum a hair below 1 for tiny kappa
    return int(hits[0]) + 1 if hits.size else sigma.size


def _numerical_rank(s, shape):
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > s[0] * max(shape) * np.finfo(float).eps))


def compute_pod_basis(snap, n=None, kappa=None):
    """POD basis of a :class:`SnapshotSet` with a fixed rank or energy criterion.

    Exactly one of ``n`` (int or one int per variable) and ``kappa`` must be
    given. Requests beyond the numerical rank are truncated with a
    :class:`ReducedRankWarning`.
    """
    if (n is None) == (kappa is None):
        raise ValueError("give exactly one of n and kappa")
    Us, sigmas = [], []
    for S in snap.matrices:
        U, s = thin_svd(S)
        Us.append(U)
        sigmas.append(s)
    if kappa is not None:
        n = tuple(select_rank(s, kappa) for s in sigmas)
    n = _as_triple(n)
    reduced = False
    blocks = []
    for name, U, s, k, S in zip(VARIABLES, Us, sigmas, n, snap.matrices):
        rank = _numerical_rank(s, S.shape)
        if rank == 0:
            raise ValueError(f"snapshot matrix for {name} is zero")
        if k > rank:
            warnings.warn(
                f"{name}: requested {k} modes but numerical rank is {rank}",
                ReducedRankWarning,
                stacklevel=2,
            )
            k, reduced = rank, True
        blocks.append(np.ascontiguousarray(U[:, :k]))
    return PodBasis(*blocks, *sigmas, reduced_rank=reduced)


def lift(z_r, basis, mean):
    """Map reduced coordinates (last axis) to full states ``mean + V z_r``."""
    z_r = np.asarray(z_r, dtype=float)
    off = basis.offsets
    if z_r.shape[-1] != off[-1]:
        raise ValueError(f"reduced state has length {z_r.shape[-1]}, expected {off[-1]}")
    parts = [z_r[..., off[i] : off[i + 1]] @ V.T for i, V in enumerate(basis.blocks)]
    return np.concatenate(parts, axis=-1) + mean


def project(z, basis, mean):
    """Reduced coordinates ``V^T (z - mean)`` of full states (last axis)."""
    z = np.asarray(z, dtype=float)
    N = basis.N
    if z.shape[-1] != 3 * N:
        raise ValueError(f"state has length {z.shape[-1]}, expected {3 * N}")
    d = z - mean
    return np.concatenate(
        [d[..., i * N : (i + 1) * N] @ V for i, V in enumerate(basis.blocks)], axis=-1
    )


class POD(TransformerMixin, BaseEstimator):
    """Mean-centered POD of ``(u, v, h)`` trajectories.

    Parameters
    ----------
    n_modes : int or tuple of 3 ints, optional
        Modes kept per variable.
    energy_tol : float, optional
        Cumulative-energy tolerance ``kappa``; used when ``n_modes`` is None.

    Attributes
    ----------
    basis_ : PodBasis
    mean_ : ndarray of shape (3N,)
    n_modes_ : tuple of int
    """

    def __init__(self, n_modes=None, energy_tol=None):
        self.n_modes = n_modes
        self.energy_tol = energy_tol

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.n_modes is None and self.energy_tol is None:
            raise ValueError("set n_modes or energy_tol")
        snap = assemble_snapshots(X)
        if self.n_modes is not None:
            self.basis_ = compute_pod_basis(snap, n=self.n_modes)
        else:
            self.basis_ = compute_pod_basis(snap, kappa=self.energy_tol)
        self.mean_ = snap.mean
        self.n_modes_ = self.basis_.n
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X, dtype=np.float64)
        return project(X, self.basis_, self.mean_)

    def inverse_transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X, dtype=np.float64)
        return lift(X, self.basis_, self.mean_)
