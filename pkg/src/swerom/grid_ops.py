"""Periodic uniform grid and central-difference operators.

Fields on the grid are flat vectors of length ``N = nx * ny`` ordered with
the y-index fastest, i.e. entry ``i * ny + j`` holds the value at
``(x_i, y_j)``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import InvalidSizeError

__all__ = [
    "GridSpec",
    "DiffOps",
    "build_circulant_diff",
    "build_diff_ops",
    "discretize_field",
    "paper_initial_condition",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[a, b] x [c, d]`` with ``nx * ny`` nodes.

    The right and top boundary nodes are omitted since they coincide with
    the left and bottom ones under periodicity.
    """

    nx: int
    ny: int
    a: float = 0.0
    b: float = 1.0
    c: float = 0.0
    d: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise InvalidSizeError("cell counts must be integers")
        if self.nx < 3 or self.ny < 3:
            raise InvalidSizeError(
                f"need at least 3 cells per direction, got {self.nx}x{self.ny}"
            )
        if not (self.b > self.a and self.d > self.c):
            raise InvalidSizeError("empty domain")

    @property
    def dx(self):
        return (self.b - self.a) / self.nx

    @property
    def dy(self):
        return (self.d - self.c) / self.ny

    @property
    def N(self):
        return self.nx * self.ny

    @property
    def cell_area(self):
        return self.dx * self.dy

    @property
    def x(self):
        return self.a + self.dx * np.arange(self.nx)

    @property
    def y(self):
        return self.c + self.dy * np.arange(self.ny)

    def mesh(self):
        """Return node coordinates ``(X, Y)`` as flat vectors in field order."""
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return X.ravel(), Y.ravel()


@dataclass(frozen=True)
class DiffOps:
    """Sparse first-derivative matrices on a :class:`GridSpec`."""

    grid: GridSpec
    Dx: sp.csr_matrix = field(repr=False)
    Dy: sp.csr_matrix = field(repr=False)

    @property
    def N(self):
        return self.grid.N


def build_circulant_diff(s):
    """Periodic central-difference stencil matrix of size ``s x s``.

    Row ``i`` holds ``-1`` at column ``i-1`` and ``+1`` at column ``i+1``,
    both taken modulo ``s``. The result is skew-symmetric with constants in
    its kernel.
    """
    s = int(s)
    if s < 3:
        raise InvalidSizeError(f"circulant difference needs s >= 3, got {s}")
    rows = np.repeat(np.arange(s), 2)
    cols = np.empty(2 * s, dtype=np.int64)
    cols[0::2] = (np.arange(s) - 1) % s
    cols[1::2] = (np.arange(s) + 1) % s
    vals = np.tile([-1.0, 1.0], s)
    D = sp.csr_matrix((vals, (rows, cols)), shape=(s, s))
    D.sort_indices()
    return D


def build_diff_ops(grid):
    """Build ``Dx = D_nx (x) I / (2 dx)`` and ``Dy = I (x) D_ny / (2 dy)``."""
    Dx = sp.kron(build_circulant_diff(grid.nx), sp.identity(grid.ny), format="csr")
    Dy = sp.kron(sp.identity(grid.nx), build_circulant_diff(grid.ny), format="csr")
    Dx = (Dx * (1.0 / (2.0 * grid.dx))).tocsr()
    Dy = (Dy * (1.0 / (2.0 * grid.dy))).tocsr()
    for D in (Dx, Dy):
        D.eliminate_zeros()
        D.sort_indices()
    return DiffOps(grid=grid, Dx=Dx, Dy=Dy)


def discretize_field(grid, fn):
    """Sample ``fn(x, y)`` at the grid nodes in field order.

    ``fn`` receives flat coordinate arrays and may return a scalar, which is
    broadcast.
    """
    X, Y = grid.mesh()
    values = np.asarray(fn(X, Y), dtype=float)
    return np.broadcast_to(values, X.shape).copy()


def paper_initial_condition(grid):
    """Gaussian height bump with a rotating velocity field on the unit square.

    Returns the packed state ``(u; v; h)`` of length ``3N``.
    """
    u = discretize_field(
        grid, lambda x, y: -np.sin(np.pi * x) * np.sin(2 * np.pi * y) / (2 * np.pi)
    )
    v = discretize_field(
        grid, lambda x, y: np.sin(2 * np.pi * x) * np.sin(np.pi * y) / (2 * np.pi)
    )
    h = discretize_field(
        grid,
        lambda x, y: 1.0 + 0.5 * np.exp(-25 * (x - 0.5) ** 2 - 25 * (y - 0.5) ** 2),
    )
    return np.concatenate([u, v, h])
