"""Binary matrix files and model directories.

A matrix file is the 7-byte magic ``SWROM1\\0``, a little-endian u32 version,
u64 rows, u64 cols and then the entries in column-major order. Version 1
holds float64 entries and version 2 holds int64 entries.
"""

import json
import os
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError

__all__ = [
    "MAGIC",
    "write_matrix",
    "read_matrix",
    "write_snapshots",
    "read_snapshots",
    "save_model",
    "load_model",
]

MAGIC = b"SWROM1\0"
_HEADER = struct.Struct("<7sIQQ")
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<i8")}


def write_matrix(path, A):
    """Write a 1-D or 2-D float or integer array. Vectors are stored as one column."""
    A = np.asarray(A)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {A.shape}")
    version = 2 if np.issubdtype(A.dtype, np.integer) else 1
    data = np.asarray(A, dtype=_DTYPES[version]).tobytes(order="F")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, version, A.shape[0], A.shape[1]))
        fh.write(data)
    os.replace(tmp, path)


def read_matrix(path, expect_shape=None):
    """Read a matrix file; raises :class:`FormatError` on any inconsistency."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version not in _DTYPES:
        raise FormatError(f"{path}: unsupported version {version}")
    dtype = _DTYPES[version]
    expected = rows * cols * dtype.itemsize
    body = raw[_HEADER.size :]
    if len(body) != expected:
        raise FormatError(f"{path}: payload has {len(body)} bytes, header implies {expected}")
    if expect_shape is not None and tuple(expect_shape) != (rows, cols):
        raise FormatError(f"{path}: shape {(rows, cols)} does not match {tuple(expect_shape)}")
    A = np.frombuffer(body, dtype=dtype).reshape((rows, cols), order="F")
    return np.ascontiguousarray(A, dtype=dtype.newbyteorder("="))


def write_snapshots(path, trajectory):
    """Store a trajectory (one state per row) as a ``3N x N_t`` snapshot matrix."""
    write_matrix(path, np.atleast_2d(np.asarray(trajectory, dtype=float)).T)


def read_snapshots(path):
    """Inverse of :func:`write_snapshots`; returns states as rows."""
    S = read_matrix(path)
    if S.shape[0] % 3:
        raise FormatError(f"{path}: {S.shape[0]} rows is not a multiple of 3")
    return np.ascontiguousarray(S.T)


# Model directories ------------------------------------------------------------
def _save_basis(root, basis, mean):
    for name, V in zip("uvh", basis.blocks):
        write_matrix(root / f"V_{name}.bin", V)
    write_matrix(root / "mean.bin", mean)


def _load_basis(root):
    from .pod import PodBasis

    blocks = [read_matrix(root / f"V_{name}.bin") for name in "uvh"]
    mean = read_matrix(root / "mean.bin")[:, 0]
    return PodBasis(*blocks), mean


def save_model(estimator, path):
    """Persist a fitted :class:`TpodKahan` or :class:`PodDeimAVF` to a directory."""
    from .deim_rom import PodDeimAVF
    from .tensor_rom import TpodKahan

    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    grid, phys = estimator.grid, estimator.physics
    meta = {
        "grid": [grid.nx, grid.ny, grid.a, grid.b, grid.c, grid.d],
        "physics": None if phys is None else [phys.g, phys.f],
    }
    if isinstance(estimator, TpodKahan):
        m = estimator.model_
        meta["kind"] = "tpod"
        _save_basis(root, m.basis, m.mean)
        for name in ("Q_ur", "Q_vr", "L_r", "c_r"):
            write_matrix(root / f"{name}.bin", getattr(m, name))
    elif isinstance(estimator, PodDeimAVF):
        op = estimator.deim_
        meta["kind"] = "pod-deim"
        meta["newton"] = [estimator.newton_tol, estimator.newton_max_iter]
        _save_basis(root, estimator.basis_, estimator.mean_)
        for name, idx, C in zip("uvh", op.indices, op.coefficients):
            write_matrix(root / f"P_{name}.bin", np.asarray(idx, dtype=np.int64))
            write_matrix(root / f"C_{name}.bin", C)
    else:
        raise TypeError(f"cannot persist {type(estimator).__name__}")
    (root / "meta.json").write_text(json.dumps(meta, indent=1))


def load_model(path):
    """Load a directory written by :func:`save_model` into a ready estimator."""
    from .deim_rom import DeimOperator, PodDeimAVF, SampledEvaluator
    from .fom import Physics
    from .grid_ops import GridSpec, build_diff_ops
    from .tensor_rom import TpodKahan, TpodModel

    root = Path(path)
    try:
        meta = json.loads((root / "meta.json").read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"{root}: unreadable meta.json ({exc})") from None
    nx, ny, a, b, c, d = meta["grid"]
    grid = GridSpec(int(nx), int(ny), a, b, c, d)
    phys = Physics(*meta["physics"]) if meta["physics"] is not None else None
    basis, mean = _load_basis(root)
    if basis.N != grid.N or mean.size != 3 * grid.N:
        raise FormatError(f"{root}: basis does not match the {nx}x{ny} grid")
    if meta["kind"] == "tpod":
        est = TpodKahan(grid=grid, physics=phys, n_modes=basis.n)
        est.basis_, est.mean_ = basis, mean
        est.model_ = TpodModel(
            **{k: read_matrix(root / f"{k}.bin") for k in ("Q_ur", "Q_vr", "L_r")},
            c_r=read_matrix(root / "c_r.bin")[:, 0],
            basis=basis,
            mean=mean,
        )
        est.n_features_in_ = 3 * grid.N
        return est
    if meta["kind"] == "pod-deim":
        tol, max_iter = meta["newton"]
        est = PodDeimAVF(grid=grid, physics=phys, n_modes=basis.n,
                         newton_tol=tol, newton_max_iter=int(max_iter))
        indices = [read_matrix(root / f"P_{w}.bin")[:, 0] for w in "uvh"]
        coefs = [read_matrix(root / f"C_{w}.bin") for w in "uvh"]
        ops = build_diff_ops(grid)
        est.ops_, est.physics_ = ops, phys or Physics()
        est.basis_, est.mean_ = basis, mean
        est.deim_ = DeimOperator(indices, coefs, [None] * 3, [np.nan] * 3)
        est.evaluator_ = SampledEvaluator(indices, basis, mean, ops, est.physics_)
        est.n_features_in_ = 3 * grid.N
        return est
    raise FormatError(f"{root}: unknown model kind {meta['kind']!r}")
