import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_state, trajectory
from swerom.exceptions import MemoryGuardError
from swerom.fom import Physics, fplane_linear_matrix, kahan_step, rhs_fplane
from swerom.grid_ops import GridSpec, build_diff_ops, paper_initial_condition
from swerom.pod import PodBasis, assemble_snapshots, compute_pod_basis, lift, project
from swerom.tensor_rom import (
    TpodKahan,
    TpodModel,
    build_affine_terms,
    build_block_ops,
    build_reduced_quadratic_mumode,
    build_reduced_quadratic_naive,
    build_reduced_quadratic_rowwise,
    build_tpod_model,
    full_quadratic_form,
    kahan_step_reduced,
    quadratic_action,
    quadratic_selection_matrix,
    reduced_jacobian_tpod,
    reduced_rhs_tpod,
)

PHYS = Physics(g=1.0, f=0.3)


def setup(nx, ny, n, n_steps=30, phys=PHYS):
    grid = GridSpec(nx, ny)
    ops = build_diff_ops(grid)
    X = trajectory(grid, "kahan", 0.04, n_steps, phys)
    snap = assemble_snapshots(X[1:])
    basis = compute_pod_basis(snap, n=n)
    return grid, ops, basis, snap.mean, build_block_ops(ops, phys)


def rel_fro(A, B):
    return np.linalg.norm(A - B) / max(np.linalg.norm(B), 1e-300)


# ------------------------------------------------------------ Kronecker form
def test_quadratic_action(rng):
    b = rng.standard_normal(5)
    np.testing.assert_array_equal(quadratic_action(np.ones(5), b), b)
    a = np.arange(1.0, 6.0)
    np.testing.assert_array_equal(quadratic_action(a, a), a**2)
    a, b = rng.standard_normal((2, 12))
    np.testing.assert_allclose(quadratic_selection_matrix(12) @ np.kron(a, b), a * b, rtol=1e-15)
    with pytest.raises(ValueError):
        quadratic_action(np.ones(3), np.ones(4))


@settings(max_examples=30, deadline=None)
@given(p=st.integers(1, 6), q=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_vec_kronecker_identity(p, q, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(p), rng.standard_normal(q)
    np.testing.assert_array_equal(np.kron(a, b), np.outer(b, a).ravel(order="F"))


def test_full_quadratic_form(rng):
    grid = GridSpec(6, 6)
    ops = build_diff_ops(grid)
    blocks = build_block_ops(ops, PHYS)
    np.testing.assert_array_equal(full_quadratic_form(np.zeros(108), blocks), 0.0)
    z = random_state(grid, rng)
    ref = rhs_fplane(z, ops, PHYS)
    assert np.linalg.norm(full_quadratic_form(z, blocks) - ref) <= 1e-13 * np.linalg.norm(ref)
    z[:72] = 0.0
    np.testing.assert_allclose(full_quadratic_form(z, blocks), blocks.L @ z, atol=1e-14)


def test_block_pattern():
    ops = build_diff_ops(GridSpec(3, 4))
    b = build_block_ops(ops, PHYS)
    N = 12
    I = np.eye(N)
    np.testing.assert_array_equal(b.A_x.toarray()[:N, :N], I)
    np.testing.assert_array_equal(b.A_y.toarray()[N : 2 * N, N : 2 * N], I)
    np.testing.assert_array_equal(b.B_x.toarray()[2 * N :, 2 * N :], I)
    np.testing.assert_array_equal(b.A_x.toarray()[2 * N :, 2 * N :], ops.Dx.toarray())
    np.testing.assert_array_equal(b.B_y.toarray()[:N, :N], ops.Dy.toarray())


# ------------------------------------------------------------ builders
def test_builders_agree_4x4():
    _, _, basis, _, blocks = setup(4, 4, 2)
    ref = build_reduced_quadratic_naive(basis, blocks)
    others = [
        build_reduced_quadratic_mumode(basis, blocks),
        build_reduced_quadratic_rowwise(basis, blocks, batched=True),
        build_reduced_quadratic_rowwise(basis, blocks, batched=False),
    ]
    for Qs in others:
        for Q, R in zip(Qs, ref):
            assert Q.shape == (6, 36)
            assert rel_fro(Q, R) <= 1e-12


def test_builders_agree_uneven_modes(rng):
    grid = GridSpec(5, 4)
    blocks = build_block_ops(build_diff_ops(grid), PHYS)
    basis = PodBasis(*(np.linalg.qr(rng.standard_normal((20, k)))[0] for k in (2, 3, 1)))
    ref = build_reduced_quadratic_naive(basis, blocks)
    for Qs in (build_reduced_quadratic_mumode(basis, blocks, max_bytes=4096),
               build_reduced_quadratic_rowwise(basis, blocks, max_bytes=512)):
        for Q, R in zip(Qs, ref):
            assert rel_fro(Q, R) <= 1e-12


def test_batched_vs_unbatched():
    _, _, basis, _, blocks = setup(6, 5, 4)
    a = build_reduced_quadratic_rowwise(basis, blocks, batched=True)
    b = build_reduced_quadratic_rowwise(basis, blocks, batched=False)
    for Q, R in zip(a, b):
        assert np.abs(Q - R).max() <= 1e-13 * max(1.0, np.abs(R).max())


def test_zero_basis_gives_zero_tensors():
    grid = GridSpec(4, 4)
    blocks = build_block_ops(build_diff_ops(grid), PHYS)
    basis = PodBasis(*(np.zeros((16, 0)) for _ in range(3)))
    for build in (build_reduced_quadratic_naive, build_reduced_quadratic_mumode,
                  build_reduced_quadratic_rowwise):
        for Q in build(basis, blocks):
            assert Q.size == 0
    # a basis of zero vectors spans nothing either
    basis = PodBasis(*(np.zeros((16, 2)) for _ in range(3)))
    for build in (build_reduced_quadratic_naive, build_reduced_quadratic_mumode,
                  build_reduced_quadratic_rowwise):
        for Q in build(basis, blocks):
            assert not np.any(Q)


def test_memory_guards(rng):
    grid = GridSpec(20, 20)
    blocks = build_block_ops(build_diff_ops(grid), PHYS)
    basis = PodBasis(*(np.linalg.qr(rng.standard_normal((400, 10)))[0] for _ in range(3)))
    with pytest.raises(MemoryGuardError):
        build_reduced_quadratic_naive(basis, blocks)
    with pytest.raises(MemoryGuardError):
        build_reduced_quadratic_mumode(basis, blocks, max_bytes=64)
    with pytest.raises(MemoryGuardError):
        build_reduced_quadratic_rowwise(basis, blocks, max_bytes=64)


def _count(builder, nx, n, rng, **kw):
    grid = GridSpec(nx, nx)
    blocks = build_block_ops(build_diff_ops(grid), PHYS)
    basis = PodBasis(*(np.linalg.qr(rng.standard_normal((grid.N, n)))[0] for _ in range(3)))
    counter = {}
    builder(basis, blocks, counter=counter, **kw)
    return grid.N, counter["multiplies"]


@pytest.mark.parametrize("nx,n", [(10, 2), (12, 3), (20, 4)])
def test_operation_count_ceilings(rng, nx, n):
    N, rw = _count(build_reduced_quadratic_rowwise, nx, n, rng)
    assert rw <= 12 * N * n**3
    N, mu = _count(build_reduced_quadratic_mumode, nx, n, rng)
    # generic ceiling O(n N^2) of the mode-product route, per direction
    assert mu <= 2 * (3 * n) * (3 * N) ** 2
    # exploiting the block structure costs strictly less
    assert rw < mu


def test_operation_count_linear_in_N(rng):
    N1, c1 = _count(build_reduced_quadratic_mumode, 10, 3, rng)
    N2, c2 = _count(build_reduced_quadratic_mumode, 20, 3, rng)
    assert c2 * N1 == c1 * N2
    N1, c1 = _count(build_reduced_quadratic_rowwise, 10, 3, rng)
    N2, c2 = _count(build_reduced_quadratic_rowwise, 20, 3, rng)
    assert c2 * N1 == c1 * N2


# ------------------------------------------------------------ affine terms
def test_affine_zero_means(rng):
    grid = GridSpec(5, 5)
    ops = build_diff_ops(grid)
    blocks = build_block_ops(ops, PHYS)
    basis = PodBasis(*(np.linalg.qr(rng.standard_normal((25, 3)))[0] for _ in range(3)))
    c_r, L_r = build_affine_terms(basis, np.zeros(75), blocks)
    V = basis.block_matrix()
    np.testing.assert_array_equal(c_r, 0.0)
    np.testing.assert_allclose(L_r, V.T @ fplane_linear_matrix(ops, PHYS).toarray() @ V, atol=1e-14)


def test_affine_random_means(rng):
    grid = GridSpec(5, 5)
    ops = build_diff_ops(grid)
    blocks = build_block_ops(ops, PHYS)
    basis = PodBasis(*(np.linalg.qr(rng.standard_normal((25, 3)))[0] for _ in range(3)))
    mean = random_state(grid, rng)
    model = build_tpod_model(basis, mean, blocks)
    ref = project(rhs_fplane(mean, ops, PHYS), basis, np.zeros(75))
    np.testing.assert_allclose(model.c_r, ref, rtol=0, atol=1e-12)
    F0 = reduced_rhs_tpod(np.zeros(9), model)
    errs = []
    for eps in (1e-3, 1e-4):
        fd = np.array([(reduced_rhs_tpod(eps * e, model) - F0) / eps for e in np.eye(9)]).T
        errs.append(np.abs(fd - model.L_r).max())
    assert errs[1] < errs[0] / 5 and errs[1] <= 1e-2


# ------------------------------------------------------------ evaluation
@pytest.fixture(scope="module")
def model_6x6():
    grid, ops, basis, mean, blocks = setup(6, 6, 4)
    return ops, basis, mean, build_tpod_model(basis, mean, blocks, builder="mumode", phys=PHYS, ops=ops)


def test_rhs_at_zero(model_6x6):
    *_, model = model_6x6
    np.testing.assert_array_equal(reduced_rhs_tpod(np.zeros(12), model), model.c_r)


def test_golden_identity(model_6x6):
    ops, basis, mean, model = model_6x6
    rng = np.random.default_rng(7)
    for _ in range(100):
        zr = rng.standard_normal(12)
        F = project(rhs_fplane(lift(zr, basis, mean), ops, PHYS), basis, np.zeros_like(mean))
        assert np.linalg.norm(reduced_rhs_tpod(zr, model) - F) <= 1e-12 * (1 + np.linalg.norm(F))


def test_quadratic_homogeneity(model_6x6, rng):
    *_, model = model_6x6
    zr = rng.standard_normal(12)
    np.testing.assert_allclose(model.quadratic(2.5 * zr), 2.5**2 * model.quadratic(zr), rtol=1e-12, atol=1e-14)


def test_dense_tensor_contraction_matches_compressed(model_6x6, rng):
    *_, model = model_6x6
    zr = rng.standard_normal(12)
    ut = np.tile(zr[:4], 3)
    vt = np.tile(zr[4:8], 3)
    dense = model.Q_ur @ np.kron(ut, zr) + model.Q_vr @ np.kron(vt, zr)
    np.testing.assert_allclose(model.quadratic(zr), dense, rtol=1e-12, atol=1e-14)


def test_jacobian(model_6x6, rng):
    *_, model = model_6x6
    np.testing.assert_array_equal(reduced_jacobian_tpod(np.zeros(12), model), model.L_r)
    zr = rng.standard_normal(12)
    J = reduced_jacobian_tpod(zr, model)
    eps = 1e-6
    fd = np.array([(reduced_rhs_tpod(zr + eps * e, model) - reduced_rhs_tpod(zr - eps * e, model)) / (2 * eps)
                   for e in np.eye(12)]).T
    assert np.abs(J - fd).max() <= 1e-6
    J2 = reduced_jacobian_tpod(2 * zr, model)
    np.testing.assert_allclose(J2 - model.L_r, 2 * (J - model.L_r), rtol=1e-12, atol=1e-13)


# ------------------------------------------------------------ Kahan
def test_reduced_kahan_fixed_point(rng):
    grid = GridSpec(4, 4)
    ops = build_diff_ops(grid)
    basis = PodBasis(*(np.linalg.qr(rng.standard_normal((16, 3)))[0] for _ in range(3)))
    model = build_tpod_model(basis, np.zeros(48), build_block_ops(ops, PHYS))
    np.testing.assert_array_equal(kahan_step_reduced(np.zeros(9), 0.1, model), np.zeros(9))


def test_reduced_kahan_full_basis_equals_fom(rng):
    grid = GridSpec(4, 4)
    ops = build_diff_ops(grid)
    basis = PodBasis(*(np.linalg.qr(rng.standard_normal((16, 16)))[0] for _ in range(3)))
    mean = np.zeros(48)
    model = build_tpod_model(basis, mean, build_block_ops(ops, PHYS), builder="naive")
    z0 = paper_initial_condition(grid)
    z1 = kahan_step(z0, 0.04, ops, PHYS)
    zr1 = kahan_step_reduced(project(z0, basis, mean), 0.04, model)
    np.testing.assert_allclose(lift(zr1, basis, mean), z1, rtol=0, atol=1e-9)


def test_reduced_kahan_second_order():
    grid, ops, basis, mean, blocks = setup(8, 8, 5, n_steps=25)
    model = build_tpod_model(basis, mean, blocks)
    z0 = project(paper_initial_condition(grid), basis, mean)
    T, dt = 1.0, 0.05

    def run(h):
        z = z0.copy()
        for _ in range(int(round(T / h))):
            z = kahan_step_reduced(z, h, model)
        return z

    ref = run(dt / 64)
    ratio = np.linalg.norm(run(dt) - ref) / np.linalg.norm(run(dt / 2) - ref)
    assert 3.3 <= ratio <= 4.7


def test_estimator_and_builders_consistent():
    grid = GridSpec(6, 6)
    X = trajectory(grid, "kahan", 0.04, 20, PHYS)
    preds = []
    for builder in ("naive", "mumode", "rowwise", "rowwise-batched"):
        est = TpodKahan(grid=grid, physics=PHYS, n_modes=3, builder=builder).fit(X[1:])
        preds.append(est.predict(X[0], 0.04, 20))
    for P in preds[1:]:
        np.testing.assert_allclose(P, preds[0], rtol=0, atol=1e-11)
    assert preds[0].shape == (21, 108)
    assert TpodKahan(n_modes=7).get_params()["n_modes"] == 7
