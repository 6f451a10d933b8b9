import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ckmpm.dualgrid import DualGrid
from ckmpm.kernel import (ck_grad_1d, ck_weight_1d, dual_stencils, partition_pair_1d,
                          quad_bspline_stencil, reconstruct_position)
from ckmpm.materials import (FixedCorotated, dp_yield, kirchhoff_stress, return_map_drucker_prager,
                             svd3)
from ckmpm.transfer import APIC, MLS, PIC, Particles, compute_apic_D, p2g

unit = st.floats(0.0, 1.0, allow_nan=False)
interior = arrays(np.float64, 3, elements=st.floats(0.3, 0.7))
small = arrays(np.float64, (3, 3), elements=st.floats(-0.3, 0.3))
rotations = arrays(np.float64, 3, elements=st.floats(-np.pi, np.pi))


def rotation(angles):
    a, b, c = angles
    rx = np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])
    ry = np.array([[np.cos(b), 0, np.sin(b)], [0, 1, 0], [-np.sin(b), 0, np.cos(b)]])
    rz = np.array([[np.cos(c), -np.sin(c), 0], [np.sin(c), np.cos(c), 0], [0, 0, 1]])
    return rz @ ry @ rx


@given(unit)
def test_partition_pair(u):
    assert abs(partition_pair_1d(u) - 1.0) <= 1e-15


@given(st.floats(-3, 3))
def test_weight_bounded_even_and_compact(u):
    w = ck_weight_1d(u)
    assert 0.0 <= w <= 1.0
    assert w == ck_weight_1d(-u)
    if abs(u) >= 1:
        assert w == 0.0 and ck_grad_1d(u) == 0.0


@given(st.floats(0, 1))
def test_weight_monotone_on_support(u):
    assert ck_grad_1d(u) <= 0.0


@given(interior, st.sampled_from([1 / 8, 1 / 32, 1 / 256]))
def test_dual_stencil_invariants(x, dx):
    sts = dual_stencils(x, dx)
    for s in sts:
        assert len(s.weights) == 8
        assert abs(s.weights.sum() - 1.0) < 1e-13
        assert np.abs(s.grads.sum(axis=0)).max() * dx < 1e-13
    np.testing.assert_allclose(reconstruct_position(x, dx), x, rtol=0, atol=1e-12 * dx)
    # the averaged gradient moment is the identity
    M = sum((s.node_positions() - x).T @ s.grads for s in sts) / 2
    np.testing.assert_allclose(M, np.eye(3), atol=1e-12)


@given(interior)
def test_quadratic_stencil_invariants(x):
    s = quad_bspline_stencil(x, 1 / 32)
    assert len(s.weights) == 27 and abs(s.weights.sum() - 1) < 1e-13
    np.testing.assert_allclose(s.weights @ s.node_positions(), x, atol=1e-14)


@given(interior)
def test_apic_D_is_spd(x):
    D = compute_apic_D(x, 1 / 32)
    np.testing.assert_allclose(D, D.T, atol=1e-20)
    assert np.linalg.eigvalsh(D).min() > 0


@given(small)
def test_svd_reconstructs(A):
    F = np.eye(3) + A
    U, s, V = svd3(F)
    np.testing.assert_allclose(U @ np.diag(s) @ V.T, F, atol=1e-12)
    assert np.linalg.det(U) > 0 and np.linalg.det(V) > 0
    assert s[0] >= s[1] - 1e-12 and s[1] >= abs(s[2]) - 1e-12


@given(small, rotations)
def test_kirchhoff_objective(A, angles):
    m = FixedCorotated(E=1e4, nu=0.3, density=1.0)
    F = np.eye(3) + A
    if np.linalg.det(F) <= 0.05:
        return
    R = rotation(angles)
    tau = kirchhoff_stress(m, F)
    np.testing.assert_allclose(tau, tau.T, atol=1e-9)
    np.testing.assert_allclose(kirchhoff_stress(m, R @ F), R @ tau @ R.T, atol=1e-8)


@given(small)
def test_dp_return_lands_in_cone(A):
    F = np.eye(3) + A
    if np.linalg.det(F) <= 0.05:
        return
    mu, lam = 1e3, 1e3
    G = return_map_drucker_prager(F, 30.0, mu, lam)
    assert dp_yield(G, 30.0, mu, lam) <= 1e-10
    if dp_yield(F, 30.0, mu, lam) <= 0:
        np.testing.assert_allclose(G, F, atol=1e-12)


@settings(max_examples=30)
@given(st.integers(1, 40), st.sampled_from([PIC, APIC, MLS]), st.integers(0, 2 ** 31))
def test_scatter_partitions_mass_on_each_grid(n, scheme, seed):
    rng = np.random.default_rng(seed)
    p = Particles.create(rng.uniform(0.3, 0.7, (n, 3)), v=rng.normal(size=(n, 3)),
                         mass=rng.uniform(0.1, 1, n), B=rng.normal(0, 1e-3, (n, 3, 3)))
    g = DualGrid(16, 1 / 16).activate(p.x)
    assert p2g(p, g, scheme=scheme, force=False) == 16 * n
    np.testing.assert_allclose(g.total_mass(), [p.mass.sum()] * 2, rtol=1e-13)
    np.testing.assert_allclose(g.total_momentum().mean(axis=0), p.mass @ p.v, atol=1e-12)
