import numpy as np
import pytest

from ckmpm import _accel
from ckmpm.dualgrid import DualGrid
from ckmpm.errors import DomainExitError
from ckmpm.kernel import dual_stencils
from ckmpm.materials import DruckerPrager, FixedCorotated, JFluid, material_table
from ckmpm.reference import reference_step
from ckmpm.transfer import (APIC, MLS, PIC, SCHEMES, Particles, compute_apic_D, gather,
                            grid_update, mls_moment, mls_reproduce, mls_shape, p2g, transfer_step,
                            update_F)

MATS = [FixedCorotated(E=1e3, nu=0.3, density=1e3),
        JFluid(bulk=50.0, gamma=7.0, viscosity=0.1, density=1e3),
        DruckerPrager(E=1e3, nu=0.3, friction_angle=30.0, density=1e3)]


def five_particles(rng):
    p = Particles.create(rng.uniform(0.35, 0.65, (5, 3)), v=rng.normal(0, 0.1, (5, 3)), mass=0.01,
                         vol0=1e-5, mat=[0, 1, 2, 0, 1],
                         F=np.eye(3) + rng.normal(0, 0.05, (5, 3, 3)),
                         B=rng.normal(0, 1e-3, (5, 3, 3)))
    p.F[[1, 4]] = np.eye(3)
    p.J[[1, 4]] = 0.97
    p.G[:] = rng.normal(0, 0.1, (5, 3, 3))
    return p


@pytest.mark.parametrize("scheme,tol", [("pic", 1e-12), ("apic", 1e-10), ("mls", 1e-10)])
@pytest.mark.parametrize("kernel", ["compact", "quadratic"])
def test_matches_dense_oracle(scheme, tol, kernel, rng, backend):
    p = five_particles(rng)
    q = p.copy()
    ref = reference_step(p, MATS, 8, 1 / 8, 1e-3, scheme, kernel, (0, -9.8, 0))
    transfer_step(q, DualGrid(8, 1 / 8, kernel), 1e-3, material_table(MATS), SCHEMES[scheme],
                  (0, -9.8, 0))
    for k, v in ref.items():
        np.testing.assert_allclose(getattr(q, k), v, rtol=0, atol=tol, err_msg=k)


@pytest.mark.parametrize("kernel,visits", [("compact", 16), ("quadratic", 27)])
def test_node_visit_counts(kernel, visits, rng, backend):
    p = Particles.create(rng.uniform(0.3, 0.7, (100, 3)))
    g = DualGrid(16, 1 / 16, kernel).activate(p.x)
    assert p2g(p, g, force=False) == visits * 100


@pytest.mark.parametrize("scheme", [PIC, APIC, MLS])
def test_scatter_conserves_mass_and_momentum(scheme, rng, backend):
    n = 200
    p = Particles.create(rng.uniform(0.3, 0.7, (n, 3)), v=rng.normal(size=(n, 3)),
                         mass=rng.uniform(0.5, 2, n), B=rng.normal(0, 1e-2, (n, 3, 3)))
    g = DualGrid(16, 1 / 16).activate(p.x)
    p2g(p, g, scheme=scheme, force=False)
    np.testing.assert_allclose(g.total_mass(), p.mass.sum(), rtol=1e-13)
    # each grid alone partitions mass; the affine term cancels only in the grid average
    np.testing.assert_allclose(g.total_momentum().mean(axis=0), (p.mass[:, None] * p.v).sum(0),
                               rtol=1e-12, atol=1e-12)


def test_internal_forces_sum_to_zero(rng, backend):
    n = 100
    p = Particles.create(rng.uniform(0.3, 0.7, (n, 3)), mass=1e-3, vol0=1e-6,
                         F=np.eye(3) + rng.normal(0, 0.05, (n, 3, 3)))
    g = DualGrid(16, 1 / 16).activate(p.x)
    p2g(p, g, dt=1e-3, mattab=material_table(MATS[:1]), momentum=False)
    for f in g.total_momentum():
        assert np.abs(f).max() < 1e-15


def test_gather_of_uniform_grid_velocity(backend):
    p = Particles.create(np.array([[0.43, 0.51, 0.62], [0.55, 0.48, 0.41]]), v=(0.3, -0.2, 0.1))
    g = DualGrid(16, 1 / 16).activate(p.x)
    p2g(p, g, force=False)
    grid_update(g, 0.0)
    v, B, G = gather(p, g, APIC)
    np.testing.assert_allclose(v, p.v, atol=1e-15)
    np.testing.assert_allclose(B, 0.0, atol=1e-16)
    np.testing.assert_allclose(G, 0.0, atol=1e-13)


def test_rest_state_is_fixed_point(rng, backend):
    p = Particles.create(rng.uniform(0.4, 0.6, (30, 3)), mass=1e-3, vol0=1e-6)
    q = p.copy()
    transfer_step(q, DualGrid(16, 1 / 16), 1e-3, material_table(MATS[:1]))
    np.testing.assert_array_equal(q.x, p.x)
    np.testing.assert_array_equal(q.v, 0.0)
    np.testing.assert_array_equal(q.F, p.F)


def test_free_fall_single_step(rng, backend):
    p = Particles.create(rng.uniform(0.4, 0.6, (30, 3)), v=(0.1, 0.0, 0.0), mass=1e-3, vol0=1e-6)
    x0 = p.x.copy()
    dt, g = 1e-3, np.array([0.0, -9.8, 0.0])
    transfer_step(p, DualGrid(16, 1 / 16), dt, material_table(MATS[:1]), gravity=g)
    np.testing.assert_allclose(p.v, np.tile([0.1, 0, 0] + dt * g, (30, 1)), atol=1e-14)
    np.testing.assert_allclose(p.x, x0 + dt * p.v, atol=1e-15)


@pytest.mark.parametrize("scheme", [PIC, APIC, MLS])
def test_rigid_translation_keeps_F_identity(scheme, rng, backend):
    p = Particles.create(rng.uniform(0.4, 0.6, (40, 3)), v=(0.2, 0.1, -0.3), mass=1e-3, vol0=1e-6)
    grid = DualGrid(16, 1 / 16)
    for _ in range(5):
        transfer_step(p, grid, 1e-3, material_table(MATS[:1]), scheme)
        np.testing.assert_allclose(p.F, np.tile(np.eye(3), (40, 1, 1)), atol=1e-12)
        np.testing.assert_allclose(p.v, [[0.2, 0.1, -0.3]] * 40, atol=1e-14)


def test_domain_exit_reported(backend):
    p = Particles.create(np.array([[0.5, 0.5, 0.98]]))
    with pytest.raises(DomainExitError):
        transfer_step(p, DualGrid(8, 1 / 8), 1e-3, material_table(MATS[:1]))


def test_apic_D_brute_force(rng):
    dx = 1 / 32
    for _ in range(10):
        x = rng.uniform(0.3, 0.7, 3)
        D = np.zeros((3, 3))
        for st in dual_stencils(x, dx):
            r = st.node_positions() - x
            D += (st.weights[:, None, None] * r[:, :, None] * r[:, None, :]).sum(0)
        np.testing.assert_allclose(compute_apic_D(x, dx), D / 2, atol=1e-18)
    assert np.all(np.linalg.eigvalsh(compute_apic_D(x, dx)) > 0)
    np.testing.assert_allclose(compute_apic_D(x, dx, tags=(0,)), dx * dx / 4 * np.eye(3), atol=1e-18)


def test_mls_moment_and_reproduction(rng):
    dx = 1 / 32
    A, c = rng.normal(size=(3, 3)), rng.normal(size=3)
    for _ in range(20):
        x = rng.uniform(0.3, 0.7, 3)
        M = mls_moment(x, dx)
        assert M[0, 0] == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(M[0, 1:], 0.0, atol=1e-12 * dx)
        np.testing.assert_allclose(M, M.T)
        z = x + rng.uniform(-0.5, 0.5, 3) * dx
        np.testing.assert_allclose(mls_reproduce(x, z, lambda y: A @ y + c, dx), A @ z + c,
                                   atol=1e-10)


def test_mls_shape_partition(rng):
    dx = 1 / 32
    x = rng.uniform(0.3, 0.7, 3)
    z = x + 0.1 * dx
    total = 0.0
    for st in dual_stencils(x, dx):
        for off in st.offsets:
            total += mls_shape(x, st.base + off, st.grid_tag, z, dx)[0]
    assert total / 2 == pytest.approx(1.0, abs=1e-12)
    assert mls_shape(x, np.array([0, 0, 0]), 1, z, dx) == (0.0, pytest.approx(np.zeros(3)))


def test_update_F():
    F = np.eye(3)
    G = np.array([[0, 1.0, 0], [0, 0, 0], [0, 0, 0]])
    np.testing.assert_allclose(update_F(F, G, 0.1), np.eye(3) + 0.1 * G)


@pytest.mark.skipif(not _accel.HAS_NUMBA, reason="needs numba")
@pytest.mark.parametrize("scheme", ["pic", "apic", "mls"])
@pytest.mark.parametrize("kernel", ["compact", "quadratic"])
def test_backends_agree_over_several_steps(scheme, kernel, rng):
    n = 300
    p0 = Particles.create(rng.uniform(0.35, 0.65, (n, 3)), v=rng.normal(0, 0.2, (n, 3)),
                          mass=1e-3, vol0=1e-6, mat=rng.integers(0, 3, n))
    out = {}
    for name in ("numba", "numpy"):
        _accel.set_backend(name)
        try:
            p = p0.copy()
            g = DualGrid(16, 1 / 16, kernel)
            for _ in range(4):
                transfer_step(p, g, 5e-4, material_table(MATS), SCHEMES[scheme], (0, -9.8, 0))
            out[name] = p
        finally:
            _accel.set_backend("numba")
    for k in ("x", "v", "F", "J", "B", "G"):
        np.testing.assert_allclose(getattr(out["numba"], k), getattr(out["numpy"], k),
                                   rtol=0, atol=1e-12, err_msg=k)


@pytest.mark.skipif(not _accel.HAS_NUMBA, reason="needs numba")
def test_threaded_scatter_matches_serial_to_roundoff(rng):
    n = 2000
    p0 = Particles.create(rng.uniform(0.3, 0.7, (n, 3)), v=rng.normal(0, 0.2, (n, 3)),
                          mass=1e-3, vol0=1e-6)
    a, b = p0.copy(), p0.copy()
    transfer_step(a, DualGrid(16, 1 / 16), 5e-4, material_table(MATS[:1]), threads=1)
    transfer_step(b, DualGrid(16, 1 / 16), 5e-4, material_table(MATS[:1]), threads=4)
    np.testing.assert_allclose(a.v, b.v, atol=1e-13)
