import dataclasses
import math

import numpy as np
import pytest

from ckmpm.config import load_config
from ckmpm.errors import ConfigError, NaNGuardError, NumericalError
from ckmpm.materials import FixedCorotated, JFluid
from ckmpm.sim import (Box, Cylinder, SceneConfig, Shape, Simulation, Sphere, cfl_dt,
                       rod_velocity_profile, sample_shape, total_momentum, wave_speed)
from ckmpm.transfer import Particles

SOFT = FixedCorotated(E=1.0, nu=0.3, density=1e3)


def test_unit_box_sample_count():
    p = sample_shape(Box((0, 0, 0), (1, 1, 1)), 0.5, 8, 1.0)
    assert len(p) == 64
    np.testing.assert_allclose(p.mass, 0.5 ** 3 / 8)
    np.testing.assert_allclose(p.vol0, 0.5 ** 3 / 8)


def test_sphere_sample_count_and_mass():
    r, dx = 10 / 256, 1 / 256
    p = sample_shape(Sphere((0.5, 0.5, 0.5), r), dx, 8, 1e3)
    assert len(p) == 33_552
    assert p.mass.sum() == pytest.approx(1e3 * 4 / 3 * math.pi * r ** 3, rel=0.02)


@pytest.mark.parametrize("ppc", [8, 16, 27])
def test_box_fill_per_cell(ppc):
    p = sample_shape(Box((0.25, 0.25, 0.25), (0.5, 0.5, 0.5)), 1 / 16, ppc, 1.0)
    assert len(p) == 64 * ppc
    cells = np.floor(p.x * 16).astype(int)
    _, counts = np.unique(cells, axis=0, return_counts=True)
    assert (counts == ppc).all()


def test_sampling_errors():
    with pytest.raises(ConfigError):
        sample_shape(Box((0, 0, 0), (1, 1, 1)), 0.5, 9, 1.0)
    with pytest.raises(ConfigError):
        sample_shape(Sphere((0.02, 0.5, 0.5), 0.05), 1 / 64, 8, 1.0, res=64)


def test_hollow_cylinder_volume():
    c = Cylinder((0.5, 0.5, 0.5), 0.1, 0.2, axis=2, inner_radius=0.05)
    p = sample_shape(c, 1 / 128, 8, 1.0)
    assert p.mass.sum() == pytest.approx(c.volume(), rel=0.02)
    rr = np.hypot(p.x[:, 0] - 0.5, p.x[:, 1] - 0.5)
    assert rr.min() >= 0.05 and rr.max() <= 0.1


def test_rod_profile_values():
    c = np.array([0.5, 0.5, 0.5])
    h = 20 / 256
    x = np.array([c, c + [0, h, 0], c - [0, h, 0], c + [0, h / 2, 0]])
    v = rod_velocity_profile(x, c, 1.0, h)
    np.testing.assert_allclose(v, [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0.5, 0, 0]], atol=1e-15)


def test_rod_initial_angular_momentum_analytic():
    cfg = load_config("rotating_rod_256")
    sim = Simulation(cfg)
    geom = cfg.shapes[0].geometry
    rho = cfg.materials["rod"].density
    # L_z = -rho * area * int y^2 dy / h over the rod, y measured from the center
    expected = -rho * math.pi * geom.radius ** 2 * geom.length ** 3 / 12 / (0.5 * geom.length)
    assert sim.momentum().angular[2] == pytest.approx(expected, rel=0.01)
    np.testing.assert_allclose(sim.momentum().linear, 0.0, atol=1e-15)


def test_cfl_dt_cases():
    p = Particles.create(np.array([[0.5, 0.5, 0.5]]))
    assert cfl_dt(p, 1 / 256, 0.5, [SOFT], remaining=1 / 24) == 1 / 24
    p.v[0] = (1.0, 0.0, 0.0)
    assert wave_speed([SOFT]) < 1
    assert cfl_dt(p, 1 / 256, 0.5, [SOFT]) == pytest.approx(0.5 / 256)
    assert cfl_dt(p, 1 / 256, 0.5, [SOFT], remaining=1e-4) == 1e-4
    tungsten = FixedCorotated(E=4.5e11, nu=0.3, density=19.3e3)
    p.v[0] = 0.0
    c = tungsten.wave_speed()
    assert c == pytest.approx(math.sqrt((tungsten.lame[1] + 2 * tungsten.lame[0]) / 19.3e3))
    dt = cfl_dt(p, 1 / 1024, 0.5, [tungsten])
    assert 1e-9 < dt < 1e-7
    water = JFluid(bulk=1e4, gamma=7.15, viscosity=0.0, density=1e3)
    q = Particles.create(np.full((2, 3), 0.5))
    q.J[:] = (1.0, 0.6)
    assert cfl_dt(q, 1 / 32, 0.5, [water]) == pytest.approx(0.5 / 32 / water.wave_speed(0.6))
    p.v[0] = np.nan
    with pytest.raises(NaNGuardError):
        cfl_dt(p, 1 / 256, 0.5, [SOFT])


def test_total_momentum_cases():
    p = Particles.create(np.array([[0.0, 1.0, 0.0]]), v=(1.0, 0.0, 0.0), mass=2.0)
    m = total_momentum(p)
    np.testing.assert_array_equal(m.linear, [2, 0, 0])
    np.testing.assert_array_equal(m.linear_massfree, [1, 0, 0])
    np.testing.assert_array_equal(m.angular, [0, 0, -2])
    q = Particles.create(np.array([[0.1, 0.2, 0.3], [0.1, 0.2, 0.3]]),
                         v=np.array([[1.0, 2, 3], [-1, -2, -3]]))
    m = total_momentum(q)
    np.testing.assert_array_equal(m.linear, 0.0)
    np.testing.assert_array_equal(m.angular, 0.0)


def test_affine_spin_term():
    p = Particles.create(np.zeros((1, 3)), mass=3.0)
    p.B[0] = [[0, -1, 0], [1, 0, 0], [0, 0, 0]]
    assert total_momentum(p).angular[2] == 0.0
    assert total_momentum(p, affine=True).angular[2] == pytest.approx(6.0)


def small_scene(**kw):
    base = dict(res=(16, 16, 16), dx=1 / 16, fps=48, frames=2,
                materials={"a": FixedCorotated(E=1e3, nu=0.3, density=1e3)},
                shapes=[Shape(Sphere((0.5, 0.5, 0.5), 0.12), "a", 8, (0.1, -0.05, 0.02))])
    base.update(kw)
    return SceneConfig(**base)


def test_rest_state(backend):
    sim = Simulation(small_scene(shapes=[Shape(Sphere((0.5, 0.5, 0.5), 0.12), "a")]))
    x0 = sim.particles.x.copy()
    for _ in range(3):
        sim.step(1e-3)
    np.testing.assert_array_equal(sim.particles.x, x0)
    np.testing.assert_array_equal(sim.particles.F, np.tile(np.eye(3), (len(x0), 1, 1)))


def test_free_fall_matches_ballistic(backend):
    g = np.array([0.0, -9.8, 0.0])
    sim = Simulation(small_scene(gravity=tuple(g)))
    v0 = sim.particles.v.mean(0)
    c0 = sim.particles.x.mean(0)
    dt = 1e-4
    for n in range(1, 101):
        sim.step(dt)
    t = 100 * dt
    # symplectic Euler: x_n = x_0 + n dt v0 + dt^2 g n(n+1)/2
    expected = c0 + t * v0 + dt * dt * g * 100 * 101 / 2
    np.testing.assert_allclose(sim.particles.x.mean(0), expected, rtol=1e-10)
    np.testing.assert_allclose(sim.particles.v.mean(0), v0 + t * g, rtol=1e-10)


def test_frames_land_on_boundaries(backend):
    sim = Simulation(small_scene())
    times = []
    sim.run(3, on_frame=lambda s: times.append(s.time))
    assert times == [1 / 48, 2 / 48, 3 / 48]
    assert all(d.dt <= sim.config.cfl * sim.config.dx / 0.1 + 1e-15 for d in sim.history)
    t = [d.time for d in sim.history]
    assert all(b > a for a, b in zip(t, t[1:]))


def test_diagnostics_finite_and_mass_exact(backend):
    sim = Simulation(small_scene(gravity=(0, -9.8, 0)))
    sim.run(2)
    for d in sim.history:
        assert np.isfinite(d.kinetic_energy) and d.grid_mass_error < 1e-12


def test_nan_guard(backend):
    sim = Simulation(small_scene())
    sim.particles.v[3] = np.nan
    with pytest.raises(NumericalError):
        sim.step(1e-3)


def test_deterministic_runs_bit_identical(backend):
    a, b = Simulation(small_scene()), Simulation(small_scene())
    a.run(2)
    b.run(2)
    for da, db in zip(a.history, b.history):
        assert da.csv_row() == db.csv_row()


def test_restart_is_bit_exact(tmp_path, backend):
    cfg = small_scene(transfer="apic", gravity=(0, -9.8, 0))
    a = Simulation(cfg)
    for _ in range(5):
        a.step()
    a.save_state(tmp_path / "state.npz")
    a.step()
    b = Simulation(cfg).load_state(tmp_path / "state.npz")
    b.step()
    for k in ("x", "v", "F", "B", "G", "J"):
        np.testing.assert_array_equal(getattr(a.particles, k), getattr(b.particles, k))
    assert a.history[-1].csv_row() == b.history[-1].csv_row()


def test_single_precision_rounds_state(backend):
    sim = Simulation(small_scene(precision="single"))
    sim.step()
    x = sim.particles.x
    np.testing.assert_array_equal(x, x.astype(np.float32))


def test_fluid_initial_J():
    cfg = small_scene(materials={"w": JFluid(bulk=10.0, gamma=7.0, viscosity=0.0, density=1e3)},
                      shapes=[Shape(Box((0.4, 0.4, 0.4), (0.6, 0.6, 0.6)), "w", 8, J=0.5)])
    sim = Simulation(cfg)
    np.testing.assert_array_equal(sim.particles.J, 0.5)


@pytest.mark.parametrize("field,kw", [("scene.cfl", {"cfl": 1.5}), ("scene.fps", {"fps": 0}),
                                      ("shapes[0].ppc", {"shapes": [Shape(Sphere((0.5,) * 3, 0.1), "a", 9)]}),
                                      ("shapes[0].material", {"shapes": [Shape(Sphere((0.5,) * 3, 0.1), "b")]})])
def test_config_validation_names_field(field, kw):
    with pytest.raises(ConfigError) as exc:
        small_scene(**kw).validate()
    assert exc.value.field == field


def test_domain_exit_carries_step(backend):
    cfg = small_scene(shapes=[Shape(Sphere((0.5, 0.5, 0.5), 0.1), "a", 8, (0.0, 0.0, 20.0))])
    sim = Simulation(cfg)
    with pytest.raises(Exception) as exc:
        for _ in range(200):
            sim.step(1e-3)
    assert getattr(exc.value, "step", None) is not None
    assert exc.value.exit_code == 3


def test_bundled_configs_load():
    from ckmpm.config import bundled_configs
    names = bundled_configs()
    assert {"two_spheres_128", "rotating_rod_128", "jelly_cube", "contact_cylinder",
            "twisting_bar_ppc8", "minimal"} <= set(names)
    for n in names:
        cfg = load_config(n)
        assert dataclasses.replace(cfg).validate() is not None
