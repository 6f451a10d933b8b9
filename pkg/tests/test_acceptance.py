"""Acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (printed as it runs and again in the
terminal summary).  Long scene runs carry the ``slow`` mark; the 256^3
two-sphere run additionally needs CKMPM_FULLSCALE=1.
"""

import dataclasses
import math
import time
import warnings

import numpy as np
import pytest

from ckmpm.bench import run_bench
from ckmpm.config import load_config
from ckmpm.kernel import COMPACT, GRID_TAGS, batch_stencil_1d, ck_weight_1d, grid_offset
from ckmpm.sim import Simulation
from ckmpm.transfer import mls_moment, mls_reproduce
from ckmpm.validation import oracle_case, smoothness, Hooks

from conftest import FULLSCALE

RESULTS = []


def record(n, title, passed, detail, soft=False):
    status = "PASS" if passed else ("WARN" if soft else "FAIL")
    line = f"criterion {n:>2} {status}  {title}: {detail}"
    RESULTS.append(line)
    print(line)
    return passed


def test_01_kernel_identities():
    t0 = time.perf_counter()
    exact = (ck_weight_1d(0.0) == 1.0 and ck_weight_1d(1.0) == 0.0 and ck_weight_1d(-1.0) == 0.0
             and ck_weight_1d(0.5) == 0.5 and ck_weight_1d(-0.5) == 0.5)
    dx = 1 / 64
    x = np.random.default_rng(1).uniform(0.25, 0.75, (10_000, 3))
    part, recon = 0.0, np.zeros_like(x)
    for k in GRID_TAGS:
        _, w, _, r = batch_stencil_1d(x, dx, grid_offset(k), COMPACT)
        part = max(part, np.abs(w.sum(axis=-1) - 1).max())
        recon += (w * r).sum(axis=-1)
    recon = np.abs(recon / 2).max() / dx
    secs = time.perf_counter() - t0
    ok = exact and part <= 1e-12 and recon <= 1e-12 and secs < 1.0
    record(1, "kernel identities", ok, f"exact point values {exact}, partition {part:.1e}, "
           f"reconstruction {recon:.1e} cells (limit 1e-12), {secs:.2f}s")
    assert ok


def test_02_smoothness():
    r = smoothness(Hooks())
    record(2, "C2 smoothness", r.passed, f"max |K''| at u in {{-1,0,1}} = {r.value:.1e} (limit 1e-6)")
    assert r.passed


def two_sphere_error(name):
    cfg = load_config(name)
    sim = Simulation(cfg)
    n_sphere = len(sim.particles) // 2
    ref = n_sphere * float(np.linalg.norm(sim.particles.v[0]))
    first = sim.particles.x[:, 0] < 0.5
    pa0 = sim.particles.v[first].sum(axis=0)
    worst = 0.0
    for _ in range(cfg.frames):
        sim.advance_frame()
        for d in sim.history:
            worst = max(worst, float(np.abs(d.linear_massfree).max()) / ref)
        sim.history.clear()
    pa1 = sim.particles.v[first].sum(axis=0)
    return worst, ref, pa0, pa1, sim.time


@pytest.mark.slow
def test_03_linear_momentum_128():
    worst, ref, pa0, pa1, t = two_sphere_error("two_spheres_128")
    ok = worst <= 1e-4
    record(3, "linear momentum 128^3", ok,
           f"L-inf rate {worst:.2e} over {t:.2f}s (limit 1e-4; ref {ref:.2f}); sphere A "
           f"momentum x {pa0[0]:.1f} -> {pa1[0]:.1f}")
    assert ok


@pytest.mark.slow
@pytest.mark.fullscale
@pytest.mark.skipif(not FULLSCALE, reason="set CKMPM_FULLSCALE=1 for the 256^3 run")
def test_03_linear_momentum_256():
    worst, ref, pa0, pa1, t = two_sphere_error("two_spheres_256")
    ok = worst <= 1.1e-5
    record(3, "linear momentum 256^3", ok, f"L-inf rate {worst:.2e} over {t:.2f}s (limit 1.1e-5)")
    assert ok


@pytest.mark.slow
def test_04_angular_momentum():
    cfg = load_config("rotating_rod_128")
    sim = Simulation(cfg)
    L0 = sim.momentum().angular_massfree.copy()
    worst = np.zeros(3)
    for _ in range(cfg.frames):
        sim.advance_frame()
        for d in sim.history:
            worst = np.maximum(worst, np.abs(d.angular_massfree - L0))
        sim.history.clear()
    scale = abs(L0[2])
    rz, rxy = worst[2] / scale, worst[:2].max() / scale
    ok = rz <= 1e-2 and rxy <= 1e-4
    record(4, "angular momentum", ok, f"z rate {rz:.2e} (limit 1e-2), x/y {rxy:.2e} (limit 1e-4), "
           f"L_z0 {L0[2]:.4g} mass-free, {sim.time:.2f}s")
    assert ok


def test_05_oracle_equivalence():
    errs = {s: max(oracle_case(s, k) for k in ("compact", "quadratic")) for s in ("pic", "apic", "mls")}
    ok = errs["pic"] <= 1e-12 and errs["apic"] <= 1e-10 and errs["mls"] <= 1e-10
    record(5, "oracle equivalence", ok, f"pic {errs['pic']:.1e} (1e-12), apic {errs['apic']:.1e}, "
           f"mls {errs['mls']:.1e} (1e-10)")
    assert ok


def test_06_mls_reproduction():
    rng = np.random.default_rng(6)
    dx = 1 / 32
    A, c = rng.normal(size=(3, 3)), rng.normal(size=3)
    rep = m00 = mom = 0.0
    for _ in range(10_000):
        xp = rng.uniform(0.3, 0.7, 3)
        z = xp + rng.uniform(-0.5, 0.5, 3) * dx
        rep = max(rep, np.abs(mls_reproduce(xp, z, lambda y: A @ y + c, dx) - (A @ z + c)).max())
        M = mls_moment(xp, dx)
        m00 = max(m00, abs(M[0, 0] - 1))
        mom = max(mom, np.abs(M[0, 1:]).max(), np.abs(M[1:, 0]).max())
    ok = rep <= 1e-10 and m00 <= 1e-12 and mom <= 1e-12
    record(6, "MLS reproduction", ok, f"affine error {rep:.1e} (1e-10), |M00 - 1| {m00:.1e}, "
           f"first moments {mom:.1e} m (1e-12)")
    assert ok


def test_07_node_visits():
    counts = {}
    for kernel in ("compact", "quadratic"):
        sim = Simulation(dataclasses.replace(load_config("jelly_cube_128"), kernel=kernel))
        sim.step()
        counts[kernel] = sim.visits / len(sim.particles)
    ok = counts == {"compact": 16, "quadratic": 27}
    record(7, "node visits", ok, f"compact {counts['compact']:g}, quadratic {counts['quadratic']:g} "
           "per particle per scatter")
    assert ok


@pytest.mark.slow
def test_08_performance():
    rep = run_bench(load_config("jelly_cube"), steps=20, warmup=3, transfer="pic")
    ok = rep.speedup_transfer >= 1.2
    record(8, "transfer speedup", ok, f"{rep.speedup_transfer:.2f}x on transfer phases, "
           f"{rep.speedup_total:.2f}x whole step, {rep.compact.particles} particles "
           "(soft gate 1.2x, reference band 1.46-1.48x)", soft=True)
    if not ok:
        warnings.warn(f"transfer speedup {rep.speedup_transfer:.2f}x below 1.2x")


def jelly_amplitude(kernel, t_end=2.25, window=(1.75, 2.25)):
    cfg = dataclasses.replace(load_config("jelly_cube_128"), kernel=kernel)
    sim = Simulation(cfg)
    ke = []
    frames = math.ceil(t_end * cfg.fps)
    for _ in range(frames):
        sim.advance_frame()
        ke += [d.kinetic_energy for d in sim.history if window[0] <= d.time <= window[1]]
        sim.history.clear()
    return float(np.ptp(ke))


def ball_height(kernel):
    cfg = dataclasses.replace(load_config("contact_cylinder"), kernel=kernel)
    sim = Simulation(cfg)
    ball = sim.particles.mat == sim.material_names.index("ball")
    lowest = float(sim.particles.x[ball, 1].mean())
    for _ in range(cfg.frames):
        sim.advance_frame()
        lowest = min(lowest, float(sim.particles.x[ball, 1].mean()))
        sim.history.clear()
    return lowest, cfg.shapes[0].geometry.center[1]


@pytest.mark.slow
def test_09_behavior():
    amp_c, amp_q = jelly_amplitude("compact"), jelly_amplitude("quadratic")
    ratio = amp_c / amp_q if amp_q > 0 else math.inf
    yc, mid = ball_height("compact")
    yq, _ = ball_height("quadratic")
    ok_jelly = ratio >= 2
    ok_ball = yc < mid < yq
    dx = 1 / 256
    record(9, "behavioral regression", ok_jelly and ok_ball,
           f"jelly KE peak-to-peak in [1.75, 2.25]s compact {amp_c:.2e} vs quadratic {amp_q:.2e} "
           f"(ratio {ratio:.1f}, limit 2); lowest ball center compact {yc / dx:.2f} / quadratic "
           f"{yq / dx:.2f} cells vs tube midpoint {mid / dx:.2f}")
    assert ok_jelly and ok_ball


STRESS = ("dam_break", "sand_armadillo", "sand_castle", "fluid_logs", "bullet_tungsten")


@pytest.mark.slow
@pytest.mark.parametrize("name", STRESS)
def test_10_stress_scene(name):
    cfg = load_config(name)
    sim = Simulation(cfg)
    worst, steps = 0.0, 0
    for _ in range(cfg.frames):
        sim.advance_frame()
        for d in sim.history:
            assert np.isfinite(d.kinetic_energy)
            worst = max(worst, d.grid_mass_error)
        steps += len(sim.history)
        sim.history.clear()
    finite = bool(np.isfinite(sim.particles.x).all() and np.isfinite(sim.particles.v).all())
    ok = finite and worst <= 1e-8
    record(10, f"stress {name}", ok, f"{len(sim.particles)} particles, {steps} steps, finite {finite}, "
           f"max grid mass error {worst:.1e} (limit 1e-8)")
    assert ok
