"""Self-check suites behind ``ckmpm validate``.

Each suite returns a ``SuiteResult`` holding the measured worst-case value and
the threshold it was held to.  Two hooks exist for checking that the suites
can actually fail: ``fast_sine`` swaps the shared double-precision sine for a
float32 per-node evaluation, and ``single_grid`` drops the G- grid.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dualgrid import DualGrid
from .kernel import COMPACT, GRID_TAGS, batch_stencil_1d, ck_weight_1d, grid_offset
from .materials import FixedCorotated, material_table
from .reference import reference_step
from .sim import Cylinder, SceneConfig, Shape, Simulation, Sphere, rod_velocity_profile
from .transfer import PIC, SCHEMES, Particles, mls_moment, mls_reproduce, p2g, transfer_step


@dataclass
class SuiteResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0


@dataclass
class Hooks:
    fast_sine: bool = False
    single_grid: bool = False
    tags: tuple = field(init=False)

    def __post_init__(self):
        self.tags = (1,) if self.single_grid else GRID_TAGS


def _result(name, value, threshold, detail=""):
    ok = bool(np.isfinite(value) and value <= threshold)
    return SuiteResult(name, ok, float(value), float(threshold), detail)


def kernel_identities(hooks, n=10_000, seed=0):
    """Exact point values plus partition of unity of the per-axis weights."""
    exact = [ck_weight_1d(0.0) == 1.0, ck_weight_1d(1.0) == 0.0, ck_weight_1d(-1.0) == 0.0,
             ck_weight_1d(0.5) == 0.5, ck_weight_1d(-0.5) == 0.5]
    x = np.random.default_rng(seed).uniform(0.25, 0.75, (n, 3))
    worst = 0.0
    for k in hooks.tags:
        _, w, dw, _ = batch_stencil_1d(x, 1.0 / 64, grid_offset(k), COMPACT, hooks.fast_sine)
        worst = max(worst, np.abs(w.sum(axis=-1) - 1.0).max(), np.abs(dw.sum(axis=-1)).max() / 64)
    if not all(exact):
        worst = math.inf
    return _result("kernel identities", worst, 1e-12, "K(0), K(+-1), K(0.5); sum w = 1, sum grad w = 0")


def smoothness(hooks, h=2e-4):
    """Second derivative at u in {-1, 0, 1} from both sides via Richardson extrapolation."""

    def d2(u0, side):
        # centered second difference of K whose stencil stays on one side of u0
        def est(step):
            a = u0 + 2 * side * step
            return (ck_weight_1d(a + step) - 2 * ck_weight_1d(a) + ck_weight_1d(a - step)) / step**2
        return 2 * est(h / 2) - est(h)

    worst = max(abs(d2(u, s)) for u in (-1.0, 0.0, 1.0) for s in (-1, 1))
    return _result("C2 smoothness", worst, 1e-6, "K'' -> 0 at u = -1, 0, 1 from both sides")


def reconstruction(hooks, n=10_000, seed=1):
    """Grid-averaged sum_i w_i x_i equals the particle position."""
    dx = 1.0 / 64
    x = np.random.default_rng(seed).uniform(0.25, 0.75, (n, 3))
    acc = np.zeros_like(x)
    for k in hooks.tags:
        _, w, _, r = batch_stencil_1d(x, dx, grid_offset(k), COMPACT, hooks.fast_sine)
        acc += (w * r).sum(axis=-1)
    err = np.abs(acc / len(hooks.tags)).max() / dx
    return _result("position reconstruction", err, 1e-12, f"grids {hooks.tags}, error in cells")


def _two_sphere_config(hooks, res=32, radius=4.0, gap=1.0, speed=0.5):
    # spheres on the diagonal, ``gap`` cells apart, approaching each other
    dx = 1.0 / res
    v = speed / math.sqrt(3.0)
    d = (radius + 0.5 * gap) * dx / math.sqrt(3.0)
    c0 = np.array([0.5 - d] * 3)
    c1 = np.array([0.5 + d] * 3)
    mats = {"jelly": FixedCorotated(E=1e6, nu=0.4, density=1e3)}
    shapes = [Shape(Sphere(tuple(c0), radius * dx), "jelly", 8, (v, v, v)),
              Shape(Sphere(tuple(c1), radius * dx), "jelly", 8, (-v, -v, -v))]
    return SceneConfig(res=(res,) * 3, dx=dx, shapes=shapes, materials=mats, fps=24,
                       grid_tags=None if not hooks.single_grid else hooks.tags)


def linear_momentum(hooks, steps=300):
    """Two colliding spheres: drift of mass-free linear momentum over the run."""
    sim = Simulation(_two_sphere_config(hooks))
    scale = 0.5 * np.linalg.norm(sim.particles.v, axis=1).sum()
    p0 = sim.particles.v.sum(axis=0)
    worst = 0.0
    dt = sim.stable_dt()
    for _ in range(steps):
        transfer_step(sim.particles, sim.grid, dt, sim.mattab, PIC, mass_eps=sim.mass_eps,
                      fast=hooks.fast_sine)
        worst = max(worst, np.abs(sim.particles.v.sum(axis=0) - p0).max() / scale)
    return _result("linear momentum", worst, 1e-12, f"{steps} steps, {len(sim.particles)} particles")


def angular_momentum(hooks, steps=150):
    """Spinning rod under APIC: drift of L including the affine spin term."""
    res = 32
    dx = 1.0 / res
    geom = Cylinder((0.5, 0.5, 0.5), 2.0 * dx, 12.0 * dx, axis=1)
    mats = {"rod": FixedCorotated(E=1e6, nu=0.4, density=1e3)}
    cfg = SceneConfig(res=(res,) * 3, dx=dx, transfer="apic", materials=mats,
                      shapes=[Shape(geom, "rod", 8)],
                      grid_tags=None if not hooks.single_grid else hooks.tags)
    sim = Simulation(cfg)
    p = sim.particles
    p.v[:] = rod_velocity_profile(p.x, geom.center, 1.0, 0.5 * geom.length)
    L0 = sim.momentum().angular_massfree
    scale = abs(L0[2])
    dt = sim.stable_dt()
    worst = 0.0
    for _ in range(steps):
        transfer_step(p, sim.grid, dt, sim.mattab, SCHEMES["apic"], mass_eps=sim.mass_eps,
                      fast=hooks.fast_sine)
        worst = max(worst, np.abs(sim.momentum().angular_massfree - L0).max() / scale)
    return _result("angular momentum", worst, 1e-10, f"APIC rod, {steps} steps")


def mls_reproduction(hooks, n=200, seed=2):
    """Affine nodal fields come back exactly; moment matrix is normalized and centered."""
    rng = np.random.default_rng(seed)
    dx = 1.0 / 32
    A = rng.normal(size=(3, 3))
    c = rng.normal(size=3)
    worst = 0.0
    for _ in range(n):
        xp = rng.uniform(0.3, 0.7, 3)
        z = xp + rng.uniform(-0.5, 0.5, 3) * dx
        got = mls_reproduce(xp, z, lambda y: A @ y + c, dx)
        worst = max(worst, np.abs(got - (A @ z + c)).max())
        M = mls_moment(xp, dx)
        worst = max(worst, abs(M[0, 0] - 1.0), np.abs(M[0, 1:]).max() / dx)
    return _result("MLS reproduction", worst, 1e-10, f"{n} particles")


def oracle_case(scheme, kernel="compact", seed=3, fast=False, tags=None):
    """Max abs difference of one step against the dense brute-force oracle."""
    rng = np.random.default_rng(seed)
    res, dx = 8, 1.0 / 8
    mats = [FixedCorotated(E=1e3, nu=0.3, density=1e3)]
    p = Particles.create(rng.uniform(0.35, 0.65, (5, 3)), v=rng.normal(0, 0.1, (5, 3)), mass=0.01,
                         vol0=1e-5, F=np.eye(3) + rng.normal(0, 0.05, (5, 3, 3)),
                         B=rng.normal(0, 1e-3, (5, 3, 3)))
    q = p.copy()
    dt = 1e-3
    ref = reference_step(p, mats, res, dx, dt, scheme, kernel, (0.0, -9.8, 0.0))
    grid = DualGrid(res, dx, kernel, tags)
    transfer_step(q, grid, dt, material_table(mats), SCHEMES[scheme], (0.0, -9.8, 0.0), fast=fast)
    return max(float(np.abs(ref[k] - getattr(q, k)).max()) for k in ref)


def oracle_equivalence(hooks):
    tags = hooks.tags if hooks.single_grid else None
    pic = oracle_case("pic", fast=hooks.fast_sine, tags=tags)
    apic = oracle_case("apic", fast=hooks.fast_sine, tags=tags)
    mls = oracle_case("mls", fast=hooks.fast_sine, tags=tags)
    worst = max(pic / 1e-12, apic / 1e-10, mls / 1e-10)
    return _result("oracle equivalence", worst, 1.0,
                   f"pic {pic:.1e} (1e-12), apic {apic:.1e}, mls {mls:.1e} (1e-10)")


def node_visits(hooks, n=500, seed=4):
    """Scatter counters: 16 nodes per particle for the dual grid, 27 for quadratic."""
    x = np.random.default_rng(seed).uniform(0.3, 0.7, (n, 3))
    p = Particles.create(x, mass=1.0, vol0=1.0)
    counts = {}
    for kernel, tags in (("compact", hooks.tags), ("quadratic", None)):
        grid = DualGrid(16, 1.0 / 16, kernel, tags)
        grid.activate(p.x)
        counts[kernel] = p2g(p, grid, force=False) / n
    bad = abs(counts["compact"] - 16) + abs(counts["quadratic"] - 27)
    return _result("node visits", bad, 0.0,
                   f"compact {counts['compact']:g}, quadratic {counts['quadratic']:g} per particle")


SUITES = (kernel_identities, smoothness, reconstruction, linear_momentum, angular_momentum,
          mls_reproduction, oracle_equivalence, node_visits)


def run_suites(fast_sine=False, single_grid=False, suites=SUITES):
    hooks = Hooks(fast_sine, single_grid)
    out = []
    for suite in suites:
        t0 = time.perf_counter()
        try:
            res = suite(hooks)
        except Exception as exc:  # a crashing suite is a failing suite
            res = SuiteResult(suite.__name__.replace("_", " "), False, math.nan, math.nan,
                              f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'suite':<{width}}  result  {'value':>10}  {'limit':>8}  time    detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.value:>10.3g}  "
                     f"{r.threshold:>8.1g}  {r.seconds:5.2f}s  {r.detail}")
    return "\n".join(lines)
