"""Compact vs quadratic kernel timing on a shared substep schedule.

Both simulations start from the same particles and advance in lockstep: the
compact run picks each CFL step and the quadratic run reuses it, so both see
the identical dt sequence.  Alternating the two also spreads machine noise
evenly over both kernels.
"""

import dataclasses
import time
from dataclasses import dataclass, field

from . import _accel
from .sim import Simulation

PHASES = ("activate", "p2g", "grid", "g2p", "advance")
TRANSFER_PHASES = ("p2g", "grid", "g2p")


@dataclass
class KernelTiming:
    kernel: str
    steps: int
    particles: int
    visits_per_particle: float
    phases: dict = field(default_factory=dict)

    @property
    def transfer(self):
        return sum(self.phases.get(k, 0.0) for k in TRANSFER_PHASES)

    @property
    def total(self):
        return sum(self.phases.values())


@dataclass
class BenchReport:
    compact: KernelTiming
    quadratic: KernelTiming
    backend: str
    dts: list

    @property
    def speedup_transfer(self):
        return self.quadratic.transfer / self.compact.transfer

    @property
    def speedup_total(self):
        return self.quadratic.total / self.compact.total

    def format(self):
        c, q = self.compact, self.quadratic
        lines = [f"backend {self.backend}, {c.particles} particles, {c.steps} steps "
                 f"(dt {min(self.dts):.3g}..{max(self.dts):.3g} s)",
                 f"{'phase':<10}{'compact ms':>12}{'quadratic ms':>14}{'ratio':>8}"]
        for ph in PHASES + ("transfer", "total"):
            tc = getattr(c, ph) if ph in ("transfer", "total") else c.phases.get(ph, 0.0)
            tq = getattr(q, ph) if ph in ("transfer", "total") else q.phases.get(ph, 0.0)
            ratio = tq / tc if tc > 0 else float("nan")
            lines.append(f"{ph:<10}{1e3 * tc / c.steps:>12.2f}{1e3 * tq / q.steps:>14.2f}{ratio:>8.2f}")
        lines.append(f"node visits per particle: compact {c.visits_per_particle:g}, "
                     f"quadratic {q.visits_per_particle:g}")
        lines.append(f"transfer speedup {self.speedup_transfer:.2f}x, "
                     f"whole-step speedup {self.speedup_total:.2f}x")
        return "\n".join(lines)


def run_bench(config, steps=40, warmup=3, transfer="pic", backend=None):
    """Lockstep benchmark of both kernels; timings exclude the warmup steps."""
    prev = _accel.backend()
    if backend is not None:
        _accel.set_backend(backend)
    try:
        cfg_c = dataclasses.replace(config, kernel="compact", transfer=transfer, grid_tags=None)
        cfg_q = dataclasses.replace(config, kernel="quadratic", transfer=transfer, grid_tags=None)
        sims = {"compact": Simulation(cfg_c)}
        sims["quadratic"] = Simulation(cfg_q, particles=sims["compact"].particles.copy())
        dts = []
        for i in range(warmup + steps):
            if i == warmup:
                for s in sims.values():
                    s.timers.clear()
            dt = sims["compact"].stable_dt()
            for s in sims.values():
                s.step(dt)
            if i >= warmup:
                dts.append(dt)
        out = {}
        for name, s in sims.items():
            n = len(s.particles)
            out[name] = KernelTiming(name, steps, n, s.visits / n if n else 0.0, dict(s.timers))
        return BenchReport(out["compact"], out["quadratic"], _accel.backend(), dts)
    finally:
        _accel.set_backend(prev)


def run_backends(config, steps=3, warmup=1):
    """Per-step wall time of the numba kernels against the numpy fallback (compact, PIC)."""
    if not _accel.HAS_NUMBA:
        raise RuntimeError("numba is unavailable; nothing to compare against")
    cfg = dataclasses.replace(config, kernel="compact", transfer="pic", grid_tags=None)
    base = Simulation(cfg)
    times = {}
    prev = _accel.backend()
    try:
        for name in ("numba", "numpy"):
            _accel.set_backend(name)
            sim = Simulation(cfg, particles=base.particles.copy())
            dt = sim.stable_dt()
            for _ in range(warmup):
                sim.step(dt)
            t0 = time.perf_counter()
            for _ in range(steps):
                sim.step(dt)
            times[name] = (time.perf_counter() - t0) / steps
    finally:
        _accel.set_backend(prev)
    return times
