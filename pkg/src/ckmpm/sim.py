"""Scene construction, particle sampling, time-step control and the step loop."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel, _nb, _np, transfer
from .dualgrid import DualGrid, domain_walls
from .errors import ConfigError, NaNGuardError
from .materials import JFluid, material_table
from .transfer import SCHEMES, Particles

PPC_CHOICES = (8, 16, 27)
INSET_CELLS = 2


# -- geometry ------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def bounds(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def contains(self, p):
        lo, hi = self.bounds()
        return ((p >= lo) & (p <= hi)).all(axis=-1)

    def volume(self):
        lo, hi = self.bounds()
        return float(np.prod(hi - lo))


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def bounds(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius

    def contains(self, p):
        d = p - np.asarray(self.center, float)
        return np.einsum("...i,...i->...", d, d) < self.radius ** 2

    def volume(self):
        return 4.0 / 3.0 * math.pi * self.radius ** 3


@dataclass(frozen=True)
class Cylinder:
    """Solid cylinder, or a tube when ``inner_radius > 0``; ``axis`` is 0, 1 or 2."""

    center: tuple
    radius: float
    length: float
    axis: int = 1
    inner_radius: float = 0.0

    def bounds(self):
        c = np.asarray(self.center, float)
        half = np.full(3, self.radius)
        half[self.axis] = 0.5 * self.length
        return c - half, c + half

    def contains(self, p):
        d = p - np.asarray(self.center, float)
        along = d[..., self.axis]
        r2 = np.einsum("...i,...i->...", d, d) - along ** 2
        ok = (np.abs(along) <= 0.5 * self.length) & (r2 < self.radius ** 2)
        if self.inner_radius > 0:
            ok &= r2 >= self.inner_radius ** 2
        return ok

    def volume(self):
        return math.pi * (self.radius ** 2 - self.inner_radius ** 2) * self.length


Geometry = Box | Sphere | Cylinder


def _sub_lattice(ppc, rng):
    """Offsets inside a unit cell, (ppc, 3)."""
    if ppc == 8:
        o = np.array([0.25, 0.75])
    elif ppc == 27:
        o = np.array([1.0, 3.0, 5.0]) / 6.0
    elif ppc == 16:
        # two jittered samples in each octant
        corners = np.stack(np.meshgrid([0.0, 0.5], [0.0, 0.5], [0.0, 0.5], indexing="ij"), -1)
        corners = np.repeat(corners.reshape(-1, 3), 2, axis=0)
        return corners + 0.5 * rng.random((16, 3))
    else:
        raise ConfigError("ppc", f"must be one of {PPC_CHOICES}, got {ppc}")
    return np.stack(np.meshgrid(o, o, o, indexing="ij"), -1).reshape(-1, 3)


def sample_points(geometry, dx, ppc=8, seed=0):
    """Sub-lattice points of every cell overlapping ``geometry`` that fall inside it."""
    rng = np.random.default_rng(seed)
    lo, hi = geometry.bounds()
    c0 = np.floor(lo / dx).astype(np.int64)
    c1 = np.ceil(hi / dx).astype(np.int64)
    axes = [np.arange(a, b) for a, b in zip(c0, c1)]
    cells = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 1, 3)
    if ppc == 16:
        offs = np.stack([_sub_lattice(16, rng) for _ in range(len(cells))])
    else:
        offs = _sub_lattice(ppc, rng)[None]
    pts = ((cells + offs) * dx).reshape(-1, 3)
    return pts[geometry.contains(pts)]


def sample_shape(geometry, dx, ppc, density, res=None, seed=0, mat=0):
    """Particles on a per-cell sub-lattice inside ``geometry``.

    Each particle carries mass density*dx^3/ppc and rest volume dx^3/ppc.  When
    ``res`` is given every particle must lie at least two cells inside the domain.
    """
    if ppc not in PPC_CHOICES:
        raise ConfigError("ppc", f"must be one of {PPC_CHOICES}, got {ppc}")
    x = sample_points(geometry, dx, ppc, seed)
    if res is not None and len(x):
        res = np.broadcast_to(np.asarray(res), (3,))
        lo = INSET_CELLS * dx
        hi = (res - INSET_CELLS) * dx
        if (x < lo).any() or (x > hi).any():
            raise ConfigError("geometry", "shape reaches outside the inset domain")
    vol = dx ** 3 / ppc
    return Particles.create(x, mass=density * vol, vol0=vol, mat=mat)


def rod_velocity_profile(x, center, tip_speed, half_length, axis=1, direction=0):
    """Velocity linear in the offset along ``axis``, pointing along ``direction``.

    A point at ``half_length`` from the center moves at ``tip_speed``.
    """
    x = np.asarray(x, dtype=float)
    off = x[..., axis] - np.asarray(center, dtype=float)[axis]
    v = np.zeros(x.shape)
    v[..., direction] = tip_speed * off / half_length
    return v


# -- scene ---------------------------------------------------------------------

@dataclass
class Shape:
    geometry: Geometry
    material: str
    ppc: int = 8
    velocity: tuple = (0.0, 0.0, 0.0)
    # {"kind": "rod", "tip_speed": ..., "axis": ..., "direction": ...}
    profile: dict = None
    J: float = 1.0


@dataclass
class SceneConfig:
    res: tuple
    dx: float
    gravity: tuple = (0.0, 0.0, 0.0)
    frames: int = 1
    fps: float = 24.0
    cfl: float = 0.5
    transfer: str = "pic"
    kernel: str = "compact"
    shapes: list = field(default_factory=list)
    materials: dict = field(default_factory=dict)
    boundaries: list = field(default_factory=list)
    walls: str = None
    wall_thickness: int = 3
    precision: str = "double"
    deterministic: bool = True
    threads: int = 1
    clamp: bool = False
    two_pass: bool = False
    seed: int = 0
    name: str = "scene"
    snapshots: bool = True
    binary: bool = False
    snapshot_every: int = 1
    grid_tags: tuple = None

    def validate(self):
        res = np.broadcast_to(np.asarray(self.res), (3,))
        if not (res > 0).all():
            raise ConfigError("scene.res", f"must be positive, got {self.res}")
        if not self.dx > 0:
            raise ConfigError("scene.dx", f"must be > 0, got {self.dx}")
        if not self.fps > 0:
            raise ConfigError("scene.fps", f"must be > 0, got {self.fps}")
        if not 0 < self.cfl <= 1:
            raise ConfigError("scene.cfl", f"must be in (0, 1], got {self.cfl}")
        if self.frames < 0:
            raise ConfigError("scene.frames", f"must be >= 0, got {self.frames}")
        if self.transfer not in SCHEMES:
            raise ConfigError("scene.transfer", f"must be one of {sorted(SCHEMES)}")
        if self.kernel not in ("compact", "quadratic"):
            raise ConfigError("scene.kernel", "must be 'compact' or 'quadratic'")
        if self.precision not in ("double", "single"):
            raise ConfigError("scene.precision", "must be 'double' or 'single'")
        if self.threads < 1:
            raise ConfigError("scene.threads", f"must be >= 1, got {self.threads}")
        if len(np.asarray(self.gravity).reshape(-1)) != 3:
            raise ConfigError("scene.gravity", "must be a 3-vector")
        for i, s in enumerate(self.shapes):
            if s.material not in self.materials:
                raise ConfigError(f"shapes[{i}].material", f"unknown material {s.material!r}")
            if s.ppc not in PPC_CHOICES:
                raise ConfigError(f"shapes[{i}].ppc", f"must be one of {PPC_CHOICES}, got {s.ppc}")
            if not s.J > 0:
                raise ConfigError(f"shapes[{i}].J", f"must be > 0, got {s.J}")
        return self

    @property
    def frame_dt(self):
        return 1.0 / self.fps

    def boundary_list(self):
        out = list(self.boundaries)
        if self.walls:
            out += domain_walls(self.res, self.dx, self.walls, self.wall_thickness)
        return out


def build_particles(config):
    """Sample every shape and assign velocities, material ids and initial J."""
    names = list(config.materials)
    parts = None
    for i, s in enumerate(config.shapes):
        mat = config.materials[s.material]
        try:
            p = sample_shape(s.geometry, config.dx, s.ppc, mat.density, config.res,
                             seed=config.seed + i, mat=names.index(s.material))
        except ConfigError as exc:
            raise ConfigError(f"shapes[{i}].{exc.field}", exc.message) from None
        p.v[:] = np.asarray(s.velocity, dtype=float)
        if s.profile:
            prof = dict(s.profile)
            if prof.pop("kind", "rod") != "rod" or not isinstance(s.geometry, Cylinder):
                raise ConfigError(f"shapes[{i}].profile", "only a rod profile on a cylinder is supported")
            axis = prof.get("axis", s.geometry.axis)
            p.v[:] += rod_velocity_profile(p.x, s.geometry.center, prof["tip_speed"],
                                           0.5 * s.geometry.length, axis, prof.get("direction", 0))
        if isinstance(mat, JFluid):
            p.J[:] = s.J
        parts = p if parts is None else parts.concat(p)
    if parts is None:
        parts = Particles.create(np.zeros((0, 3)))
    return parts


def wave_speed(materials, particles=None):
    """Fastest elastic wave; fluids are evaluated at their most compressed particle."""
    speeds = []
    for i, m in enumerate(materials):
        if isinstance(m, JFluid) and particles is not None and len(particles):
            J = particles.J[particles.mat == i]
            speeds.append(m.wave_speed(float(J.min())) if len(J) else m.wave_speed())
        else:
            speeds.append(m.wave_speed())
    return max(speeds, default=0.0)


def cfl_dt(particles, dx, cfl, materials, remaining=math.inf):
    """cfl*dx / max(v_max, c_max), clamped to the time left in the frame."""
    vmax = float(np.sqrt((particles.v ** 2).sum(axis=1).max())) if len(particles) else 0.0
    speed = max(vmax, wave_speed(materials, particles))
    if not math.isfinite(speed):
        raise NaNGuardError("non-finite particle speed")
    if speed == 0.0:
        return remaining
    return min(cfl * dx / speed, remaining)


@dataclass
class Momentum:
    linear: np.ndarray
    angular: np.ndarray
    linear_massfree: np.ndarray
    angular_massfree: np.ndarray


def _affine_spin(B):
    """Axial vector eps_abc B_cb of each affine matrix (the APIC spin term)."""
    return np.stack([B[:, 2, 1] - B[:, 1, 2], B[:, 0, 2] - B[:, 2, 0], B[:, 1, 0] - B[:, 0, 1]], axis=-1)


def total_momentum(particles, affine=False):
    """Linear and angular momentum about the origin, with and without mass.

    With ``affine=True`` the angular part includes the spin carried by the
    APIC matrix B, which is what the affine transfers conserve.
    """
    p = particles
    m = p.mass[:, None]
    xv = np.cross(p.x, p.v)
    if affine:
        xv = xv + _affine_spin(p.B)
    return Momentum((m * p.v).sum(axis=0), (m * xv).sum(axis=0), p.v.sum(axis=0), xv.sum(axis=0))


@dataclass
class Diagnostics:
    step: int
    time: float
    dt: float
    linear: np.ndarray
    angular: np.ndarray
    linear_massfree: np.ndarray
    angular_massfree: np.ndarray
    kinetic_energy: float
    vmax: float
    grid_mass_error: float = 0.0

    CSV_COLUMNS = ("step", "time", "px", "py", "pz", "Lx", "Ly", "Lz", "px_massfree",
                   "py_massfree", "pz_massfree", "KE", "vmax")

    def csv_row(self):
        return (self.step, self.time, *self.linear, *self.angular, *self.linear_massfree,
                self.kinetic_energy, self.vmax)


def diagnostics(particles, step=0, time=0.0, dt=0.0, affine=False, grid_mass_error=0.0):
    """Diagnostics row for the current particle state; raises NaNGuardError on non-finite data."""
    p = particles
    out = np.zeros(14)
    bad = _impl().particle_sums(p.x, p.v, p.mass, p.B, bool(affine), out)
    if bad >= 0:
        err = NaNGuardError(f"non-finite state at particle {bad}")
        err.step = step
        raise err
    return Diagnostics(step, time, dt, out[0:3], out[3:6], out[6:9], out[9:12], float(out[12]),
                       math.sqrt(out[13]), grid_mass_error)


def _impl():
    return _nb if _accel.backend() == "numba" else _np


_STATE_FIELDS = ("x", "v", "mass", "vol0", "F", "J", "B", "G", "mat")


class Simulation:
    """Owns the particles, grid and clock of one scene."""

    def __init__(self, config, particles=None):
        self.config = config.validate()
        self.material_names = list(config.materials)
        self.materials = [config.materials[n] for n in self.material_names]
        self.mattab = material_table(self.materials)
        self.particles = build_particles(config) if particles is None else particles
        self.grid = DualGrid(config.res, config.dx, config.kernel, config.grid_tags)
        self.grid.margin = 1
        self.bcs = config.boundary_list()
        self.scheme = SCHEMES[config.transfer]
        self.mass_eps = transfer.default_mass_eps(self.particles)
        self.total_mass = float(self.particles.mass.sum())
        self.time = 0.0
        self.step_count = 0
        self.frame = 0
        self.visits = 0
        self.timers = {}
        self.history = []
        self.single = config.precision == "single"
        self.threads = 1 if config.deterministic else config.threads
        if self.single:
            self._round_state()

    # time stepping

    def stable_dt(self, remaining=math.inf):
        return cfl_dt(self.particles, self.config.dx, self.config.cfl, self.materials, remaining)

    def _round_state(self):
        p = self.particles
        for name in ("x", "v", "F", "J", "B", "G"):
            a = getattr(p, name)
            a[...] = a.astype(np.float32)

    def step(self, dt=None):
        """Advance by ``dt`` (default: the CFL step) and return the step's diagnostics."""
        cfg = self.config
        dt = self.stable_dt() if dt is None else float(dt)
        if not (dt > 0 and math.isfinite(dt)):
            raise NaNGuardError(f"invalid time step {dt}")
        try:
            self.visits = transfer.transfer_step(
                self.particles, self.grid, dt, self.mattab, self.scheme, cfg.gravity, self.bcs,
                self.mass_eps, self.single, cfg.two_pass, cfg.clamp, self.threads, self.timers)
        except Exception as exc:
            if hasattr(exc, "step"):
                exc.step = self.step_count
            raise
        if self.single:
            self._round_state()
        self.time += dt
        self.step_count += 1
        d = diagnostics(self.particles, self.step_count, self.time, dt,
                        affine=self.scheme != transfer.PIC, grid_mass_error=self._grid_mass_error())
        self.history.append(d)
        return d

    def _grid_mass_error(self):
        if not self.total_mass:
            return 0.0
        gm = np.zeros(self.grid.ng)
        _impl().grid_mass(self.grid.nodes, self.grid.nslots, gm)
        return float(np.abs(gm - self.total_mass).max() / self.total_mass)

    def advance_frame(self, on_step=None):
        """Substep up to the next frame boundary, landing on it exactly."""
        end = (self.frame + 1) / self.config.fps
        while True:
            remaining = end - self.time
            if remaining <= 1e-12 * max(1.0, end):
                break
            dt = self.stable_dt(remaining)
            if remaining - dt <= 1e-12 * max(1.0, end):
                dt = remaining
            d = self.step(dt)
            if dt == remaining:
                self.time = end
                d.time = end
            if on_step is not None:
                on_step(self, d)
        self.time = end
        self.frame += 1

    def run(self, frames=None, on_frame=None, on_step=None):
        frames = self.config.frames if frames is None else frames
        for _ in range(frames):
            self.advance_frame(on_step)
            if on_frame is not None:
                on_frame(self)
        return self.history

    def momentum(self):
        return total_momentum(self.particles, affine=self.scheme != transfer.PIC)

    # restart

    def save_state(self, path):
        p = self.particles
        np.savez(path, time=self.time, step=self.step_count, frame=self.frame,
                 **{k: getattr(p, k) for k in _STATE_FIELDS})

    def load_state(self, path):
        with np.load(path) as data:
            self.particles = Particles(**{k: data[k].copy() for k in _STATE_FIELDS})
            self.time = float(data["time"])
            self.step_count = int(data["step"])
            self.frame = int(data["frame"])
        self.grid.invalidate()
        self.mass_eps = transfer.default_mass_eps(self.particles)
        self.total_mass = float(self.particles.mass.sum())
        return self


def step(sim, dt=None):
    """Functional alias for ``Simulation.step``."""
    return sim.step(dt)
