"""Particle/grid transfers on the dual grid: PIC, APIC and MLS.

The batch operations work on a ``Particles`` container and a ``DualGrid``
and dispatch to the numba kernels or their numpy twins.  Every grid receives
the full particle mass and is updated on its own; gathers average over the
grids.  The per-particle helpers (``compute_apic_D``, ``mls_moment``,
``mls_shape``) are plain numpy on top of ``kernel.stencil``.
"""

import time
from dataclasses import dataclass, fields

import numpy as np

from . import _accel, _nb, _np
from .dualgrid import DualGrid, pack_boundaries
from .errors import (DomainExitError, InactiveBlockError, InvertedElementError,
                     IsolatedParticleError, NumericalError, SingularMomentError)
from .kernel import GRID_TAGS, dual_stencils, quad_bspline_stencil

PIC, APIC, MLS = _nb.PIC, _nb.APIC, _nb.MLS
SCHEMES = {"pic": PIC, "apic": APIC, "mls": MLS}

_ERRORS = {
    _nb.ERR_DOMAIN: DomainExitError,
    _nb.ERR_INVERTED: InvertedElementError,
    _nb.ERR_SINGULAR: SingularMomentError,
    _nb.ERR_INACTIVE: InactiveBlockError,
    _nb.ERR_ISOLATED: IsolatedParticleError,
}


@dataclass
class Particles:
    """Struct-of-arrays particle state.

    ``B`` is the APIC affine matrix (m^2/s); ``G`` the last gathered velocity
    gradient (used by fluid viscosity).  Fluids keep ``F = I`` and evolve
    ``J``; solids keep ``J = det F`` in sync for output.
    """

    x: np.ndarray
    v: np.ndarray
    mass: np.ndarray
    vol0: np.ndarray
    F: np.ndarray
    J: np.ndarray
    B: np.ndarray
    G: np.ndarray
    mat: np.ndarray

    @classmethod
    def create(cls, x, v=None, mass=1.0, vol0=1.0, mat=0, F=None, J=None, B=None):
        x = np.array(x, dtype=np.float64).reshape(-1, 3)
        n = len(x)
        v = np.zeros((n, 3)) if v is None else np.array(np.broadcast_to(v, (n, 3)), dtype=np.float64)
        F = np.tile(np.eye(3), (n, 1, 1)) if F is None else np.array(np.broadcast_to(F, (n, 3, 3)), dtype=np.float64)
        J = np.linalg.det(F) if J is None else np.array(np.broadcast_to(J, (n,)), dtype=np.float64)
        B = np.zeros((n, 3, 3)) if B is None else np.array(np.broadcast_to(B, (n, 3, 3)), dtype=np.float64)
        p = cls(
            x=x,
            v=v,
            mass=np.array(np.broadcast_to(mass, (n,)), dtype=np.float64),
            vol0=np.array(np.broadcast_to(vol0, (n,)), dtype=np.float64),
            F=F,
            J=J,
            B=B,
            G=np.zeros((n, 3, 3)),
            mat=np.array(np.broadcast_to(mat, (n,)), dtype=np.int64),
        )
        if n and not ((p.mass > 0).all() and (p.vol0 > 0).all()):
            raise ValueError("particle mass and rest volume must be positive")
        return p

    def __len__(self):
        return len(self.x)

    def copy(self):
        return Particles(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def concat(self, other):
        return Particles(**{f.name: np.concatenate([getattr(self, f.name), getattr(other, f.name)])
                            for f in fields(self)})

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _impl():
    return _nb if _accel.backend() == "numba" else _np


def check_status(status):
    code = int(status[0])
    if code == _nb.OK:
        return
    raise _ERRORS.get(code, NumericalError)(int(status[1]))


def default_mass_eps(particles):
    if len(particles) == 0:
        return 0.0
    return 1e-12 * float(np.median(particles.mass))


def _scheme(scheme):
    return SCHEMES[scheme] if isinstance(scheme, str) else int(scheme)


def _default_table():
    return np.zeros((1, 8))


# -- batch pipeline ------------------------------------------------------------

def p2g(particles, grid: DualGrid, dt=0.0, mattab=None, scheme=PIC, momentum=True,
        force=True, fast=False, threads=1):
    """Scatter mass/momentum and/or dt*force onto both grids; returns node visits."""
    scheme = _scheme(scheme)
    mattab = _default_table() if mattab is None else mattab
    status = np.zeros(2, np.int64)
    p = particles
    args = (p.x, p.v, p.mass, p.vol0, p.F, p.J, p.B, p.G, p.mat, mattab, grid.dx, float(dt),
            grid.offsets, grid.kernel, scheme, bool(fast), grid.res, grid.table, grid.nodes)
    if _accel.backend() == "numba" and threads and threads > 1 and len(p) >= threads:
        visits = _nb.p2g_parallel(int(threads), *args[:-1], grid.nodes, grid.nslots,
                                  bool(momentum), bool(force), status)
    else:
        visits = _impl().p2g(*args, bool(momentum), bool(force), status)
    check_status(status)
    return int(visits)


def p2g_pic(particles, grid):
    """Mass and PIC momentum onto both grids."""
    return p2g(particles, grid, scheme=PIC, force=False)


def p2g_apic(particles, grid):
    """Mass and affine momentum m (v + B D^-1 (x_i - x_p)) onto both grids."""
    return p2g(particles, grid, scheme=APIC, force=False)


def p2g_force(particles, grid, dt, mattab, scheme=PIC):
    """Add dt * f_i = -dt sum_p V0 tau grad w to nodal momentum on each grid."""
    return p2g(particles, grid, dt, mattab, scheme=scheme, momentum=False, force=True)


def grid_update(grid, dt, gravity=(0.0, 0.0, 0.0), bcs=(), mass_eps=0.0):
    """Momentum to velocity plus gravity and boundaries; light nodes are zeroed."""
    kinds, shapes, par = pack_boundaries(bcs)
    _impl().grid_update(grid.nodes, grid.nslots, grid.slot_coords, grid.dx, grid.offsets,
                        float(dt), np.asarray(gravity, dtype=np.float64), float(mass_eps),
                        kinds, shapes, par)


def gather(particles, grid, scheme=PIC, mass_eps=None, fast=False, threads=1):
    """Returns (v, B, grad v) averaged over the grids for every particle."""
    scheme = _scheme(scheme)
    n = len(particles)
    mass_eps = default_mass_eps(particles) if mass_eps is None else mass_eps
    v = np.zeros((n, 3))
    B = np.zeros((n, 3, 3))
    G = np.zeros((n, 3, 3))
    status = np.zeros(2, np.int64)
    args = (particles.x, grid.dx, grid.offsets, grid.kernel, scheme, bool(fast), grid.res,
            grid.table, grid.nodes, float(mass_eps), v, B, G, status)
    if _accel.backend() == "numba" and threads and threads > 1 and n >= threads:
        _nb.gather_parallel(int(threads), *args)
    else:
        _impl().gather(*args)
    check_status(status)
    return v, B, G


def g2p_pic(particles, grid, mass_eps=None):
    return gather(particles, grid, PIC, mass_eps)[0]


def g2p_apic_B(particles, grid, mass_eps=None):
    return gather(particles, grid, APIC, mass_eps)[1]


def velocity_gradient(particles, grid, mass_eps=None):
    return gather(particles, grid, PIC, mass_eps)[2]


def update_F(F, gradv, dt):
    """(I + dt grad v) F."""
    F = np.asarray(F, dtype=float)
    return F + dt * np.asarray(gradv, dtype=float) @ F


def advance(particles, vel, Bnew, Gnew, dt, mattab, scheme=PIC, clamp=False, threads=1):
    """Commit gathered velocities, update F/J, return-map, and advect positions."""
    scheme = _scheme(scheme)
    p = particles
    status = np.zeros(2, np.int64)
    args = (p.x, p.v, p.F, p.J, p.B, p.G, p.mat, mattab, float(dt), vel, Bnew, Gnew, scheme,
            bool(clamp), status)
    if _accel.backend() == "numba" and threads and threads > 1 and len(p) >= threads:
        _nb.advance_parallel(int(threads), *args)
    else:
        _impl().advance(*args)
    check_status(status)


def transfer_step(particles, grid, dt, mattab, scheme=PIC, gravity=(0.0, 0.0, 0.0), bcs=(),
                  mass_eps=None, fast=False, two_pass=False, clamp=False, threads=1, timers=None):
    """One explicit step: activate, clear, P2G, grid update, G2P, particle update.

    Returns the number of node visits of the scatter.  If ``timers`` is a dict,
    wall time per phase is accumulated into it.
    """
    scheme = _scheme(scheme)
    mass_eps = default_mass_eps(particles) if mass_eps is None else mass_eps
    tick = _Ticker(timers)
    grid.activate(particles.x)
    grid.clear()
    tick("activate")
    if two_pass:
        visits = p2g(particles, grid, dt, mattab, scheme, True, False, fast, threads)
        p2g(particles, grid, dt, mattab, scheme, False, True, fast, threads)
    else:
        visits = p2g(particles, grid, dt, mattab, scheme, True, True, fast, threads)
    tick("p2g")
    grid_update(grid, dt, gravity, bcs, mass_eps)
    tick("grid")
    v, B, G = gather(particles, grid, scheme, mass_eps, fast, threads)
    tick("g2p")
    advance(particles, v, B, G, dt, mattab, scheme, clamp, threads)
    tick("advance")
    return visits


class _Ticker:
    def __init__(self, timers):
        self.timers = timers
        self.t = time.perf_counter()

    def __call__(self, name):
        if self.timers is None:
            return
        now = time.perf_counter()
        self.timers[name] = self.timers.get(name, 0.0) + now - self.t
        self.t = now


def mls_step_variant(particles, grid, dt, mattab, gravity=(0.0, 0.0, 0.0), bcs=(),
                     mass_eps=None):
    """Full step with MLS shape gradients in the force and affine gathers for velocity."""
    return transfer_step(particles, grid, dt, mattab, MLS, gravity, bcs, mass_eps)


# -- per-particle geometry -----------------------------------------------------

def _node_offsets(x_p, dx, tags):
    """[(weights (8,), r (8, 3), grads (8, 3), node idx (8, 3), tag)] per grid."""
    out = []
    if tuple(tags) == (0,):
        st = [quad_bspline_stencil(x_p, dx)]
    else:
        st = [s for s in dual_stencils(x_p, dx) if s.grid_tag in tags]
    for s in st:
        pos = s.node_positions()
        out.append((s.weights, pos - np.asarray(x_p, dtype=float), s.grads,
                    s.base[None, :] + s.offsets, s.grid_tag))
    return out


def compute_apic_D(x_p, dx, tags=GRID_TAGS):
    """D = mean over grids of sum_i w_i (x_i - x_p)(x_i - x_p)^T."""
    parts = _node_offsets(x_p, dx, tags)
    D = sum(np.einsum("n,na,nb->ab", w, r, r) for w, r, _, _, _ in parts)
    return D / len(parts)


def mls_moment(x_p, dx, tags=GRID_TAGS):
    """4x4 moment matrix with basis P(r) = (1, r) centered at the particle."""
    parts = _node_offsets(x_p, dx, tags)
    M = np.zeros((4, 4))
    for w, r, _, _, _ in parts:
        P = np.concatenate([np.ones((len(r), 1)), r], axis=1)
        M += np.einsum("n,na,nb->ab", w, P, P)
    return M / len(parts)


def _invert_moment(M):
    Minv = np.linalg.inv(M)
    if np.linalg.norm(M) * np.linalg.norm(Minv) > _nb.COND_LIMIT:
        raise SingularMomentError()
    return Minv


def mls_shape(x_p, node, k, z, dx):
    """MLS shape function of global node index ``node`` on grid ``k`` at query ``z``.

    Returns (phi, grad phi).  The kernel weight is frozen at the particle and
    only the linear basis moves with ``z``.
    """
    x_p = np.asarray(x_p, dtype=float)
    Minv = _invert_moment(mls_moment(x_p, dx))
    node = np.asarray(node)
    for w, r, _, idx, tag in _node_offsets(x_p, dx, GRID_TAGS):
        if tag != k:
            continue
        hit = np.flatnonzero((idx == node).all(axis=1))
        if hit.size == 0:
            return 0.0, np.zeros(3)
        j = hit[0]
        Pi = np.concatenate([[1.0], r[j]])
        a = Minv @ Pi
        Pz = np.concatenate([[1.0], np.asarray(z, dtype=float) - x_p])
        return float(w[j] * Pz @ a), w[j] * a[1:]
    raise ValueError(f"grid tag {k} not in the dual pair")


def mls_reproduce(x_p, z, nodal_fn, dx):
    """Mean over grids of sum_i phi_i(z) u(x_i) for a callable nodal field u."""
    x_p = np.asarray(x_p, dtype=float)
    Minv = _invert_moment(mls_moment(x_p, dx))
    Pz = np.concatenate([[1.0], np.asarray(z, dtype=float) - x_p])
    acc = 0.0
    parts = _node_offsets(x_p, dx, GRID_TAGS)
    for w, r, _, _, _ in parts:
        P = np.concatenate([np.ones((len(r), 1)), r], axis=1)
        phi = w * ((P @ Minv.T) @ Pz)
        u = np.array([nodal_fn(x) for x in x_p + r])
        acc = acc + np.tensordot(phi, u, axes=1)
    return acc / len(parts)
