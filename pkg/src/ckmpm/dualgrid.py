"""Block-sparse storage for the staggered grid pair and grid boundary conditions.

Both grids share one block map.  Block ``b`` owns global node indices
``4*b .. 4*b + 3`` per axis on every grid, so the paired G+ block sits half a
cell above its G- twin.  Storage per active block is dense::

    nodes[slot, grid, i, j, k, :] = (mass, px, py, pz)

and the momentum columns hold velocity after the grid update.  Activation
touches every block reached by a particle stencil and adds a one-block halo
in each positive direction.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _accel, _nb, _np
from .errors import DomainExitError, OutputError
from .kernel import COMPACT, GRID_TAGS, QUADRATIC, grid_offset

BLOCK = 4
BC_KINDS = {"sticky": 0, "slip": 1, "separate": 2}
BC_SHAPES = {"halfspace": 0, "box": 1}


@dataclass
class BoundaryCondition:
    """A sticky/slip/separate region in world coordinates.

    ``halfspace`` covers ``(x - point) . normal <= 0`` with ``normal`` pointing
    out of the wall into free space.  ``box`` covers ``lo <= x <= hi`` and uses
    ``normal`` for slip/separate.  Sticky regions may prescribe a rigid motion
    ``velocity + omega x (x - center)`` (zero by default).
    """

    kind: str
    region: str = "halfspace"
    point: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (0.0, 1.0, 0.0)
    lo: tuple = (0.0, 0.0, 0.0)
    hi: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    omega: tuple = (0.0, 0.0, 0.0)
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.region not in BC_SHAPES:
            raise ValueError(f"unknown boundary region {self.region!r}")
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if self.kind != "sticky" or self.region == "halfspace":
            if not norm > 0:
                raise ValueError("boundary normal must be nonzero")
            self.normal = tuple(n / norm)

    def packed(self):
        par = np.zeros(18)
        if self.region == "halfspace":
            par[0:3] = self.point
            par[3:6] = self.normal
        else:
            par[0:3] = self.lo
            par[3:6] = self.hi
            par[6:9] = self.normal
        par[9:12] = self.velocity
        par[12:15] = self.omega
        par[15:18] = self.center
        return par


def domain_walls(res, dx, kind="sticky", thickness=3, faces=("x-", "x+", "y-", "y+", "z-", "z+")):
    """Half-space walls ``thickness`` cells deep on the requested domain faces."""
    res = np.broadcast_to(np.asarray(res), (3,))
    out = []
    for face in faces:
        a = "xyz".index(face[0])
        n = np.zeros(3)
        p = np.zeros(3)
        if face[1] == "-":
            n[a] = 1.0
            p[a] = thickness * dx
        else:
            n[a] = -1.0
            p[a] = (res[a] - thickness) * dx
        out.append(BoundaryCondition(kind, "halfspace", point=tuple(p), normal=tuple(n)))
    return out


def pack_boundaries(bcs):
    bcs = list(bcs or ())
    kinds = np.array([BC_KINDS[b.kind] for b in bcs], dtype=np.int64)
    shapes = np.array([BC_SHAPES[b.region] for b in bcs], dtype=np.int64)
    par = np.array([b.packed() for b in bcs]).reshape(len(bcs), 18)
    return kinds, shapes, par


@dataclass
class NodeField:
    """Flat view of active nodes: positions (M, 3), mass (M,), velocity (M, 3), grid_tag (M,)."""

    positions: np.ndarray
    mass: np.ndarray
    velocity: np.ndarray
    grid_tag: np.ndarray
    flags: np.ndarray = field(default=None)


def apply_boundary(field: NodeField, bcs) -> NodeField:
    """Return a copy of ``field`` with boundary velocities enforced; masses untouched."""
    kinds, shapes, par = pack_boundaries(bcs)
    pos = np.asarray(field.positions, dtype=float).reshape(-1, 3)
    vel = np.asarray(field.velocity, dtype=float).reshape(-1, 3)
    new = _np.apply_bc_arrays(pos, vel, kinds, shapes, par)
    flags = np.zeros(len(pos), bool)
    for b in range(len(kinds)):
        flags |= _inside(pos, shapes[b], par[b])
    return NodeField(pos, np.asarray(field.mass).copy(), new, np.asarray(field.grid_tag).copy(), flags)


def _inside(pos, shape, par):
    if shape == 0:
        return (pos - par[0:3]) @ par[3:6] <= 0.0
    return ((pos >= par[0:3]) & (pos <= par[3:6])).all(axis=1)


class DualGrid:
    """Block-sparse nodal storage for the compact dual grid or the quadratic baseline."""

    def __init__(self, res, dx, kernel="compact", tags=None):
        self.res = np.broadcast_to(np.asarray(res, dtype=np.int64), (3,)).copy()
        if (self.res <= 0).any():
            raise ValueError("resolution must be positive")
        if not dx > 0:
            raise ValueError("dx must be positive")
        self.dx = float(dx)
        if kernel in ("compact", COMPACT):
            self.kernel = COMPACT
            self.tags = np.array(GRID_TAGS, dtype=np.int64)
        elif kernel in ("quadratic", QUADRATIC):
            self.kernel = QUADRATIC
            self.tags = np.array([0], dtype=np.int64)
        else:
            raise ValueError(f"unknown kernel {kernel!r}")
        if tags is not None:
            # ablation hook, e.g. tags=(1,) runs the compact kernel on one offset grid
            if self.kernel != COMPACT:
                raise ValueError("grid tags can only be overridden for the compact kernel")
            self.tags = np.array(tags, dtype=np.int64).reshape(-1)
        self.offsets = np.array([grid_offset(k) for k in self.tags], dtype=np.float64)
        self.width = 2 if self.kernel == COMPACT else 3
        self.nb = self.res // BLOCK + 2
        self.table = np.full(tuple(self.nb), -1, dtype=np.int64)
        self.block_ids = np.zeros(0, np.int64)
        self.slot_coords = np.zeros((0, 3), np.int64)
        self.nodes = np.zeros((0, self.ng, BLOCK, BLOCK, BLOCK, 4))
        self.margin = 0
        self._ref_x = None

    @property
    def ng(self):
        return len(self.tags)

    @property
    def nslots(self):
        return len(self.block_ids)

    @property
    def active_block_count(self):
        return self.nslots

    def activate(self, x, margin=None):
        """Rebuild the active block set from particle positions ``x`` (N, 3).

        With a positive ``margin`` (cells) the stencils are widened, and later
        calls skip the rebuild while every particle stays within ``margin``
        cells of where it was at the last rebuild.  Active nodes come back zeroed.
        """
        x = np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1, 3))
        margin = self.margin if margin is None else int(margin)
        ref = self._ref_x
        if margin > 0 and ref is not None and ref.shape == x.shape and len(x):
            if np.abs(x - ref).max() < margin * self.dx * (1.0 - 1e-9):
                self.clear()
                return self
        status = np.zeros(2, np.int64)
        impl = _nb if _accel.backend() == "numba" else _np
        ids = impl.activate(x, self.dx, self.offsets, self.width, self.res, self.nb,
                            self.table, self.block_ids, margin, status)
        if status[0] != _nb.OK:
            self.table[...] = -1
            self.block_ids = np.zeros(0, np.int64)
            self._ref_x = None
            raise DomainExitError(status[1])
        self.block_ids = ids
        self._ref_x = x.copy() if margin > 0 else None
        coords = np.stack(np.unravel_index(ids, tuple(self.nb)), axis=1).astype(np.int64)
        self.slot_coords = coords
        if self.nodes.shape[0] < len(ids):
            cap = max(len(ids), int(1.25 * self.nodes.shape[0]) + 8)
            self.nodes = np.zeros((cap, self.ng, BLOCK, BLOCK, BLOCK, 4))
        else:
            self.clear()
        return self

    def invalidate(self):
        """Force the next ``activate`` to rebuild."""
        self._ref_x = None

    def clear(self):
        self.nodes[:self.nslots] = 0.0

    def active_nodes(self):
        return self.nodes[:self.nslots]

    def node_world_position(self, block, k, cell):
        """World position of local node ``cell`` in block ``block`` on grid ``k``."""
        block = np.asarray(block, dtype=np.int64)
        cell = np.asarray(cell, dtype=np.int64)
        if (cell < 0).any() or (cell >= BLOCK).any():
            raise IndexError(f"cell {tuple(cell)} outside block")
        if (block < 0).any() or (block >= self.nb).any():
            raise IndexError(f"block {tuple(block)} outside grid")
        return self.index_position(block * BLOCK + cell, k)

    def index_position(self, idx, k):
        """World position i*dx + k*dx/4 of global node index ``idx`` on grid ``k``."""
        idx = np.asarray(idx, dtype=np.int64)
        if (idx < 0).any() or (idx > self.res + self.width).any():
            raise IndexError(f"node index {idx} outside grid")
        return (idx + grid_offset(k)) * self.dx

    def node_index(self, idx, g):
        """(slot, l0, l1, l2) of global node ``idx`` on grid slot ``g``; None if inactive."""
        idx = np.asarray(idx, dtype=np.int64)
        slot = self.table[tuple(idx >> 2)]
        if slot < 0:
            return None
        return (int(slot), g, *(idx & 3))

    def node_field(self):
        """Flatten every active node (both grids) into a ``NodeField``."""
        n = self.nslots
        l = np.arange(BLOCK)
        local = np.stack(np.meshgrid(l, l, l, indexing="ij"), axis=-1).reshape(-1, 3)
        idx = (self.slot_coords[:, None, :] * BLOCK + local[None]).reshape(-1, 3)
        pos, mass, vel, tag = [], [], [], []
        for g, k in enumerate(self.tags):
            data = self.nodes[:n, g].reshape(-1, 4)
            pos.append((idx + grid_offset(k)) * self.dx)
            mass.append(data[:, 0])
            vel.append(data[:, 1:])
            tag.append(np.full(len(data), k))
        return NodeField(np.concatenate(pos), np.concatenate(mass), np.concatenate(vel),
                         np.concatenate(tag))

    def total_mass(self):
        """Per-grid total nodal mass, ordered like ``tags``."""
        return self.nodes[:self.nslots, ..., 0].sum(axis=(0, 2, 3, 4))

    def total_momentum(self):
        """Per-grid total nodal momentum (valid before the grid update)."""
        return self.nodes[:self.nslots, ..., 1:].sum(axis=(0, 2, 3, 4))

    def dump_blocks_csv(self, path):
        """Active blocks with per-grid mass totals: block_i, block_j, block_k, grid_tag, mass_total."""
        masses = self.nodes[:self.nslots, ..., 0].sum(axis=(2, 3, 4))
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["block_i", "block_j", "block_k", "grid_tag", "mass_total"])
                for s in range(self.nslots):
                    for g, k in enumerate(self.tags):
                        w.writerow([*self.slot_coords[s], int(k), f"{masses[s, g]:.17g}"])
        except OSError as exc:
            raise OutputError(f"cannot write block dump {path}: {exc}") from exc
