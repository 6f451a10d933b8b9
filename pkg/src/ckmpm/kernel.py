"""Compact C2 transfer kernel, its dual-grid stencil, and the quadratic baseline.

The 1D compact kernel is the linear hat smoothed by a single sine term::

    K1(u) = 1 - |u| + sin(2 pi |u|) / (2 pi),   |u| < 1
    K1(u) = 0,                                  |u| >= 1

In 3D the weight is the tensor product of K1 over the axes.  A particle
touches the 2x2x2 nodes of the cell it occupies on each of two staggered
grids; node ``i`` of grid ``k`` (k = -1 or +1) sits at ``i*dx + k*dx/4`` on
every axis.  Averaging over both grids reproduces particle positions
exactly, which a single offset grid does not.
"""

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi
INV_TWO_PI = 1.0 / TWO_PI

COMPACT = 0
QUADRATIC = 1

#: grid tags and the per-grid node offset in units of dx
GRID_TAGS = (-1, +1)


def grid_offset(k):
    """Node offset of grid ``k`` in cell units (k=0 is the unshifted grid)."""
    return 0.25 * k


def ck_weight_1d(u):
    """Compact kernel value K1(u); exactly 0 for |u| >= 1."""
    au = np.abs(np.asarray(u, dtype=float))
    w = np.where(au < 1.0, 1.0 - au + np.sin(TWO_PI * au) * INV_TWO_PI, 0.0)
    return w[()] if w.ndim == 0 else w


def ck_grad_1d(u):
    """dK1/du = sgn(u) (cos(2 pi u) - 1) inside the support, 0 on and outside it."""
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    g = np.where(au < 1.0, np.sign(u) * (np.cos(TWO_PI * u) - 1.0), 0.0)
    return g[()] if g.ndim == 0 else g


def partition_pair_1d(u):
    """K1(u) + K1(1 - u) for u in [0, 1]; identically 1."""
    arr = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("partition_pair_1d expects u in [0, 1]")
    return ck_weight_1d(arr) + ck_weight_1d(1.0 - arr)


def quad_weight_1d(u):
    """Quadratic B-spline N2(u) with support |u| < 1.5."""
    au = np.abs(np.asarray(u, dtype=float))
    w = np.where(au < 0.5, 0.75 - au * au,
                 np.where(au < 1.5, 0.5 * (1.5 - au) ** 2, 0.0))
    return w[()] if w.ndim == 0 else w


def quad_grad_1d(u):
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    g = np.where(au < 0.5, -2.0 * u,
                 np.where(au < 1.5, -np.sign(u) * (1.5 - au), 0.0))
    return g[()] if g.ndim == 0 else g


@dataclass(frozen=True)
class KernelStencil:
    """Per-particle fan-out onto one grid.

    ``offsets[j]`` is the integer node offset from ``base`` of entry ``j``;
    ``weights[j]`` and ``grads[j]`` (1/m) belong to node ``base + offsets[j]``.
    """

    base: np.ndarray
    frac: np.ndarray
    offsets: np.ndarray
    weights: np.ndarray
    grads: np.ndarray
    grid_tag: int
    dx: float

    def node_positions(self):
        idx = self.base[None, :] + self.offsets
        return (idx + grid_offset(self.grid_tag)) * self.dx


def _check_inside(base, width, res):
    if res is None:
        return
    res = np.broadcast_to(np.asarray(res, dtype=np.int64), (3,))
    if np.any(base < 0) or np.any(base + width - 1 > res):
        from .errors import DomainExitError

        raise DomainExitError()


def _tensor(w1, g1, width, dx):
    offs = np.array([(a, b, c) for a in range(width) for b in range(width) for c in range(width)])
    wx, wy, wz = w1[0][offs[:, 0]], w1[1][offs[:, 1]], w1[2][offs[:, 2]]
    gx, gy, gz = g1[0][offs[:, 0]], g1[1][offs[:, 1]], g1[2][offs[:, 2]]
    weights = wx * wy * wz
    grads = np.stack([gx * wy * wz, wx * gy * wz, wx * wy * gz], axis=1) / dx
    return offs, weights, grads


def stencil(x_p, k, dx, res=None):
    """Compact-kernel stencil of position ``x_p`` on grid ``k`` (+1 or -1).

    ``res`` (cells per axis) enables the domain-exit check; the grid has
    nodes ``0..res`` on each axis.
    """
    if dx <= 0:
        raise ValueError("dx must be positive")
    x_p = np.asarray(x_p, dtype=float)
    s = x_p / dx - grid_offset(k)
    base = np.floor(s).astype(np.int64)
    frac = s - base
    _check_inside(base, 2, res)
    w1 = [ck_weight_1d(frac[a] - np.arange(2)) for a in range(3)]
    g1 = [ck_grad_1d(frac[a] - np.arange(2)) for a in range(3)]
    offs, weights, grads = _tensor(w1, g1, 2, dx)
    return KernelStencil(base, frac, offs, weights, grads, int(k), float(dx))


def quad_bspline_stencil(x_p, dx, res=None):
    """Quadratic B-spline stencil (27 nodes) on the unshifted grid."""
    if dx <= 0:
        raise ValueError("dx must be positive")
    x_p = np.asarray(x_p, dtype=float)
    s = x_p / dx
    base = np.floor(s - 0.5).astype(np.int64)
    frac = s - base
    _check_inside(base, 3, res)
    w1 = [quad_weight_1d(frac[a] - np.arange(3)) for a in range(3)]
    g1 = [quad_grad_1d(frac[a] - np.arange(3)) for a in range(3)]
    offs, weights, grads = _tensor(w1, g1, 3, dx)
    return KernelStencil(base, frac, offs, weights, grads, 0, float(dx))


def dual_stencils(x_p, dx, res=None):
    """Both compact stencils, ordered like ``GRID_TAGS``."""
    return [stencil(x_p, k, dx, res) for k in GRID_TAGS]


def reconstruct_position(x_p, dx, tags=GRID_TAGS):
    """Average over ``tags`` of sum_i w_i x_i; equals ``x_p`` for the dual pair."""
    acc = np.zeros(3)
    for k in tags:
        st = stencil(x_p, k, dx)
        acc += st.weights @ st.node_positions()
    return acc / len(tags)


# -- batched helpers used by the numpy backend ---------------------------------

def batch_stencil_1d(x, dx, offset, kernel, fast_trig=False):
    """Per-axis weights for many particles on one grid.

    Returns ``base`` (N, 3) int, ``w`` and ``dw`` (N, 3, width) with ``dw`` in
    1/m, and ``r`` (N, 3, width) holding ``x_i - x_p`` per axis.
    """
    inv_dx = 1.0 / dx
    if kernel == COMPACT:
        s = x * inv_dx - offset
        base = np.floor(s)
        f = s - base
        o = np.arange(2.0)
    else:
        s = x * inv_dx
        base = np.floor(s - 0.5)
        f = s - base
        o = np.arange(3.0)
    u = f[..., None] - o
    if kernel == COMPACT:
        au = np.abs(u)
        if fast_trig:
            sn = np.sin((TWO_PI * au).astype(np.float32)).astype(np.float64)
            cs = np.cos((TWO_PI * u).astype(np.float32)).astype(np.float64)
        else:
            sn = np.sin(TWO_PI * au)
            cs = np.cos(TWO_PI * u)
        inside = au < 1.0
        w = np.where(inside, 1.0 - au + sn * INV_TWO_PI, 0.0)
        dw = np.where(inside, np.sign(u) * (cs - 1.0), 0.0) * inv_dx
    else:
        w = quad_weight_1d(u)
        dw = quad_grad_1d(u) * inv_dx
    r = -u * dx
    return base.astype(np.int64), w, dw, r
