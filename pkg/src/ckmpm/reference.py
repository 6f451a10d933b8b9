"""Brute-force dense-grid step used as an oracle for the block-sparse kernels.

Every particle visits every node of every dense grid and weights come from
the 1D kernels evaluated at the node distance, so none of the stencil
bookkeeping, trig sharing or block addressing of the fast path is reused.
Only for tiny problems: cost is particles x nodes.
"""

import numpy as np

from .kernel import ck_grad_1d, ck_weight_1d, grid_offset, quad_grad_1d, quad_weight_1d
from .materials import DruckerPrager, FixedCorotated, JFluid, dp_alpha

_EYE = np.eye(3)


def _polar(F):
    U, _, Vt = np.linalg.svd(F)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


def kirchhoff_tau(material, F, J, G):
    if isinstance(material, JFluid):
        p = material.bulk * (J ** -material.gamma - 1.0)
        return -J * p * _EYE + J * material.viscosity * (G + G.T - 2.0 / 3.0 * np.trace(G) * _EYE)
    mu, lam = material.lame
    if isinstance(material, FixedCorotated):
        detF = np.linalg.det(F)
        return 2.0 * mu * (F - _polar(F)) @ F.T + lam * (detF - 1.0) * detF * _EYE
    U, s, Vt = np.linalg.svd(F)
    eps = np.log(s)
    return U @ np.diag(2.0 * mu * eps + lam * eps.sum()) @ U.T


def dp_project(F, material):
    mu, lam = material.lame
    alpha = dp_alpha(material.friction_angle)
    U, s, Vt = np.linalg.svd(F)
    eps = np.log(s)
    tr = eps.sum()
    dev = eps - tr / 3.0
    norm = np.linalg.norm(dev)
    if tr > 0:
        eps = np.zeros(3)
    else:
        dg = norm + alpha * (3 * lam + 2 * mu) / (2 * mu) * tr
        if dg <= 0:
            return F.copy()
        eps = eps - dg / norm * dev
    return U @ np.diag(np.exp(eps)) @ Vt


class DenseGrids:
    """Dense nodal arrays for the grid pair (or the single quadratic grid)."""

    def __init__(self, res, dx, kernel="compact"):
        self.res = int(res)
        self.dx = float(dx)
        self.kernel = kernel
        self.tags = (-1, 1) if kernel == "compact" else (0,)
        n = self.res + 3
        idx = np.stack(np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij"), -1)
        self.index = idx.reshape(-1, 3)
        self.positions = [(self.index + grid_offset(k)) * self.dx for k in self.tags]

    def weights(self, x_p, g):
        """Weights (N,) and weight gradients (N, 3) of every node of grid ``g``."""
        u = (x_p[None, :] - self.positions[g]) / self.dx
        if self.kernel == "compact":
            w1 = np.array([[ck_weight_1d(c) for c in row] for row in u])
            g1 = np.array([[ck_grad_1d(c) for c in row] for row in u])
        else:
            w1 = np.array([[quad_weight_1d(c) for c in row] for row in u])
            g1 = np.array([[quad_grad_1d(c) for c in row] for row in u])
        w = w1.prod(axis=1)
        grad = np.stack([g1[:, 0] * w1[:, 1] * w1[:, 2], w1[:, 0] * g1[:, 1] * w1[:, 2],
                         w1[:, 0] * w1[:, 1] * g1[:, 2]], axis=1) / self.dx
        return w, grad


def reference_step(particles, materials, res, dx, dt, scheme="pic", kernel="compact",
                   gravity=(0.0, 0.0, 0.0), mass_eps=None):
    """One full step on dense grids; returns a new dict of particle arrays.

    ``particles`` is a ``transfer.Particles``; ``materials`` is the list indexed
    by ``particles.mat``.
    """
    p = particles
    n = len(p.x)
    grids = DenseGrids(res, dx, kernel)
    ng = len(grids.tags)
    if mass_eps is None:
        mass_eps = 1e-12 * float(np.median(p.mass))
    gravity = np.asarray(gravity, dtype=float)

    # per-particle weights on every grid, kept for the gather
    W = [[grids.weights(p.x[i], g) for g in range(ng)] for i in range(n)]
    R = [[grids.positions[g] - p.x[i] for g in range(ng)] for i in range(n)]

    def moment(i):
        M = np.zeros((4, 4))
        for g in range(ng):
            w, _ = W[i][g]
            P = np.concatenate([np.ones((len(w), 1)), R[i][g]], axis=1)
            M += (w[:, None, None] * P[:, :, None] * P[:, None, :]).sum(axis=0)
        return M / ng

    Ms = [moment(i) for i in range(n)] if scheme != "pic" else None

    def shape_grad(i, g):
        w, grad = W[i][g]
        if scheme != "mls":
            return grad
        Minv = np.linalg.inv(Ms[i])
        P = np.concatenate([np.ones((len(w), 1)), R[i][g]], axis=1)
        return w[:, None] * (P @ Minv.T)[:, 1:]

    mass = [np.zeros(len(grids.index)) for _ in range(ng)]
    mom = [np.zeros((len(grids.index), 3)) for _ in range(ng)]
    for i in range(n):
        mat = materials[p.mat[i]]
        tau = kirchhoff_tau(mat, p.F[i], p.J[i], p.G[i])
        C = np.zeros((3, 3))
        if scheme != "pic":
            C = p.B[i] @ np.linalg.inv(Ms[i][1:, 1:])
        for g in range(ng):
            w, _ = W[i][g]
            mass[g] += w * p.mass[i]
            mom[g] += (w * p.mass[i])[:, None] * (p.v[i][None, :] + R[i][g] @ C.T)
            mom[g] -= dt * p.vol0[i] * shape_grad(i, g) @ tau.T

    vel = []
    for g in range(ng):
        v = np.zeros_like(mom[g])
        live = mass[g] > mass_eps
        v[live] = mom[g][live] / mass[g][live, None] + dt * gravity
        vel.append(v)

    out = {k: np.array(getattr(p, k), dtype=float, copy=True) for k in ("x", "v", "F", "J", "B", "G")}
    for i in range(n):
        vp = np.zeros(3)
        Bp = np.zeros((3, 3))
        Gp = np.zeros((3, 3))
        for g in range(ng):
            w, _ = W[i][g]
            vp += w @ vel[g]
            Bp += (w[:, None, None] * vel[g][:, :, None] * R[i][g][:, None, :]).sum(axis=0)
            Gp += vel[g].T @ shape_grad(i, g)
        vp /= ng
        Bp /= ng
        Gp /= ng
        mat = materials[p.mat[i]]
        out["G"][i] = Gp
        out["B"][i] = Bp if scheme != "pic" else 0.0
        if isinstance(mat, JFluid):
            out["J"][i] = p.J[i] * (1.0 + dt * np.trace(Gp))
        else:
            F = (_EYE + dt * Gp) @ p.F[i]
            if isinstance(mat, DruckerPrager):
                F = dp_project(F, mat)
            out["F"][i] = F
            out["J"][i] = np.linalg.det(F)
        out["v"][i] = vp
        out["x"][i] = p.x[i] + dt * vp
    return out
