"""Vectorized numpy twins of the ``_nb`` kernels.

Signatures and status conventions match ``_nb`` so ``transfer`` can dispatch
on ``_accel.backend()``.  Scatter uses ``np.bincount`` over flattened node
indices; results agree with the numba path to rounding.
"""

import numpy as np

from . import _nb
from .kernel import batch_stencil_1d

OK = _nb.OK


def _fail(status, code, particle):
    status[0] = code
    status[1] = int(particle)


def stencils(x, dx, offsets, kernel, fast, res, status):
    """Per grid: (base, w, dw, r) arrays, or None after flagging a domain exit."""
    width = 2 if kernel == 0 else 3
    out = []
    for off in offsets:
        base, w, dw, r = batch_stencil_1d(x, dx, off, kernel, fast)
        s = x / dx - off if kernel == 0 else x / dx - 0.5
        fl = np.floor(s)
        bad = ~((fl >= 0) & (fl + (width - 1) <= res)).all(axis=1)
        if bad.any():
            _fail(status, _nb.ERR_DOMAIN, np.flatnonzero(bad)[0])
            return None
        out.append((base, w, dw, r))
    return out


def _combos(width):
    o = np.arange(width)
    g = np.stack(np.meshgrid(o, o, o, indexing="ij"), axis=-1).reshape(-1, 3)
    return g


def _tensor(st, width):
    """Node indices (N, W^3, 3), weights (N, W^3), grads (N, W^3, 3), offsets (N, W^3, 3)."""
    base, w, dw, r = st
    c = _combos(width)
    w0, w1, w2 = w[:, 0, c[:, 0]], w[:, 1, c[:, 1]], w[:, 2, c[:, 2]]
    wn = w0 * w1 * w2
    grad = np.stack([dw[:, 0, c[:, 0]] * w1 * w2, w0 * dw[:, 1, c[:, 1]] * w2,
                     w0 * w1 * dw[:, 2, c[:, 2]]], axis=-1)
    rr = np.stack([r[:, 0, c[:, 0]], r[:, 1, c[:, 1]], r[:, 2, c[:, 2]]], axis=-1)
    idx = base[:, None, :] + c[None, :, :]
    return idx, wn, grad, rr


def moments(tensors):
    """Batched 4x4 moment matrices averaged over grids."""
    n = tensors[0][1].shape[0]
    M = np.zeros((n, 4, 4))
    for _, wn, _, rr in tensors:
        P = np.concatenate([np.ones(rr.shape[:2] + (1,)), rr], axis=-1)
        M += np.einsum("pn,pni,pnj->pij", wn, P, P)
    return M / len(tensors)


def _cond(A, Ainv):
    return np.linalg.norm(A, axis=(1, 2)) * np.linalg.norm(Ainv, axis=(1, 2))


def _safe_inv(A, status):
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        Ainv = np.full_like(A, np.inf)
        for p in range(A.shape[0]):
            try:
                Ainv[p] = np.linalg.inv(A[p])
            except np.linalg.LinAlgError:
                _fail(status, _nb.ERR_SINGULAR, p)
                return None
    bad = ~(_cond(A, Ainv) <= _nb.COND_LIMIT)
    if bad.any():
        _fail(status, _nb.ERR_SINGULAR, np.flatnonzero(bad)[0])
        return None
    return Ainv


def _slots(idx, table, status):
    slot = table[idx[..., 0] >> 2, idx[..., 1] >> 2, idx[..., 2] >> 2]
    if (slot < 0).any():
        _fail(status, _nb.ERR_INACTIVE, np.flatnonzero((slot < 0).any(axis=1))[0])
        return None
    return slot


def _flat(slot, g, ng, idx):
    l = idx & 3
    return ((((slot * ng + g) * 4 + l[..., 0]) * 4 + l[..., 1]) * 4 + l[..., 2])


def svd_batch(F):
    """numpy SVD, fine for det F > 0 where only U V^T and U S U^T are consumed."""
    U, s, Vt = np.linalg.svd(F)
    return U, s, np.swapaxes(Vt, 1, 2)


def kirchhoff(F, J, G, mat, mattab, status):
    n = F.shape[0]
    tau = np.zeros((n, 3, 3))
    rows = mattab[mat]
    kind = rows[:, 0].astype(np.int64)
    eye = np.eye(3)
    fl = np.flatnonzero(kind == _nb.MAT_JFLUID)
    if fl.size:
        Jf = J[fl]
        if not (Jf > 0).all():
            _fail(status, _nb.ERR_INVERTED, fl[np.flatnonzero(~(Jf > 0))[0]])
            return None
        r = rows[fl]
        p = r[:, 3] * (Jf ** (-r[:, 4]) - 1.0)
        Gf = G[fl]
        tr = np.trace(Gf, axis1=1, axis2=2)
        tau[fl] = (Jf * r[:, 5])[:, None, None] * (
            Gf + np.swapaxes(Gf, 1, 2) - (2.0 / 3.0) * tr[:, None, None] * eye)
        tau[fl] += (-Jf * p)[:, None, None] * eye
    sol = np.flatnonzero(kind != _nb.MAT_JFLUID)
    if sol.size:
        Fs = F[sol]
        det = np.linalg.det(Fs)
        if not (det > 0).all():
            _fail(status, _nb.ERR_INVERTED, sol[np.flatnonzero(~(det > 0))[0]])
            return None
        U, s, V = svd_batch(Fs)
        r = rows[sol]
        mu = r[:, 1][:, None, None]
        lam = r[:, 2][:, None, None]
        cor = kind[sol] == _nb.MAT_COROTATED
        R = U @ np.swapaxes(V, 1, 2)
        tc = 2.0 * mu * (Fs - R) @ np.swapaxes(Fs, 1, 2) + lam * ((det - 1.0) * det)[:, None, None] * eye
        eps = np.log(s)
        d = 2.0 * mu[:, :, 0] * eps + lam[:, :, 0] * eps.sum(axis=1, keepdims=True)
        th = np.einsum("pik,pk,pjk->pij", U, d, U)
        tau[sol] = np.where(cor[:, None, None], tc, th)
    return tau


def activate(x, dx, offsets, width, res, nb, table, prev_ids, margin, status):
    table.reshape(-1)[prev_ids] = -1
    if x.shape[0] == 0:
        return np.zeros(0, np.int64)
    ids = []
    for off in offsets:
        s = x / dx - off if width == 2 else x / dx - 0.5
        b = np.floor(s)
        bad = ~((b >= 0) & (b + (width - 1) <= res)).all(axis=1)
        if bad.any():
            _fail(status, _nb.ERR_DOMAIN, np.flatnonzero(bad)[0])
            return np.zeros(0, np.int64)
        bi = b.astype(np.int64)
        lo = np.maximum(bi - margin, 0) >> 2
        hi = np.minimum((np.minimum(bi + width - 1 + margin, res) >> 2) + 1, nb - 1)
        span = int((hi - lo).max()) + 1
        for d in np.ndindex(span, span, span):
            blk = lo + np.array(d)
            keep = (blk <= hi).all(axis=1)
            blk = blk[keep]
            ids.append((blk[:, 0] * nb[1] + blk[:, 1]) * nb[2] + blk[:, 2])
    out = np.unique(np.concatenate(ids))
    table.reshape(-1)[out] = np.arange(out.size, dtype=table.dtype)
    return out


def p2g(x, v, mass, vol0, F, J, B, G, mat, mattab, dx, dt, offsets, kernel, scheme, fast,
        res, table, nodes, do_momentum, do_force, status):
    n = x.shape[0]
    if n == 0:
        return 0
    ng = offsets.shape[0]
    width = 2 if kernel == 0 else 3
    sts = stencils(x, dx, offsets, kernel, fast, res, status)
    if sts is None:
        return 0
    tens = [_tensor(st, width) for st in sts]
    tau = None
    if do_force:
        tau = kirchhoff(F, J, G, mat, mattab, status)
        if tau is None:
            return 0
    C = None
    Minv = None
    if (do_momentum and scheme != _nb.PIC) or (do_force and scheme == _nb.MLS):
        M = moments(tens)
        if do_momentum and scheme != _nb.PIC:
            Dinv = _safe_inv(np.ascontiguousarray(M[:, 1:, 1:]), status)
            if Dinv is None:
                return 0
            C = B @ Dinv
        if do_force and scheme == _nb.MLS:
            Minv = _safe_inv(M, status)
            if Minv is None:
                return 0
    flat_nodes = nodes.reshape(-1, 4)
    size = flat_nodes.shape[0]
    visits = 0
    for g, (idx, wn, grad, rr) in enumerate(tens):
        slot = _slots(idx, table, status)
        if slot is None:
            return visits
        visits += idx.shape[0] * idx.shape[1]
        fi = _flat(slot, g, ng, idx).ravel()
        mom = np.zeros(idx.shape[:2] + (3,))
        if do_momentum:
            wm = wn * mass[:, None]
            flat_nodes[:, 0] += np.bincount(fi, wm.ravel(), minlength=size)
            vel = v[:, None, :]
            if C is not None:
                vel = vel + np.einsum("pab,pnb->pna", C, rr)
            mom += wm[..., None] * vel
        if do_force:
            if scheme == _nb.MLS:
                P = np.concatenate([np.ones(rr.shape[:2] + (1,)), rr], axis=-1)
                gr = wn[..., None] * np.einsum("pab,pnb->pna", Minv[:, 1:, :], P)
            else:
                gr = grad
            mom -= (dt * vol0)[:, None, None] * np.einsum("pab,pnb->pna", tau, gr)
        for a in range(3):
            flat_nodes[:, 1 + a] += np.bincount(fi, mom[..., a].ravel(), minlength=size)
    return visits


def grid_update(nodes, nslots, slot_coords, dx, offsets, dt, gravity, mass_eps,
                bc_kind, bc_shape, bc_par):
    ng = offsets.shape[0]
    act = nodes[:nslots]
    m = act[..., 0]
    massive = m > mass_eps
    safe = np.where(massive, m, 1.0)
    vel = act[..., 1:] / safe[..., None] + dt * np.asarray(gravity)
    if bc_kind.shape[0] and nslots:
        l = np.arange(4)
        idx = (slot_coords[:nslots, None, None, None, None, :] * 4
               + np.stack(np.meshgrid(l, l, l, indexing="ij"), axis=-1)[None, None])
        pos = (idx + offsets[None, :, None, None, None, None]) * dx
        pos = np.broadcast_to(pos, vel.shape)
        vel = apply_bc_arrays(pos.reshape(-1, 3), vel.reshape(-1, 3), bc_kind, bc_shape,
                              bc_par).reshape(vel.shape)
    act[..., 1:] = np.where(massive[..., None], vel, 0.0)


def apply_bc_arrays(pos, vel, bc_kind, bc_shape, bc_par):
    vel = vel.copy()
    for b in range(bc_kind.shape[0]):
        par = bc_par[b]
        if bc_shape[b] == 0:
            inside = (pos - par[0:3]) @ par[3:6] <= 0.0
            n = par[3:6]
        else:
            inside = ((pos >= par[0:3]) & (pos <= par[3:6])).all(axis=1)
            n = par[6:9]
        if not inside.any():
            continue
        kind = bc_kind[b]
        if kind == 0:
            rel = pos[inside] - par[15:18]
            vel[inside] = par[9:12] + np.cross(par[12:15], rel)
        else:
            vn = vel[inside] @ n
            if kind == 2:
                vn = np.minimum(vn, 0.0)
            vel[inside] -= vn[:, None] * n
    return vel


def gather(x, dx, offsets, kernel, scheme, fast, res, table, nodes, mass_eps,
           out_v, out_B, out_G, status):
    n = x.shape[0]
    if n == 0:
        return
    ng = offsets.shape[0]
    width = 2 if kernel == 0 else 3
    sts = stencils(x, dx, offsets, kernel, fast, res, status)
    if sts is None:
        return
    tens = [_tensor(st, width) for st in sts]
    Minv = None
    if scheme == _nb.MLS:
        Minv = _safe_inv(moments(tens), status)
        if Minv is None:
            return
    flat_nodes = nodes.reshape(-1, 4)
    v = np.zeros((n, 3))
    B = np.zeros((n, 3, 3))
    G = np.zeros((n, 3, 3))
    massive = np.zeros(n, bool)
    for g, (idx, wn, grad, rr) in enumerate(tens):
        slot = _slots(idx, table, status)
        if slot is None:
            return
        node = flat_nodes[_flat(slot, g, ng, idx)]
        massive |= (node[..., 0] > mass_eps).any(axis=1)
        vi = node[..., 1:]
        if scheme == _nb.MLS:
            P = np.concatenate([np.ones(rr.shape[:2] + (1,)), rr], axis=-1)
            gr = wn[..., None] * np.einsum("pab,pnb->pna", Minv[:, 1:, :], P)
        else:
            gr = grad
        v += np.einsum("pn,pna->pa", wn, vi)
        if scheme != _nb.PIC:
            B += np.einsum("pn,pna,pnb->pab", wn, vi, rr)
        G += np.einsum("pna,pnb->pab", vi, gr)
    if not massive.all():
        _fail(status, _nb.ERR_ISOLATED, np.flatnonzero(~massive)[0])
        return
    out_v[:] = v / ng
    out_B[:] = B / ng
    out_G[:] = G / ng


def advance(x, v, F, J, B, G, mat, mattab, dt, vel, Bnew, Gnew, scheme, clamp, status):
    n = x.shape[0]
    if n == 0:
        return
    rows = mattab[mat]
    kind = rows[:, 0].astype(np.int64)
    G[:] = Gnew
    B[:] = Bnew if scheme != _nb.PIC else 0.0
    fl = np.flatnonzero(kind == _nb.MAT_JFLUID)
    if fl.size:
        Jn = J[fl] * (1.0 + dt * np.trace(Gnew[fl], axis1=1, axis2=2))
        bad = ~(Jn > 0)
        if bad.any():
            _fail(status, _nb.ERR_INVERTED, fl[np.flatnonzero(bad)[0]])
            return
        J[fl] = Jn
    sol = np.flatnonzero(kind != _nb.MAT_JFLUID)
    if sol.size:
        Fn = F[sol] + dt * Gnew[sol] @ F[sol]
        dp = np.flatnonzero(kind[sol] == _nb.MAT_DRUCKER_PRAGER)
        if dp.size:
            Fd = Fn[dp]
            det = np.linalg.det(Fd)
            if not (det > 0).all():
                _fail(status, _nb.ERR_INVERTED, sol[dp[np.flatnonzero(~(det > 0))[0]]])
                return
            r = rows[sol[dp]]
            Fn[dp] = dp_project_batch(Fd, r[:, 1], r[:, 2], r[:, 6])
        if clamp:
            U, s, V = svd_batch(Fn)
            sgn = np.sign(np.linalg.det(U) * np.linalg.det(V))
            s = s.copy()
            s[:, 2] *= sgn
            low = s[:, 2] < 0.05
            if low.any():
                sc = np.maximum(s[low], 0.05)
                Ul = U[low].copy()
                Ul[:, :, 2] *= sgn[low][:, None]
                Fn[low] = np.einsum("pik,pk,pjk->pij", Ul, sc, V[low])
        det = np.linalg.det(Fn)
        if not (det > 0).all():
            _fail(status, _nb.ERR_INVERTED, sol[np.flatnonzero(~(det > 0))[0]])
            return
        F[sol] = Fn
        J[sol] = det
    v[:] = vel
    x += dt * vel


def dp_project_batch(F, mu, lam, alpha):
    U, s, V = svd_batch(F)
    eps = np.log(s)
    tr = eps.sum(axis=1)
    dev = eps - tr[:, None] / 3.0
    hn = np.linalg.norm(dev, axis=1)
    dgamma = hn + alpha * (3.0 * lam + 2.0 * mu) / (2.0 * mu) * tr
    out = F.copy()
    tip = tr > 0
    shrink = ~tip & (dgamma > 0)
    new = eps.copy()
    new[tip] = 0.0
    new[shrink] = eps[shrink] - (dgamma[shrink] / hn[shrink])[:, None] * dev[shrink]
    change = tip | shrink
    out[change] = np.einsum("pik,pk,pjk->pij", U[change], np.exp(new[change]), V[change])
    return out


def particle_sums(x, v, mass, B, affine, out):
    xv = np.cross(x, v)
    if affine:
        xv = xv + np.stack([B[:, 2, 1] - B[:, 1, 2], B[:, 0, 2] - B[:, 2, 0],
                            B[:, 1, 0] - B[:, 0, 1]], axis=-1)
    m = mass[:, None]
    v2 = (v * v).sum(axis=1)
    out[0:3] = (m * v).sum(axis=0)
    out[3:6] = (m * xv).sum(axis=0)
    out[6:9] = v.sum(axis=0)
    out[9:12] = xv.sum(axis=0)
    out[12] = 0.5 * (mass * v2).sum()
    out[13] = v2.max() if len(v2) else 0.0
    bad = ~(np.isfinite(x).all(axis=1) & np.isfinite(v).all(axis=1))
    return int(np.flatnonzero(bad)[0]) if bad.any() else -1


def grid_mass(nodes, nslots, out):
    out[:] = nodes[:nslots, ..., 0].sum(axis=(0, 2, 3, 4))
