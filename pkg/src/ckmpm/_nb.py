"""Numba kernels for the particle/grid pipeline.

Every kernel here has a vectorized twin in ``_np.py``; ``transfer`` picks one
through ``_accel.backend()``.  Per-particle scratch buffers are allocated once
per chunk, never inside the particle loop.

Kernels report failures through a two-slot ``status`` array: an ``ERR_*``
code in ``status[0]`` and the offending particle index in ``status[1]``.
"""

import math

import numpy as np

from ._accel import njit, prange

OK = 0
ERR_DOMAIN = 1
ERR_INVERTED = 2
ERR_SINGULAR = 3
ERR_INACTIVE = 4
ERR_ISOLATED = 5

PIC = 0
APIC = 1
MLS = 2

MAT_COROTATED = 0
MAT_JFLUID = 1
MAT_DRUCKER_PRAGER = 2

TWO_PI = 2.0 * math.pi
INV_TWO_PI = 1.0 / TWO_PI
COND_LIMIT = 1.0e8


# -- 1D kernels ----------------------------------------------------------------

@njit
def _sin(x, fast):
    if fast:
        return float(np.float32(math.sin(np.float32(x))))
    return math.sin(x)


@njit
def _cos(x, fast):
    if fast:
        return float(np.float32(math.cos(np.float32(x))))
    return math.cos(x)


# Taylor coefficients of sin and cos, enough for |theta| <= pi/4 in double precision
_S3, _S5, _S7, _S9 = -1.0 / 6.0, 1.0 / 120.0, -1.0 / 5040.0, 1.0 / 362880.0
_S11, _S13, _S15 = -1.0 / 39916800.0, 1.0 / 6227020800.0, -1.0 / 1307674368000.0
_C2, _C4, _C6, _C8 = -0.5, 1.0 / 24.0, -1.0 / 720.0, 1.0 / 40320.0
_C10, _C12, _C14, _C16 = -1.0 / 3628800.0, 1.0 / 479001600.0, -1.0 / 87178291200.0, 1.0 / 20922789888000.0


@njit(inline="always")
def sincos_2pi(f):
    """(sin 2 pi f, cos 2 pi f) for 0 <= f <= 1, about twice as fast as two libm calls."""
    q = math.floor(4.0 * f + 0.5)
    th = TWO_PI * (f - 0.25 * q)
    z = th * th
    s = th + th * z * (_S3 + z * (_S5 + z * (_S7 + z * (_S9 + z * (_S11 + z * (_S13 + z * _S15))))))
    c = 1.0 + z * (_C2 + z * (_C4 + z * (_C6 + z * (_C8 + z * (_C10 + z * (_C12 + z * (_C14 + z * _C16)))))))
    # rotate by the quadrant with selects and exact sign flips; a branch per
    # quadrant mispredicts on scattered particles and costs more than the polynomials
    quad = int(q) & 3
    odd = (quad & 1) == 1
    a = c if odd else s
    b = s if odd else c
    return (1.0 - 2.0 * (quad >> 1)) * a, (1.0 - 2.0 * ((quad ^ (quad >> 1)) & 1)) * b


@njit
def ck_w(u, fast):
    au = abs(u)
    if au >= 1.0:
        return 0.0
    return 1.0 - au + _sin(TWO_PI * au, fast) * INV_TWO_PI


@njit
def ck_g(u, fast):
    au = abs(u)
    if au >= 1.0 or u == 0.0:
        return 0.0
    sg = 1.0 if u > 0.0 else -1.0
    return sg * (_cos(TWO_PI * u, fast) - 1.0)


@njit
def quad_w(u):
    au = abs(u)
    if au < 0.5:
        return 0.75 - au * au
    if au < 1.5:
        t = 1.5 - au
        return 0.5 * t * t
    return 0.0


@njit
def quad_g(u):
    au = abs(u)
    if au < 0.5:
        return -2.0 * u
    if au < 1.5:
        sg = 1.0 if u > 0.0 else -1.0
        return -sg * (1.5 - au)
    return 0.0


@njit
def _fill_dual(xp, dx, offsets, res, base, w, dw, r):
    # grids half a cell apart: the second grid reuses the first grid's trig.
    # Fractions come first so the three polynomial evaluations can overlap.
    inv_dx = 1.0 / dx
    for a in range(3):
        t = xp[a] * inv_dx
        for g in range(2):
            s = t - offsets[g]
            b = math.floor(s)
            if not (b >= 0.0 and b + 1.0 <= res[a]):
                return False
            base[g, a] = int(b)
            r[g, a, 0] = s - b
    for a in range(3):
        sn = 0.0
        cs = 0.0
        for g in range(2):
            f = r[g, a, 0]
            if g == 0:
                sn, cs = sincos_2pi(f)
            else:
                sn = -sn
                cs = -cs
            w[g, a, 0] = 1.0 - f + sn * INV_TWO_PI
            w[g, a, 1] = f - sn * INV_TWO_PI
            dw[g, a, 0] = (cs - 1.0) * inv_dx
            dw[g, a, 1] = (1.0 - cs) * inv_dx
            r[g, a, 0] = -f * dx
            r[g, a, 1] = (1.0 - f) * dx
    return True


@njit
def _fill_compact(xp, dx, offsets, res, base, w, dw, r):
    inv_dx = 1.0 / dx
    for a in range(3):
        t = xp[a] * inv_dx
        for g in range(offsets.shape[0]):
            s = t - offsets[g]
            b = math.floor(s)
            if not (b >= 0.0 and b + 1.0 <= res[a]):
                return False
            f = s - b
            base[g, a] = int(b)
            sn, cs = sincos_2pi(f)
            w[g, a, 0] = 1.0 - f + sn * INV_TWO_PI
            w[g, a, 1] = f - sn * INV_TWO_PI
            dw[g, a, 0] = (cs - 1.0) * inv_dx
            dw[g, a, 1] = (1.0 - cs) * inv_dx
            r[g, a, 0] = -f * dx
            r[g, a, 1] = (1.0 - f) * dx
    return True


@njit
def _fill_compact_fast(xp, dx, offsets, res, base, w, dw, r):
    # emulate per-node low-precision intrinsics: no shared cancellation
    inv_dx = 1.0 / dx
    for a in range(3):
        t = xp[a] * inv_dx
        for g in range(offsets.shape[0]):
            s = t - offsets[g]
            b = math.floor(s)
            if not (b >= 0.0 and b + 1.0 <= res[a]):
                return False
            f = s - b
            base[g, a] = int(b)
            w[g, a, 0] = ck_w(f, True)
            w[g, a, 1] = ck_w(f - 1.0, True)
            dw[g, a, 0] = ck_g(f, True) * inv_dx
            dw[g, a, 1] = ck_g(f - 1.0, True) * inv_dx
            r[g, a, 0] = -f * dx
            r[g, a, 1] = (1.0 - f) * dx
    return True


@njit
def _fill_quadratic(xp, dx, offsets, res, base, w, dw, r):
    inv_dx = 1.0 / dx
    for a in range(3):
        t = xp[a] * inv_dx
        b = math.floor(t - 0.5)
        if not (b >= 0.0 and b + 2.0 <= res[a]):
            return False
        f = t - b
        # offsets u = f, f - 1, f - 2 with f in [0.5, 1.5)
        d0 = 1.5 - f
        d1 = f - 1.0
        d2 = f - 0.5
        for g in range(offsets.shape[0]):
            base[g, a] = int(b)
            w[g, a, 0] = 0.5 * d0 * d0
            w[g, a, 1] = 0.75 - d1 * d1
            w[g, a, 2] = 0.5 * d2 * d2
            dw[g, a, 0] = -d0 * inv_dx
            dw[g, a, 1] = -2.0 * d1 * inv_dx
            dw[g, a, 2] = d2 * inv_dx
            r[g, a, 0] = -f * dx
            r[g, a, 1] = (1.0 - f) * dx
            r[g, a, 2] = (2.0 - f) * dx
    return True


@njit
def stencil_mode(kernel, fast, offsets):
    """0 paired compact grids, 1 quadratic, 2 compact with per-node float32 trig, 3 other compact."""
    if kernel != 0:
        return 1
    if fast:
        return 2
    if offsets.shape[0] == 2 and offsets[1] - offsets[0] == 0.5:
        return 0
    return 3


@njit
def fill_stencil(xp, dx, offsets, kernel, fast, res, base, w, dw, r):
    """Per-grid, per-axis weights for one particle; False on domain exit.

    The two compact nodes of an axis share one sine and cosine evaluation
    (sin(2 pi (1 - f)) = -sin(2 pi f)).  When the grids sit half a cell apart
    their fractions differ by exactly 1/2, so the second grid reuses the first
    grid's values with flipped sign; this also makes the dual-grid sine terms
    cancel exactly in floating point.  ``fast`` evaluates every node on its
    own in float32 instead.
    """
    if kernel != 0:
        return _fill_quadratic(xp, dx, offsets, res, base, w, dw, r)
    if fast:
        return _fill_compact_fast(xp, dx, offsets, res, base, w, dw, r)
    if offsets.shape[0] == 2 and offsets[1] - offsets[0] == 0.5:
        return _fill_dual(xp, dx, offsets, res, base, w, dw, r)
    return _fill_compact(xp, dx, offsets, res, base, w, dw, r)


@njit
def moments(ng, width, w, r, M):
    """M = mean over grids of sum_i w_i P(r_i) P(r_i)^T with P(r) = (1, r)."""
    for i in range(4):
        for j in range(4):
            M[i, j] = 0.0
    for g in range(ng):
        for o0 in range(width):
            for o1 in range(width):
                for o2 in range(width):
                    wn = w[g, 0, o0] * w[g, 1, o1] * w[g, 2, o2]
                    r0 = r[g, 0, o0]
                    r1 = r[g, 1, o1]
                    r2 = r[g, 2, o2]
                    M[0, 0] += wn
                    M[0, 1] += wn * r0
                    M[0, 2] += wn * r1
                    M[0, 3] += wn * r2
                    M[1, 1] += wn * r0 * r0
                    M[1, 2] += wn * r0 * r1
                    M[1, 3] += wn * r0 * r2
                    M[2, 2] += wn * r1 * r1
                    M[2, 3] += wn * r1 * r2
                    M[3, 3] += wn * r2 * r2
    inv_ng = 1.0 / ng
    for i in range(4):
        for j in range(i, 4):
            M[i, j] *= inv_ng
            M[j, i] = M[i, j]


# -- small dense linear algebra -----------------------------------------------

@njit
def inv3(A, out):
    """Adjugate inverse; returns the Frobenius condition estimate (inf if singular)."""
    c00 = A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]
    c01 = A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2]
    c02 = A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]
    det = A[0, 0] * c00 + A[0, 1] * c01 + A[0, 2] * c02
    if det == 0.0 or not math.isfinite(det):
        return np.inf
    inv_det = 1.0 / det
    out[0, 0] = c00 * inv_det
    out[1, 0] = c01 * inv_det
    out[2, 0] = c02 * inv_det
    out[0, 1] = (A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2]) * inv_det
    out[1, 1] = (A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]) * inv_det
    out[2, 1] = (A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1]) * inv_det
    out[0, 2] = (A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1]) * inv_det
    out[1, 2] = (A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2]) * inv_det
    out[2, 2] = (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]) * inv_det
    na = 0.0
    ni = 0.0
    for i in range(3):
        for j in range(3):
            na += A[i, j] * A[i, j]
            ni += out[i, j] * out[i, j]
    return math.sqrt(na * ni)


@njit
def inv4(A, out, work):
    """Gauss-Jordan with partial pivoting; returns the Frobenius condition estimate."""
    n = 4
    for i in range(n):
        for j in range(n):
            work[i, j] = A[i, j]
            out[i, j] = 1.0 if i == j else 0.0
    for c in range(n):
        piv = c
        best = abs(work[c, c])
        for i in range(c + 1, n):
            if abs(work[i, c]) > best:
                best = abs(work[i, c])
                piv = i
        if best == 0.0 or not math.isfinite(best):
            return np.inf
        if piv != c:
            for j in range(n):
                t = work[c, j]
                work[c, j] = work[piv, j]
                work[piv, j] = t
                t = out[c, j]
                out[c, j] = out[piv, j]
                out[piv, j] = t
        d = 1.0 / work[c, c]
        for j in range(n):
            work[c, j] *= d
            out[c, j] *= d
        for i in range(n):
            if i != c:
                f = work[i, c]
                if f != 0.0:
                    for j in range(n):
                        work[i, j] -= f * work[c, j]
                        out[i, j] -= f * out[c, j]
    na = 0.0
    ni = 0.0
    for i in range(n):
        for j in range(n):
            na += A[i, j] * A[i, j]
            ni += out[i, j] * out[i, j]
    return math.sqrt(na * ni)


@njit
def det3(A):
    return (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
            + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))


@njit
def sym_eig3(A, V):
    """Cyclic Jacobi on symmetric 3x3 ``A`` (overwritten); eigenvectors in V's columns."""
    for i in range(3):
        for j in range(3):
            V[i, j] = 1.0 if i == j else 0.0
    for _ in range(50):
        off = A[0, 1] * A[0, 1] + A[0, 2] * A[0, 2] + A[1, 2] * A[1, 2]
        scale = A[0, 0] * A[0, 0] + A[1, 1] * A[1, 1] + A[2, 2] * A[2, 2]
        if off <= 1e-34 * scale or off == 0.0:
            break
        for pair in range(3):
            if pair == 0:
                p, q = 0, 1
            elif pair == 1:
                p, q = 0, 2
            else:
                p, q = 1, 2
            apq = A[p, q]
            if apq == 0.0:
                continue
            theta = (A[q, q] - A[p, p]) / (2.0 * apq)
            if theta >= 0.0:
                t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
            else:
                t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
            c = 1.0 / math.sqrt(t * t + 1.0)
            s = t * c
            for k in range(3):
                akp = A[k, p]
                akq = A[k, q]
                A[k, p] = c * akp - s * akq
                A[k, q] = s * akp + c * akq
            for k in range(3):
                apk = A[p, k]
                aqk = A[q, k]
                A[p, k] = c * apk - s * aqk
                A[q, k] = s * apk + c * aqk
            A[p, q] = 0.0
            A[q, p] = 0.0
            for k in range(3):
                vkp = V[k, p]
                vkq = V[k, q]
                V[k, p] = c * vkp - s * vkq
                V[k, q] = s * vkp + c * vkq


@njit
def _swap_cols(V, i, j):
    for k in range(3):
        t = V[k, i]
        V[k, i] = V[k, j]
        V[k, j] = t


@njit
def svd3(F, U, sig, V, work):
    """F = U diag(sig) V^T with det U = det V = +1 and sig[0] >= sig[1] >= |sig[2]|.

    A reflection shows up as a negative ``sig[2]``.  ``work`` is 3x3 scratch.
    """
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += F[k, i] * F[k, j]
            work[i, j] = acc
    sym_eig3(work, V)
    e0 = work[0, 0]
    e1 = work[1, 1]
    e2 = work[2, 2]
    if e0 < e1:
        e0, e1 = e1, e0
        _swap_cols(V, 0, 1)
    if e1 < e2:
        e1, e2 = e2, e1
        _swap_cols(V, 1, 2)
    if e0 < e1:
        e0, e1 = e1, e0
        _swap_cols(V, 0, 1)
    if det3(V) < 0.0:
        for k in range(3):
            V[k, 2] = -V[k, 2]
    # columns of F V are sig_i u_i; orthonormalize them
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += F[i, k] * V[k, j]
            work[i, j] = acc
    s0 = math.sqrt(work[0, 0] ** 2 + work[1, 0] ** 2 + work[2, 0] ** 2)
    if s0 > 1e-150:
        for k in range(3):
            U[k, 0] = work[k, 0] / s0
    else:
        s0 = 0.0
        U[0, 0] = 1.0
        U[1, 0] = 0.0
        U[2, 0] = 0.0
    d = U[0, 0] * work[0, 1] + U[1, 0] * work[1, 1] + U[2, 0] * work[2, 1]
    b0 = work[0, 1] - d * U[0, 0]
    b1 = work[1, 1] - d * U[1, 0]
    b2 = work[2, 1] - d * U[2, 0]
    s1 = math.sqrt(b0 * b0 + b1 * b1 + b2 * b2)
    if s1 > 1e-150 * max(1.0, s0):
        U[0, 1] = b0 / s1
        U[1, 1] = b1 / s1
        U[2, 1] = b2 / s1
    else:
        s1 = 0.0
        # any unit vector orthogonal to u0
        ax = abs(U[0, 0])
        ay = abs(U[1, 0])
        az = abs(U[2, 0])
        if ax <= ay and ax <= az:
            t0, t1, t2 = 0.0, -U[2, 0], U[1, 0]
        elif ay <= az:
            t0, t1, t2 = U[2, 0], 0.0, -U[0, 0]
        else:
            t0, t1, t2 = -U[1, 0], U[0, 0], 0.0
        n = math.sqrt(t0 * t0 + t1 * t1 + t2 * t2)
        U[0, 1] = t0 / n
        U[1, 1] = t1 / n
        U[2, 1] = t2 / n
    U[0, 2] = U[1, 0] * U[2, 1] - U[2, 0] * U[1, 1]
    U[1, 2] = U[2, 0] * U[0, 1] - U[0, 0] * U[2, 1]
    U[2, 2] = U[0, 0] * U[1, 1] - U[1, 0] * U[0, 1]
    s2 = U[0, 2] * work[0, 2] + U[1, 2] * work[1, 2] + U[2, 2] * work[2, 2]
    sig[0] = s0
    sig[1] = s1
    sig[2] = s2


# -- constitutive models -------------------------------------------------------

@njit
def polar_rotation(F, R, work):
    """Rotation factor of F by scaled Newton iteration; False if it fails to converge.

    Far cheaper than a full SVD for the near-rotation F of elastic solids.
    ``work`` is 3x3 scratch.  Requires det F > 0.
    """
    for i in range(3):
        for j in range(3):
            R[i, j] = F[i, j]
    for it in range(40):
        # cofactor matrix of R is det(R) R^-T
        work[0, 0] = R[1, 1] * R[2, 2] - R[1, 2] * R[2, 1]
        work[0, 1] = R[1, 2] * R[2, 0] - R[1, 0] * R[2, 2]
        work[0, 2] = R[1, 0] * R[2, 1] - R[1, 1] * R[2, 0]
        work[1, 0] = R[0, 2] * R[2, 1] - R[0, 1] * R[2, 2]
        work[1, 1] = R[0, 0] * R[2, 2] - R[0, 2] * R[2, 0]
        work[1, 2] = R[0, 1] * R[2, 0] - R[0, 0] * R[2, 1]
        work[2, 0] = R[0, 1] * R[1, 2] - R[0, 2] * R[1, 1]
        work[2, 1] = R[0, 2] * R[1, 0] - R[0, 0] * R[1, 2]
        work[2, 2] = R[0, 0] * R[1, 1] - R[0, 1] * R[1, 0]
        det = R[0, 0] * work[0, 0] + R[0, 1] * work[0, 1] + R[0, 2] * work[0, 2]
        if not det > 0.0:
            return False
        nr = 0.0
        ni = 0.0
        for i in range(3):
            for j in range(3):
                nr += R[i, j] * R[i, j]
                ni += work[i, j] * work[i, j]
        ni /= det * det
        # Frobenius scaling, dropped once the iterate is close to orthogonal
        zeta = math.sqrt(math.sqrt(ni / nr))
        if abs(zeta - 1.0) < 1e-3:
            zeta = 1.0
        a = 0.5 * zeta
        b = 0.5 / (zeta * det)
        change = 0.0
        for i in range(3):
            for j in range(3):
                nv = a * R[i, j] + b * work[i, j]
                d = nv - R[i, j]
                change += d * d
                R[i, j] = nv
        if change <= 1e-30:
            return True
    return False



@njit
def corotated_tau(F, mu, lam, tau):
    """Fixed-corotated Kirchhoff stress with the polar factor from scaled Newton.

    Scalar-only so the iterate stays in registers.  Returns False when det F
    <= 0 or the iteration fails to converge (caller falls back to the SVD).
    """
    f00 = F[0, 0]
    f01 = F[0, 1]
    f02 = F[0, 2]
    f10 = F[1, 0]
    f11 = F[1, 1]
    f12 = F[1, 2]
    f20 = F[2, 0]
    f21 = F[2, 1]
    f22 = F[2, 2]
    r00, r01, r02, r10, r11, r12, r20, r21, r22 = f00, f01, f02, f10, f11, f12, f20, f21, f22
    Jf = 0.0
    done = False
    for it in range(40):
        c00 = r11 * r22 - r12 * r21
        c01 = r12 * r20 - r10 * r22
        c02 = r10 * r21 - r11 * r20
        c10 = r02 * r21 - r01 * r22
        c11 = r00 * r22 - r02 * r20
        c12 = r01 * r20 - r00 * r21
        c20 = r01 * r12 - r02 * r11
        c21 = r02 * r10 - r00 * r12
        c22 = r00 * r11 - r01 * r10
        det = r00 * c00 + r01 * c01 + r02 * c02
        if it == 0:
            Jf = det
        if not det > 0.0:
            return False
        nr = (r00 * r00 + r01 * r01 + r02 * r02 + r10 * r10 + r11 * r11 + r12 * r12
              + r20 * r20 + r21 * r21 + r22 * r22)
        ni = (c00 * c00 + c01 * c01 + c02 * c02 + c10 * c10 + c11 * c11 + c12 * c12
              + c20 * c20 + c21 * c21 + c22 * c22) / (det * det)
        zeta = math.sqrt(math.sqrt(ni / nr))
        if abs(zeta - 1.0) < 1e-3:
            zeta = 1.0
        a = 0.5 * zeta
        b = 0.5 / (zeta * det)
        n00 = a * r00 + b * c00
        n01 = a * r01 + b * c01
        n02 = a * r02 + b * c02
        n10 = a * r10 + b * c10
        n11 = a * r11 + b * c11
        n12 = a * r12 + b * c12
        n20 = a * r20 + b * c20
        n21 = a * r21 + b * c21
        n22 = a * r22 + b * c22
        change = ((n00 - r00) ** 2 + (n01 - r01) ** 2 + (n02 - r02) ** 2
                  + (n10 - r10) ** 2 + (n11 - r11) ** 2 + (n12 - r12) ** 2
                  + (n20 - r20) ** 2 + (n21 - r21) ** 2 + (n22 - r22) ** 2)
        r00, r01, r02, r10, r11, r12, r20, r21, r22 = n00, n01, n02, n10, n11, n12, n20, n21, n22
        # quadratic convergence: a step of size d leaves an error of order d^2
        if change <= 1e-16 and zeta == 1.0:
            done = True
            break
    if not done:
        return False
    # tau = 2 mu (F - R) F^T + lam (J - 1) J I
    e00 = f00 - r00
    e01 = f01 - r01
    e02 = f02 - r02
    e10 = f10 - r10
    e11 = f11 - r11
    e12 = f12 - r12
    e20 = f20 - r20
    e21 = f21 - r21
    e22 = f22 - r22
    m2 = 2.0 * mu
    vol = lam * (Jf - 1.0) * Jf
    tau[0, 0] = m2 * (e00 * f00 + e01 * f01 + e02 * f02) + vol
    tau[0, 1] = m2 * (e00 * f10 + e01 * f11 + e02 * f12)
    tau[0, 2] = m2 * (e00 * f20 + e01 * f21 + e02 * f22)
    tau[1, 0] = m2 * (e10 * f00 + e11 * f01 + e12 * f02)
    tau[1, 1] = m2 * (e10 * f10 + e11 * f11 + e12 * f12) + vol
    tau[1, 2] = m2 * (e10 * f20 + e11 * f21 + e12 * f22)
    tau[2, 0] = m2 * (e20 * f00 + e21 * f01 + e22 * f02)
    tau[2, 1] = m2 * (e20 * f10 + e21 * f11 + e22 * f12)
    tau[2, 2] = m2 * (e20 * f20 + e21 * f21 + e22 * f22) + vol
    return True


@njit
def kirchhoff(F, J, G, row, tau, U, sig, V, work):
    """Kirchhoff stress tau = P F^T for one particle; returns a status code."""
    kind = int(row[0])
    mu = row[1]
    lam = row[2]
    if kind == MAT_JFLUID:
        if not J > 0.0:
            return ERR_INVERTED
        p = row[3] * (J ** (-row[4]) - 1.0)
        visc = row[5]
        trg = G[0, 0] + G[1, 1] + G[2, 2]
        for i in range(3):
            for j in range(3):
                tau[i, j] = J * visc * (G[i, j] + G[j, i])
            tau[i, i] += -J * p - J * visc * (2.0 / 3.0) * trg
        return OK
    if kind == MAT_COROTATED:
        if corotated_tau(F, mu, lam, tau):
            return OK
        svd3(F, U, sig, V, work)
        if not sig[2] > 0.0:
            return ERR_INVERTED
        Jf = sig[0] * sig[1] * sig[2]
        # R = U V^T via the slower but unconditional SVD route
        for i in range(3):
            for j in range(3):
                work[i, j] = F[i, j] - (U[i, 0] * V[j, 0] + U[i, 1] * V[j, 1] + U[i, 2] * V[j, 2])
        for i in range(3):
            for j in range(3):
                tau[i, j] = 2.0 * mu * (work[i, 0] * F[j, 0] + work[i, 1] * F[j, 1]
                                        + work[i, 2] * F[j, 2])
            tau[i, i] += lam * (Jf - 1.0) * Jf
        return OK
    # Hencky (St. Venant-Kirchhoff in log strain) for Drucker-Prager
    svd3(F, U, sig, V, work)
    if not sig[2] > 0.0:
        return ERR_INVERTED
    l0 = math.log(sig[0])
    l1 = math.log(sig[1])
    l2 = math.log(sig[2])
    tr = l0 + l1 + l2
    d0 = 2.0 * mu * l0 + lam * tr
    d1 = 2.0 * mu * l1 + lam * tr
    d2 = 2.0 * mu * l2 + lam * tr
    for i in range(3):
        for j in range(3):
            tau[i, j] = U[i, 0] * d0 * U[j, 0] + U[i, 1] * d1 * U[j, 1] + U[i, 2] * d2 * U[j, 2]
    return OK


@njit
def dp_project(F, mu, lam, alpha, out, U, sig, V, work):
    """Drucker-Prager return mapping in Hencky strain space."""
    svd3(F, U, sig, V, work)
    if not sig[2] > 0.0:
        return ERR_INVERTED
    e0 = math.log(sig[0])
    e1 = math.log(sig[1])
    e2 = math.log(sig[2])
    tr = e0 + e1 + e2
    m = tr / 3.0
    h0 = e0 - m
    h1 = e1 - m
    h2 = e2 - m
    hn = math.sqrt(h0 * h0 + h1 * h1 + h2 * h2)
    if tr > 0.0:
        e0 = 0.0
        e1 = 0.0
        e2 = 0.0
    else:
        dgamma = hn + alpha * (3.0 * lam + 2.0 * mu) / (2.0 * mu) * tr
        if dgamma <= 0.0:
            for i in range(3):
                for j in range(3):
                    out[i, j] = F[i, j]
            return OK
        scale = dgamma / hn
        e0 -= scale * h0
        e1 -= scale * h1
        e2 -= scale * h2
    x0 = math.exp(e0)
    x1 = math.exp(e1)
    x2 = math.exp(e2)
    for i in range(3):
        for j in range(3):
            out[i, j] = U[i, 0] * x0 * V[j, 0] + U[i, 1] * x1 * V[j, 1] + U[i, 2] * x2 * V[j, 2]
    return OK


# -- grid activation -----------------------------------------------------------

@njit
def _mark(flat, lid, ids, count):
    if flat[lid] == -1:
        flat[lid] = -2
        if count == ids.shape[0]:
            grown = np.empty(2 * count, np.int64)
            grown[:count] = ids
            ids = grown
        ids[count] = lid
        count += 1
    return ids, count


@njit
def activate(x, dx, offsets, width, res, nb, table, prev_ids, margin, status):
    """Mark blocks touched by any stencil (plus a +1 halo); return sorted block ids.

    ``table`` maps block coords to slot (-1 inactive); entries listed in
    ``prev_ids`` are reset first.  Stencils are widened by ``margin`` cells on
    each side so the set stays valid while particles move less than that.
    """
    nb1, nb2 = nb[1], nb[2]
    flat = table.reshape(-1)
    for s in range(prev_ids.shape[0]):
        flat[prev_ids[s]] = -1
    ids = np.empty(256, np.int64)
    count = 0
    inv_dx = 1.0 / dx
    ng = offsets.shape[0]
    lo = np.empty(3, np.int64)
    hi = np.empty(3, np.int64)
    last = np.full((ng, 3), -1, np.int64)
    for p in range(x.shape[0]):
        for g in range(ng):
            same = True
            for a in range(3):
                if width == 2:
                    b = math.floor(x[p, a] * inv_dx - offsets[g])
                else:
                    b = math.floor(x[p, a] * inv_dx - 0.5)
                if not (b >= 0.0 and b + (width - 1) <= res[a]):
                    status[0] = ERR_DOMAIN
                    status[1] = p
                    return ids[:0]
                bi = int(b)
                if bi != last[g, a]:
                    same = False
                    last[g, a] = bi
                lo[a] = max(bi - margin, 0) >> 2
                hi[a] = min(bi + width - 1 + margin, res[a]) >> 2
            if same:
                continue
            for b0 in range(lo[0], hi[0] + 1):
                for b1 in range(lo[1], hi[1] + 1):
                    for b2 in range(lo[2], hi[2] + 1):
                        ids, count = _mark(flat, (b0 * nb1 + b1) * nb2 + b2, ids, count)
    # one-block halo in each positive direction
    touched = count
    for s in range(touched):
        lid = ids[s]
        b2 = lid % nb2
        b1 = (lid // nb2) % nb1
        b0 = lid // (nb1 * nb2)
        for d0 in range(2):
            for d1 in range(2):
                for d2 in range(2):
                    c0 = b0 + d0
                    c1 = b1 + d1
                    c2 = b2 + d2
                    if c0 < nb[0] and c1 < nb1 and c2 < nb2:
                        ids, count = _mark(flat, (c0 * nb1 + c1) * nb2 + c2, ids, count)
    out = np.sort(ids[:count])
    for s in range(count):
        flat[out[s]] = s
    return out


# -- grid update ---------------------------------------------------------------

@njit
def apply_bc_node(pos, vel, bc_kind, bc_shape, bc_par):
    for b in range(bc_kind.shape[0]):
        par = bc_par[b]
        inside = False
        if bc_shape[b] == 0:
            d = ((pos[0] - par[0]) * par[3] + (pos[1] - par[1]) * par[4]
                 + (pos[2] - par[2]) * par[5])
            inside = d <= 0.0
            n0, n1, n2 = par[3], par[4], par[5]
        else:
            inside = (par[0] <= pos[0] <= par[3] and par[1] <= pos[1] <= par[4]
                      and par[2] <= pos[2] <= par[5])
            n0, n1, n2 = par[6], par[7], par[8]
        if not inside:
            continue
        kind = bc_kind[b]
        if kind == 0:
            rx = pos[0] - par[15]
            ry = pos[1] - par[16]
            rz = pos[2] - par[17]
            vel[0] = par[9] + par[13] * rz - par[14] * ry
            vel[1] = par[10] + par[14] * rx - par[12] * rz
            vel[2] = par[11] + par[12] * ry - par[13] * rx
        else:
            vn = vel[0] * n0 + vel[1] * n1 + vel[2] * n2
            if kind == 1 or vn < 0.0:
                vel[0] -= vn * n0
                vel[1] -= vn * n1
                vel[2] -= vn * n2


@njit
def grid_update(nodes, nslots, slot_coords, dx, offsets, dt, gravity, mass_eps,
                bc_kind, bc_shape, bc_par):
    ng = offsets.shape[0]
    pos = np.empty(3)
    vel = np.empty(3)
    for s in range(nslots):
        for g in range(ng):
            for l0 in range(4):
                for l1 in range(4):
                    for l2 in range(4):
                        node = nodes[s, g, l0, l1, l2]
                        m = node[0]
                        if m > mass_eps:
                            inv_m = 1.0 / m
                            vel[0] = node[1] * inv_m + dt * gravity[0]
                            vel[1] = node[2] * inv_m + dt * gravity[1]
                            vel[2] = node[3] * inv_m + dt * gravity[2]
                            if bc_kind.shape[0] > 0:
                                pos[0] = (slot_coords[s, 0] * 4 + l0 + offsets[g]) * dx
                                pos[1] = (slot_coords[s, 1] * 4 + l1 + offsets[g]) * dx
                                pos[2] = (slot_coords[s, 2] * 4 + l2 + offsets[g]) * dx
                                apply_bc_node(pos, vel, bc_kind, bc_shape, bc_par)
                            node[1] = vel[0]
                            node[2] = vel[1]
                            node[3] = vel[2]
                        else:
                            node[1] = 0.0
                            node[2] = 0.0
                            node[3] = 0.0


# -- transfers -----------------------------------------------------------------
#
# Scatter and gather are built once per kernel so the stencil width is a
# compile-time constant and the node loops unroll.  Node storage is addressed
# through flat views: node (slot, g, l0, l1, l2) starts at
# ((((slot * ng + g) * 4 + l0) * 4 + l1) * 4 + l2) * 4.


def _build_transfers(KERNEL):
    W = 2 if KERNEL == 0 else 3

    @njit
    def p2g_range(lo, hi, x, v, mass, vol0, F, J, B, G, mat, mattab, dx, dt, offsets, scheme,
                  fast, res, table, nodes, do_momentum, do_force, status):
        ng = offsets.shape[0]
        nf = nodes.reshape(-1)
        tf = table.reshape(-1)
        nb1 = table.shape[1]
        nb2 = table.shape[2]
        base = np.empty((ng, 3), np.int64)
        w = np.zeros((ng, 3, 3))
        dw = np.zeros((ng, 3, 3))
        r = np.zeros((ng, 3, 3))
        tau = np.zeros((3, 3))
        M = np.zeros((4, 4))
        Minv = np.zeros((4, 4))
        D = np.zeros((3, 3))
        Dinv = np.zeros((3, 3))
        U = np.zeros((3, 3))
        Vm = np.zeros((3, 3))
        sig = np.zeros(3)
        work = np.zeros((3, 3))
        work4 = np.zeros((4, 4))
        affine = do_momentum and scheme != PIC
        mls_force = do_force and scheme == MLS
        mode = stencil_mode(KERNEL, fast, offsets)
        visits = 0
        for p in range(lo, hi):
            xp = x[p]
            # branching here rather than inside a shared helper keeps the fills inlined
            if mode == 0:
                ok = _fill_dual(xp, dx, offsets, res, base, w, dw, r)
            elif mode == 1:
                ok = _fill_quadratic(xp, dx, offsets, res, base, w, dw, r)
            elif mode == 2:
                ok = _fill_compact_fast(xp, dx, offsets, res, base, w, dw, r)
            else:
                ok = _fill_compact(xp, dx, offsets, res, base, w, dw, r)
            if not ok:
                status[0] = ERR_DOMAIN
                status[1] = p
                return visits
            mp = mass[p] if do_momentum else 0.0
            vx = v[p, 0]
            vy = v[p, 1]
            vz = v[p, 2]
            c00 = c01 = c02 = c10 = c11 = c12 = c20 = c21 = c22 = 0.0
            s00 = s01 = s02 = s10 = s11 = s12 = s20 = s21 = s22 = 0.0
            if do_force:
                code = kirchhoff(F[p], J[p], G[p], mattab[mat[p]], tau, U, sig, Vm, work)
                if code != OK:
                    status[0] = code
                    status[1] = p
                    return visits
                sc = -dt * vol0[p]
                s00 = sc * tau[0, 0]
                s01 = sc * tau[0, 1]
                s02 = sc * tau[0, 2]
                s10 = sc * tau[1, 0]
                s11 = sc * tau[1, 1]
                s12 = sc * tau[1, 2]
                s20 = sc * tau[2, 0]
                s21 = sc * tau[2, 1]
                s22 = sc * tau[2, 2]
            if affine or mls_force:
                moments(ng, W, w, r, M)
                if affine:
                    for i in range(3):
                        for j in range(3):
                            D[i, j] = M[i + 1, j + 1]
                    if inv3(D, Dinv) > COND_LIMIT:
                        status[0] = ERR_SINGULAR
                        status[1] = p
                        return visits
                    Bp = B[p]
                    for i in range(3):
                        for j in range(3):
                            work[i, j] = Bp[i, 0] * Dinv[0, j] + Bp[i, 1] * Dinv[1, j] + Bp[i, 2] * Dinv[2, j]
                    c00 = work[0, 0]
                    c01 = work[0, 1]
                    c02 = work[0, 2]
                    c10 = work[1, 0]
                    c11 = work[1, 1]
                    c12 = work[1, 2]
                    c20 = work[2, 0]
                    c21 = work[2, 1]
                    c22 = work[2, 2]
                if mls_force:
                    if inv4(M, Minv, work4) > COND_LIMIT:
                        status[0] = ERR_SINGULAR
                        status[1] = p
                        return visits
            for g in range(ng):
                for o0 in range(W):
                    i0 = base[g, 0] + o0
                    w0 = w[g, 0, o0]
                    d0 = dw[g, 0, o0]
                    r0 = r[g, 0, o0]
                    for o1 in range(W):
                        i1 = base[g, 1] + o1
                        w1 = w[g, 1, o1]
                        r1 = r[g, 1, o1]
                        w01 = w0 * w1
                        d0w1 = d0 * w1
                        w0d1 = w0 * dw[g, 1, o1]
                        rowb = ((i0 >> 2) * nb1 + (i1 >> 2)) * nb2
                        for o2 in range(W):
                            i2 = base[g, 2] + o2
                            slot = tf[rowb + (i2 >> 2)]
                            if slot < 0:
                                status[0] = ERR_INACTIVE
                                status[1] = p
                                return visits
                            visits += 1
                            k = ((((slot * ng + g) * 4 + (i0 & 3)) * 4 + (i1 & 3)) * 4 + (i2 & 3)) * 4
                            w2 = w[g, 2, o2]
                            wn = w01 * w2
                            r2 = r[g, 2, o2]
                            m0 = 0.0
                            m1 = 0.0
                            m2 = 0.0
                            if do_momentum:
                                wm = wn * mp
                                nf[k] += wm
                                if affine:
                                    m0 = wm * (vx + c00 * r0 + c01 * r1 + c02 * r2)
                                    m1 = wm * (vy + c10 * r0 + c11 * r1 + c12 * r2)
                                    m2 = wm * (vz + c20 * r0 + c21 * r1 + c22 * r2)
                                else:
                                    m0 = wm * vx
                                    m1 = wm * vy
                                    m2 = wm * vz
                            if do_force:
                                if mls_force:
                                    g0 = wn * (Minv[1, 0] + Minv[1, 1] * r0 + Minv[1, 2] * r1 + Minv[1, 3] * r2)
                                    g1 = wn * (Minv[2, 0] + Minv[2, 1] * r0 + Minv[2, 2] * r1 + Minv[2, 3] * r2)
                                    g2 = wn * (Minv[3, 0] + Minv[3, 1] * r0 + Minv[3, 2] * r1 + Minv[3, 3] * r2)
                                else:
                                    g0 = d0w1 * w2
                                    g1 = w0d1 * w2
                                    g2 = w01 * dw[g, 2, o2]
                                m0 += s00 * g0 + s01 * g1 + s02 * g2
                                m1 += s10 * g0 + s11 * g1 + s12 * g2
                                m2 += s20 * g0 + s21 * g1 + s22 * g2
                            nf[k + 1] += m0
                            nf[k + 2] += m1
                            nf[k + 3] += m2
        return visits

    @njit
    def p2g_serial(x, v, mass, vol0, F, J, B, G, mat, mattab, dx, dt, offsets, scheme, fast, res,
                   table, nodes, do_momentum, do_force, status):
        return p2g_range(0, x.shape[0], x, v, mass, vol0, F, J, B, G, mat, mattab, dx, dt,
                         offsets, scheme, fast, res, table, nodes, do_momentum, do_force, status)

    @njit(parallel=True)
    def p2g_par(nchunks, x, v, mass, vol0, F, J, B, G, mat, mattab, dx, dt, offsets, scheme, fast,
                res, table, nodes, nslots, do_momentum, do_force, status):
        # private buffers per chunk, reduced in chunk order: deterministic for a fixed nchunks
        n = x.shape[0]
        ng = nodes.shape[1]
        private = np.zeros((nchunks, nslots, ng, 4, 4, 4, 4))
        stats = np.zeros((nchunks, 2), np.int64)
        visits = np.zeros(nchunks, np.int64)
        for c in prange(nchunks):
            lo = (n * c) // nchunks
            hi = (n * (c + 1)) // nchunks
            visits[c] = p2g_range(lo, hi, x, v, mass, vol0, F, J, B, G, mat, mattab, dx, dt,
                                  offsets, scheme, fast, res, table, private[c], do_momentum,
                                  do_force, stats[c])
        for c in range(nchunks):
            if stats[c, 0] != OK:
                status[0] = stats[c, 0]
                status[1] = stats[c, 1]
                return visits.sum()
        for s in prange(nslots):
            for c in range(nchunks):
                nodes[s] += private[c, s]
        return visits.sum()

    @njit
    def gather_range(lo, hi, x, dx, offsets, scheme, fast, res, table, nodes, mass_eps,
                     out_v, out_B, out_G, status):
        ng = offsets.shape[0]
        nf = nodes.reshape(-1)
        tf = table.reshape(-1)
        nb1 = table.shape[1]
        nb2 = table.shape[2]
        base = np.empty((ng, 3), np.int64)
        w = np.zeros((ng, 3, 3))
        dw = np.zeros((ng, 3, 3))
        r = np.zeros((ng, 3, 3))
        M = np.zeros((4, 4))
        Minv = np.zeros((4, 4))
        work4 = np.zeros((4, 4))
        inv_ng = 1.0 / ng
        mls = scheme == MLS
        want_B = scheme != PIC
        mode = stencil_mode(KERNEL, fast, offsets)
        for p in range(lo, hi):
            xp = x[p]
            # branching here rather than inside a shared helper keeps the fills inlined
            if mode == 0:
                ok = _fill_dual(xp, dx, offsets, res, base, w, dw, r)
            elif mode == 1:
                ok = _fill_quadratic(xp, dx, offsets, res, base, w, dw, r)
            elif mode == 2:
                ok = _fill_compact_fast(xp, dx, offsets, res, base, w, dw, r)
            else:
                ok = _fill_compact(xp, dx, offsets, res, base, w, dw, r)
            if not ok:
                status[0] = ERR_DOMAIN
                status[1] = p
                return
            if mls:
                moments(ng, W, w, r, M)
                if inv4(M, Minv, work4) > COND_LIMIT:
                    status[0] = ERR_SINGULAR
                    status[1] = p
                    return
            vp0 = vp1 = vp2 = 0.0
            b00 = b01 = b02 = b10 = b11 = b12 = b20 = b21 = b22 = 0.0
            q00 = q01 = q02 = q10 = q11 = q12 = q20 = q21 = q22 = 0.0
            massive = False
            for g in range(ng):
                for o0 in range(W):
                    i0 = base[g, 0] + o0
                    w0 = w[g, 0, o0]
                    d0 = dw[g, 0, o0]
                    r0 = r[g, 0, o0]
                    for o1 in range(W):
                        i1 = base[g, 1] + o1
                        w1 = w[g, 1, o1]
                        r1 = r[g, 1, o1]
                        w01 = w0 * w1
                        d0w1 = d0 * w1
                        w0d1 = w0 * dw[g, 1, o1]
                        rowb = ((i0 >> 2) * nb1 + (i1 >> 2)) * nb2
                        for o2 in range(W):
                            i2 = base[g, 2] + o2
                            slot = tf[rowb + (i2 >> 2)]
                            if slot < 0:
                                status[0] = ERR_INACTIVE
                                status[1] = p
                                return
                            k = ((((slot * ng + g) * 4 + (i0 & 3)) * 4 + (i1 & 3)) * 4 + (i2 & 3)) * 4
                            if nf[k] > mass_eps:
                                massive = True
                            v0 = nf[k + 1]
                            v1 = nf[k + 2]
                            v2 = nf[k + 3]
                            w2 = w[g, 2, o2]
                            r2 = r[g, 2, o2]
                            wn = w01 * w2
                            if mls:
                                g0 = wn * (Minv[1, 0] + Minv[1, 1] * r0 + Minv[1, 2] * r1 + Minv[1, 3] * r2)
                                g1 = wn * (Minv[2, 0] + Minv[2, 1] * r0 + Minv[2, 2] * r1 + Minv[2, 3] * r2)
                                g2 = wn * (Minv[3, 0] + Minv[3, 1] * r0 + Minv[3, 2] * r1 + Minv[3, 3] * r2)
                            else:
                                g0 = d0w1 * w2
                                g1 = w0d1 * w2
                                g2 = w01 * dw[g, 2, o2]
                            wv0 = wn * v0
                            wv1 = wn * v1
                            wv2 = wn * v2
                            vp0 += wv0
                            vp1 += wv1
                            vp2 += wv2
                            if want_B:
                                b00 += wv0 * r0
                                b01 += wv0 * r1
                                b02 += wv0 * r2
                                b10 += wv1 * r0
                                b11 += wv1 * r1
                                b12 += wv1 * r2
                                b20 += wv2 * r0
                                b21 += wv2 * r1
                                b22 += wv2 * r2
                            q00 += v0 * g0
                            q01 += v0 * g1
                            q02 += v0 * g2
                            q10 += v1 * g0
                            q11 += v1 * g1
                            q12 += v1 * g2
                            q20 += v2 * g0
                            q21 += v2 * g1
                            q22 += v2 * g2
            if not massive:
                status[0] = ERR_ISOLATED
                status[1] = p
                return
            out_v[p, 0] = vp0 * inv_ng
            out_v[p, 1] = vp1 * inv_ng
            out_v[p, 2] = vp2 * inv_ng
            Bp = out_B[p]
            Bp[0, 0] = b00 * inv_ng
            Bp[0, 1] = b01 * inv_ng
            Bp[0, 2] = b02 * inv_ng
            Bp[1, 0] = b10 * inv_ng
            Bp[1, 1] = b11 * inv_ng
            Bp[1, 2] = b12 * inv_ng
            Bp[2, 0] = b20 * inv_ng
            Bp[2, 1] = b21 * inv_ng
            Bp[2, 2] = b22 * inv_ng
            Gp = out_G[p]
            Gp[0, 0] = q00 * inv_ng
            Gp[0, 1] = q01 * inv_ng
            Gp[0, 2] = q02 * inv_ng
            Gp[1, 0] = q10 * inv_ng
            Gp[1, 1] = q11 * inv_ng
            Gp[1, 2] = q12 * inv_ng
            Gp[2, 0] = q20 * inv_ng
            Gp[2, 1] = q21 * inv_ng
            Gp[2, 2] = q22 * inv_ng

    @njit
    def gather_serial(x, dx, offsets, scheme, fast, res, table, nodes, mass_eps, out_v, out_B,
                      out_G, status):
        gather_range(0, x.shape[0], x, dx, offsets, scheme, fast, res, table, nodes, mass_eps,
                     out_v, out_B, out_G, status)

    @njit(parallel=True)
    def gather_par(nchunks, x, dx, offsets, scheme, fast, res, table, nodes, mass_eps, out_v,
                   out_B, out_G, status):
        n = x.shape[0]
        stats = np.zeros((nchunks, 2), np.int64)
        for c in prange(nchunks):
            lo = (n * c) // nchunks
            hi = (n * (c + 1)) // nchunks
            gather_range(lo, hi, x, dx, offsets, scheme, fast, res, table, nodes, mass_eps,
                         out_v, out_B, out_G, stats[c])
        for c in range(nchunks):
            if stats[c, 0] != OK:
                status[0] = stats[c, 0]
                status[1] = stats[c, 1]
                return

    return p2g_serial, p2g_par, gather_serial, gather_par


_TRANSFERS = (_build_transfers(0), _build_transfers(1))


# -- diagnostics ---------------------------------------------------------------

@njit
def particle_sums(x, v, mass, B, affine, out):
    """Momentum/energy sums in one pass; returns the first non-finite particle or -1.

    out: [0:3] sum m v, [3:6] sum m l, [6:9] sum v, [9:12] sum l, [12] kinetic
    energy, [13] max |v|^2, where l = x cross v (+ the spin of B when ``affine``).
    """
    out[:] = 0.0
    bad = -1
    for p in range(x.shape[0]):
        x0, x1, x2 = x[p, 0], x[p, 1], x[p, 2]
        v0, v1, v2 = v[p, 0], v[p, 1], v[p, 2]
        l0 = x1 * v2 - x2 * v1
        l1 = x2 * v0 - x0 * v2
        l2 = x0 * v1 - x1 * v0
        if affine:
            l0 += B[p, 2, 1] - B[p, 1, 2]
            l1 += B[p, 0, 2] - B[p, 2, 0]
            l2 += B[p, 1, 0] - B[p, 0, 1]
        m = mass[p]
        out[0] += m * v0
        out[1] += m * v1
        out[2] += m * v2
        out[3] += m * l0
        out[4] += m * l1
        out[5] += m * l2
        out[6] += v0
        out[7] += v1
        out[8] += v2
        out[9] += l0
        out[10] += l1
        out[11] += l2
        s = v0 * v0 + v1 * v1 + v2 * v2
        out[12] += 0.5 * m * s
        if s > out[13]:
            out[13] = s
        if bad < 0 and not (math.isfinite(x0) and math.isfinite(x1) and math.isfinite(x2)
                            and math.isfinite(s)):
            bad = p
    return bad


@njit
def grid_mass(nodes, nslots, out):
    ng = nodes.shape[1]
    out[:] = 0.0
    for s in range(nslots):
        for g in range(ng):
            acc = 0.0
            blk = nodes[s, g]
            for i in range(4):
                for j in range(4):
                    for k in range(4):
                        acc += blk[i, j, k, 0]
            out[g] += acc


def p2g(x, v, mass, vol0, F, J, B, G, mat, mattab, dx, dt, offsets, kernel, scheme, fast,
        res, table, nodes, do_momentum, do_force, status):
    return _TRANSFERS[kernel][0](x, v, mass, vol0, F, J, B, G, mat, mattab, dx, dt, offsets,
                                 scheme, fast, res, table, nodes, do_momentum, do_force, status)


def p2g_parallel(nchunks, x, v, mass, vol0, F, J, B, G, mat, mattab, dx, dt, offsets, kernel,
                 scheme, fast, res, table, nodes, nslots, do_momentum, do_force, status):
    return _TRANSFERS[kernel][1](nchunks, x, v, mass, vol0, F, J, B, G, mat, mattab, dx, dt,
                                 offsets, scheme, fast, res, table, nodes, nslots, do_momentum,
                                 do_force, status)


def gather(x, dx, offsets, kernel, scheme, fast, res, table, nodes, mass_eps,
           out_v, out_B, out_G, status):
    _TRANSFERS[kernel][2](x, dx, offsets, scheme, fast, res, table, nodes, mass_eps, out_v,
                          out_B, out_G, status)


def gather_parallel(nchunks, x, dx, offsets, kernel, scheme, fast, res, table, nodes, mass_eps,
                    out_v, out_B, out_G, status):
    _TRANSFERS[kernel][3](nchunks, x, dx, offsets, scheme, fast, res, table, nodes, mass_eps,
                          out_v, out_B, out_G, status)


# -- particle state update -----------------------------------------------------

@njit
def _advance_range(lo, hi, x, v, F, J, B, G, mat, mattab, dt, vel, Bnew, Gnew, scheme,
                   clamp, status):
    Fn = np.zeros((3, 3))
    Fp = np.zeros((3, 3))
    U = np.zeros((3, 3))
    Vm = np.zeros((3, 3))
    sig = np.zeros(3)
    work = np.zeros((3, 3))
    for p in range(lo, hi):
        Gp = Gnew[p]
        for i in range(3):
            for j in range(3):
                G[p, i, j] = Gp[i, j]
                B[p, i, j] = Bnew[p, i, j] if scheme != PIC else 0.0
        row = mattab[mat[p]]
        kind = int(row[0])
        if kind == MAT_JFLUID:
            Jn = J[p] * (1.0 + dt * (Gp[0, 0] + Gp[1, 1] + Gp[2, 2]))
            if not Jn > 0.0:
                status[0] = ERR_INVERTED
                status[1] = p
                return
            J[p] = Jn
        else:
            Fo = F[p]
            for i in range(3):
                for j in range(3):
                    acc = Fo[i, j]
                    for k in range(3):
                        acc += dt * Gp[i, k] * Fo[k, j]
                    Fn[i, j] = acc
            if kind == MAT_DRUCKER_PRAGER:
                code = dp_project(Fn, row[1], row[2], row[6], Fp, U, sig, Vm, work)
                if code != OK:
                    status[0] = code
                    status[1] = p
                    return
                for i in range(3):
                    for j in range(3):
                        Fn[i, j] = Fp[i, j]
            if clamp:
                svd3(Fn, U, sig, Vm, work)
                if sig[2] < 0.05:
                    s0 = max(sig[0], 0.05)
                    s1 = max(sig[1], 0.05)
                    s2 = 0.05
                    for i in range(3):
                        for j in range(3):
                            Fn[i, j] = (U[i, 0] * s0 * Vm[j, 0] + U[i, 1] * s1 * Vm[j, 1]
                                        + U[i, 2] * s2 * Vm[j, 2])
            d = det3(Fn)
            if not d > 0.0:
                status[0] = ERR_INVERTED
                status[1] = p
                return
            for i in range(3):
                for j in range(3):
                    Fo[i, j] = Fn[i, j]
            J[p] = d
        for a in range(3):
            v[p, a] = vel[p, a]
            x[p, a] += dt * vel[p, a]


@njit
def advance(x, v, F, J, B, G, mat, mattab, dt, vel, Bnew, Gnew, scheme, clamp, status):
    _advance_range(0, x.shape[0], x, v, F, J, B, G, mat, mattab, dt, vel, Bnew, Gnew, scheme,
                   clamp, status)


@njit(parallel=True)
def advance_parallel(nchunks, x, v, F, J, B, G, mat, mattab, dt, vel, Bnew, Gnew, scheme, clamp,
                     status):
    n = x.shape[0]
    stats = np.zeros((nchunks, 2), np.int64)
    for c in prange(nchunks):
        lo = (n * c) // nchunks
        hi = (n * (c + 1)) // nchunks
        _advance_range(lo, hi, x, v, F, J, B, G, mat, mattab, dt, vel, Bnew, Gnew, scheme,
                       clamp, stats[c])
    for c in range(nchunks):
        if stats[c, 0] != OK:
            status[0] = stats[c, 0]
            status[1] = stats[c, 1]
            return
