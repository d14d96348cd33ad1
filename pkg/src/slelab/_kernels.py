"""Compiled inner loops for the Loewner engine.

All maps work in real arithmetic on (re, im) pairs.  ``h2`` is always the
squared slit height ``2 a dt`` of one elementary step.
"""

import math

import numba as nb
import numpy as np

_NB = dict(cache=True, nogil=True)


@nb.njit(inline="always")
def upper_sqrt(x, y, sign_hint):
    """Square root of ``x + iy`` with nonnegative imaginary part.

    On the branch cut (``y == 0``, ``x > 0``) the real sign follows
    ``sign_hint``.
    """
    r = math.sqrt(x * x + y * y)
    big = math.sqrt(0.5 * (r + abs(x)))
    small = abs(y) / (2.0 * big) if big > 0.0 else 0.0
    if x >= 0.0:
        p = big
        q = small
    else:
        p = small
        q = big
    if y < 0.0 or (y == 0.0 and sign_hint < 0.0):
        p = -p
    return p, q


@nb.njit(inline="always")
def inv_map(wr, wi, uk, h2):
    """Inverse elementary map ``u + sqrt((w - u)^2 - h2)``."""
    xr = wr - uk
    p, q = upper_sqrt(xr * xr - wi * wi - h2, 2.0 * xr * wi, xr)
    return uk + p, q


@nb.njit(inline="always")
def fwd_map(zr, zi, du, h2):
    """Forward step in centred coordinates: shift by ``du`` then ``sqrt(w^2 + h2)``.

    Returns the new point and the derivative modulus of the step.
    """
    wr = zr - du
    wi = zi
    p, q = upper_sqrt(wr * wr - wi * wi + h2, 2.0 * wr * wi, wr)
    den = math.sqrt(p * p + q * q)
    fac = math.sqrt(wr * wr + wi * wi) / den if den > 0.0 else 0.0
    return p, q, fac


# ---------------------------------------------------------------------------
# tracked points


@nb.njit(**_NB)
def evolve_one(z0r, z0i, inc, h2, stop_ups, swallow_tol, traj):
    """Advance a single point; fills ``traj`` (n+1, 3): Re Z, Im Z, |g'|.

    Returns (last index written, stop flag) where flag is 0 for horizon,
    1 for the Upsilon stop and 2 for swallowing.
    """
    zr = z0r
    zi = z0i
    dv = 1.0
    traj[0, 0] = zr
    traj[0, 1] = zi
    traj[0, 2] = dv
    n = inc.shape[0]
    for k in range(n):
        xr = zr - inc[k]
        rad_r = xr * xr - zi * zi + h2
        rad_i = 2.0 * xr * zi
        zr, zi, fac = fwd_map(zr, zi, inc[k], h2)
        dv *= fac
        traj[k + 1, 0] = zr
        traj[k + 1, 1] = zi
        traj[k + 1, 2] = dv
        if zi <= swallow_tol or (rad_i == 0.0 and rad_r >= 0.0):
            return k + 1, 2
        if zi / dv <= stop_ups:
            return k + 1, 1
    return n, 0


@nb.njit(**_NB)
def upsilon_checkpoints(z0r, z0i, inc, h2, floors, checks, swallow_tol):
    """Upsilon of several points at the step indices ``checks`` (increasing).

    A point whose Upsilon has reached its floor is frozen; since Upsilon is
    nonincreasing this preserves every comparison against thresholds that
    are at least the floor.  Swallowed points keep their last Upsilon.
    The loop exits once every point is frozen.
    """
    P = z0r.shape[0]
    C = checks.shape[0]
    out = np.empty((P, C))
    zr = z0r.copy()
    zi = z0i.copy()
    dv = np.ones(P)
    ups = z0i.copy()
    live = np.ones(P, dtype=np.bool_)
    nlive = 0
    for p in range(P):
        if ups[p] <= floors[p]:
            live[p] = False
        else:
            nlive += 1
    ci = 0
    while ci < C and checks[ci] == 0:
        for p in range(P):
            out[p, ci] = ups[p]
        ci += 1
    n = checks[C - 1] if C > 0 else 0
    k = 0
    while k < n and nlive > 0:
        du = inc[k]
        for p in range(P):
            if live[p]:
                xr = zr[p] - du
                rad_r = xr * xr - zi[p] * zi[p] + h2
                rad_i = 2.0 * xr * zi[p]
                a, b, fac = fwd_map(zr[p], zi[p], du, h2)
                zr[p] = a
                zi[p] = b
                dv[p] *= fac
                if b <= swallow_tol[p] or (rad_i == 0.0 and rad_r >= 0.0):
                    live[p] = False
                    nlive -= 1
                else:
                    ups[p] = b / dv[p]
                    if ups[p] <= floors[p]:
                        live[p] = False
                        nlive -= 1
        k += 1
        while ci < C and checks[ci] == k:
            for p in range(P):
                out[p, ci] = ups[p]
            ci += 1
    while ci < C:
        for p in range(P):
            out[p, ci] = ups[p]
        ci += 1
    return out


@nb.njit(**_NB)
def stopped_martingale(z0r, z0i, inc, h2, n_stop, eps_floor, swallow_tol, two_minus_d, bexp):
    """Value of ``|g'|^{2-d} G(Z)`` at the first of: step ``n_stop``,
    Upsilon <= eps_floor, or the last step before swallowing."""
    zr = z0r
    zi = z0i
    dv = 1.0
    for k in range(n_stop):
        if zi / dv <= eps_floor:
            break
        xr = zr - inc[k]
        rad_r = xr * xr - zi * zi + h2
        rad_i = 2.0 * xr * zi
        a, b, fac = fwd_map(zr, zi, inc[k], h2)
        if b <= swallow_tol or (rad_i == 0.0 and rad_r >= 0.0):
            break
        zr = a
        zi = b
        dv *= fac
    s = zi / math.sqrt(zr * zr + zi * zi)
    g = zi ** (-two_minus_d) * s ** bexp
    return dv ** two_minus_d * g


@nb.njit(**_NB)
def boundary_lower_bound(u, h2, x0):
    """Koebe lower bound on ``dist(x0, hull_k)`` for a real point ``x0 > 0``.

    Tracks ``g_k(x0)``, ``g_k'(x0)`` and the right end ``R_k`` of the hull
    footprint.  The bound is ``(g_k(x0) - R_k) / g_k'(x0)``; it is zero once
    the footprint has reached the point.  ``u`` is the cumulative driving.
    """
    n = u.shape[0] - 1
    out = np.empty(n + 1)
    out[0] = abs(x0 - u[0])
    gx = x0
    dg = 1.0
    R = 0.0
    empty = True
    for k in range(1, n + 1):
        uk = u[k]
        hi = uk if empty else max(R, uk)
        empty = False
        R = uk + math.sqrt((hi - uk) ** 2 + h2)
        w = gx - uk
        s = math.sqrt(w * w + h2)
        if w < 0.0:
            s = -s
        dg *= w / s
        gx = uk + s
        if gx > R and dg > 0.0:
            out[k] = (gx - R) / dg
        else:
            out[k] = 0.0
    return out


@nb.njit(**_NB)
def sin_arg_path(z0r, z0i, inc, h2):
    """``sin arg Z_k`` of one point at every step (0 after swallowing)."""
    n = inc.shape[0]
    out = np.empty(n + 1)
    zr = z0r
    zi = z0i
    out[0] = zi / math.sqrt(zr * zr + zi * zi)
    alive = True
    for k in range(n):
        if alive:
            a, b, fac = fwd_map(zr, zi, inc[k], h2)
            zr = a
            zi = b
            if zi <= 0.0:
                alive = False
        out[k + 1] = zi / math.sqrt(zr * zr + zi * zi) if alive else 0.0
    return out


@nb.njit(**_NB)
def upsilon_path(z0r, z0i, inc, h2, swallow_tol):
    """Upsilon of one point at every step (0 after swallowing)."""
    n = inc.shape[0]
    out = np.empty(n + 1)
    zr = z0r
    zi = z0i
    dv = 1.0
    out[0] = zi
    alive = True
    for k in range(n):
        if alive:
            xr = zr - inc[k]
            rad_r = xr * xr - zi * zi + h2
            rad_i = 2.0 * xr * zi
            a, b, fac = fwd_map(zr, zi, inc[k], h2)
            zr = a
            zi = b
            dv *= fac
            if zi <= swallow_tol or (rad_i == 0.0 and rad_r >= 0.0):
                alive = False
        out[k + 1] = zi / dv if alive else 0.0
    return out


# ---------------------------------------------------------------------------
# curve tips: block Laurent accelerator
#
# Blocks of B0 * 2^lev consecutive maps ending at multiples of their length
# are replaced, far from their real footprint [c - r, c + r], by the Laurent
# series  w + sum_m b_m (w - c)^{-m}  with real b_m.  The coefficients come
# from sampling the exact composition on a circle of radius rho_fac * r.


BLOCK0 = 16
N_SAMPLES = 48
FAR_RATIO = 2.0
RHO_FACTOR = 1.6
LOG_TOL = math.log(1e-13)
LANES = 16


@nb.njit(**_NB)
def _block_layout(n, B0):
    nlev = 0
    B = B0
    while B <= n:
        nlev += 1
        B *= 2
    off = np.zeros(nlev + 1, np.int64)
    for lev in range(nlev):
        off[lev + 1] = off[lev] + n // (B0 << lev)
    return nlev, off


@nb.njit(inline="always")
def _apply_lanes(wr, wi, g, khi, klo, u, h2, B0, maxlev, off, cen, rad, bsc, coef, lam, ltol, xr, xi, ar, ai):
    """Apply psi_khi, ..., psi_klo to lanes 0..g in lockstep, using blocks of
    level < maxlev that lie inside [klo, khi] whenever every lane is far."""
    M1 = coef.shape[1]
    k = khi
    while k >= klo:
        done = False
        if k % B0 == 0 and maxlev > 0:
            lev = maxlev - 1
            while lev >= 0:
                B = B0 << lev
                if k % B == 0 and k - B + 1 >= klo:
                    idx = off[lev] + k // B - 1
                    c = cen[idx]
                    rr = rad[idx]
                    dmin2 = 1e300
                    for l in range(g):
                        dr = wr[l] - c
                        d2 = dr * dr + wi[l] * wi[l]
                        if d2 < dmin2:
                            dmin2 = d2
                    if dmin2 >= (lam * rr) ** 2:
                        lt = 0.5 * math.log(rr * rr / dmin2)
                        K = int((ltol - bsc[idx]) / lt) + 1
                        if K > M1:
                            K = M1
                        if K < 1:
                            K = 1
                        bK = coef[idx, K - 1]
                        for l in range(g):
                            dr = wr[l] - c
                            d2 = dr * dr + wi[l] * wi[l]
                            xr[l] = dr / d2
                            xi[l] = -wi[l] / d2
                            ar[l] = bK
                            ai[l] = 0.0
                        for m in range(K - 2, -1, -1):
                            bm = coef[idx, m]
                            for l in range(g):
                                tr = xr[l] * ar[l] - xi[l] * ai[l]
                                ai[l] = xr[l] * ai[l] + xi[l] * ar[l]
                                ar[l] = tr + bm
                        for l in range(g):
                            wr[l] += xr[l] * ar[l] - xi[l] * ai[l]
                            wi[l] += xr[l] * ai[l] + xi[l] * ar[l]
                        k -= B
                        done = True
                        break
                lev -= 1
        if not done:
            uk = u[k]
            for l in range(g):
                wr[l], wi[l] = inv_map(wr[l], wi[l], uk, h2)
            k -= 1


@nb.njit(**_NB)
def _trig_tables(M):
    half = M // 2
    ct = np.empty(half)
    st = np.empty(half)
    cosm = np.empty((M, half))
    sinm = np.empty((M, half))
    for j in range(half):
        th = 2.0 * math.pi * (j + 0.5) / M
        ct[j] = math.cos(th)
        st[j] = math.sin(th)
        for m in range(M):
            cosm[m, j] = math.cos(m * th)
            sinm[m, j] = math.sin(m * th)
    return ct, st, cosm, sinm


@nb.njit(**_NB)
def _build_block(lev, bi, u, h2, B0, off, cen, rad, bsc, coef, lam, rho_fac, ltol, ct, st, cosm, sinm, buf):
    B = B0 << lev
    s = bi * B + 1
    e = (bi + 1) * B
    L = 0.0
    R = 0.0
    for k in range(s, e + 1):
        uk = u[k]
        if k == s:
            lo = uk
            hi = uk
        else:
            lo = min(L, uk)
            hi = max(R, uk)
        L = uk - math.sqrt((lo - uk) ** 2 + h2)
        R = uk + math.sqrt((hi - uk) ** 2 + h2)
    c = 0.5 * (L + R)
    r = 0.5 * (R - L)
    idx = off[lev] + bi
    cen[idx] = c
    rad[idx] = r
    rho = rho_fac * r
    half = ct.shape[0]
    M = cosm.shape[0]
    wr = buf[0]
    wi = buf[1]
    for j in range(half):
        wr[j] = c + rho * ct[j]
        wi[j] = rho * st[j]
    _apply_lanes(wr, wi, half, e, s, u, h2, B0, lev, off, cen, rad, bsc, coef, lam, ltol,
                 buf[2], buf[3], buf[4], buf[5])
    for j in range(half):
        wr[j] -= c + rho * ct[j]
        wi[j] -= rho * st[j]
    lb = -1e300
    lr = math.log(r)
    rm = 1.0
    for m in range(1, M):
        rm *= rho
        acc = 0.0
        for j in range(half):
            acc += wr[j] * cosm[m, j] - wi[j] * sinm[m, j]
        bm = (2.0 / M) * acc * rm
        coef[idx, m - 1] = bm
        if bm != 0.0:
            v = math.log(abs(bm)) - m * lr
            if v > lb:
                lb = v
    bsc[idx] = lb + math.log(1.0 / (1.0 - 1.0 / lam))


@nb.njit(**_NB)
def _engine(n, B0, M, G, fast):
    nlev, off = _block_layout(n, B0)
    if not fast:
        nlev = 0
    nb_tot = max(off[nlev], 1)
    cen = np.zeros(nb_tot)
    rad = np.zeros(nb_tot)
    bsc = np.zeros(nb_tot)
    coef = np.zeros((nb_tot, M - 1))
    buf = np.empty((6, max(M // 2, G)))
    return nlev, off, cen, rad, bsc, coef, buf


@nb.njit(**_NB)
def _tips_group(u, h2, g0, g1, B0, lam, rho_fac, ltol, nlev, off, cen, rad, bsc, coef, buf,
                built, ct, st, cosm, sinm, out):
    """Tips ``g0 <= j < g1`` into ``out[0:g1-g0]``; returns the new build mark."""
    g = g1 - g0
    while built + B0 <= g0 and nlev > 0:
        built += B0
        for lev in range(nlev):
            if built % (B0 << lev) == 0:
                _build_block(lev, built // (B0 << lev) - 1, u, h2, B0, off, cen, rad, bsc, coef,
                             lam, rho_fac, ltol, ct, st, cosm, sinm, buf)
    wr = buf[0]
    wi = buf[1]
    for l in range(g):
        wr[l] = u[g0 + l]
        wi[l] = 0.0
    for k in range(g1 - 1, g0, -1):
        uk = u[k]
        for l in range(k - g0, g):
            wr[l], wi[l] = inv_map(wr[l], wi[l], uk, h2)
    _apply_lanes(wr, wi, g, g0, 1, u, h2, B0, nlev, off, cen, rad, bsc, coef, lam, ltol,
                 buf[2], buf[3], buf[4], buf[5])
    for l in range(g):
        out[l] = complex(wr[l], wi[l])
    return built


@nb.njit(**_NB)
def tips(u, h2, j0, j1, fast, B0, M, lam, rho_fac, ltol, G):
    """Tips ``psi_1 o ... o psi_j (u_j)`` for ``1 <= j0 <= j < j1``.

    Lanes of ``G`` consecutive tips share their map tails and run in
    lockstep.  With ``fast`` false every lane performs exactly the naive
    sequence of elementary maps.  With ``fast`` true, blocks are built
    lazily in order of their right end.
    """
    n = u.shape[0] - 1
    nlev, off, cen, rad, bsc, coef, buf = _engine(n, B0, M, G, fast)
    ct, st, cosm, sinm = _trig_tables(M)
    out = np.empty(j1 - j0, np.complex128)
    tmp = np.empty(G, np.complex128)
    built = 0
    for g0 in range(j0, j1, G):
        g1 = min(g0 + G, j1)
        built = _tips_group(u, h2, g0, g1, B0, lam, rho_fac, ltol, nlev, off, cen, rad, bsc, coef,
                            buf, built, ct, st, cosm, sinm, tmp)
        for l in range(g1 - g0):
            out[g0 - j0 + l] = tmp[l]
    return out


@nb.njit(inline="always")
def seg_dist(ax, ay, bx, by, px, py):
    """Distance from ``p`` to the segment ``[a, b]``."""
    dx = bx - ax
    dy = by - ay
    L2 = dx * dx + dy * dy
    t = 0.0
    if L2 > 0.0:
        t = ((px - ax) * dx + (py - ay) * dy) / L2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    ex = ax + t * dx - px
    ey = ay + t * dy - py
    return math.sqrt(ex * ex + ey * ey)


@nb.njit(**_NB)
def _arc_dist(u, h2, j, built, B0, nlev, off, cen, rad, bsc, coef, lam, ltol, ar, ai, sc, tr, ti):
    """Distance from ``(tr, ti)`` to the hull piece added on step ``j``.

    The piece is the image of the slit ``u_j + i[0, sqrt(h2)]`` under
    ``psi_1 o ... o psi_{j-1}``; it is sampled at equally spaced slit
    heights and joined by a polygon.
    """
    g = ar.shape[0]
    h = math.sqrt(h2)
    for m in range(g):
        ar[m] = u[j]
        ai[m] = h * m / (g - 1)
    lo = built if built < j - 1 else j - 1
    for k in range(j - 1, lo, -1):
        uk = u[k]
        for m in range(g):
            ar[m], ai[m] = inv_map(ar[m], ai[m], uk, h2)
    if lo >= 1:
        _apply_lanes(ar, ai, g, lo, 1, u, h2, B0, nlev, off, cen, rad, bsc, coef, lam, ltol,
                     sc[0], sc[1], sc[2], sc[3])
    d = 1e300
    for m in range(g - 1):
        e = seg_dist(ar[m], ai[m], ar[m + 1], ai[m + 1], tr, ti)
        if e < d:
            d = e
    return d


ARC_SAMPLES = 25
ARC_REACH = 8.0


@nb.njit(**_NB)
def first_passage(u, h2, lower, margin, targets, radii, fast, B0, M, lam, rho_fac, ltol, G, arcs):
    """First passage indices of the traced curve.

    ``radii`` is (P, R) with each row nonincreasing (pad with -1).  Entry
    ``[p, r]`` of the result is the first ``j`` such that the curve piece of
    step ``j`` comes within ``radii[p, r]`` of ``targets[p]``, or -1.  With
    ``arcs == 0`` the piece is the segment from tip ``j-1`` to tip ``j``.
    With ``arcs > 0`` it is the exact image of the step's slit, sampled at
    ``arcs`` heights, whenever a tip lies within the radius plus
    ``ARC_REACH`` chord lengths of the target.

    ``lower[p, j]`` is a lower bound on the distance from ``targets[p]`` to
    the hull after ``j`` steps.  Step ``j`` is skipped, without computing
    its tips, when the bound exceeds every pending radius plus ``margin``.
    Tracing stops once every entry is set.  The second result is the
    number of tips actually computed.
    """
    n = u.shape[0] - 1
    P, R = radii.shape
    hit = -np.ones((P, R), np.int64)
    nxt = np.zeros(P, np.int64)
    remaining = 0
    for p in range(P):
        for r in range(R):
            if radii[p, r] >= 0.0:
                remaining += 1
    if remaining == 0 or n == 0:
        return hit, 0
    nlev, off, cen, rad, bsc, coef, buf = _engine(n, B0, M, G, fast)
    ct, st, cosm, sinm = _trig_tables(M)
    tmp = np.empty(G, np.complex128)
    ga = max(arcs, 2)
    ar = np.empty(ga)
    ai = np.empty(ga)
    sc = np.empty((4, ga))
    built = 0
    computed = 0
    win0 = 0
    win1 = 0
    for j in range(1, n + 1):
        need = False
        for p in range(P):
            rr = nxt[p]
            if rr < R and radii[p, rr] >= 0.0 and lower[p, j] <= radii[p, rr] + margin:
                need = True
                break
        if not need:
            continue
        if j >= win1 or (j > 1 and j - 1 < win0):
            win0 = j - 1 if j > 1 else 1
            win1 = min(win0 + G, n + 1)
            built = _tips_group(u, h2, win0, win1, B0, lam, rho_fac, ltol, nlev, off, cen, rad, bsc,
                                coef, buf, built, ct, st, cosm, sinm, tmp)
            computed += win1 - win0
        cur = tmp[j - win0]
        prev = tmp[j - 1 - win0] if j > 1 else 0j
        chord = abs(cur - prev)
        for p in range(P):
            rr = nxt[p]
            if rr >= R or radii[p, rr] < 0.0:
                continue
            tx = targets[p].real
            ty = targets[p].imag
            d = seg_dist(prev.real, prev.imag, cur.real, cur.imag, tx, ty)
            if arcs > 0 and d > radii[p, rr]:
                near = min(abs(prev - targets[p]), abs(cur - targets[p]))
                if near <= radii[p, rr] + ARC_REACH * chord:
                    d = _arc_dist(u, h2, j, built, B0, nlev, off, cen, rad, bsc, coef,
                                  lam, ltol, ar, ai, sc, tx, ty)
            while rr < R and radii[p, rr] >= 0.0 and d <= radii[p, rr]:
                hit[p, rr] = j
                rr += 1
                remaining -= 1
            nxt[p] = rr
        if remaining == 0:
            break
    return hit, computed
