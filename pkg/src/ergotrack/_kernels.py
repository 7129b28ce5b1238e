"""numba kernels for the Euler stepping of controlled Brownian paths."""
import math

import numpy as np
from numba import njit

# parameter vector layout
A, R, L, K, H, DT, THETA, BOUND, TRIGGER, TARGET, TAB_DX, KIND, XLO, XBW, NXB, ULO, UBW, NUB, FBW, NFB = range(20)
N_PRM = 20

# accumulator layout
DEV, REG, FIX, PROP, N_INT, PUSH_LO, PUSH_HI, STEPS = range(8)
N_ACC = 8

KIND_NULL, KIND_OU, KIND_TABLE = 0, 1, 2


@njit(cache=True, nogil=True)
def _feedback(kind, x, theta, table, inv_dx):
    if kind == KIND_OU:
        return -theta * x
    if kind == KIND_TABLE:
        s = abs(x) * inv_dx
        i = int(s)
        n = table.shape[0]
        if i >= n - 1:
            v = table[n - 1]
        else:
            w = s - i
            v = table[i] * (1.0 - w) + table[i + 1] * w
        return -math.copysign(v, x)
    return 0.0


@njit(cache=True, nogil=True)
def fill_normals(rng, out):
    """Standard normals from ``rng``; same stream as ``rng.standard_normal``."""
    for i in range(out.shape[0]):
        out[i] = rng.standard_normal()


@njit(cache=True, nogil=True)
def run_group(G, m, st, prm, table, hist, occ_t, occ_u, acc, ev_x, ev_dest, nev, px, pu, offset):
    """Advance a group of independent paths by ``m`` steps.

    Row ``k`` of ``G`` holds the normals of path ``k``.  The paths are
    stepped in lockstep so that their dependency chains overlap; each path
    keeps its own state ``st[k]``, cost accumulators ``acc[k]``, fine
    occupation statistics ``occ_t[k]``/``occ_u[k]`` and intervention log
    (``ev_x[k]`` pre-intervention state, ``ev_dest[k]`` state after it,
    ``nev[k]`` entries).  Histogram counts of all paths go into ``hist``.
    """
    a = prm[A]
    r = prm[R]
    l = prm[L]
    k_fix = prm[K]
    h = prm[H]
    dt = prm[DT]
    theta = prm[THETA]
    bound = prm[BOUND]
    trig = prm[TRIGGER]
    target = prm[TARGET]
    inv_tab = 1.0 / prm[TAB_DX] if prm[TAB_DX] > 0 else 0.0
    kind = int(prm[KIND])
    xlo = prm[XLO]
    inv_xbw = 1.0 / prm[XBW]
    nxb = int(prm[NXB])
    ulo = prm[ULO]
    inv_ubw = 1.0 / prm[UBW]
    nub = int(prm[NUB])
    inv_fbw = 1.0 / prm[FBW]
    nfb = int(prm[NFB])
    sq = np.sqrt(a * dt)
    rec = px.shape[1] > 0
    npath = st.shape[0]
    dev = np.zeros(npath)
    reg = np.zeros(npath)
    nev[:] = 0
    for n in range(m):
        for p in range(npath):
            x = st[p]
            u = _feedback(kind, x, theta, table, inv_tab)
            dev[p] += x * x
            reg[p] += u * u
            ix = int((x - xlo) * inv_xbw)
            ix = min(max(ix, 0), nxb - 1)
            iu = int((u - ulo) * inv_ubw)
            iu = min(max(iu, 0), nub - 1)
            hist[ix, iu] += 1
            jf = int((x - xlo) * inv_fbw)
            jf = min(max(jf, 0), nfb - 1)
            occ_t[p, jf] += 1.0
            occ_u[p, jf] += u
            if rec:
                px[p, offset + n] = x
                pu[p, offset + n] = u
            xn = x + u * dt + sq * G[p, n]
            if bound > 0.0:
                if xn > bound:
                    acc[p, PUSH_HI] += xn - bound
                    acc[p, PROP] += h * (xn - bound)
                    acc[p, N_INT] += 1
                    ev_x[p, nev[p]] = xn
                    ev_dest[p, nev[p]] = bound
                    nev[p] += 1
                    xn = bound
                elif xn < -bound:
                    acc[p, PUSH_LO] += -bound - xn
                    acc[p, PROP] += h * (-bound - xn)
                    acc[p, N_INT] += 1
                    ev_x[p, nev[p]] = xn
                    ev_dest[p, nev[p]] = -bound
                    nev[p] += 1
                    xn = -bound
            elif trig > 0.0:
                if xn >= trig or xn <= -trig:
                    dest = target if xn > 0 else -target
                    acc[p, FIX] += k_fix
                    acc[p, PROP] += h * abs(dest - xn)
                    acc[p, N_INT] += 1
                    ev_x[p, nev[p]] = xn
                    ev_dest[p, nev[p]] = dest
                    nev[p] += 1
                    xn = dest
            st[p] = xn
    for p in range(npath):
        acc[p, DEV] += r * dev[p] * dt
        acc[p, REG] += l * reg[p] * dt
        acc[p, STEPS] += m


# tracking accumulators and per-checkpoint policy layout
T_DEV, T_REG, T_FIX, T_PROP, T_NINT = range(5)
N_TACC = 5
P_KIND, P_THETA, P_BOUND, P_TRIG, P_TARGET, P_INVDX = range(6)
N_POL = 6


@njit(cache=True, nogil=True)
def track_chunk(rng, n_steps, st, offset, dt, horizon, coef, pol, tabs, eb, acc):
    """Euler steps of the tracking error ``Y`` under a rescaled local policy.

    ``coef`` holds (a, b, r, l, k, h) on a uniform grid of [0, horizon];
    ``pol``/``tabs`` hold one local policy per checkpoint of a uniform grid
    (``P_INVDX`` is the inverse spacing of the feedback table).
    Local quantities are zoomed by ``eb``: the control is
    ``u*(Y/eb)/eb`` and thresholds and jump targets are multiplied by ``eb``.
    Costs are accumulated without their epsilon weights.
    """
    nc = coef.shape[1]
    ncp = pol.shape[0]
    y = st[0]
    dev = 0.0
    reg = 0.0
    inv_eb = 1.0 / eb
    for n in range(n_steps):
        t = (offset + n) * dt
        s = t / horizon * (nc - 1)
        i = int(s)
        if i >= nc - 1:
            i = nc - 2
        w = s - i
        a = coef[0, i] * (1.0 - w) + coef[0, i + 1] * w
        b = coef[1, i] * (1.0 - w) + coef[1, i + 1] * w
        r = coef[2, i] * (1.0 - w) + coef[2, i + 1] * w
        l = coef[3, i] * (1.0 - w) + coef[3, i + 1] * w
        k = coef[4, i] * (1.0 - w) + coef[4, i + 1] * w
        h = coef[5, i] * (1.0 - w) + coef[5, i + 1] * w
        m = int(t / horizon * (ncp - 1) + 0.5)
        if m > ncp - 1:
            m = ncp - 1
        kind = int(pol[m, P_KIND])
        u = _feedback(kind, y * inv_eb, pol[m, P_THETA], tabs[m], pol[m, P_INVDX]) * inv_eb
        dev += r * y * y
        reg += l * u * u
        y = y + (u - b) * dt + np.sqrt(a * dt) * rng.standard_normal()
        bound = pol[m, P_BOUND] * eb
        trig = pol[m, P_TRIG] * eb
        if bound > 0.0:
            if y > bound:
                acc[T_PROP] += h * (y - bound)
                acc[T_NINT] += 1
                y = bound
            elif y < -bound:
                acc[T_PROP] += h * (-bound - y)
                acc[T_NINT] += 1
                y = -bound
        elif trig > 0.0:
            if y >= trig or y <= -trig:
                dest = pol[m, P_TARGET] * eb
                if y < 0:
                    dest = -dest
                acc[T_FIX] += k
                acc[T_PROP] += h * abs(dest - y)
                acc[T_NINT] += 1
                y = dest
    acc[T_DEV] += dev * dt
    acc[T_REG] += reg * dt
    st[0] = y
