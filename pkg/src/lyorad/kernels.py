"""Hot numerical kernels.

Two kernel families live here:

* ``single_vial_kernel`` - the two-stage drying integrator for one vial with
  an optional scalar radiation closure Q(T) = scale * (T^4 - T2^4). Written
  as plain scalar Python so the exact same source runs compiled (numba) or
  interpreted; both paths give bit-identical results.
* ``trace_chunk_*`` - nearest-intersection ray tracing for a chunk of rays in
  a 2D scene of circles (vials), segments (occluders) and the enclosing
  rectangular wall. Two implementations: a per-ray loop compiled with numba
  and a vectorized NumPy fallback. Both consume pre-generated ray arrays and
  perform the same arithmetic in the same order, so hit counts agree exactly.

Status codes returned by the integrator:
  0 drying completed, 1 horizon exceeded during heating, 2 nonpositive
  interface rate, 3 horizon exceeded during sublimation.
"""

from __future__ import annotations

import math

import numpy as np

from .backend import NUMBA_ENABLED, compile_kernel

STATUS_OK = 0
STATUS_NO_SUBLIMATION = 1
STATUS_NEGATIVE_RATE = 2
STATUS_HORIZON = 3


def _single_vial_impl(
    rho,
    cp,
    kth,
    rho_d,
    dh_sub,
    h,
    T0,
    Tb0,
    Tb_max,
    ramp,
    Tm,
    hv1,
    hv2,
    hv3,
    L,
    V,
    rad_scale,
    T2_pow4,
    n_nodes,
    dt,
    max_steps,
    stride,
    ts_t,
    ts_top,
    ts_bot,
    ts_s,
    ts_e,
):
    """Run heating + sublimation for one vial. See module docstring."""
    dx = L / (n_nodes - 1)
    a = rho * cp / dt
    c = kth / (dx * dx)
    hcoef = 2.0 * h / dx
    denom_sub = (rho - rho_d) * dh_sub
    inv_rhocp = 1.0 / (rho * cp)

    # Tridiagonal factorization (constant matrix): precompute the modified
    # upper diagonal and inverse pivots for the Thomas algorithm.
    diag0 = a + 2.0 * c
    diag_last = a + 2.0 * c + hcoef
    cprime = np.empty(n_nodes)
    inv_piv = np.empty(n_nodes)
    inv_piv[0] = 1.0 / diag0
    cprime[0] = -2.0 * c * inv_piv[0]
    for i in range(1, n_nodes - 1):
        piv = diag0 - (-c) * cprime[i - 1]
        inv_piv[i] = 1.0 / piv
        cprime[i] = -c * inv_piv[i]
    piv = diag_last - (-2.0 * c) * cprime[n_nodes - 2]
    inv_piv[n_nodes - 1] = 1.0 / piv
    cprime[n_nodes - 1] = 0.0

    # Trapezoid node weights for volume averages.
    w_node = np.empty(n_nodes)
    for i in range(n_nodes):
        w_node[i] = 1.0 / (n_nodes - 1)
    w_node[0] = 0.5 / (n_nodes - 1)
    w_node[n_nodes - 1] = 0.5 / (n_nodes - 1)

    T = np.empty(n_nodes)
    for i in range(n_nodes):
        T[i] = T0
    work = np.empty(n_nodes)

    use_series = ts_t.shape[0] > 0
    n_samp = 0
    if use_series:
        ts_t[0] = 0.0
        ts_top[0] = T0
        ts_bot[0] = T0
        ts_s[0] = 0.0
        ts_e[0] = 0.0
        n_samp = 1

    e_rad = 0.0
    t_m = -1.0
    t = 0.0
    step = 0
    sub_t_grid = 0.0

    if T0 >= Tm:
        t_m = 0.0
        sub_t_grid = 0.0
    else:
        while step < max_steps and t_m < 0.0:
            t_next = t + dt
            Tb = ramp * t_next + Tb0
            if Tb > Tb_max:
                Tb = Tb_max
            top_old = T[0]
            power_in = 0.0
            # Forward sweep with the radiative sink lagged at current temps.
            for i in range(n_nodes):
                rhs = a * T[i] + hv1
                if rad_scale != 0.0:
                    T4 = T[i] * T[i]
                    T4 = T4 * T4
                    q = rad_scale * (T4 - T2_pow4)
                    rhs -= q / V
                    power_in -= w_node[i] * q
                if i == n_nodes - 1:
                    rhs += hcoef * Tb
                if i == 0:
                    work[0] = rhs * inv_piv[0]
                elif i == n_nodes - 1:
                    work[i] = (rhs - (-2.0 * c) * work[i - 1]) * inv_piv[i]
                else:
                    work[i] = (rhs - (-c) * work[i - 1]) * inv_piv[i]
            T[n_nodes - 1] = work[n_nodes - 1]
            for i in range(n_nodes - 2, -1, -1):
                T[i] = work[i] - cprime[i] * T[i + 1]

            step += 1
            if T[0] >= Tm:
                frac = 1.0
                if T[0] > top_old:
                    frac = (Tm - top_old) / (T[0] - top_old)
                if frac < 0.0:
                    frac = 0.0
                if frac > 1.0:
                    frac = 1.0
                t_m = t + frac * dt
                e_rad += power_in * frac * dt
                sub_t_grid = t_next
                break
            e_rad += power_in * dt
            t = t_next
            if use_series and step % stride == 0 and n_samp < ts_t.shape[0]:
                ts_t[n_samp] = t
                ts_top[n_samp] = T[0]
                ts_bot[n_samp] = T[n_nodes - 1]
                ts_s[n_samp] = 0.0
                ts_e[n_samp] = e_rad
                n_samp += 1
        if t_m < 0.0:
            return STATUS_NO_SUBLIMATION, -1.0, -1.0, e_rad, n_samp, T[0]

    if use_series and n_samp < ts_t.shape[0]:
        ts_t[n_samp] = t_m
        ts_top[n_samp] = Tm
        ts_bot[n_samp] = Tm
        ts_s[n_samp] = 0.0
        ts_e[n_samp] = e_rad
        n_samp += 1

    # Sublimation stage: uniform product temperature, moving interface.
    s = 0.0
    t_prev = t_m
    t_grid = sub_t_grid
    T_prod = Tm
    t_dry = -1.0
    status = STATUS_HORIZON
    while step < max_steps + 2:
        t_next = t_grid if t_grid > t_prev else t_prev + dt
        ddt = t_next - t_prev
        t_grid = t_next + dt
        Tb = ramp * t_next + Tb0
        if Tb > Tb_max:
            Tb = Tb_max
        T_prod_next = Tm + hv3 * inv_rhocp * (t_next - t_m)
        q = 0.0
        if rad_scale != 0.0:
            T4 = T_prod * T_prod
            T4 = T4 * T4
            q = rad_scale * (T4 - T2_pow4)
        rate = (h * (Tb - T_prod_next) + hv2 * L - q * L / V) / denom_sub
        if rate <= 0.0:
            status = STATUS_NEGATIVE_RATE
            t_dry = -1.0
            break
        s_next = s + rate * ddt
        if s_next >= L:
            frac = (L - s) / (s_next - s)
            t_dry = t_prev + frac * ddt
            e_rad += -q * frac * ddt
            T_prod = Tm + hv3 * inv_rhocp * (t_dry - t_m)
            s = L
            status = STATUS_OK
            break
        e_rad += -q * ddt
        s = s_next
        T_prod = T_prod_next
        t_prev = t_next
        step += 1
        if use_series and step % stride == 0 and n_samp < ts_t.shape[0]:
            ts_t[n_samp] = t_next
            ts_top[n_samp] = T_prod
            ts_bot[n_samp] = T_prod
            ts_s[n_samp] = s
            ts_e[n_samp] = e_rad
            n_samp += 1

    if status == STATUS_OK and use_series and n_samp < ts_t.shape[0]:
        ts_t[n_samp] = t_dry
        ts_top[n_samp] = T_prod
        ts_bot[n_samp] = T_prod
        ts_s[n_samp] = L
        ts_e[n_samp] = e_rad
        n_samp += 1

    return status, t_m, t_dry, e_rad, n_samp, T_prod


single_vial_kernel = compile_kernel(_single_vial_impl)


# ---------------------------------------------------------------------------
# Ray tracing
# ---------------------------------------------------------------------------

T_EPS = 1e-12


def _trace_chunk_loop_impl(
    ox,
    oy,
    dx,
    dy,
    skip_circle,
    skip_seg,
    ccx,
    ccy,
    cr,
    circ_surf,
    sx0,
    sy0,
    sx1,
    sy1,
    seg_surf,
    bx0,
    bx1,
    by0,
    by1,
    wall_surf,
    hits,
):
    """Nearest-intersection trace for a chunk of rays; returns escape count."""
    n_rays = ox.shape[0]
    n_circ = ccx.shape[0]
    n_seg = sx0.shape[0]
    escapes = 0
    for r in range(n_rays):
        px = ox[r]
        py = oy[r]
        ux = dx[r]
        uy = dy[r]
        # Enclosing wall via axis-aligned slabs; a ray inside always exits.
        if ux > 0.0:
            tx = (bx1 - px) / ux
        elif ux < 0.0:
            tx = (bx0 - px) / ux
        else:
            tx = math.inf
        if uy > 0.0:
            ty = (by1 - py) / uy
        elif uy < 0.0:
            ty = (by0 - py) / uy
        else:
            ty = math.inf
        t_best = tx if tx < ty else ty
        j_best = wall_surf
        if not (t_best > T_EPS and math.isfinite(t_best)):
            escapes += 1
            continue
        for j in range(n_circ):
            if j == skip_circle[r]:
                continue
            ex = px - ccx[j]
            ey = py - ccy[j]
            b = ux * ex + uy * ey
            cq = ex * ex + ey * ey - cr[j] * cr[j]
            disc = b * b - cq
            if disc <= 0.0:
                continue
            tc = -b - math.sqrt(disc)
            if tc > T_EPS and tc < t_best:
                t_best = tc
                j_best = circ_surf[j]
        for j in range(n_seg):
            if j == skip_seg[r]:
                continue
            ex = sx1[j] - sx0[j]
            ey = sy1[j] - sy0[j]
            den = ux * ey - uy * ex
            if den == 0.0:
                continue
            qx = sx0[j] - px
            qy = sy0[j] - py
            ts = (qx * ey - qy * ex) / den
            if ts <= T_EPS or ts >= t_best:
                continue
            ss = (qx * uy - qy * ux) / den
            if ss < 0.0 or ss > 1.0:
                continue
            t_best = ts
            j_best = seg_surf[j]
        hits[j_best] += 1
    return escapes


trace_chunk_loop = compile_kernel(_trace_chunk_loop_impl)


def trace_chunk_numpy(
    ox,
    oy,
    dx,
    dy,
    skip_circle,
    skip_seg,
    ccx,
    ccy,
    cr,
    circ_surf,
    sx0,
    sy0,
    sx1,
    sy1,
    seg_surf,
    bx0,
    bx1,
    by0,
    by1,
    wall_surf,
    hits,
):
    """Vectorized fallback with the same update order as the compiled loop."""
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(
            dx > 0.0, (bx1 - ox) / dx, np.where(dx < 0.0, (bx0 - ox) / dx, np.inf)
        )
        ty = np.where(
            dy > 0.0, (by1 - oy) / dy, np.where(dy < 0.0, (by0 - oy) / dy, np.inf)
        )
    t_best = np.minimum(tx, ty)
    alive = (t_best > T_EPS) & np.isfinite(t_best)
    escapes = int(np.count_nonzero(~alive))
    j_best = np.full(ox.shape[0], wall_surf, dtype=np.int64)

    for j in range(ccx.shape[0]):
        ex = ox - ccx[j]
        ey = oy - ccy[j]
        b = dx * ex + dy * ey
        cq = ex * ex + ey * ey - cr[j] * cr[j]
        disc = b * b - cq
        valid = (disc > 0.0) & (skip_circle != j)
        with np.errstate(invalid="ignore"):
            tc = -b - np.sqrt(np.where(valid, disc, 0.0))
        better = valid & (tc > T_EPS) & (tc < t_best)
        t_best = np.where(better, tc, t_best)
        j_best = np.where(better, circ_surf[j], j_best)

    for j in range(sx0.shape[0]):
        ex = sx1[j] - sx0[j]
        ey = sy1[j] - sy0[j]
        den = dx * ey - dy * ex
        qx = sx0[j] - ox
        qy = sy0[j] - oy
        with np.errstate(divide="ignore", invalid="ignore"):
            ts = (qx * ey - qy * ex) / den
            ss = (qx * dy - qy * dx) / den
        better = (
            (den != 0.0)
            & (skip_seg != j)
            & (ts > T_EPS)
            & (ts < t_best)
            & (ss >= 0.0)
            & (ss <= 1.0)
        )
        t_best = np.where(better, ts, t_best)
        j_best = np.where(better, seg_surf[j], j_best)

    np.add.at(hits, j_best[alive], 1)
    return escapes


def trace_chunk(*args, use_numba=None):
    """Dispatch one chunk of rays to the selected backend."""
    if use_numba is None:
        use_numba = NUMBA_ENABLED
    if use_numba and NUMBA_ENABLED:
        return trace_chunk_loop(*args)
    return trace_chunk_numpy(*args)
