"""Compiled fixed-step integrators.

All production integration funnels through these numba kernels; the pure
Python reference flows in ``models.mean_field_derivative`` define the
equations and the kernels replicate them term by term (tested for agreement).
``fastmath`` stays off so results are bit-reproducible across runs and
worker counts.

Time stepping walks an event schedule: an increasing array of boundary times
containing every drive switch and every sample time.  Each inter-event
interval is integrated with an integer number of equal steps no longer than
``dt_max``, so no step ever straddles a coupling discontinuity and samples
are hit exactly.

Kind codes: 0 = photon-retaining model, 1 = atom-only (finite kappa),
2 = atom-only (infinite kappa); modes: 0 = piecewise-constant coupling from
the schedule, 1 = sinusoidal coupling evaluated at stage times.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_DIVERGED = 1

_OVERFLOW = 1e6


@njit(cache=True, inline="always")
def _coupling(mode, seg_r, lam0, fd, omd, t):
    if mode == 1:
        return lam0 * (1.0 + fd * np.sin(omd * t))
    return seg_r


@njit(cache=True, inline="always")
def _mf_rhs(kind, om0, omp, kap, lam_cr, c2, r, aR, aI, jx, jy, jz):
    if kind == 0:
        lam = r * lam_cr
        return (
            -kap * aR + omp * aI,
            -omp * aR - kap * aI - 2.0 * lam * jx,
            -om0 * jy,
            om0 * jx - 4.0 * lam * aR * jz,
            4.0 * lam * aR * jy,
        )
    chi1 = 2.0 * om0 * r * r
    chi2 = c2 * r * r
    return (
        0.0,
        0.0,
        -om0 * jy,
        om0 * jx + chi1 * jx * jz + chi2 * jy * jz,
        -chi1 * jx * jy - chi2 * jy * jy,
    )


@njit(cache=True)
def mean_field_rk4(y, ev_t, ev_r, is_sample, dt_max, mode, kind,
                   om0, omp, kap, lam_cr, c2, lam0, fd, omd, out):
    """Integrate one mean-field trajectory over the event schedule.

    Returns (status, samples_written, t_last).  ``out`` must have one row
    per sample flag set in ``is_sample`` (including t = 0).
    """
    aR = y[0]; aI = y[1]; jx = y[2]; jy = y[3]; jz = y[4]
    ns = 0
    out[ns, 0] = aR; out[ns, 1] = aI; out[ns, 2] = jx; out[ns, 3] = jy; out[ns, 4] = jz
    ns += 1
    for i in range(ev_t.shape[0] - 1):
        t0 = ev_t[i]
        width = ev_t[i + 1] - t0
        if width > 0.0:
            n = int(np.ceil(width / dt_max))
            if n < 1:
                n = 1
            h = width / n
            half = 0.5 * h
            sixth = h / 6.0
            for k in range(n):
                ts = t0 + k * h
                r1 = _coupling(mode, ev_r[i], lam0, fd, omd, ts)
                r2 = _coupling(mode, ev_r[i], lam0, fd, omd, ts + half)
                r4 = _coupling(mode, ev_r[i], lam0, fd, omd, ts + h)
                k1 = _mf_rhs(kind, om0, omp, kap, lam_cr, c2, r1, aR, aI, jx, jy, jz)
                k2 = _mf_rhs(kind, om0, omp, kap, lam_cr, c2, r2,
                             aR + half * k1[0], aI + half * k1[1], jx + half * k1[2],
                             jy + half * k1[3], jz + half * k1[4])
                k3 = _mf_rhs(kind, om0, omp, kap, lam_cr, c2, r2,
                             aR + half * k2[0], aI + half * k2[1], jx + half * k2[2],
                             jy + half * k2[3], jz + half * k2[4])
                k4 = _mf_rhs(kind, om0, omp, kap, lam_cr, c2, r4,
                             aR + h * k3[0], aI + h * k3[1], jx + h * k3[2],
                             jy + h * k3[3], jz + h * k3[4])
                aR += sixth * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
                aI += sixth * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
                jx += sixth * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
                jy += sixth * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
                jz += sixth * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])
        bad = not (np.isfinite(aR) and np.isfinite(aI) and np.isfinite(jx)
                   and np.isfinite(jy) and np.isfinite(jz))
        if bad or (abs(aR) > _OVERFLOW or abs(aI) > _OVERFLOW or abs(jx) > _OVERFLOW
                   or abs(jy) > _OVERFLOW or abs(jz) > _OVERFLOW):
            return STATUS_DIVERGED, ns, ev_t[i]
        if is_sample[i + 1]:
            out[ns, 0] = aR; out[ns, 1] = aI; out[ns, 2] = jx
            out[ns, 3] = jy; out[ns, 4] = jz
            ns += 1
    return STATUS_OK, ns, ev_t[ev_t.shape[0] - 1]


@njit(cache=True)
def _spin_stage(s, k, om0, chi1, chi2, n_spins):
    """Write per-spin derivatives of state ``s`` (3, N) into ``k``."""
    sx = 0.0
    sy = 0.0
    for j in range(n_spins):
        sx += s[0, j]
        sy += s[1, j]
    cx = chi1 / n_spins * sx + chi2 / n_spins * sy
    for j in range(n_spins):
        k[0, j] = -om0 * s[1, j]
        k[1, j] = om0 * s[0, j] + cx * s[2, j]
        k[2, j] = -cx * s[1, j]


@njit(cache=True)
def spins_rk4(s, ev_t, ev_r, is_sample, dt_max, mode,
              om0, c2, lam0, fd, omd, out):
    """Deterministic atom-only evolution of a batch of spin trajectories.

    ``s`` has shape (B, 3, N) and is evolved in place; ``out`` has shape
    (n_samples, B, 3) and receives the collective means (Sx, Sy, Sz) / N.
    The interaction is distributed over spins so the ensemble mean obeys the
    collective flow as N grows.
    """
    nb, _, n_spins = s.shape
    k1 = np.empty((3, n_spins))
    k2 = np.empty((3, n_spins))
    k3 = np.empty((3, n_spins))
    k4 = np.empty((3, n_spins))
    tmp = np.empty((3, n_spins))
    ns = 0
    for b in range(nb):
        for c in range(3):
            acc = 0.0
            for j in range(n_spins):
                acc += s[b, c, j]
            out[ns, b, c] = acc / n_spins
    ns += 1
    for i in range(ev_t.shape[0] - 1):
        t0 = ev_t[i]
        width = ev_t[i + 1] - t0
        if width > 0.0:
            n = int(np.ceil(width / dt_max))
            if n < 1:
                n = 1
            h = width / n
            half = 0.5 * h
            sixth = h / 6.0
            for k in range(n):
                ts = t0 + k * h
                r1 = _coupling(mode, ev_r[i], lam0, fd, omd, ts)
                r2 = _coupling(mode, ev_r[i], lam0, fd, omd, ts + half)
                r4 = _coupling(mode, ev_r[i], lam0, fd, omd, ts + h)
                chi1_1 = 2.0 * om0 * r1 * r1
                chi2_1 = c2 * r1 * r1
                chi1_2 = 2.0 * om0 * r2 * r2
                chi2_2 = c2 * r2 * r2
                chi1_4 = 2.0 * om0 * r4 * r4
                chi2_4 = c2 * r4 * r4
                for b in range(nb):
                    sb = s[b]
                    _spin_stage(sb, k1, om0, chi1_1, chi2_1, n_spins)
                    for c in range(3):
                        for j in range(n_spins):
                            tmp[c, j] = sb[c, j] + half * k1[c, j]
                    _spin_stage(tmp, k2, om0, chi1_2, chi2_2, n_spins)
                    for c in range(3):
                        for j in range(n_spins):
                            tmp[c, j] = sb[c, j] + half * k2[c, j]
                    _spin_stage(tmp, k3, om0, chi1_2, chi2_2, n_spins)
                    for c in range(3):
                        for j in range(n_spins):
                            tmp[c, j] = sb[c, j] + h * k3[c, j]
                    _spin_stage(tmp, k4, om0, chi1_4, chi2_4, n_spins)
                    for c in range(3):
                        for j in range(n_spins):
                            sb[c, j] += sixth * (k1[c, j] + 2.0 * k2[c, j]
                                                 + 2.0 * k3[c, j] + k4[c, j])
        for b in range(nb):
            for c in range(3):
                for j in range(n_spins):
                    if not np.isfinite(s[b, c, j]):
                        return STATUS_DIVERGED, ns, ev_t[i]
        if is_sample[i + 1]:
            for b in range(nb):
                for c in range(3):
                    acc = 0.0
                    for j in range(n_spins):
                        acc += s[b, c, j]
                    out[ns, b, c] = acc / n_spins
            ns += 1
    return STATUS_OK, ns, ev_t[ev_t.shape[0] - 1]


@njit(cache=True)
def count_substeps(ev_t, dt):
    """Total Euler substeps the schedule implies (for noise pre-generation)."""
    total = 0
    for i in range(ev_t.shape[0] - 1):
        width = ev_t[i + 1] - ev_t[i]
        if width > 0.0:
            n = int(np.ceil(width / dt))
            if n < 1:
                n = 1
            total += n
    return total


@njit(cache=True)
def dm_twa_euler(state, ev_t, ev_r, is_sample, dt, mode,
                 om0, omp, kap, lam_cr, lam0, fd, omd,
                 sqrt_n, noise, noise_amp, out):
    """Euler-Maruyama evolution of one photon-coupled spin trajectory.

    ``state`` holds (A_R, A_I, s_x[0..N-1], s_y[...], s_z[...]) with the
    photon quadratures in unrescaled units (amplitude ~ sqrt(N)); ``noise``
    supplies standard-normal increments, two per substep; ``noise_amp`` is
    the per-quadrature noise amplitude (sqrt(kappa / 2) physically).  ``out``
    has shape (n_samples, 5) receiving (jx, jy, jz, A_R, A_I).
    """
    n_spins = (state.shape[0] - 2) // 3
    aR = state[0]
    aI = state[1]
    sx = state[2:2 + n_spins]
    sy = state[2 + n_spins:2 + 2 * n_spins]
    sz = state[2 + 2 * n_spins:2 + 3 * n_spins]
    dsx = np.empty(n_spins)
    dsy = np.empty(n_spins)
    dsz = np.empty(n_spins)
    ns = 0
    mx = 0.0; my = 0.0; mz = 0.0
    for j in range(n_spins):
        mx += sx[j]; my += sy[j]; mz += sz[j]
    out[ns, 0] = mx / n_spins; out[ns, 1] = my / n_spins; out[ns, 2] = mz / n_spins
    out[ns, 3] = aR; out[ns, 4] = aI
    ns += 1
    idx = 0
    for i in range(ev_t.shape[0] - 1):
        t0 = ev_t[i]
        width = ev_t[i + 1] - t0
        if width > 0.0:
            n = int(np.ceil(width / dt))
            if n < 1:
                n = 1
            h = width / n
            sq = np.sqrt(h) * noise_amp
            for k in range(n):
                ts = t0 + k * h
                r = _coupling(mode, ev_r[i], lam0, fd, omd, ts)
                lam = r * lam_cr
                g = lam / sqrt_n
                tot_x = 0.0
                for j in range(n_spins):
                    tot_x += sx[j]
                daR = -kap * aR + omp * aI
                daI = -omp * aR - kap * aI - 2.0 * g * tot_x
                four_g_aR = 4.0 * g * aR
                for j in range(n_spins):
                    dsx[j] = -om0 * sy[j]
                    dsy[j] = om0 * sx[j] - four_g_aR * sz[j]
                    dsz[j] = four_g_aR * sy[j]
                aR += h * daR + sq * noise[idx, 0]
                aI += h * daI + sq * noise[idx, 1]
                idx += 1
                for j in range(n_spins):
                    sx[j] += h * dsx[j]
                    sy[j] += h * dsy[j]
                    sz[j] += h * dsz[j]
        ok = np.isfinite(aR) and np.isfinite(aI)
        if ok:
            for j in range(n_spins):
                if not (np.isfinite(sx[j]) and np.isfinite(sy[j]) and np.isfinite(sz[j])):
                    ok = False
                    break
        if not ok or abs(aR) > _OVERFLOW or abs(aI) > _OVERFLOW:
            return STATUS_DIVERGED, ns, ev_t[i]
        if is_sample[i + 1]:
            mx = 0.0; my = 0.0; mz = 0.0
            for j in range(n_spins):
                mx += sx[j]; my += sy[j]; mz += sz[j]
            out[ns, 0] = mx / n_spins; out[ns, 1] = my / n_spins; out[ns, 2] = mz / n_spins
            out[ns, 3] = aR; out[ns, 4] = aI
            ns += 1
    return STATUS_OK, ns, ev_t[ev_t.shape[0] - 1]
