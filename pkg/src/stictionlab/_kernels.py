"""Compiled integration kernels for the scaled slow-time system.

One Dormand-Prince 5(4) stepper specialized to the standard regularization
family, with optional variational (STM) integration and trajectory/threshold
recording.  The STM is renormalized on the fly (log scale tracked) so that
monodromy data survives the exponential contraction/expansion along slow
manifolds; STM components participate in the error norm, which keeps
variational output trustworthy where stability-limited steps would otherwise
let it drift.

Status codes: 0 ok, 1 step-size underflow, 2 escape (|y2| > cap),
3 step budget exhausted.
"""

import numpy as np
from numba import njit, prange

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0])
_A = np.zeros((7, 7))
_A[1, 0] = 0.2
_A[2, :2] = (3.0 / 40.0, 9.0 / 40.0)
_A[3, :3] = (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0)
_A[4, :4] = (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0)
_A[5, :5] = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0)
_A[6, :6] = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0)
_B = _A[6].copy()
_E = np.array([71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
               -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0])


@njit(cache=True, inline="always")
def _phi(s, pa, pb):
    return s / np.sqrt(s * s + 1.0) * (1.0 + pb / (pa + s * s))


@njit(cache=True, inline="always")
def _phi_d(s, pa, pb):
    q = s * s + 1.0
    p = pa + s * s
    return q**-1.5 * (1.0 + pb / p) + s / np.sqrt(q) * (-2.0 * pb * s / (p * p))


@njit(cache=True)
def _rhs(tau, u, out, n, th0, xi, ie2, mu_d, pa, pb, dirn):
    th = th0 + dirn * xi * tau
    out[0] = dirn * u[1]
    out[1] = dirn * (ie2 * (-u[0] - np.sin(th) - mu_d * _phi(u[1], pa, pb)))
    if n == 6:
        j21 = dirn * (-ie2)
        j22 = dirn * (-ie2 * mu_d * _phi_d(u[1], pa, pb))
        out[2] = dirn * u[4]
        out[3] = dirn * u[5]
        out[4] = j21 * u[2] + j22 * u[4]
        out[5] = j21 * u[3] + j22 * u[5]


@njit(cache=True)
def flow_scaled(x, y2, th0, xi, eps, mu_d, pa, pb, theta_span, rtol, atol,
                with_stm, y2_cap, rec, stride, cross_thr, cross_buf,
                max_steps=50_000_000, dirn=1.0):
    """Integrate the scaled slow system over a theta span.

    Returns (status, x, y2, m00, m01, m10, m11, log_scale, n_acc, n_rec,
    n_cross, max_abs_y2, stride_out).  The STM of the (x, y2) flow is
    M * exp(log_scale).  ``rec`` rows are (tau, x, y2) every ``stride``
    accepted steps (stride 0 disables; on overflow the buffer is compacted
    and the stride doubled).  ``cross_buf`` rows are (theta, code) for
    crossings of |y2| = cross_thr, code +-1 for entering/leaving |y2| >
    threshold, sign carried by y2's side; 0 disables.  ``dirn`` -1 runs the
    flow backward (theta decreasing from th0 by theta_span).
    """
    tau_end = theta_span / xi
    ie2 = 1.0 / (eps * eps)
    n = 6 if with_stm else 2
    u = np.zeros(6)
    u[0] = x
    u[1] = y2
    if with_stm:
        u[2] = 1.0
        u[5] = 1.0
    k = np.zeros((7, 6))
    tmp = np.zeros(6)
    unew = np.zeros(6)
    logscale = 0.0
    tau = 0.0
    h = min(1e-5, tau_end)
    nacc = 0
    nrej = 0
    nrec = 0
    ncross = 0
    maxabs = abs(y2)
    if stride > 0 and rec.shape[0] > 0:
        rec[0, 0] = 0.0
        rec[0, 1] = u[0]
        rec[0, 2] = u[1]
        nrec = 1
    above = abs(y2) > cross_thr if cross_thr > 0.0 else False
    _rhs(tau, u, k[0], n, th0, xi, ie2, mu_d, pa, pb, dirn)
    while tau < tau_end:
        if h < 1e-15 * tau_end:
            return (1, u[0], u[1], u[2], u[3], u[4], u[5], logscale,
                    nacc, nrec, ncross, maxabs, stride)
        if nacc + nrej > max_steps:
            return (3, u[0], u[1], u[2], u[3], u[4], u[5], logscale,
                    nacc, nrec, ncross, maxabs, stride)
        if tau + h > tau_end:
            h = tau_end - tau
        for s in range(1, 7):
            for i in range(n):
                acc = 0.0
                for j in range(s):
                    acc += _A[s, j] * k[j, i]
                tmp[i] = u[i] + h * acc
            _rhs(tau + _C[s] * h, tmp, k[s], n, th0, xi, ie2, mu_d, pa, pb, dirn)
        for i in range(n):
            acc = 0.0
            for j in range(7):
                acc += _B[j] * k[j, i]
            unew[i] = u[i] + h * acc
        errn = 0.0
        for i in range(n):
            sc = atol + rtol * max(abs(u[i]), abs(unew[i]))
            ee = 0.0
            for j in range(7):
                ee += _E[j] * k[j, i]
            e = h * ee / sc
            errn += e * e
        errn = np.sqrt(errn / n)
        if errn <= 1.0:
            tau_old = tau
            y2_old = u[1]
            tau += h
            for i in range(n):
                u[i] = unew[i]
            nacc += 1
            if abs(u[1]) > maxabs:
                maxabs = abs(u[1])
            if with_stm:
                mx = max(max(abs(u[2]), abs(u[3])), max(abs(u[4]), abs(u[5])))
                if mx > 1e90 or (mx > 0.0 and mx < 1e-90):
                    for i in range(2, 6):
                        u[i] /= mx
                    logscale += np.log(mx)
            if cross_thr > 0.0:
                now_above = abs(u[1]) > cross_thr
                if now_above != above and ncross < cross_buf.shape[0]:
                    # linear-in-tau estimate of the crossing angle
                    a0 = abs(y2_old) - cross_thr
                    a1 = abs(u[1]) - cross_thr
                    frac = a0 / (a0 - a1) if a0 != a1 else 0.5
                    th_c = th0 + dirn * xi * (tau_old + frac * h)
                    code = 1.0 if now_above else -1.0
                    if u[1] < 0.0:
                        code *= 2.0   # |code| 1: upper side, 2: lower side
                    cross_buf[ncross, 0] = th_c
                    cross_buf[ncross, 1] = code
                    ncross += 1
                above = now_above
            if stride > 0 and nacc % stride == 0:
                if nrec >= rec.shape[0]:
                    half = nrec // 2
                    for i in range(half):
                        rec[i, 0] = rec[2 * i, 0]
                        rec[i, 1] = rec[2 * i, 1]
                        rec[i, 2] = rec[2 * i, 2]
                    nrec = half
                    stride *= 2
                if nacc % stride == 0 and nrec < rec.shape[0]:
                    rec[nrec, 0] = tau
                    rec[nrec, 1] = u[0]
                    rec[nrec, 2] = u[1]
                    nrec += 1
            if abs(u[1]) > y2_cap:
                return (2, u[0], u[1], u[2], u[3], u[4], u[5], logscale,
                        nacc, nrec, ncross, maxabs, stride)
            _rhs(tau, u, k[0], n, th0, xi, ie2, mu_d, pa, pb, dirn)
        else:
            nrej += 1
        if errn > 1e-12:
            fac = 0.9 * errn**-0.2
        else:
            fac = 5.0
        if fac > 5.0:
            fac = 5.0
        elif fac < 0.2:
            fac = 0.2
        h *= fac
    return (0, u[0], u[1], u[2], u[3], u[4], u[5], logscale,
            nacc, nrec, ncross, maxabs, stride)


_DUMMY_REC = np.empty((0, 3))
_DUMMY_CROSS = np.empty((0, 2))


@njit(cache=True)
def half_map_state(x, y2, th0, xi, eps, mu_d, pa, pb, rtol, atol, y2_cap):
    """Half map without variational data: flow by pi in theta, then reflect."""
    out = flow_scaled(x, y2, th0, xi, eps, mu_d, pa, pb, np.pi, rtol, atol,
                      False, y2_cap, _DUMMY_REC, 0, 0.0, _DUMMY_CROSS)
    return out[0], -out[1], -out[2]


@njit(cache=True, parallel=True)
def escape_times(xs, y2s, th0, xi, eps, mu_d, pa, pb, rtol, atol, y2_cap,
                 window_lo, window_hi, max_iter):
    """Iterate the half map on a batch of points until y2 leaves a window.

    Returns (counts, final_y2); count = max_iter means no escape within the
    budget, and a negative count flags an integration failure.
    """
    npts = xs.shape[0]
    counts = np.empty(npts, dtype=np.int64)
    finals = np.empty(npts)
    for i in prange(npts):
        x = xs[i]
        y2 = y2s[i]
        cnt = max_iter
        for it in range(max_iter):
            st, x, y2 = half_map_state(x, y2, th0, xi, eps, mu_d, pa, pb,
                                       rtol, atol, y2_cap)
            if st == 2:
                cnt = it + 1
                break
            if st != 0:
                cnt = -1
                break
            if y2 < window_lo or y2 > window_hi:
                cnt = it + 1
                break
        counts[i] = cnt
        finals[i] = y2
    return counts, finals
