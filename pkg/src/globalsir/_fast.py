"""numba-compiled Dormand-Prince 5(4) driver for the epidemic right-hand
sides.

The epidemic systems become mildly stiff once the susceptible pool is
depleted (the mass-action Jacobian entry -beta*I caps the stable explicit
step), so a 212-day trajectory costs thousands of steps.  Fitting needs
thousands of such trajectories; this kernel brings one trajectory to about
a millisecond.  The stepping logic mirrors ``ode._integrate_dp45`` exactly
and is equivalence-tested against it.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .ode import (
    DP_B,
    DP_C,
    DP_E,
    DP_P,
    MAX_FACTOR,
    MIN_FACTOR,
    PI_ALPHA,
    PI_BETA,
    SAFETY,
    IntegratorStats,
    NonFiniteState,
    StepLimitExceeded,
)

# Parameter vector layout shared with models/fitting:
# [beta, gamma, lambda, a1, b1, c1, a2, b2, c2, p1, p2]
N_PARAMS = 11

STATUS_OK = 0
STATUS_STEP_LIMIT = 1
STATUS_NON_FINITE = 2

# Stage coefficients padded to a rectangular matrix for the compiled loop.
_A = np.zeros((6, 6))
_A[1, :1] = [1 / 5]
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_B = DP_B.copy()
_C = DP_C.copy()
_E = DP_E.copy()
_P = DP_P.copy()


@njit(cache=True, inline="always")
def _rhs(t, y, p, out):
    m = p[0] * y[0] * y[1]
    g = p[3] * p[4] * math.cos(p[4] * t + p[5]) + p[6] * p[7] * math.cos(
        p[7] * t + p[8]
    )
    out[0] = -m + p[2]
    out[1] = m - p[1] * y[1] + g
    out[2] = p[1] * y[1] + 2.0 * p[9] * t + p[10]


@njit(cache=True)
def _dp45_epi(p, y0, t0, t1, ts, rtol, atol, max_steps):
    n_out = ts.shape[0]
    out = np.empty((n_out, 3))
    y = y0.copy()
    y_new = np.empty(3)
    ys = np.empty(3)
    K = np.empty((7, 3))

    t = t0
    _rhs(t, y, p, K[0])
    for j in range(3):
        if not np.isfinite(K[0, j]):
            return STATUS_NON_FINITE, t0, out, 0, 0, 0.0

    # Initial step size (same heuristic as the reference driver).
    d0 = 0.0
    d1 = 0.0
    for j in range(3):
        sc = atol + rtol * abs(y[j])
        d0 += (y[j] / sc) ** 2
        d1 += (K[0, j] / sc) ** 2
    d0 = math.sqrt(d0 / 3.0)
    d1 = math.sqrt(d1 / 3.0)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    for j in range(3):
        ys[j] = y[j] + h0 * K[0, j]
    _rhs(t + h0, ys, p, y_new)
    finite_f1 = True
    for j in range(3):
        if not np.isfinite(y_new[j]):
            finite_f1 = False
    if not finite_f1:
        h = min(h0 * 1e-3, t1 - t0)
    else:
        d2 = 0.0
        for j in range(3):
            sc = atol + rtol * abs(y[j])
            d2 += ((y_new[j] - K[0, j]) / sc) ** 2
        d2 = math.sqrt(d2 / 3.0) / h0
        dm = max(d1, d2)
        if dm <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / dm) ** 0.2
        h = min(100 * h0, h1, t1 - t0)

    next_sample = 0
    while next_sample < n_out and ts[next_sample] == t0:
        for j in range(3):
            out[next_sample, j] = y[j]
        next_sample += 1

    n_steps = 0
    n_rejected = 0
    max_err = 0.0
    err_prev = 1.0

    while t < t1:
        if n_steps + n_rejected >= max_steps:
            return STATUS_STEP_LIMIT, t, out, n_steps, n_rejected, max_err
        if t1 - t < h:
            h = t1 - t
        if t + h == t:
            return STATUS_NON_FINITE, t, out, n_steps, n_rejected, max_err

        for s in range(1, 6):
            for j in range(3):
                acc = 0.0
                for i in range(s):
                    acc += _A[s, i] * K[i, j]
                ys[j] = y[j] + h * acc
            _rhs(t + _C[s] * h, ys, p, K[s])
        for j in range(3):
            acc = 0.0
            for i in range(6):
                acc += _B[i] * K[i, j]
            y_new[j] = y[j] + h * acc
        _rhs(t + h, y_new, p, K[6])

        err = 0.0
        finite = True
        for j in range(3):
            if not np.isfinite(y_new[j]):
                finite = False
                break
            ev = 0.0
            for i in range(7):
                ev += _E[i] * K[i, j]
            ev *= h
            ay = abs(y[j])
            ayn = abs(y_new[j])
            sc = atol + rtol * (ay if ay > ayn else ayn)
            err += (ev / sc) ** 2
        if finite:
            err = math.sqrt(err / 3.0)
        if not (finite and np.isfinite(err)):
            n_rejected += 1
            h *= MIN_FACTOR
            continue

        if err <= 1.0:
            t_new = t + h
            while next_sample < n_out and ts[next_sample] <= t_new:
                s_t = ts[next_sample]
                if s_t == t_new:
                    for j in range(3):
                        out[next_sample, j] = y_new[j]
                else:
                    theta = (s_t - t) / h
                    th2 = theta * theta
                    for j in range(3):
                        acc = 0.0
                        for i in range(7):
                            bi = (
                                _P[i, 0] * theta
                                + _P[i, 1] * th2
                                + _P[i, 2] * th2 * theta
                                + _P[i, 3] * th2 * th2
                            )
                            acc += bi * K[i, j]
                        out[next_sample, j] = y[j] + h * acc
                next_sample += 1
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err ** (-PI_ALPHA) * err_prev**PI_BETA
            if factor > MAX_FACTOR:
                factor = MAX_FACTOR
            elif factor < MIN_FACTOR:
                factor = MIN_FACTOR
            err_prev = err if err > 1e-4 else 1e-4
            if err > max_err:
                max_err = err
            t = t_new
            for j in range(3):
                y[j] = y_new[j]
                K[0, j] = K[6, j]
            n_steps += 1
            h *= factor
        else:
            n_rejected += 1
            factor = SAFETY * err**-0.2
            if factor < MIN_FACTOR:
                factor = MIN_FACTOR
            elif factor > 1.0:
                factor = 1.0
            h *= factor

    return STATUS_OK, t, out, n_steps, n_rejected, max_err


def solve_epi(params_vec, y0, t0, t1, sample_times, rtol, atol, max_steps):
    """Raw kernel call: returns (status, last_good_t, states, stats)."""
    status, last_t, out, n_steps, n_rejected, max_err = _dp45_epi(
        np.asarray(params_vec, dtype=float),
        np.asarray(y0, dtype=float),
        float(t0),
        float(t1),
        np.asarray(sample_times, dtype=float),
        float(rtol),
        float(atol),
        int(max_steps),
    )
    stats = IntegratorStats(
        n_steps=n_steps, n_rejected=n_rejected, max_error_estimate=max_err
    )
    return status, last_t, out, stats


def integrate_compiled(compiled, y0, t0, t1, sample_times, config):
    """Adapter used by ``ode.integrate`` for systems carrying a kernel tag."""
    kind, params_vec = compiled
    if kind != "epi":
        raise ValueError(f"unknown compiled kernel: {kind!r}")
    status, last_t, out, stats = solve_epi(
        params_vec, y0, t0, t1, sample_times, config.rtol, config.atol, config.max_steps
    )
    if status == STATUS_STEP_LIMIT:
        raise StepLimitExceeded(
            f"max_steps={config.max_steps} reached at t={last_t:.6g}", last_t
        )
    if status == STATUS_NON_FINITE:
        raise NonFiniteState("non-finite state (blow-up or bad parameters)", last_t)
    return out, stats


def warm_up():
    """Trigger JIT compilation once (cached on disk afterwards)."""
    p = np.zeros(N_PARAMS)
    p[0], p[1] = 1e-4, 0.1
    solve_epi(p, np.array([1.0, 1.0, 0.0]), 0.0, 1.0, np.array([0.0, 1.0]), 1e-6, 1e-8, 10_000)
