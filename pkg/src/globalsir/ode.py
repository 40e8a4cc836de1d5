"""Initial-value-problem integrators: fixed-step classical RK4 and adaptive
Dormand-Prince 5(4) with dense output.

Both integrators are pure functions of their inputs: no global state, no
randomness, bit-identical results on identical calls.  Systems that carry a
compiled right-hand side (see ``models``) are dispatched to a numba kernel
with the same stepping logic; everything else runs through the generic
Python driver below.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class IntegrationError(Exception):
    """Base class for integration failures; carries the last good time."""

    def __init__(self, message: str, last_good_time: float):
        super().__init__(message)
        self.last_good_time = last_good_time


class StepLimitExceeded(IntegrationError):
    """max_steps was reached before the end of the integration interval."""


class NonFiniteState(IntegrationError):
    """NaN/Inf produced: the solution blew up or the parameters are bad."""


class Method(str, enum.Enum):
    RK4_FIXED = "rk4_fixed"
    RK45_ADAPTIVE = "rk45_adaptive"


@dataclass(frozen=True)
class IntegratorConfig:
    method: Method = Method.RK45_ADAPTIVE
    step: float = 0.1          # days, fixed mode only
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 500_000

    def __post_init__(self):
        if not (self.step > 0):
            raise ValueError("step must be positive")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")


@dataclass(frozen=True)
class OdeSystem:
    """dy/dt = F(t, y) for a state vector y of fixed dimension.

    ``rhs`` must be deterministic and defined for every t in the integration
    interval.  ``compiled`` optionally names a numba kernel plus its parameter
    vector; when present, adaptive integration runs through the compiled
    driver (numerically equivalent, much faster).
    """

    dimension: int
    rhs: Callable[[float, np.ndarray], np.ndarray]
    compiled: Optional[tuple[str, np.ndarray]] = None


@dataclass(frozen=True)
class IntegratorStats:
    n_steps: int
    n_rejected: int
    max_error_estimate: float


@dataclass(frozen=True)
class Trajectory:
    """Solution sampled at the requested times (one state row per time)."""

    times: np.ndarray
    states: np.ndarray
    stats: IntegratorStats

    def __post_init__(self):
        if len(self.times) != self.states.shape[0]:
            raise ValueError("times and states must have matching length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory states must be finite")


# Dormand-Prince 5(4) tableau (the pair behind the usual "ode45" solvers).
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
)
DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
DP_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# Quartic dense-output interpolant of the pair (Shampine's coefficients).
DP_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

# Step controller: PI rule with conventional safety and growth clamps.
SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
PI_ALPHA = 0.7 / 5.0
PI_BETA = 0.4 / 5.0


def _validate_inputs(system, y0, t_span, sample_times):
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t0 < t1:
        raise ValueError("t_span must satisfy t0 < t1")
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (system.dimension,):
        raise ValueError(f"y0 must have shape ({system.dimension},)")
    if not np.all(np.isfinite(y0)):
        raise ValueError("y0 must be finite")
    ts = np.asarray(sample_times, dtype=float)
    if ts.size == 0:
        raise ValueError("sample_times must be non-empty")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("sample_times must be strictly increasing")
    if ts[0] < t0 or ts[-1] > t1:
        raise ValueError("sample_times must lie within t_span")
    return y0, t0, t1, ts


def integrate(
    system: OdeSystem,
    y0: Sequence[float],
    t_span: Sequence[float],
    sample_times: Sequence[float],
    config: IntegratorConfig = IntegratorConfig(),
) -> Trajectory:
    """Integrate ``system`` over ``t_span`` and sample at ``sample_times``.

    Raises StepLimitExceeded or NonFiniteState on failure; both carry the
    last time at which the state was still good.
    """
    y0, t0, t1, ts = _validate_inputs(system, y0, t_span, sample_times)
    if config.method == Method.RK4_FIXED:
        return _integrate_rk4(system, y0, t0, t1, ts, config)
    if system.compiled is not None:
        from . import _fast

        states, stats = _fast.integrate_compiled(
            system.compiled, y0, t0, t1, ts, config
        )
        return Trajectory(times=ts.copy(), states=states, stats=stats)
    return _integrate_dp45(system, y0, t0, t1, ts, config)


def _integrate_rk4(system, y0, t0, t1, ts, config):
    # Regular grid of ceil((t1-t0)/step) steps, subdivided at sample times so
    # every sample is hit by a genuine RK4 step endpoint (the final partial
    # step shrinks rather than overshooting t1).
    n_base = max(1, math.ceil((t1 - t0) / config.step))
    grid = t0 + config.step * np.arange(n_base, dtype=float)
    grid = np.union1d(np.append(grid, t1), ts)
    grid = grid[(grid >= t0) & (grid <= t1)]
    if len(grid) - 1 > config.max_steps:
        raise StepLimitExceeded("fixed-step grid exceeds max_steps", t0)

    rhs = system.rhs
    sample_idx = np.searchsorted(grid, ts)
    out = np.empty((len(ts), system.dimension))
    is_sample = np.zeros(len(grid), dtype=bool)
    is_sample[sample_idx] = True
    sample_pos = {int(i): int(j) for j, i in enumerate(sample_idx)}

    y = y0.copy()
    if is_sample[0]:
        out[sample_pos[0]] = y
    for i in range(len(grid) - 1):
        t = grid[i]
        h = grid[i + 1] - grid[i]
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + (h / 2) * k1)
        k3 = rhs(t + h / 2, y + (h / 2) * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState("non-finite state in RK4 step", float(t))
        if is_sample[i + 1]:
            out[sample_pos[i + 1]] = y
    stats = IntegratorStats(
        n_steps=len(grid) - 1, n_rejected=0, max_error_estimate=0.0
    )
    return Trajectory(times=ts.copy(), states=out, stats=stats)


def _initial_step(rhs, t0, t1, y0, f0, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = rhs(t0 + h0, y1)
    if not np.all(np.isfinite(f1)):
        return min(h0 * 1e-3, t1 - t0)
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t1 - t0)


def _rms(v):
    return float(np.sqrt(np.mean(v * v)))


def _integrate_dp45(system, y0, t0, t1, ts, config):
    rhs = system.rhs
    rtol, atol = config.rtol, config.atol
    dim = system.dimension

    t = t0
    y = y0.copy()
    k1 = np.asarray(rhs(t, y), dtype=float)
    if not np.all(np.isfinite(k1)):
        raise NonFiniteState("non-finite derivative at initial state", t0)
    h = _initial_step(rhs, t0, t1, y, k1, rtol, atol)

    out = np.empty((len(ts), dim))
    next_sample = 0
    while next_sample < len(ts) and ts[next_sample] == t0:
        out[next_sample] = y
        next_sample += 1

    K = np.empty((7, dim))
    n_steps = 0
    n_rejected = 0
    max_err = 0.0
    err_prev = 1.0

    while t < t1:
        if n_steps + n_rejected >= config.max_steps:
            raise StepLimitExceeded(
                f"max_steps={config.max_steps} reached at t={t:.6g}", t
            )
        h = min(h, t1 - t)
        if t + h == t:
            raise NonFiniteState("step size underflow (blow-up suspected)", t)

        K[0] = k1
        for s in range(1, 6):
            ys = y + h * (DP_A[s - 1] @ K[:s])
            K[s] = rhs(t + DP_C[s] * h, ys)
        y_new = y + h * (DP_B[:6] @ K[:6])
        K[6] = rhs(t + h, y_new)

        err_vec = h * (DP_E @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        with np.errstate(invalid="ignore", over="ignore"):
            err = _rms(err_vec / scale)

        if not (math.isfinite(err) and np.all(np.isfinite(y_new))):
            n_rejected += 1
            h *= MIN_FACTOR
            continue

        if err <= 1.0:
            # Dense output: quartic interpolant over the accepted step.
            t_new = t + h
            while next_sample < len(ts) and ts[next_sample] <= t_new:
                s_t = ts[next_sample]
                if s_t == t_new:
                    out[next_sample] = y_new
                else:
                    theta = (s_t - t) / h
                    powers = np.array([theta, theta**2, theta**3, theta**4])
                    out[next_sample] = y + h * ((DP_P @ powers) @ K)
                next_sample += 1
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err ** (-PI_ALPHA) * err_prev**PI_BETA
            factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
            err_prev = max(err, 1e-4)
            max_err = max(max_err, err)
            t = t_new
            y = y_new
            k1 = K[6]  # FSAL
            n_steps += 1
            h *= factor
        else:
            n_rejected += 1
            factor = max(MIN_FACTOR, SAFETY * err**-0.2)
            h *= min(1.0, factor)

    stats = IntegratorStats(
        n_steps=n_steps, n_rejected=n_rejected, max_error_estimate=max_err
    )
    return Trajectory(times=ts.copy(), states=out, stats=stats)
