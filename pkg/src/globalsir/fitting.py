"""Two-step parameter estimation for the forced SIR model.

Step 1 fits the local rates (beta, gamma) with every forcing term zeroed,
by box-constrained minimization of the pooled sum of squared errors.
Step 2 explains the step-1 state residuals with the forcing functions:
the susceptible residual's linear trend initializes lambda (f integrates
to lambda*t), the infected residual is fit with the two-term sinusoid
whose derivative is g, the recovered residual with the quadratic whose
derivative is h; a final joint polish then re-minimizes the full-model
SSE over all eleven parameters from that start.

All randomness (multistart draws) flows from one seeded generator, so a
fixed seed makes the whole fit bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np
from scipy.optimize import least_squares, minimize
from scipy.stats import t as student_t

from . import _fast
from .models import (
    PARAM_NAMES,
    ExtendedParams,
    GlobalEffects,
    SirParams,
    params_from_vector,
    params_to_dict,
    params_to_vector,
)
from .pipeline import TimeSeriesTriple, triple_fingerprint

#: SSE reported when integration fails (blow-up while probing parameters).
#: Large enough to dominate any finite in-bounds model mismatch.
INTEGRATION_PENALTY = 1e18

_COMPARTMENTS = ("S", "I", "R")


class FittingError(Exception):
    pass


class SinusoidFitDegenerate(FittingError):
    """A fitted frequency collapsed below 1e-6 rad/day on a residual that
    is not oscillatory; the sinusoid decomposition does not apply."""


# Fixed parameter boxes; amplitude boxes are data-dependent (see step 2).
_BASE_BOUNDS = {
    "beta": (0.0, 2.0),
    "gamma": (0.0, 1.0),
    "lambda": (-100.0, 100.0),
    "b1": (1e-4, math.pi),
    "c1": (-math.pi, math.pi),
    "b2": (1e-4, math.pi),
    "c2": (-math.pi, math.pi),
    "p1": (-10.0, 10.0),
    "p2": (-1000.0, 1000.0),
}


@dataclass
class FitConfig:
    beta_init: float = 0.5
    gamma_init: float = 0.13
    y0: tuple = (12615.0, 1.0, 300.0)
    weights: tuple = (1.0, 1.0, 1.0)
    optimizer: str = "nelder-mead"  # or "projected-gradient"
    obj_tol: float = 1e-8
    max_evals: int = 2000
    multistart_count: int = 3
    seed: int = 0
    gradient_polish: bool = True
    amplitude_bound_factor: float = 10.0
    bounds: dict = field(default_factory=dict)  # per-parameter overrides
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 250_000

    def __post_init__(self):
        if self.optimizer not in ("nelder-mead", "projected-gradient"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (self.obj_tol > 0):
            raise ValueError("obj_tol must be positive")
        if self.multistart_count < 1 or self.max_evals < 1:
            raise ValueError("multistart_count and max_evals must be >= 1")
        blo, bhi = self.bound("beta")
        glo, ghi = self.bound("gamma")
        if not (blo <= self.beta_init <= bhi and glo <= self.gamma_init <= ghi):
            raise ValueError("initial values must lie inside their bounds")

    def bound(self, name):
        if name in self.bounds:
            lo, hi = self.bounds[name]
            return float(lo), float(hi)
        return _BASE_BOUNDS[name]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["y0"] = list(self.y0)
        d["weights"] = list(self.weights)
        return d


@dataclass(frozen=True)
class ResidualSeries:
    """Per-compartment data - model at the observation times."""

    times: np.ndarray
    susceptible: np.ndarray
    infected: np.ndarray
    recovered: np.ndarray

    def as_dict(self):
        return {
            "S": self.susceptible,
            "I": self.infected,
            "R": self.recovered,
        }


@dataclass
class FitResult:
    model: str
    params: ExtendedParams
    free_names: tuple
    ci95: dict
    ci_flags: list
    sse_total: float
    residuals: ResidualSeries
    objective_trace: list
    converged: bool
    n_obs: int
    k_params: int
    data_fingerprint: dict
    config: dict

    def model_states(self, data: TimeSeriesTriple) -> np.ndarray:
        """Fitted trajectory (3, n_days), reconstructed as data - residual."""
        return np.vstack(
            [
                np.asarray(data.susceptible) - self.residuals.susceptible,
                np.asarray(data.infected) - self.residuals.infected,
                np.asarray(data.recovered) - self.residuals.recovered,
            ]
        )

    def to_dict(self) -> dict:
        def ci_pair(pair):
            lo, hi = pair
            return [None if not math.isfinite(lo) else float(lo),
                    None if not math.isfinite(hi) else float(hi)]

        return {
            "model": self.model,
            "converged": self.converged,
            "params": params_to_dict(self.params),
            "free_params": list(self.free_names),
            "ci95": {k: ci_pair(v) for k, v in self.ci95.items()},
            "ci_flags": list(self.ci_flags),
            "sse_total": float(self.sse_total),
            "n_obs": self.n_obs,
            "k_params": self.k_params,
            "residuals": {
                "S": [float(v) for v in self.residuals.susceptible],
                "I": [float(v) for v in self.residuals.infected],
                "R": [float(v) for v in self.residuals.recovered],
            },
            "objective_trace": [float(v) for v in self.objective_trace],
            "data_fingerprint": dict(self.data_fingerprint),
            "config": dict(self.config),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        res = d["residuals"]
        times = np.arange(len(res["S"]), dtype=float)

        def ci_pair(pair):
            lo, hi = pair
            return (-math.inf if lo is None else float(lo),
                    math.inf if hi is None else float(hi))

        vec = [float(d["params"][name]) for name in PARAM_NAMES]
        return cls(
            model=d["model"],
            params=params_from_vector(vec),
            free_names=tuple(d["free_params"]),
            ci95={k: ci_pair(v) for k, v in d["ci95"].items()},
            ci_flags=list(d["ci_flags"]),
            sse_total=float(d["sse_total"]),
            residuals=ResidualSeries(
                times=times,
                susceptible=np.asarray(res["S"], dtype=float),
                infected=np.asarray(res["I"], dtype=float),
                recovered=np.asarray(res["R"], dtype=float),
            ),
            objective_trace=[float(v) for v in d["objective_trace"]],
            converged=bool(d["converged"]),
            n_obs=int(d["n_obs"]),
            k_params=int(d["k_params"]),
            data_fingerprint=dict(d["data_fingerprint"]),
            config=dict(d.get("config", {})),
        )


def simulate_states(theta, t_grid, y0, rtol=1e-6, atol=1e-8,
                    max_steps=500_000) -> Optional[np.ndarray]:
    """Model trajectory (3, n) at the data's day grid, or None on failure."""
    theta = np.asarray(theta, dtype=float)
    status, _, out, _ = _fast.solve_epi(
        theta, y0, t_grid[0], t_grid[-1], t_grid, rtol, atol, max_steps
    )
    if status != _fast.STATUS_OK or not np.all(np.isfinite(out)):
        return None
    return out.T


def _stack_data(data: TimeSeriesTriple) -> np.ndarray:
    return np.vstack([data.susceptible, data.infected, data.recovered])


def _weighted_residual(theta, data_mat, t_grid, y0, sqrt_w, cfg) -> np.ndarray:
    states = simulate_states(theta, t_grid, y0, cfg.rtol, cfg.atol, cfg.max_steps)
    if states is None:
        n = data_mat.size
        return np.full(n, math.sqrt(INTEGRATION_PENALTY / n))
    return (sqrt_w[:, None] * (states - data_mat)).ravel()


def sse_objective(params, data: TimeSeriesTriple, y0=None, weights=(1.0, 1.0, 1.0),
                  config: Optional[FitConfig] = None) -> float:
    """Pooled weighted SSE of the forced model against the data.

    Integration failure maps to ``INTEGRATION_PENALTY`` instead of raising,
    so optimizers can probe bad parameter regions safely.
    """
    cfg = config or FitConfig()
    if y0 is None:
        y0 = cfg.y0
    theta = params_to_vector(params) if isinstance(params, ExtendedParams) \
        else np.asarray(params, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    sqrt_w = np.sqrt(np.asarray(weights, dtype=float))
    r = _weighted_residual(theta, _stack_data(data), data.day_numbers(),
                           y0, sqrt_w, cfg)
    sse = float(r @ r)
    return min(sse, INTEGRATION_PENALTY)


class _Tracer:
    """Wraps an objective; records the running best (nonincreasing trace)."""

    def __init__(self, fun):
        self.fun = fun
        self.trace = []
        self.n_evals = 0

    def __call__(self, x):
        v = self.fun(x)
        self.n_evals += 1
        if not self.trace or v < self.trace[-1]:
            self.trace.append(float(v))
        return v


class _BoxTransform:
    """Map parameters to unit-box coordinates for the optimizers.

    Rate parameters (log_mask) use a logarithmic map so that basins many
    orders of magnitude below the box width stay resolvable: a mixing rate
    of 1e-6 on a box of width 2 is invisible to any linear scaling.  The
    log floor (1e-10 of the upper bound) is an effective zero.
    """

    def __init__(self, lo, hi, log_mask=None):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if log_mask is None:
            log_mask = np.zeros(len(self.lo), dtype=bool)
        self.log = np.asarray(log_mask, dtype=bool) & (self.hi > 0)
        self.floor = np.where(
            self.log, np.maximum(self.lo, 1e-10 * self.hi), self.lo
        )
        width = self.hi - self.lo
        self.width = np.where(width > 0, width, 1.0)
        self.fixed = width <= 0
        self.log_span = np.ones(len(self.lo))
        self.log_span[self.log] = np.log(
            self.hi[self.log] / self.floor[self.log]
        )

    def to_x(self, u):
        u = np.clip(u, 0.0, 1.0)
        x_lin = self.lo + u * self.width
        x_log = self.floor * np.exp(u * self.log_span)
        x = np.where(self.log, x_log, x_lin)
        return np.where(self.fixed, self.lo, np.clip(x, self.lo, self.hi))

    def to_u(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.floor, self.hi)
        u_lin = (x - self.lo) / self.width
        ratio = np.maximum(np.where(self.log, x, 1.0)
                           / np.where(self.log, self.floor, 1.0), 1e-300)
        u_log = np.log(ratio) / self.log_span
        u = np.where(self.log, u_log, u_lin)
        return np.clip(np.where(self.fixed, 0.0, u), 0.0, 1.0)


def _minimize_box(fun, x0, transform, config, max_evals):
    """Scalar minimization in unit-box coordinates with bound projection."""

    def f_unit(u):
        return fun(transform.to_x(u))

    u0 = transform.to_u(x0)
    f0 = fun(transform.to_x(u0))
    if config.optimizer == "projected-gradient":
        res = minimize(
            f_unit, u0, method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * len(u0),
            options=dict(maxfun=max_evals, ftol=config.obj_tol, gtol=1e-12),
        )
    else:
        fatol = config.obj_tol * (1.0 + (abs(f0) if f0 < INTEGRATION_PENALTY else 0.0))
        res = minimize(
            f_unit, u0, method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * len(u0),
            options=dict(
                maxfev=max_evals, fatol=fatol, xatol=1e-4,
                adaptive=len(u0) > 4,
            ),
        )
    x = transform.to_x(res.x)
    f_res = float(res.fun)
    if f_res <= f0:
        return x, f_res, bool(res.success)
    return transform.to_x(u0), float(f0), bool(res.success)


def _trf_refine(res_fun, x0, transform, max_nfev):
    """Bounded least-squares refinement in unit coordinates."""
    u_hi = np.where(transform.fixed, 1e-12, 1.0)  # trf needs lo < hi

    def r_unit(u):
        return res_fun(transform.to_x(u))

    u0 = np.minimum(transform.to_u(x0), u_hi)
    try:
        res = least_squares(
            r_unit, u0, bounds=(np.zeros(len(u0)), u_hi), method="trf",
            diff_step=1e-6, max_nfev=max_nfev,
        )
    except Exception:
        return np.asarray(x0, dtype=float), math.inf, False
    return transform.to_x(res.x), float(2.0 * res.cost), res.status > 0


def _residuals_at(theta, data, y0, cfg) -> ResidualSeries:
    t_grid = data.day_numbers()
    states = simulate_states(theta, t_grid, np.asarray(y0, dtype=float),
                             cfg.rtol, cfg.atol, cfg.max_steps)
    if states is None:
        raise FittingError("model not integrable at the fitted parameters")
    data_mat = _stack_data(data)
    diff = data_mat - states
    return ResidualSeries(times=t_grid, susceptible=diff[0],
                          infected=diff[1], recovered=diff[2])


def _multistart_draws(count, lo, hi, rng):
    """Seeded restart points: alternate uniform draws with log-uniform ones
    so basins many orders of magnitude below the box width (tiny mixing
    rates on large populations) are reachable."""
    draws = []
    for j in range(count):
        u = rng.random(len(lo))
        uniform = lo + (hi - lo) * u
        floor = np.maximum(lo, 1e-8)
        log_uniform = floor * (hi / floor) ** u
        draws.append(np.clip(log_uniform if j % 2 == 0 else uniform, lo, hi))
    return draws


def _select_integrable(candidates, theta_of, data, y0, cfg):
    """Pick the best candidate whose trajectory actually integrates."""
    for f, x, ok in sorted(candidates, key=lambda c: c[0]):
        try:
            residuals = _residuals_at(theta_of(x), data, y0, cfg)
        except FittingError:
            continue
        return x, float(f), ok, residuals
    raise FittingError(
        "no optimizer candidate produced an integrable model; widen "
        "max_steps or revisit the bounds"
    )


def fit_step1(data: TimeSeriesTriple, config: Optional[FitConfig] = None) -> FitResult:
    """Estimate (beta, gamma) with all forcing zeroed; best of multistarts."""
    cfg = config or FitConfig()
    if len(data) < 30:
        raise ValueError("need at least 30 days of data for step 1")

    t_grid = data.day_numbers()
    y0 = np.asarray(cfg.y0, dtype=float)
    sqrt_w = np.sqrt(np.asarray(cfg.weights, dtype=float))
    data_mat = _stack_data(data)

    def theta_full(bg):
        theta = np.zeros(len(PARAM_NAMES))
        theta[0], theta[1] = bg
        # placeholder frequencies keep the vector valid; amplitudes are zero
        theta[4], theta[7] = 1e-4, 1e-4
        return theta

    def objective(bg):
        r = _weighted_residual(theta_full(bg), data_mat, t_grid, y0, sqrt_w, cfg)
        return min(float(r @ r), INTEGRATION_PENALTY)

    tracer = _Tracer(objective)
    lo = np.array([cfg.bound("beta")[0], cfg.bound("gamma")[0]])
    hi = np.array([cfg.bound("beta")[1], cfg.bound("gamma")[1]])
    transform = _BoxTransform(lo, hi, log_mask=[True, True])
    starts = [np.array([cfg.beta_init, cfg.gamma_init])]
    starts += _multistart_draws(cfg.multistart_count - 1, lo, hi,
                                np.random.default_rng(cfg.seed))

    def res_fun(bg):
        return _weighted_residual(theta_full(bg), data_mat, t_grid, y0,
                                  sqrt_w, cfg)

    candidates = []
    for x0 in starts:
        x, f, ok = _minimize_box(tracer, x0, transform, cfg, cfg.max_evals)
        if cfg.gradient_polish:
            x2, f2, ok2 = _trf_refine(res_fun, x, transform, 400)
            if f2 < f:
                x, f, ok = x2, f2, ok or ok2
        candidates.append((f, x, ok))

    bg, sse, converged, residuals = _select_integrable(
        candidates, theta_full, data, y0, cfg
    )
    theta = theta_full(bg)
    fp = triple_fingerprint(data)
    n_obs = 3 * len(data)

    def ci_res_fun(bg_vec):
        return _weighted_residual(theta_full(bg_vec), data_mat, t_grid, y0,
                                  sqrt_w, cfg)

    ci, flags = linearized_ci(ci_res_fun, np.asarray(bg, dtype=float),
                              ("beta", "gamma"), n_obs)
    return FitResult(
        model="standard",
        params=params_from_vector(theta),
        free_names=("beta", "gamma"),
        ci95=ci,
        ci_flags=flags,
        sse_total=float(sse),
        residuals=residuals,
        objective_trace=tracer.trace,
        converged=converged,
        n_obs=n_obs,
        k_params=2,
        data_fingerprint=fp,
        config=cfg.to_dict(),
    )


def periodogram_peaks(values, n_peaks=2, min_freq=1e-4, max_freq=math.pi):
    """Angular frequencies (rad/day) of the dominant periodogram peaks of a
    daily-sampled series; ties break toward the lower frequency."""
    y = np.asarray(values, dtype=float)
    n = len(y)
    spec = np.abs(np.fft.rfft(y * np.hanning(n), 8 * n)) ** 2
    freqs = 2.0 * math.pi * np.fft.rfftfreq(8 * n, d=1.0)
    order = []
    for i in range(1, len(spec) - 1):
        if spec[i] >= spec[i - 1] and spec[i] > spec[i + 1]:
            if min_freq <= freqs[i] <= max_freq:
                order.append((-spec[i], freqs[i]))
    order.sort()
    fundamental = 2.0 * math.pi / n
    peaks = []
    for _, f in order:
        if all(abs(f - g) > fundamental for g in peaks):
            peaks.append(f)
        if len(peaks) == n_peaks:
            break
    while len(peaks) < n_peaks:
        base = peaks[0] if peaks else max(min_freq, fundamental)
        peaks.append(min(max_freq, base * (len(peaks) + 1.0)))
    return sorted(peaks)


def fit_sinusoid_sum(t, y, n_terms=2, detrend=True, max_nfev=4000):
    """Fit y ~ sum_k a_k sin(b_k t + c_k) (+ nuisance offset/slope).

    The nuisance line absorbs non-oscillatory drift so the sinusoids model
    only the oscillation; it is estimated and discarded.  Returns a list of
    (a, b, c) with a >= 0, b ascending, c in (-pi, pi].  Raises
    SinusoidFitDegenerate when a fitted frequency collapses below 1e-6
    rad/day while carrying real amplitude (non-oscillatory residual).
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    design = [np.ones_like(t)] + ([t] if detrend else [])
    coef, *_ = np.linalg.lstsq(np.column_stack(design), y, rcond=None)
    work = y - np.column_stack(design) @ coef

    scale = float(np.max(np.abs(work))) if len(work) else 0.0
    if scale <= 1e-12 * max(1.0, float(np.max(np.abs(y))) if len(y) else 1.0):
        return [(0.0, 2.0 * math.pi / 365.0 * (k + 1), 0.0) for k in range(n_terms)]

    freqs = periodogram_peaks(work, n_peaks=n_terms)
    cols = []
    for f in freqs:
        cols += [np.sin(f * t), np.cos(f * t)]
    cols += design
    lin, *_ = np.linalg.lstsq(np.column_stack(cols), y, rcond=None)

    x0 = []
    for k, f in enumerate(freqs):
        a_sin, a_cos = lin[2 * k], lin[2 * k + 1]
        x0 += [math.hypot(a_sin, a_cos), f, math.atan2(a_cos, a_sin)]
    x0 += list(lin[2 * len(freqs):])
    x0 = np.asarray(x0, dtype=float)

    def resid(p):
        model = np.zeros_like(t)
        for k in range(n_terms):
            a, b, c = p[3 * k: 3 * k + 3]
            model += a * np.sin(b * t + c)
        model += p[3 * n_terms]
        if detrend:
            model += p[3 * n_terms + 1] * t
        return model - y

    try:
        res = least_squares(resid, x0, method="lm", max_nfev=max_nfev)
        p = res.x
    except Exception:
        p = x0

    raw_terms = [(float(p[3 * k]), float(p[3 * k + 1]), float(p[3 * k + 2]))
                 for k in range(n_terms)]
    return canonicalize_sinusoid_terms(raw_terms, scale)


def canonicalize_sinusoid_terms(raw_terms, scale):
    """Normalize fitted (a, b, c) terms: a >= 0, b > 0, c in (-pi, pi],
    ordered by ascending frequency.  A frequency collapsed below 1e-6
    rad/day with real amplitude means the residual is not oscillatory."""
    terms = []
    for a, b, c in raw_terms:
        if b < 0:
            a, b, c = -a, -b, -c
        if a < 0:
            a, c = -a, c + math.pi
        c = math.remainder(c, 2.0 * math.pi)
        if abs(b) < 1e-6 and a > 1e-8 * scale:
            raise SinusoidFitDegenerate(
                f"fitted frequency {b:.3g} rad/day below 1e-6; residual is "
                "not oscillatory"
            )
        terms.append((a, max(b, 1e-6), c))
    terms.sort(key=lambda term: term[1])
    return terms


def _step2_bounds(cfg: FitConfig, amp_hi: float):
    amp_bounds = {"a1": (0.0, amp_hi), "a2": (0.0, amp_hi)}
    lo, hi = [], []
    for name in PARAM_NAMES:
        if name in cfg.bounds:
            b = cfg.bound(name)
        elif name in amp_bounds:
            b = amp_bounds[name]
        else:
            b = _BASE_BOUNDS[name]
        lo.append(b[0])
        hi.append(b[1])
    return np.asarray(lo), np.asarray(hi)


def fit_step2(data: TimeSeriesTriple, step1: FitResult,
              config: Optional[FitConfig] = None) -> FitResult:
    """Estimate the forcing parameters from the step-1 residuals, then
    jointly re-minimize the full-model SSE over all eleven parameters."""
    cfg = config or FitConfig()
    t = data.day_numbers()
    res = step1.residuals

    # lambda: slope of the least-squares line through the S residual
    line = np.column_stack([np.ones_like(t), t])
    lam0 = float(np.linalg.lstsq(line, res.susceptible, rcond=None)[0][1])

    # h: quadratic through the R residual, no intercept
    quad = np.column_stack([t * t, t])
    p1_0, p2_0 = (float(v) for v in
                  np.linalg.lstsq(quad, res.recovered, rcond=None)[0])

    # g: two-term sinusoid through the I residual
    res_scale = float(np.max(np.abs(res.infected)))
    terms = fit_sinusoid_sum(t, res.infected, n_terms=2)
    amp_hi = cfg.amplitude_bound_factor * max(res_scale, 1e-6)

    lo, hi = _step2_bounds(cfg, amp_hi)
    x0 = np.array([
        step1.params.sir.beta,
        step1.params.sir.gamma,
        lam0,
        terms[0][0], terms[0][1], terms[0][2],
        terms[1][0], terms[1][1], terms[1][2],
        p1_0, p2_0,
    ])
    x0 = np.clip(x0, lo, hi)

    y0 = np.asarray(cfg.y0, dtype=float)
    sqrt_w = np.sqrt(np.asarray(cfg.weights, dtype=float))
    data_mat = _stack_data(data)

    def res_fun(theta):
        return _weighted_residual(theta, data_mat, t, y0, sqrt_w, cfg)

    def objective(theta):
        r = res_fun(theta)
        return min(float(r @ r), INTEGRATION_PENALTY)

    tracer = _Tracer(objective)
    # Step-1 rates can sit in a region too stiff for the forced model's step
    # budget; ladder beta down until the start is integrable (beta = 0 always
    # is, the forcing alone is bounded).
    if tracer(x0) >= INTEGRATION_PENALTY:
        for scale in (0.1, 0.01, 1e-3, 1e-4, 0.0):
            trial = x0.copy()
            trial[0] = np.clip(x0[0] * scale, lo[0], hi[0])
            if tracer(trial) < INTEGRATION_PENALTY:
                x0 = trial
                break

    transform = _BoxTransform(
        lo, hi, log_mask=[name in ("beta", "gamma") for name in PARAM_NAMES]
    )
    rng = np.random.default_rng(cfg.seed + 1)
    starts = [x0]
    for _ in range(cfg.multistart_count - 1):
        jitter = 0.1 * (hi - lo) * rng.standard_normal(len(x0))
        starts.append(np.clip(x0 + jitter, lo, hi))

    candidates = [(tracer(x0), x0, False)]
    for start in starts:
        x, f, ok = _minimize_box(tracer, start, transform, cfg, cfg.max_evals)
        if cfg.gradient_polish:
            x2, f2, ok2 = _trf_refine(res_fun, x, transform, 1500)
            if f2 < f:
                x, f, ok = x2, f2, ok or ok2
        candidates.append((f, x, ok))

    theta, sse, converged, residuals = _select_integrable(
        candidates, lambda v: v, data, y0, cfg
    )
    n_obs = 3 * len(data)
    ci, flags = linearized_ci(res_fun, np.asarray(theta, dtype=float),
                              PARAM_NAMES, n_obs)
    return FitResult(
        model="extended",
        params=params_from_vector(theta),
        free_names=PARAM_NAMES,
        ci95=ci,
        ci_flags=flags,
        sse_total=float(sse),
        residuals=residuals,
        objective_trace=tracer.trace,
        converged=converged,
        n_obs=n_obs,
        k_params=len(PARAM_NAMES),
        data_fingerprint=triple_fingerprint(data),
        config=cfg.to_dict(),
    )


def two_step_fit(data: TimeSeriesTriple,
                 config: Optional[FitConfig] = None):
    """Run the full procedure; returns (standard_fit, extended_fit).

    The standard-model fit is the step-1 estimate itself (the extended
    model's SIR core with forcing zeroed is the plain closed model), kept
    as an independent two-parameter result for comparison purposes.
    """
    cfg = config or FitConfig()
    step1 = fit_step1(data, cfg)
    extended = fit_step2(data, step1, cfg)
    return step1, extended


def fd_jacobian(res_fun: Callable, x: np.ndarray, rel_step=1e-4) -> np.ndarray:
    """Central finite-difference Jacobian of a residual function.

    The step floor keeps differences of adaptive-integrator output (noisy at
    the tolerance scale) from swamping the derivative for near-zero
    parameters such as a recovery rate pinned at its bound.
    """
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(res_fun(x))
    J = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(abs(x[j]), 1e-3)
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (np.asarray(res_fun(xp)) - np.asarray(res_fun(xm))) / (2 * h)
    return J


def linearized_ci(res_fun: Callable, x_hat: np.ndarray, names, n_obs: int,
                  level: float = 0.95):
    """Linearized confidence intervals for a least-squares fit.

    Covariance sigma^2 (J'J)^-1 with sigma^2 = SSE/(n-k); half-width is the
    Student-t quantile times the standard error, hence every interval is
    symmetric about its estimate.  Rank-deficient J'J marks the parameters
    spanning the null space as unbounded instead of raising.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    k = x_hat.size
    dof = n_obs - k
    if dof < 1:
        raise ValueError("need n_obs - k >= 1 residual degrees of freedom")
    r = np.asarray(res_fun(x_hat))
    sse = float(r @ r)
    J = fd_jacobian(res_fun, x_hat)
    jtj = J.T @ J
    u, s, vt = np.linalg.svd(jtj)
    cutoff = (s[0] if s.size else 0.0) * 1e-12
    rank_ok = s > cutoff

    sigma2 = sse / dof
    inv_s = np.where(rank_ok, 1.0 / np.where(rank_ok, s, 1.0), 0.0)
    cov = (vt.T * inv_s) @ vt * sigma2
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))

    null_weight = np.zeros(k)
    if not np.all(rank_ok):
        null_vecs = vt[~rank_ok]
        null_weight = np.sum(null_vecs**2, axis=0)

    tq = float(student_t.ppf(0.5 + level / 2.0, dof))
    ci = {}
    flags = []
    for j, name in enumerate(names):
        if null_weight[j] > 1e-6:
            ci[name] = (-math.inf, math.inf)
            flags.append(f"{name}: unbounded (singular information matrix)")
        else:
            half = tq * se[j]
            ci[name] = (float(x_hat[j] - half), float(x_hat[j] + half))
    return ci, flags


def confidence_intervals(fit: FitResult, data: TimeSeriesTriple,
                         config: Optional[FitConfig] = None):
    """Recompute the 95% CIs of a fit's free parameters against the data."""
    cfg = config or FitConfig()
    y0 = np.asarray(cfg.y0, dtype=float)
    sqrt_w = np.sqrt(np.asarray(cfg.weights, dtype=float))
    data_mat = _stack_data(data)
    t_grid = data.day_numbers()
    theta_hat = params_to_vector(fit.params)
    free_idx = [PARAM_NAMES.index(n) for n in fit.free_names]

    def res_fun(free_vals):
        theta = theta_hat.copy()
        theta[free_idx] = free_vals
        return _weighted_residual(theta, data_mat, t_grid, y0, sqrt_w, cfg)

    return linearized_ci(res_fun, theta_hat[free_idx], fit.free_names,
                         3 * len(data))
