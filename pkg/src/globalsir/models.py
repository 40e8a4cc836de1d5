"""SIR right-hand sides: the plain closed model and its extension with
exogenous forcing terms for infection pressure from outside the community.

The extended system is

    dS/dt = -beta*S*I + f(t)
    dI/dt =  beta*S*I - gamma*I + g(t)
    dR/dt =  gamma*I + h(t)

with f(t) = lambda (net susceptible inflow), g(t) the derivative of a
two-term sinusoid (travelers returning infected), and h(t) the derivative
of a quadratic (travelers returning after recovering elsewhere).  Time t is
measured in days since the first observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ode import OdeSystem, Trajectory

#: Flat parameter order used by vectors, JSON files and reports.
PARAM_NAMES = (
    "beta",
    "gamma",
    "lambda",
    "a1",
    "b1",
    "c1",
    "a2",
    "b2",
    "c2",
    "p1",
    "p2",
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SirParams:
    beta: float   # per person per day
    gamma: float  # per day

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be finite and >= 0")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError("gamma must be finite and >= 0")


@dataclass(frozen=True)
class GlobalEffects:
    """Parameters of the forcing terms f, g, h.

    ``lam`` (serialized as "lambda") may be negative: a net outflow of
    susceptibles is a perfectly good fit result.  Frequencies must be
    positive even when the paired amplitude is zero.
    """

    lam: float = 0.0
    a1: float = 0.0
    b1: float = TWO_PI / 365.0  # rad/day
    c1: float = 0.0
    a2: float = 0.0
    b2: float = TWO_PI / 90.0   # rad/day
    c2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        values = (self.lam, self.a1, self.b1, self.c1, self.a2, self.b2,
                  self.c2, self.p1, self.p2)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("all forcing parameters must be finite")
        if not (self.b1 > 0 and self.b2 > 0):
            raise ValueError("frequencies b1 and b2 must be positive")


@dataclass(frozen=True)
class ExtendedParams:
    sir: SirParams
    effects: GlobalEffects


def global_f(t, effects: GlobalEffects):
    """Net inflow of unexposed travelers: constant ``lambda`` (persons/day)."""
    t = np.asarray(t, dtype=float)
    return np.full(t.shape, effects.lam) if t.ndim else effects.lam


def global_g(t, effects: GlobalEffects):
    """Inflow of travelers returning infected (persons/day)."""
    e = effects
    return e.a1 * e.b1 * np.cos(e.b1 * t + e.c1) + e.a2 * e.b2 * np.cos(
        e.b2 * t + e.c2
    )


def global_h(t, effects: GlobalEffects):
    """Inflow of travelers who recovered while away (persons/day)."""
    return 2.0 * effects.p1 * t + effects.p2


def params_to_vector(params: ExtendedParams) -> np.ndarray:
    e = params.effects
    return np.array(
        [params.sir.beta, params.sir.gamma, e.lam, e.a1, e.b1, e.c1,
         e.a2, e.b2, e.c2, e.p1, e.p2]
    )


def params_from_vector(vec) -> ExtendedParams:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (len(PARAM_NAMES),):
        raise ValueError(f"parameter vector must have length {len(PARAM_NAMES)}")
    return ExtendedParams(
        sir=SirParams(beta=float(vec[0]), gamma=float(vec[1])),
        effects=GlobalEffects(
            lam=float(vec[2]), a1=float(vec[3]), b1=float(vec[4]),
            c1=float(vec[5]), a2=float(vec[6]), b2=float(vec[7]),
            c2=float(vec[8]), p1=float(vec[9]), p2=float(vec[10]),
        ),
    )


def params_to_dict(params: ExtendedParams) -> dict:
    return dict(zip(PARAM_NAMES, (float(v) for v in params_to_vector(params))))


def params_from_dict(d: dict) -> ExtendedParams:
    missing = [k for k in ("beta", "gamma") if k not in d]
    if missing:
        raise ValueError(f"missing required parameter keys: {missing}")
    defaults = params_to_dict(
        ExtendedParams(SirParams(0.0, 0.0), GlobalEffects())
    )
    defaults.update({k: float(v) for k, v in d.items() if k in PARAM_NAMES})
    return params_from_vector([defaults[k] for k in PARAM_NAMES])


def standard_sir_rhs(params: SirParams) -> OdeSystem:
    """Closed SIR system: F(t, [S,I,R]) = [-bSI, bSI - gI, gI]."""
    beta, gamma = params.beta, params.gamma

    def rhs(t, y):
        m = beta * y[0] * y[1]
        return np.array([-m, m - gamma * y[1], gamma * y[1]])

    vec = np.zeros(len(PARAM_NAMES))
    vec[0], vec[1] = beta, gamma
    return OdeSystem(dimension=3, rhs=rhs, compiled=("epi", vec))


def extended_sir_rhs(params: ExtendedParams) -> OdeSystem:
    """Forced SIR system: adds f, g, h to the three flow equations."""
    beta, gamma = params.sir.beta, params.sir.gamma
    e = params.effects

    def rhs(t, y):
        m = beta * y[0] * y[1]
        g = e.a1 * e.b1 * math.cos(e.b1 * t + e.c1) + e.a2 * e.b2 * math.cos(
            e.b2 * t + e.c2
        )
        h = 2.0 * e.p1 * t + e.p2
        return np.array([-m + e.lam, m - gamma * y[1] + g, gamma * y[1] + h])

    return OdeSystem(dimension=3, rhs=rhs, compiled=("epi", params_to_vector(params)))


def compartments_nonnegative(trajectory: Trajectory) -> bool:
    """Validity flag: negative compartments mean the forcing pushed a count
    below zero.  Integration is not stopped for this; callers decide."""
    return bool(np.all(trajectory.states >= 0.0))


def interior_maxima(values) -> int:
    """Count strict interior local maxima of a sampled series."""
    d = np.diff(np.asarray(values, dtype=float))
    return int(np.sum((d[:-1] > 0) & (d[1:] < 0)))
