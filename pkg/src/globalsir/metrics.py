"""Goodness-of-fit metrics (SSE, R-squared) and information criteria
(AIC, AICc), plus the side-by-side model comparison table.

Conventions, printed in every report so discrepancies are diagnosable:
n_obs pools all compartments (3 x days), k counts every fitted parameter
(2 for the plain model, 11 for the extended one), and AIC uses the
Gaussian-likelihood form n*ln(SSE/n) + 2k.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


class DegenerateData(ValueError):
    """Observed data has zero variance; R-squared is undefined."""


class DomainError(ValueError):
    """Inputs outside the information-criterion domain."""


class MismatchedData(ValueError):
    """Two fits being compared were produced against different data."""


COMPARTMENTS = ("S", "I", "R")


def r_squared(data, model) -> float:
    """1 - SSE/SST.  May be negative: a model that tracks the data worse
    than the data's own mean earns a negative score."""
    data = np.asarray(data, dtype=float)
    model = np.asarray(model, dtype=float)
    if data.shape != model.shape:
        raise ValueError("data and model must have the same shape")
    if data.size < 2:
        raise ValueError("need at least two observations")
    sst = float(np.sum((data - np.mean(data)) ** 2))
    if sst == 0.0:
        raise DegenerateData("observed data is constant (zero SST)")
    sse = float(np.sum((data - model) ** 2))
    return 1.0 - sse / sst


def aic(sse: float, n_obs: int, k_params: int) -> float:
    if not sse > 0:
        raise DomainError("sse must be positive")
    if n_obs <= 0 or k_params < 0:
        raise DomainError("need n_obs > 0 and k_params >= 0")
    return n_obs * np.log(sse / n_obs) + 2.0 * k_params


def aicc(sse: float, n_obs: int, k_params: int) -> float:
    if n_obs <= k_params + 1:
        raise DomainError("aicc requires n_obs > k_params + 1")
    return aic(sse, n_obs, k_params) + (
        2.0 * k_params * (k_params + 1) / (n_obs - k_params - 1)
    )


@dataclass(frozen=True)
class FitnessReport:
    label: str
    sse: dict            # per compartment
    r2: dict             # per compartment
    aic: float
    aicc: float
    n_obs: int
    k_params: int

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "sse": {k: float(v) for k, v in self.sse.items()},
            "r_squared": {k: float(v) for k, v in self.r2.items()},
            "aic": float(self.aic),
            "aicc": float(self.aicc),
            "n_obs": self.n_obs,
            "k_params": self.k_params,
            "aic_convention": "n*ln(SSE/n) + 2k, n pooled over compartments",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitnessReport":
        return cls(
            label=d["label"],
            sse={k: float(v) for k, v in d["sse"].items()},
            r2={k: float(v) for k, v in d["r_squared"].items()},
            aic=float(d["aic"]),
            aicc=float(d["aicc"]),
            n_obs=int(d["n_obs"]),
            k_params=int(d["k_params"]),
        )


def fitness_report(label, data_triple, model_states, k_params) -> FitnessReport:
    """Score one model against the observed triple.

    model_states: array of shape (3, n_days) ordered S, I, R.
    """
    observed = (data_triple.susceptible, data_triple.infected,
                data_triple.recovered)
    sse = {}
    r2 = {}
    for name, obs, mod in zip(COMPARTMENTS, observed, model_states):
        sse[name] = float(np.sum((np.asarray(obs) - np.asarray(mod)) ** 2))
        r2[name] = r_squared(obs, mod)
    n_obs = 3 * len(data_triple)
    total = sum(sse.values())
    return FitnessReport(
        label=label,
        sse=sse,
        r2=r2,
        aic=aic(total, n_obs, k_params),
        aicc=aicc(total, n_obs, k_params),
        n_obs=n_obs,
        k_params=k_params,
    )


@dataclass(frozen=True)
class ComparisonTable:
    left: FitnessReport
    right: FitnessReport
    preferred: str  # label of the lower-AICc model, or "tie"

    def rows(self):
        yield ("Corrected AIC", self.left.aicc, self.right.aicc)
        yield ("AIC", self.left.aic, self.right.aic)
        for c in COMPARTMENTS:
            yield (f"SSR (R^2) for {c}",
                   (self.left.sse[c], self.left.r2[c]),
                   (self.right.sse[c], self.right.r2[c]))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["fitness", self.left.label, self.right.label])
        for name, lv, rv in self.rows():
            writer.writerow([name, _cell(lv), _cell(rv)])
        writer.writerow(["preferred", self.preferred, ""])
        return buf.getvalue()

    def to_text(self) -> str:
        rows = [("Fitness", self.left.label, self.right.label)]
        rows += [(name, _cell(lv), _cell(rv)) for name, lv, rv in self.rows()]
        rows.append(("Preferred (lower AICc)", self.preferred, ""))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                 for row in rows]
        return "\n".join(lines) + "\n"


def _cell(value) -> str:
    if isinstance(value, tuple):
        sse, r2 = value
        return f"{sse:.5g} ({r2:.4f})"
    return f"{value:.6g}"


def compare_reports(a: FitnessReport, b: FitnessReport) -> ComparisonTable:
    if a.n_obs != b.n_obs:
        raise MismatchedData("fits cover different numbers of observations")
    if a.aicc < b.aicc:
        preferred = a.label
    elif b.aicc < a.aicc:
        preferred = b.label
    else:
        preferred = "tie"
    return ComparisonTable(left=a, right=b, preferred=preferred)


def compare(fit_a, fit_b, data_triple) -> ComparisonTable:
    """Compare two FitResult objects against the same observed data."""
    from .pipeline import triple_fingerprint

    fp = triple_fingerprint(data_triple)
    for fit in (fit_a, fit_b):
        if fit.data_fingerprint and fit.data_fingerprint != fp:
            raise MismatchedData(
                f"fit {fit.model!r} was produced against different data"
            )
    ra = fitness_report(fit_a.model, data_triple, fit_a.model_states(data_triple),
                        fit_a.k_params)
    rb = fitness_report(fit_b.model, data_triple, fit_b.model_states(data_triple),
                        fit_b.k_params)
    return compare_reports(ra, rb)
