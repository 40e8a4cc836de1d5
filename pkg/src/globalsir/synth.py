"""Synthetic dataset generation: simulate the forced model and add seeded
observation noise.  Used by the bundled sample data, the demo scripts and
the generate-then-fit tests."""

from __future__ import annotations

from datetime import date, timedelta

import numpy as np

from .fitting import simulate_states
from .models import ExtendedParams, params_to_vector
from .pipeline import TimeSeriesTriple


def simulate_triple(params: ExtendedParams, y0, n_days: int,
                    start: date = date(2020, 3, 14),
                    rtol: float = 1e-8, atol: float = 1e-8) -> TimeSeriesTriple:
    """Noiseless daily model trajectory packed as an observation triple."""
    t_grid = np.arange(n_days, dtype=float)
    states = simulate_states(params_to_vector(params), t_grid,
                             np.asarray(y0, dtype=float), rtol, atol, 2_000_000)
    if states is None:
        raise ValueError("model blew up for the requested parameters")
    dates = tuple(start + timedelta(days=i) for i in range(n_days))
    return TimeSeriesTriple(dates=dates, susceptible=states[0],
                            infected=states[1], recovered=states[2])


def add_range_noise(triple: TimeSeriesTriple, noise_frac: float,
                    seed: int) -> TimeSeriesTriple:
    """Add Gaussian noise with sigma = noise_frac * (per-series range)."""
    rng = np.random.default_rng(seed)
    noisy = {}
    for name in ("susceptible", "infected", "recovered"):
        values = np.asarray(getattr(triple, name), dtype=float)
        sigma = noise_frac * (values.max() - values.min())
        noisy[name] = values + sigma * rng.standard_normal(values.size)
    return TimeSeriesTriple(dates=triple.dates, **noisy)


def synthetic_triple(params: ExtendedParams, y0, n_days: int,
                     noise_frac: float, seed: int,
                     start: date = date(2020, 3, 14)) -> TimeSeriesTriple:
    return add_range_noise(simulate_triple(params, y0, n_days, start),
                           noise_frac, seed)
