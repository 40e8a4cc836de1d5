#!/usr/bin/env python3
"""Regenerate the bundled sample datasets in data/.

Everything is seeded, so the files are bit-reproducible:

* sample_triple.csv     fitted-model trajectory (the published estimates for
                        the forced SIR system) plus 1%-of-range Gaussian
                        observation noise; the out-of-the-box fitting demo.
* sample_raw_cases.csv  a plausible two-wave daily case table in the raw
                        portal format, for the preprocess demo.
* two_wave_params.json  forcing-dominant parameters whose infected series
                        shows two epidemic waves over 212 days.
"""

from __future__ import annotations

import json
import sys
from datetime import date, timedelta
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from globalsir.models import ExtendedParams, GlobalEffects, SirParams, params_to_dict
from globalsir.pipeline import export_triple, parse_raw, derive_sir
from globalsir.synth import synthetic_triple

DATA_DIR = Path(__file__).resolve().parents[1] / "data"
START = date(2020, 3, 14)
N_DAYS = 212

# Point estimates reported for the forced model on the 212-day series.
FITTED_PARAMS = ExtendedParams(
    sir=SirParams(beta=0.0043, gamma=2.8e-11),
    effects=GlobalEffects(
        lam=-2.6630,
        a1=97.41, b1=0.008485, c1=2.759,
        a2=24.12, b2=0.04181, c2=-2.359,
        p1=0.3012, p2=-22.02,
    ),
)
Y0 = (12615.0, 1.0, 300.0)

TWO_WAVE_PARAMS = ExtendedParams(
    sir=SirParams(beta=1e-7, gamma=1e-3),
    effects=GlobalEffects(
        lam=-2.0,
        a1=800.0, b1=0.0593, c1=-1.5708,
        a2=150.0, b2=0.12, c2=-1.5708,
        p1=0.25, p2=5.0,
    ),
)

TRIPLE_SEED = 20200314
RAW_SEED = 20201013


def make_triple():
    triple = synthetic_triple(FITTED_PARAMS, Y0, N_DAYS, noise_frac=0.01,
                              seed=TRIPLE_SEED, start=START)
    export_triple(triple, DATA_DIR / "sample_triple.csv")
    return triple


def make_raw_cases():
    rng = np.random.default_rng(RAW_SEED)
    t = np.arange(N_DAYS)

    wave1 = 13.0 * np.exp(-0.5 * ((t - 38) / 16.0) ** 2)
    wave2 = 20.0 * np.exp(-0.5 * ((t - 150) / 26.0) ** 2)
    rate = 1.5 + wave1 + wave2
    new_cases = rng.poisson(rate).astype(int)
    new_cases[0] = max(new_cases[0], 1)

    tests_rate = 40.0 + 40.0 * t / (N_DAYS - 1)
    new_tests = np.maximum(rng.poisson(tests_rate), new_cases + 1)

    lagged = np.zeros(N_DAYS)
    lagged[10:] = new_cases[:-10]
    new_deaths = rng.poisson(0.015 * lagged).astype(int)

    total_cases = np.cumsum(new_cases)
    total_deaths = np.cumsum(new_deaths)
    total_tested = np.cumsum(new_tests)

    lines = ["date,total_cases,new_cases,total_deaths,new_deaths,total_tested"]
    for i in range(N_DAYS):
        day = START + timedelta(days=int(i))
        lines.append(
            f"{day.isoformat()},{total_cases[i]},{new_cases[i]},"
            f"{total_deaths[i]},{new_deaths[i]},{total_tested[i]}"
        )
    text = "\n".join(lines) + "\n"
    (DATA_DIR / "sample_raw_cases.csv").write_text(text, encoding="utf-8")

    # sanity: the bundled file must survive its own pipeline
    table = parse_raw(text)
    triple = derive_sir(table)
    return triple


def make_two_wave_params():
    payload = params_to_dict(TWO_WAVE_PARAMS)
    (DATA_DIR / "two_wave_params.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def main():
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    triple = make_triple()
    derived = make_raw_cases()
    make_two_wave_params()
    print(f"sample_triple.csv      S range [{triple.susceptible.min():.1f}, "
          f"{triple.susceptible.max():.1f}], I max {triple.infected.max():.1f}")
    print(f"sample_raw_cases.csv   derived I max {derived.infected.max():.1f}, "
          f"S max {derived.susceptible.max():.1f}")
    print("two_wave_params.json   written")


if __name__ == "__main__":
    main()
