#!/usr/bin/env python3
"""End-to-end demo on the bundled data: preprocess the raw case table,
fit both models to the sample series, compare them, and emit the two-wave
simulation.  Writes everything under out/sample_study/."""

from __future__ import annotations

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from globalsir.cli import main as cli_main


def run(argv):
    print("+ globalsir " + " ".join(argv))
    code = cli_main(argv)
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}")


def main():
    out = ROOT / "out" / "sample_study"
    out.mkdir(parents=True, exist_ok=True)
    data = ROOT / "data"

    run(["preprocess", str(data / "sample_raw_cases.csv"),
         str(out / "derived_triple.csv")])
    run(["--seed", "0", "--out-dir", str(out), "fit",
         str(data / "sample_triple.csv")])
    run(["simulate", str(data / "two_wave_params.json"),
         str(out / "two_wave_trajectory.csv"), "--days", "211"])
    run(["compare", str(out / "standard_fit.json"),
         str(out / "extended_fit.json"), str(out / "sample_comparison")])

    print(f"\nartifacts in {out}")


if __name__ == "__main__":
    main()
