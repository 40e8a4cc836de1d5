"""Case-report preprocessing: turn a raw daily case table into aligned
susceptible/infected/recovered series, plus descriptive statistics.

The derivation mirrors how testing data translates into compartments:

* infected(t): rolling sum of new cases over the trailing infectious window
  (everyone reported within the last ``infectious_days`` is still a case);
* susceptible(t): everyone whose positive result is still ahead of them
  (strictly more than ``incubation + turnaround`` days in the future) plus
  everyone tested negative so far;
* recovered(t): the recovering fraction of all cases reported at least
  ``infectious_days`` ago.

Recovered counts are deliberately fractional (a rate times a count).
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np


class PipelineError(Exception):
    pass


class SchemaError(PipelineError):
    """Missing/unreadable columns or no data rows."""


class MonotonicityError(PipelineError):
    """A cumulative column decreases."""


class GapError(PipelineError):
    """Dates are not contiguous daily."""


class WindowError(PipelineError):
    """Series shorter than the derivation windows."""


class EmptySeries(PipelineError):
    """Statistics requested for an empty series."""


class ConsistencyError(PipelineError):
    """Internally inconsistent counts (negative, or new != diff(total))."""


RAW_COLUMNS = (
    "date",
    "total_cases",
    "new_cases",
    "total_deaths",
    "new_deaths",
    "total_tested",
)


@dataclass(frozen=True)
class RawCaseTable:
    dates: tuple
    total_cases: np.ndarray
    new_cases: np.ndarray
    total_deaths: np.ndarray
    new_deaths: np.ndarray
    total_tested: np.ndarray

    def __len__(self):
        return len(self.dates)


@dataclass(frozen=True)
class TimeSeriesTriple:
    """Aligned daily S/I/R observation vectors.

    Values are real-valued persons; fitting inputs may legitimately carry
    negative noise excursions, so sign checks live in ``derive_sir`` (whose
    outputs are genuine counts), not here.
    """

    dates: tuple
    susceptible: np.ndarray
    infected: np.ndarray
    recovered: np.ndarray

    def __post_init__(self):
        n = len(self.dates)
        for name in ("susceptible", "infected", "recovered"):
            arr = getattr(self, name)
            if len(arr) != n:
                raise ValueError("series lengths must match dates")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        _check_contiguous(self.dates)

    def __len__(self):
        return len(self.dates)

    def day_numbers(self) -> np.ndarray:
        return np.arange(len(self.dates), dtype=float)


@dataclass(frozen=True)
class SeriesStats:
    minimum: float
    maximum: float
    mean: float
    median: float
    std: float
    range: float


@dataclass(frozen=True)
class DescriptiveStats:
    susceptible: SeriesStats
    infected: SeriesStats
    recovered: SeriesStats
    std_convention: str = "population"


def _check_contiguous(dates):
    for prev, cur in zip(dates, dates[1:]):
        if cur - prev != timedelta(days=1):
            missing = prev + timedelta(days=1)
            raise GapError(f"dates must be contiguous daily; missing {missing}")


def parse_raw(data) -> RawCaseTable:
    """Parse a UTF-8 CSV with the six case-table columns (any order)."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.DictReader(io.StringIO(data))
    header = reader.fieldnames or []
    missing = [c for c in RAW_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing columns: {missing}")

    dates = []
    cols = {c: [] for c in RAW_COLUMNS[1:]}
    for row in reader:
        try:
            dates.append(date.fromisoformat(row["date"].strip()))
        except ValueError as exc:
            raise SchemaError(f"bad date {row['date']!r}: {exc}") from exc
        for c in RAW_COLUMNS[1:]:
            try:
                cols[c].append(float(row[c]))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"bad value for {c} on {row['date']}") from exc
    if not dates:
        raise SchemaError("no data rows")

    if any(d2 <= d1 for d1, d2 in zip(dates, dates[1:])):
        raise GapError("dates must be strictly increasing")
    _check_contiguous(tuple(dates))

    arrays = {c: np.asarray(v, dtype=float) for c, v in cols.items()}
    for c, arr in arrays.items():
        if np.any(arr < 0):
            raise ConsistencyError(f"{c} contains negative counts")
    for c in ("total_cases", "total_tested"):
        if np.any(np.diff(arrays[c]) < 0):
            raise MonotonicityError(f"cumulative column {c} decreases")
    interior = arrays["new_cases"][1:]
    if not np.allclose(interior, np.diff(arrays["total_cases"]), atol=1e-9):
        raise ConsistencyError("new_cases must equal the day-over-day change "
                               "of total_cases on interior rows")

    return RawCaseTable(dates=tuple(dates), **{
        "total_cases": arrays["total_cases"],
        "new_cases": arrays["new_cases"],
        "total_deaths": arrays["total_deaths"],
        "new_deaths": arrays["new_deaths"],
        "total_tested": arrays["total_tested"],
    })


def read_raw_csv(path) -> RawCaseTable:
    with open(path, "rb") as fh:
        return parse_raw(fh.read())


def derive_sir(
    raw: RawCaseTable,
    incubation_days: int = 5,
    test_turnaround_days: int = 1,
    infectious_days: int = 14,
    recovery_fraction: float = 0.97,
) -> TimeSeriesTriple:
    """Derive S/I/R series from a validated case table.

    The susceptible cutoff uses the strict convention d > t + lead with
    lead = incubation_days + test_turnaround_days: a case reported on day d
    still counts as susceptible on every day before d - lead.
    """
    n = len(raw)
    lead = incubation_days + test_turnaround_days
    if n <= lead:
        raise WindowError(
            f"need more than {lead} rows for the susceptible window, got {n}"
        )

    nc = raw.new_cases.astype(float)
    csum = np.cumsum(nc)
    total_all = csum[-1]

    t = np.arange(n)
    # infected(t) = sum of new cases over (t - infectious_days, t]
    behind = t - infectious_days
    csum_behind = np.where(behind >= 0, csum[np.maximum(behind, 0)], 0.0)
    infected = csum - csum_behind

    # recovered(t) = fraction of all cases reported on days <= t - infectious_days
    recovered = recovery_fraction * csum_behind

    # future positives: cases reported strictly later than t + lead
    ahead = t + lead
    future = np.where(ahead <= n - 1, total_all - csum[np.minimum(ahead, n - 1)], 0.0)
    susceptible = future + (raw.total_tested - raw.total_cases)

    for name, arr in (("susceptible", susceptible), ("infected", infected),
                      ("recovered", recovered)):
        if np.any(arr < 0):
            raise ConsistencyError(
                f"derived {name} went negative; check the input table"
            )
    return TimeSeriesTriple(
        dates=raw.dates,
        susceptible=susceptible,
        infected=infected,
        recovered=recovered,
    )


def _series_stats(values) -> SeriesStats:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptySeries("cannot describe an empty series")
    return SeriesStats(
        minimum=float(np.min(values)),
        maximum=float(np.max(values)),
        mean=float(np.mean(values)),
        median=float(np.median(values)),
        std=float(np.std(values)),  # population convention (ddof = 0)
        range=float(np.max(values) - np.min(values)),
    )


def describe(triple: TimeSeriesTriple) -> DescriptiveStats:
    return DescriptiveStats(
        susceptible=_series_stats(triple.susceptible),
        infected=_series_stats(triple.infected),
        recovered=_series_stats(triple.recovered),
    )


def _format_value(v: float) -> str:
    return f"{v:.12g}"


def triple_rows(triple: TimeSeriesTriple):
    for i, d in enumerate(triple.dates):
        yield (
            d.isoformat(),
            _format_value(triple.susceptible[i]),
            _format_value(triple.infected[i]),
            _format_value(triple.recovered[i]),
        )


def export_triple(triple: TimeSeriesTriple, path) -> None:
    """Write date,susceptible,infected,recovered CSV (12 significant digits,
    lossless round-trip through ``read_triple`` well past 6 decimals)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "susceptible", "infected", "recovered"])
        writer.writerows(triple_rows(triple))


def read_triple(path) -> TimeSeriesTriple:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        needed = ("date", "susceptible", "infected", "recovered")
        missing = [c for c in needed if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"missing columns: {missing}")
        dates, s, i, r = [], [], [], []
        for row in reader:
            try:
                dates.append(date.fromisoformat(row["date"].strip()))
                s.append(float(row["susceptible"]))
                i.append(float(row["infected"]))
                r.append(float(row["recovered"]))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"bad row {row!r}") from exc
    if not dates:
        raise SchemaError("no data rows")
    return TimeSeriesTriple(
        dates=tuple(dates),
        susceptible=np.asarray(s),
        infected=np.asarray(i),
        recovered=np.asarray(r),
    )


def triple_fingerprint(triple: TimeSeriesTriple) -> dict:
    """Stable identity of a dataset, embedded in fit reports so that model
    comparisons can refuse mismatched inputs."""
    text = "\n".join(",".join(row) for row in triple_rows(triple))
    return {
        "n_days": len(triple),
        "first_date": triple.dates[0].isoformat(),
        "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
    }


def write_stats_csv(stats: DescriptiveStats, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["series", "minimum", "maximum", "mean", "median",
             "std_dev", "range", "std_convention"]
        )
        for name in ("susceptible", "infected", "recovered"):
            st = getattr(stats, name)
            writer.writerow(
                [name] + [_format_value(v) for v in
                          (st.minimum, st.maximum, st.mean, st.median,
                           st.std, st.range)] + [stats.std_convention]
            )
