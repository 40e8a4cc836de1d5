from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from globalsir.pipeline import (
    ConsistencyError,
    EmptySeries,
    GapError,
    MonotonicityError,
    RawCaseTable,
    SchemaError,
    TimeSeriesTriple,
    WindowError,
    derive_sir,
    describe,
    export_triple,
    parse_raw,
    read_triple,
    triple_fingerprint,
    _series_stats,
)

START = date(2020, 3, 14)


def raw_csv(new_cases, new_tests=None, new_deaths=None, start=START):
    """Render a case table CSV from daily increments."""
    n = len(new_cases)
    new_tests = new_tests if new_tests is not None else [c + 5 for c in new_cases]
    new_deaths = new_deaths if new_deaths is not None else [0] * n
    lines = ["date,total_cases,new_cases,total_deaths,new_deaths,total_tested"]
    tc = td = tt = 0
    for i in range(n):
        tc += new_cases[i]
        td += new_deaths[i]
        tt += new_tests[i]
        day = start + timedelta(days=i)
        lines.append(f"{day},{tc},{new_cases[i]},{td},{new_deaths[i]},{tt}")
    return "\n".join(lines) + "\n"


def brute_force_sir(raw, incubation=5, turnaround=1, infectious=14, frac=0.97):
    """Day-by-day loop oracle for the three derivation formulas."""
    n = len(raw)
    lead = incubation + turnaround
    nc = raw.new_cases
    infected = np.array(
        [sum(nc[max(0, t - infectious + 1): t + 1]) for t in range(n)]
    )
    recovered = np.array(
        [frac * sum(nc[: max(0, t - infectious + 1)]) for t in range(n)]
    )
    susceptible = np.array(
        [sum(nc[t + lead + 1:]) + raw.total_tested[t] - raw.total_cases[t]
         for t in range(n)]
    )
    return susceptible, infected, recovered


def test_parse_valid_212_day_table(data_dir):
    table = parse_raw((data_dir / "sample_raw_cases.csv").read_bytes())
    assert len(table) == 212
    assert table.dates[0] == date(2020, 3, 14)
    # 212 contiguous daily rows anchored at the start date
    assert table.dates[-1] == table.dates[0] + timedelta(days=211)


def test_parse_errors():
    with pytest.raises(SchemaError):
        parse_raw("date,total_cases\n2020-03-14,1\n")
    with pytest.raises(SchemaError):  # header only
        parse_raw("date,total_cases,new_cases,total_deaths,new_deaths,total_tested\n")
    gap = raw_csv([1, 2, 3]).splitlines()
    del gap[2]
    with pytest.raises(GapError):
        parse_raw("\n".join(gap))
    text = raw_csv([1, 2, 3])
    text = text.replace("2020-03-16,6,3", "2020-03-16,5,3")  # total drops
    with pytest.raises((MonotonicityError, ConsistencyError)):
        parse_raw(text)
    with pytest.raises(SchemaError):
        parse_raw(raw_csv([1, 2]).replace("2020-03-15", "not-a-date"))


def test_parse_rejects_decreasing_tested():
    text = raw_csv([1, 1, 1], new_tests=[10, 10, 10])
    text = text.replace(",30\n", ",15\n")  # last cumulative tested drops
    with pytest.raises(MonotonicityError):
        parse_raw(text)


def test_parse_rejects_inconsistent_new_cases():
    text = raw_csv([1, 2, 3]).replace("2020-03-16,6,3", "2020-03-16,6,2")
    with pytest.raises(ConsistencyError):
        parse_raw(text)


def test_unit_impulse_hand_trace():
    n = 30
    nc = [0] * n
    nc[10] = 1
    table = parse_raw(raw_csv(nc, new_tests=nc))  # tested == cases
    triple = derive_sir(table)
    # susceptible: the single future positive counts through day 3
    expected_s = [1.0 if t <= 3 else 0.0 for t in range(n)]
    expected_i = [1.0 if 10 <= t <= 23 else 0.0 for t in range(n)]
    expected_r = [0.97 if t >= 24 else 0.0 for t in range(n)]
    assert np.array_equal(triple.susceptible, expected_s)
    assert np.array_equal(triple.infected, expected_i)
    assert np.array_equal(triple.recovered, expected_r)


def test_all_zero_cases():
    tests = [3, 1, 4, 1, 5, 9, 2, 6, 5, 3]
    table = parse_raw(raw_csv([0] * 10, new_tests=tests))
    triple = derive_sir(table)
    assert np.all(triple.infected == 0.0)
    assert np.all(triple.recovered == 0.0)
    assert np.array_equal(triple.susceptible, np.cumsum(tests))


def test_derive_matches_brute_force_on_bundled_sample(data_dir):
    table = parse_raw((data_dir / "sample_raw_cases.csv").read_bytes())
    triple = derive_sir(table)
    s, i, r = brute_force_sir(table)
    assert np.array_equal(triple.susceptible, s)
    assert np.array_equal(triple.infected, i)
    assert np.array_equal(triple.recovered, r)
    assert triple.infected.min() >= 1.0  # sample starts with a case


@given(
    nc=st.lists(st.integers(0, 50), min_size=8, max_size=60),
    extra=st.integers(0, 20),
)
@settings(max_examples=60, deadline=None)
def test_derive_matches_brute_force_random(nc, extra):
    table = parse_raw(raw_csv(nc, new_tests=[c + extra for c in nc]))
    triple = derive_sir(table)
    s, i, r = brute_force_sir(table)
    assert np.array_equal(triple.susceptible, s)
    assert np.array_equal(triple.infected, i)
    assert np.array_equal(triple.recovered, r)


def test_window_error_on_short_table():
    with pytest.raises(WindowError):
        derive_sir(parse_raw(raw_csv([1, 0, 0, 0])))


def test_describe_hand_values():
    triple = TimeSeriesTriple(
        dates=tuple(START + timedelta(days=i) for i in range(3)),
        susceptible=np.array([1.0, 2.0, 3.0]),
        infected=np.array([5.0, 5.0, 5.0]),
        recovered=np.array([0.0, 1.0, 5.0]),
    )
    stats = describe(triple)
    s = stats.susceptible
    assert (s.minimum, s.maximum, s.mean, s.median, s.range) == (1, 3, 2, 2, 2)
    assert stats.infected.std == 0.0
    assert stats.infected.range == 0.0
    assert stats.std_convention == "population"


@given(values=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
@settings(max_examples=60, deadline=None)
def test_describe_matches_sort_oracle(values):
    st_ = _series_stats(values)
    arr = sorted(values)
    n = len(arr)
    median = arr[n // 2] if n % 2 else 0.5 * (arr[n // 2 - 1] + arr[n // 2])
    mean = sum(arr) / n
    var = sum((v - mean) ** 2 for v in arr) / n
    scale = max(1.0, abs(st_.mean), abs(st_.std))
    assert st_.minimum == arr[0] and st_.maximum == arr[-1]
    assert abs(st_.median - median) <= 1e-12 * max(1.0, abs(median))
    assert abs(st_.mean - mean) <= 1e-12 * scale
    assert abs(st_.std - var**0.5) <= 1e-9 * scale


def test_describe_empty_series():
    with pytest.raises(EmptySeries):
        _series_stats([])


def test_export_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    n = 212
    triple = TimeSeriesTriple(
        dates=tuple(START + timedelta(days=i) for i in range(n)),
        susceptible=rng.uniform(-100, 20000, n).round(6),
        infected=rng.uniform(0, 200, n).round(6),
        recovered=rng.uniform(0, 15000, n).round(6),
    )
    path = tmp_path / "triple.csv"
    export_triple(triple, path)
    lines = path.read_text().splitlines()
    assert len(lines) == n + 1  # header + one row per day
    again = read_triple(path)
    assert again.dates == triple.dates
    for name in ("susceptible", "infected", "recovered"):
        assert np.allclose(getattr(again, name), getattr(triple, name),
                           rtol=0, atol=5e-7)
    assert triple_fingerprint(again) == triple_fingerprint(triple)


def test_export_bad_path_raises_oserror():
    triple = TimeSeriesTriple(
        dates=(START,), susceptible=np.array([1.0]),
        infected=np.array([1.0]), recovered=np.array([0.0]),
    )
    with pytest.raises(OSError):
        export_triple(triple, "")


def test_read_triple_errors(tmp_path):
    with pytest.raises(OSError):
        read_triple(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("date,susceptible\n2020-03-14,1\n")
    with pytest.raises(SchemaError):
        read_triple(bad)


def test_triple_gap_rejected():
    dates = (START, START + timedelta(days=2))
    with pytest.raises(GapError):
        TimeSeriesTriple(dates=dates, susceptible=np.zeros(2),
                         infected=np.zeros(2), recovered=np.zeros(2))
