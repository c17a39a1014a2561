import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from selfboost.core import (
    SplitSpec,
    TimeSeries,
    build_windows,
    chronological_split,
    inverse_zscore,
    read_series_csv,
    split_sizes,
    write_series_csv,
    zscore_normalize,
)
from selfboost.errors import (
    ConfigInvalid,
    EmptySeries,
    InsufficientLength,
    LengthMismatch,
    MissingValues,
    NonFiniteValue,
    TooFewWindows,
    ZeroVariance,
)


def ramp(n, name="x"):
    return TimeSeries(name, np.arange(n, dtype=float))


def brute_windows(values, lag, horizon):
    """Straight slicing loop used as the windowing oracle."""
    xs, ys = [], []
    for s in range(len(values) - lag - horizon + 1):
        xs.append(list(values[s:s + lag]))
        ys.append(list(values[s + lag:s + lag + horizon]))
    return xs, ys


class TestTimeSeries:
    def test_values_are_read_only_float64(self):
        ts = TimeSeries("a", [1, 2, 3])
        assert ts.values.dtype == np.float64
        with pytest.raises(ValueError):
            ts.values[0] = 5.0

    def test_empty_rejected(self):
        with pytest.raises(EmptySeries):
            TimeSeries("a", [])

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(NonFiniteValue):
            TimeSeries("a", [1.0, bad, 2.0])


class TestBuildWindows:
    def test_counts(self):
        ds = build_windows([ramp(10)], [0], 3, 1)
        assert len(ds) == 7
        assert ds.inputs.shape == (7, 3, 1)
        assert ds.targets.shape == (7, 1, 1)

    def test_constant(self):
        ds = build_windows([TimeSeries("c", np.full(8, 5.0))], [0], 2, 1)
        assert np.all(ds.inputs == 5.0)
        assert np.all(ds.targets == 5.0)

    def test_matches_slicer(self):
        ds = build_windows([ramp(10)], [0], 3, 2)
        xs, ys = brute_windows(np.arange(10.0), 3, 2)
        assert len(ds) == 6
        assert ds.inputs[0, :, 0].tolist() == [0, 1, 2]
        assert ds.targets[0, 0].tolist() == [3, 4]
        assert ds.inputs[:, :, 0].tolist() == xs
        assert ds.targets[:, 0, :].tolist() == ys

    def test_channels_and_tasks_follow_given_order(self):
        a, b = ramp(12, "a"), TimeSeries("b", -np.arange(12.0))
        ds = build_windows([a, b], [1], 4, 1)
        assert ds.channel_names == ("a", "b")
        assert ds.task_names == ("b",)
        assert ds.inputs[2, :, 1].tolist() == [-2, -3, -4, -5]
        assert ds.targets[2, 0, 0] == -6

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            build_windows([ramp(10), ramp(11)], [0], 3, 1)

    def test_too_short(self):
        with pytest.raises(InsufficientLength):
            build_windows([ramp(3)], [0], 3, 1)

    def test_bad_task_index(self):
        with pytest.raises(ConfigInvalid):
            build_windows([ramp(10)], [1], 3, 1)

    @settings(max_examples=50, deadline=None)
    @given(
        n=st.integers(2, 60),
        lag=st.integers(1, 10),
        horizon=st.integers(1, 5),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_window_round_trip(self, n, lag, horizon, seed):
        if n < lag + horizon:
            return
        values = np.random.default_rng(seed).standard_normal(n)
        ds = build_windows([TimeSeries("x", values)], [0], lag, horizon)
        assert len(ds) == n - lag - horizon + 1
        for s in range(len(ds)):
            joined = np.concatenate([ds.inputs[s, :, 0], ds.targets[s, 0]])
            assert np.array_equal(joined, values[s:s + lag + horizon])


class TestSplit:
    @pytest.mark.parametrize(
        "n, expected", [(10, (6, 2, 2)), (11, (7, 2, 2)), (3, (1, 1, 1)), (100, (60, 20, 20))]
    )
    def test_sizes(self, n, expected):
        assert split_sizes(n, SplitSpec()) == expected

    @given(n=st.integers(5, 5000))
    def test_sizes_match_counting_oracle(self, n):
        # count how many whole windows fit in each fraction
        val = sum(1 for k in range(1, n + 1) if k <= 0.2 * n + 1e-9)
        assert split_sizes(n, SplitSpec()) == (n - 2 * val, val, val)

    def test_too_few_windows(self):
        with pytest.raises(TooFewWindows):
            split_sizes(2, SplitSpec())

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ConfigInvalid):
            SplitSpec(0.5, 0.2, 0.2)

    @given(n=st.integers(13, 200))
    def test_concatenation_restores_order(self, n):
        ds = build_windows([ramp(n)], [0], 3, 1)
        parts = chronological_split(ds)
        joined = np.concatenate([p.inputs for p in parts])
        assert np.array_equal(joined, ds.inputs)
        assert [p.start for p in parts] == [0, len(parts[0]), len(parts[0]) + len(parts[1])]
        positions = np.concatenate([p.target_positions() for p in parts])
        assert np.array_equal(positions, ds.target_positions())


class TestZscore:
    def test_own_stats(self):
        out, stats = zscore_normalize(TimeSeries("x", [1.0, 2.0, 3.0]), TimeSeries("x", [1.0, 2.0, 3.0]))
        assert abs(out.values.mean()) < 1e-15
        assert abs(out.values.std() - 1.0) < 1e-15
        assert stats.mean == 2.0

    def test_training_segment_stats(self):
        out, stats = zscore_normalize(TimeSeries("x", [10, 20, 30, 40]), TimeSeries("t", [10, 20]))
        assert (stats.mean, stats.std) == (15.0, 5.0)
        assert out.values.tolist() == [-1.0, 1.0, 3.0, 5.0]

    def test_constant_rejected(self):
        c = TimeSeries("c", [2.0, 2.0, 2.0])
        with pytest.raises(ZeroVariance):
            zscore_normalize(c, c)

    @given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-1e6, 1e6)))
    def test_round_trip(self, values):
        if np.std(values) < 1e-3:
            return
        ts = TimeSeries("x", values)
        out, stats = zscore_normalize(ts, ts)
        back = inverse_zscore(out, stats)
        scale = max(1.0, float(np.max(np.abs(values))))
        assert np.max(np.abs(back.values - values)) <= 1e-12 * scale


class TestCsv:
    def test_round_trip_with_timestamps(self, tmp_path):
        path = tmp_path / "s.csv"
        values = [0.1, 1.0 / 3.0, -2.5]
        write_series_csv(path, values, ["2020-01-01", "2020-01-02", "2020-01-03"])
        loaded = read_series_csv(path)
        assert loaded.series.values.tolist() == values
        assert loaded.timestamps == ["2020-01-01", "2020-01-02", "2020-01-03"]

    def test_missing_rejected_by_default(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("value\n1\n\n2\nNA\n4\n")
        with pytest.raises(MissingValues):
            read_series_csv(path)

    def test_interior_gap_interpolated(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("timestamp,value\na,1\nb,\nc,\nd,4\n")
        loaded = read_series_csv(path, interpolate_missing=True)
        assert loaded.series.values.tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_edge_gap_not_interpolated(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("value\nnan\n1\n2\n")
        with pytest.raises(MissingValues):
            read_series_csv(path, interpolate_missing=True)

    def test_requires_value_column(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("x\n1\n")
        with pytest.raises(MissingValues):
            read_series_csv(path)
