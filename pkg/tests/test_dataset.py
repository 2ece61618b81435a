import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from buildsensys.dataset import (
    HOUR,
    Channel,
    TimeSeriesFrame,
    apply_norm,
    chronological_split,
    fit_norm,
    invert_norm,
    load_csv,
    local_calendar,
    make_windows,
    prepare,
    split_bounds,
    synchronize_hourly,
    window_count,
    write_csv,
)
from buildsensys.errors import DataError

T0 = 1514764800  # Monday 2018-01-01T00:00Z


def frame_of(traffic, channels=None, timestamps=None, meta=None):
    traffic = np.asarray(traffic, dtype=np.float64)
    n = len(traffic)
    if channels is None:
        channels = np.column_stack([np.arange(n, dtype=np.float64) + 1.0])
    if meta is None:
        meta = (Channel("z1", "occupancy"),) + tuple(Channel(f"e{i}", "environmental") for i in range(channels.shape[1] - 1))
    if timestamps is None:
        timestamps = T0 + HOUR * np.arange(n)
    return TimeSeriesFrame(timestamps, channels, meta, traffic)


CSV = """timestamp,traffic_volume,occ:lobby,env:co2
2018-01-01T00:00:00Z,100,5,400
2018-01-01T01:00:00Z,120,7,410
2018-01-01T02:00:00Z,90,6,405
"""


def test_load_csv_well_formed(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text(CSV)
    f = load_csv(p)
    assert len(f) == 3
    assert f.names == ["occ:lobby", "env:co2"]
    assert f.n_occ == 1 and f.n_env == 1
    np.testing.assert_array_equal(f.traffic, [100, 120, 90])


def test_load_csv_shuffled_rows_equal_sorted(tmp_path):
    lines = CSV.strip().splitlines()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text(CSV)
    b.write_text("\n".join([lines[0], lines[3], lines[1], lines[2]]) + "\n")
    assert load_csv(a).equals(load_csv(b))


def test_load_csv_reports_row_and_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text(CSV.replace("7,410", "seven,410"))
    with pytest.raises(DataError, match=r"bad\.csv:3: column occ:lobby"):
        load_csv(p)


def test_load_csv_rejects_duplicate_timestamp(tmp_path):
    p = tmp_path / "dup.csv"
    p.write_text(CSV + "2018-01-01T01:00:00Z,1,1,1\n")
    with pytest.raises(DataError, match="duplicate timestamp"):
        load_csv(p)


def test_load_csv_epoch_and_kind_ordering(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text(f"timestamp,traffic_volume,env:temp,occ:z\n{T0},1,20,3\n{T0 + HOUR},2,21,4\n")
    f = load_csv(p)
    assert f.names == ["occ:z", "env:temp"]
    np.testing.assert_array_equal(f.channels[:, 0], [3, 4])


def test_load_csv_schema_mismatch_and_missing_file(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text(CSV)
    with pytest.raises(DataError):
        load_csv(p, schema=["occ:other"])
    with pytest.raises(DataError):
        load_csv(tmp_path / "missing.csv")


def test_csv_round_trip_is_lossless(tmp_path, small_frame):
    p = tmp_path / "f.csv"
    write_csv(small_frame, p)
    assert load_csv(p).equals(small_frame)


def test_synchronize_mean_of_sub_hourly_readings():
    ts = np.array([T0, T0 + 1200, T0 + HOUR])
    f = frame_of([10.0, 20.0, 30.0], np.array([[1.0], [3.0], [5.0]]), ts)
    out = synchronize_hourly(f)
    np.testing.assert_array_equal(out.traffic, [15.0, 30.0])
    np.testing.assert_array_equal(out.channels[:, 0], [2.0, 5.0])


def test_synchronize_hourly_identity(small_frame):
    assert synchronize_hourly(small_frame).equals(small_frame)


def test_synchronize_linear_fill_in_gap():
    ts = np.array([T0, T0 + 2 * HOUR])
    out = synchronize_hourly(frame_of([100.0, 200.0], np.array([[1.0], [3.0]]), ts))
    np.testing.assert_array_equal(out.traffic, [100.0, 150.0, 200.0])
    assert np.all(np.diff(out.timestamps) == HOUR)


def test_synchronize_long_gap_repeats_last_and_rejects_over_day():
    ts = np.array([T0, T0 + 6 * HOUR])
    out = synchronize_hourly(frame_of([100.0, 200.0], np.array([[1.0], [3.0]]), ts))
    np.testing.assert_array_equal(out.traffic, [100.0] * 6 + [200.0])
    ts = np.array([T0, T0 + 26 * HOUR])
    with pytest.raises(DataError, match="too sparse"):
        synchronize_hourly(frame_of([1.0, 2.0], np.array([[1.0], [3.0]]), ts))


def test_norm_moments_and_round_trip(small_frame):
    stats = fit_norm(small_frame)
    n_train = int(len(small_frame) * 0.7)
    z = apply_norm(small_frame, stats)
    np.testing.assert_allclose(z.channels[:n_train].mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(z.channels[:n_train].std(axis=0), 1.0, atol=1e-10)
    np.testing.assert_allclose(invert_norm(z.traffic, stats), small_frame.traffic, rtol=0, atol=1e-10)
    for j, name in enumerate(small_frame.names):
        np.testing.assert_allclose(invert_norm(z.channels[:, j], stats, name), small_frame.channels[:, j], atol=1e-10)


def test_norm_stats_ignore_test_rows(small_frame):
    stats = fit_norm(small_frame)
    n = len(small_frame)
    traffic = small_frame.traffic.copy()
    traffic[int(n * 0.9):] = 1e6
    changed = frame_of(traffic, small_frame.channels, small_frame.timestamps, small_frame.channel_meta)
    other = fit_norm(changed)
    assert np.array_equal(stats.channel_mean, other.channel_mean)
    assert stats.traffic_mean == other.traffic_mean and stats.traffic_std == other.traffic_std


def test_zero_variance_channel_named():
    f = frame_of(np.arange(20.0), np.column_stack([np.ones(20), np.arange(20.0)]))
    with pytest.raises(DataError, match="z1"):
        fit_norm(f)


@pytest.mark.parametrize("n, sizes", [(100, (70, 10, 20)), (10, (7, 1, 2)), (99, (69, 9, 21))])
def test_chronological_split_sizes(n, sizes):
    f = frame_of(np.arange(float(n)))
    parts = chronological_split(f)
    assert tuple(len(p) for p in parts) == sizes
    np.testing.assert_array_equal(np.concatenate([p.traffic for p in parts]), f.traffic)


def test_split_too_short():
    with pytest.raises(DataError):
        split_bounds(9)


def test_window_examples():
    f = frame_of(np.arange(10.0))
    assert len(make_windows(f, 6, 1)) == 5
    assert len(make_windows(frame_of(np.arange(8.0)), 6, 3)) == 1
    with pytest.raises(DataError):
        make_windows(f, 0, 1)


def test_window_alignment():
    f = frame_of(np.arange(12.0) * 10, np.arange(12.0)[:, None])
    for w in make_windows(f, 4, 2):
        t = int((w.anchor - T0) // HOUR)
        np.testing.assert_array_equal(w.exo[:, 0], np.arange(t - 3, t + 1))
        np.testing.assert_array_equal(w.hist, 10.0 * np.arange(t - 3, t))
        np.testing.assert_array_equal(w.label, 10.0 * np.arange(t, t + 2))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.integers(1, 8), st.integers(1, 4))
def test_window_count_formula(n, L, tau):
    f = frame_of(np.arange(float(n)))
    brute = sum(1 for t in range(n) if t - L + 1 >= 0 and t + tau - 1 < n)
    assert len(make_windows(f, L, tau)) == brute == window_count(n, L, tau)
    if brute:
        assert brute == n - L - tau + 2


def test_prepared_windows_never_straddle_and_labels_match(small_frame):
    prep = prepare(small_frame, 6)
    for split in ("train", "val", "test"):
        lo, hi = prep.split_range(split)
        exo, hist, label, rows = prep.windows(split, 2)
        assert rows.min() - 5 >= lo and rows.max() + 1 < hi
        np.testing.assert_allclose(invert_norm(label[:, 0], prep.stats), small_frame.traffic[rows], atol=1e-9)


def test_local_calendar():
    day, hour, dow = local_calendar(np.array([T0, T0 + 5 * 86400 + 3 * HOUR]))
    assert list(hour) == [0, 3] and list(dow) == [0, 5]
    _, hour, dow = local_calendar(np.array([T0]), utc_offset_hours=-1)
    assert hour[0] == 23 and dow[0] == 6
