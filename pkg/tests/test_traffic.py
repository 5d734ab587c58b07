import numpy as np
import pandas as pd
import pytest

from ddam_sim.errors import ConfigurationError, DataError, TrafficGapError, TrafficParseError
from ddam_sim.traffic import (
    SAMPLES_PER_DAY,
    EmbeddingConfig,
    TrafficRecord,
    ap_embedding,
    build_kv,
    gen_periodic_traffic,
    load_traffic,
    sinusoidal_embedding,
    time_embedding,
    write_traffic_csv,
)


def write_rows(tmp_path, rows, header="ap_id,timestamp,volume"):
    path = tmp_path / "traffic.csv"
    path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    return path


def volumes(records, ap_id):
    return np.array([r.volume for r in records if r.ap_id == ap_id])


def test_one_day_has_a_full_grid_per_ap():
    records = gen_periodic_traffic(n_aps=2, days=1)
    assert len(records) == 2 * SAMPLES_PER_DAY
    assert {r.ap_id for r in records} == {"ap00", "ap01"}
    assert len(volumes(records, "ap00")) == 144
    assert all(r.volume > 0 for r in records)


def test_generator_is_deterministic():
    assert gen_periodic_traffic(3, 2, seed=9) == gen_periodic_traffic(3, 2, seed=9)
    assert gen_periodic_traffic(3, 2, seed=9) != gen_periodic_traffic(3, 2, seed=10)


def test_noiseless_series_repeat_daily_without_weekly_modulation():
    records = gen_periodic_traffic(1, 3, noise=0.0, weekly=0.0)
    v = volumes(records, "ap00")
    np.testing.assert_array_equal(v[:SAMPLES_PER_DAY], v[SAMPLES_PER_DAY : 2 * SAMPLES_PER_DAY])
    np.testing.assert_array_equal(v[:SAMPLES_PER_DAY], v[2 * SAMPLES_PER_DAY :])


def test_noiseless_series_repeat_weekly():
    records = gen_periodic_traffic(1, 14, noise=0.0)
    v = volumes(records, "ap00")
    week = 7 * SAMPLES_PER_DAY
    np.testing.assert_array_equal(v[:week], v[week:])
    assert not np.array_equal(v[:SAMPLES_PER_DAY], v[SAMPLES_PER_DAY : 2 * SAMPLES_PER_DAY])


def test_noisy_series_keep_their_daily_period():
    series = pd.Series(np.log(volumes(gen_periodic_traffic(1, 14, seed=3), "ap00")))
    assert series.autocorr(SAMPLES_PER_DAY) > 0.3
    assert series.autocorr(SAMPLES_PER_DAY) > series.autocorr(SAMPLES_PER_DAY // 2)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_aps": 0, "days": 1},
        {"n_aps": 1, "days": 0},
        {"n_aps": 1, "days": 1, "noise": -0.1},
        {"n_aps": 1, "days": 1, "weekly": 1.0},
    ],
)
def test_generator_rejections(kwargs):
    with pytest.raises(ConfigurationError):
        gen_periodic_traffic(**kwargs)


def test_csv_round_trip(tmp_path):
    records = gen_periodic_traffic(2, 1, seed=1)
    path = write_traffic_csv(records, tmp_path / "traffic.csv")
    assert path.read_text(encoding="utf-8").splitlines()[0] == "ap_id,timestamp,volume"
    assert load_traffic(path) == records


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_traffic(tmp_path / "absent.csv")


def test_wrong_header_reports_line_one(tmp_path):
    path = write_rows(tmp_path, ["a,2019-01-01T00:00:00,1"], header="ap,time,volume")
    with pytest.raises(TrafficParseError) as info:
        load_traffic(path)
    assert info.value.line == 1


@pytest.mark.parametrize(
    ("bad_row", "needle"),
    [
        ("a,2019-01-01T00:10:00,abc", "malformed"),
        ("a,not-a-time,3", "malformed"),
        ("a,,3", "malformed"),
        (",2019-01-01T00:10:00,3", "malformed"),
        ("a,2019-01-01T00:10:00,-1", "nonnegative"),
        ("a,2019-01-01T00:10:00,inf", "nonnegative"),
        ("a,2019-01-01T00:13:00,3", "off the 10-minute grid"),
    ],
)
def test_malformed_rows_report_their_line(tmp_path, bad_row, needle):
    path = write_rows(tmp_path, ["a,2019-01-01T00:00:00,1", bad_row])
    with pytest.raises(TrafficParseError) as info:
        load_traffic(path)
    assert info.value.line == 3
    assert needle in str(info.value)
    assert str(info.value).startswith("line 3:")


def test_gaps_are_listed():
    records = gen_periodic_traffic(2, 1)
    dropped = records[10]
    with pytest.raises(TrafficGapError) as info:
        build_kv(records[:10] + records[11:])
    assert info.value.missing == [(dropped.ap_id, dropped.timestamp)]


def test_gap_detected_on_load(tmp_path):
    path = write_rows(tmp_path, ["a,2019-01-01T00:00:00,1", "a,2019-01-01T00:20:00,1"])
    with pytest.raises(TrafficGapError):
        load_traffic(path)


def test_sinusoidal_embedding_at_zero():
    np.testing.assert_array_equal(sinusoidal_embedding(0, 6), [1, 0, 1, 0, 1, 0])


def test_sinusoidal_embedding_frequencies():
    e = sinusoidal_embedding(3.0, 4)
    np.testing.assert_allclose(e, [np.cos(3.0), np.sin(3.0), np.cos(0.03), np.sin(0.03)])


def test_ap_embedding_adds_a_one_hot():
    np.testing.assert_allclose(ap_embedding(2, 5) - sinusoidal_embedding(2, 5), np.eye(5)[2])
    np.testing.assert_array_equal(ap_embedding(7, 5), sinusoidal_embedding(7, 5))


def test_time_embedding_wraps_daily():
    np.testing.assert_array_equal(time_embedding(25, 10), time_embedding(1, 10))


def test_kv_shapes_and_values():
    records = gen_periodic_traffic(2, 2, seed=4)
    stream = build_kv(records)
    assert stream.keys.shape == (2, 48, 34)
    assert stream.values.shape == (2, 48, 6)
    assert EmbeddingConfig().d_k == 34
    np.testing.assert_allclose(stream.values[1].ravel(), np.log1p(volumes(records, "ap01")))
    assert stream.metadata["ap_ids"] == ["ap00", "ap01"]
    assert stream.metadata["hours"] == 48


def test_kv_keys_are_periodic_in_the_hour_of_day():
    stream = build_kv(gen_periodic_traffic(2, 2))
    np.testing.assert_array_equal(stream.keys[:, :24, 24:], stream.keys[:, 24:, 24:])
    np.testing.assert_array_equal(stream.keys[0, 0, :24], ap_embedding(0, 24))
    assert not np.array_equal(stream.keys[0, 0, :24], stream.keys[1, 0, :24])


def test_zero_volume_maps_to_zero_value():
    start = pd.Timestamp("2019-01-01")
    records = [TrafficRecord("a", start + i * pd.Timedelta(minutes=10), 0.0) for i in range(6)]
    stream = build_kv(records, EmbeddingConfig(d_ap=2, d_time=2))
    np.testing.assert_array_equal(stream.values, np.zeros((1, 1, 6)))
    assert stream.keys.shape == (1, 1, 4)


def test_incomplete_edge_hours_are_dropped():
    records = gen_periodic_traffic(1, 1, noise=0.0)[1:]
    stream = build_kv(records)
    assert stream.horizon == 23
    assert stream.metadata["start"] == "2019-01-07T01:00:00"


def test_agent_order_and_subset():
    records = gen_periodic_traffic(3, 1)
    full = build_kv(records)
    picked = build_kv(records, ap_ids=["ap02", "ap00"])
    np.testing.assert_array_equal(picked.values[0], full.values[2])
    np.testing.assert_array_equal(picked.values[1], full.values[0])
    with pytest.raises(DataError):
        build_kv(records, ap_ids=["ap09"])


def test_empty_records():
    with pytest.raises(DataError):
        build_kv([])
