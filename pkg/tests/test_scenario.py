from __future__ import annotations

import hashlib

import numpy as np
import pytest

from gridsubset.penalty import PenaltyConfig, subset_combinations
from gridsubset.scenario import (
    SAMPLES_PER_DAY,
    DEFAULT_LEVELS,
    SolarDataError,
    SolarProfile,
    congestion_scenarios,
    daylight_instants,
    gen_congestion_dataset,
    gen_subset_dataset,
    gen_variant_datasets,
    load_solar_csv,
    predicted_profiles,
    predicted_solar,
    read_congestion_csv,
    read_subset_csv,
    solar_at,
    step_instants,
    subset_scenarios,
    synth_solar,
    write_congestion_csv,
    write_solar_csv,
    write_subset_components,
    write_subset_csv,
)

PEAKS = [80.0, 65.0, 55.0]


def test_daylight_window_counts():
    assert len(daylight_instants(0)) == 51
    assert len(step_instants(0)) == 50
    # 05:45 through 18:15
    assert daylight_instants(0)[0] == 23 and daylight_instants(0)[-1] == 73
    assert daylight_instants(2)[0] == 2 * SAMPLES_PER_DAY + 23


def test_scenario_counts_match_protocol():
    assert len(congestion_scenarios(range(14), DEFAULT_LEVELS)) == 14 * 51 * 3 == 2142
    assert len(subset_scenarios(range(14))) * len(subset_combinations()) == 700 * 7 == 4900


def test_synthetic_solar_shape_and_bounds():
    profiles = synth_solar(3, PEAKS, seed=1)
    assert [p.days for p in profiles] == [3, 3, 3]
    for p, peak in zip(profiles, PEAKS):
        assert p.samples.min() >= 0 and p.samples.max() <= peak
        day = p.day(1)
        assert np.all(day[:21] == 0) and np.all(day[76:] == 0)  # dark before 05:15, after 18:45
        assert day[48] > 0.3 * peak  # noon is lit even on a dull day


def test_synthetic_solar_is_seeded():
    a = synth_solar(2, PEAKS, seed=5)
    b = synth_solar(2, PEAKS, seed=5)
    c = synth_solar(2, PEAKS, seed=6)
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))
    assert not np.array_equal(a[0].samples, c[0].samples)


def test_solar_csv_round_trip(tmp_path):
    profiles = synth_solar(2, PEAKS, seed=2)
    write_solar_csv(profiles, tmp_path / "s.csv")
    back = load_solar_csv(tmp_path / "s.csv")
    for p, q in zip(profiles, back):
        np.testing.assert_array_equal(p.samples, q.samples)
        assert q.start == p.start


def _write(tmp_path, lines):
    path = tmp_path / "bad.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def _day_lines(values=(1.0, 2.0, 3.0)):
    lines = ["timestamp,gen1_mw,gen2_mw,gen3_mw"]
    for k in range(SAMPLES_PER_DAY):
        lines.append(f"2017-03-01T{k // 4:02d}:{15 * (k % 4):02d}:00," + ",".join(map(str, values)))
    return lines


def test_solar_csv_accepts_one_day(tmp_path):
    assert load_solar_csv(_write(tmp_path, _day_lines()))[2].samples[0] == 3.0


def test_solar_csv_rejects_gap(tmp_path):
    lines = _day_lines()
    del lines[10]
    with pytest.raises(SolarDataError, match="non-uniform"):
        load_solar_csv(_write(tmp_path, lines))


def test_solar_csv_rejects_negative(tmp_path):
    lines = _day_lines()
    lines[5] = lines[5].rsplit(",", 1)[0] + ",-1.0"
    with pytest.raises(SolarDataError, match="negative"):
        load_solar_csv(_write(tmp_path, lines))


def test_solar_csv_rejects_partial_day(tmp_path):
    with pytest.raises(SolarDataError, match="whole days"):
        load_solar_csv(_write(tmp_path, _day_lines()[:50]))


def test_solar_csv_rejects_bad_header(tmp_path):
    lines = _day_lines()
    lines[0] = "time,a,b,c"
    with pytest.raises(SolarDataError, match="header"):
        load_solar_csv(_write(tmp_path, lines))


# -- forecast ------------------------------------------------------------------------

def test_predicted_solar_is_time_of_day_mean():
    samples = np.concatenate([np.full(SAMPLES_PER_DAY, 10.0), np.full(SAMPLES_PER_DAY, 20.0),
                              np.full(SAMPLES_PER_DAY, 99.0)])
    p = SolarProfile(0, samples)
    np.testing.assert_allclose(predicted_solar(p, 1), 10.0)
    np.testing.assert_allclose(predicted_solar(p, 2), 15.0)


def test_predicted_solar_needs_history():
    p = SolarProfile(0, np.zeros(SAMPLES_PER_DAY))
    with pytest.raises(SolarDataError):
        predicted_solar(p, 0)


def test_predicted_profiles_day_zero_unknown():
    pred = predicted_profiles(synth_solar(3, PEAKS, seed=1))
    assert np.all(np.isnan(pred[0].day(0)))
    assert not np.any(np.isnan(pred[0].day(2)))


# -- datasets ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def profiles():
    return synth_solar(3, PEAKS, seed=7)


def test_congestion_dataset_rows_and_features(ref_net, profiles):
    rows = gen_congestion_dataset(ref_net, profiles, DEFAULT_LEVELS, [1])
    assert len(rows) == 51 * 3
    t = daylight_instants(1)[10]
    # row order is (day, instant, level); solar features are the raw MW at that slot
    np.testing.assert_array_equal(rows[30].features[20:], solar_at(profiles, t))
    assert {r.label for r in rows} <= {0, 1}
    assert all(0.85 < v < 1.1 for r in rows for v in r.features[:20])


def test_congestion_dataset_rejects_uncovered_days(ref_net, profiles):
    with pytest.raises(SolarDataError):
        gen_congestion_dataset(ref_net, profiles, DEFAULT_LEVELS, [5])


def test_parallel_generation_matches_serial(ref_net, profiles):
    serial = gen_congestion_dataset(ref_net, profiles, DEFAULT_LEVELS[:1], [1], jobs=1)
    parallel = gen_congestion_dataset(ref_net, profiles, DEFAULT_LEVELS[:1], [1], jobs=2)
    assert [r.label for r in serial] == [r.label for r in parallel]
    np.testing.assert_array_equal([r.features for r in serial], [r.features for r in parallel])


def test_congestion_csv_round_trip_is_exact(tmp_path, ref_net, profiles):
    rows = gen_congestion_dataset(ref_net, profiles, DEFAULT_LEVELS[2:], [2])
    write_congestion_csv(rows, tmp_path / "c.csv")
    back = read_congestion_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal([r.features for r in rows], [r.features for r in back])
    write_congestion_csv(back, tmp_path / "c2.csv")
    digest = [hashlib.sha256((tmp_path / n).read_bytes()).hexdigest() for n in ("c.csv", "c2.csv")]
    assert digest[0] == digest[1]


def test_subset_dataset_descriptors_and_targets(ref_net, profiles):
    pred = predicted_profiles(profiles)
    cfg = PenaltyConfig(50.0, 2.0)
    rows, used = gen_subset_dataset(ref_net, profiles, pred, DEFAULT_LEVELS[1], cfg, [1])
    assert used == cfg
    assert len(rows) == 50 * 7
    combos = subset_combinations()
    t = step_instants(1)[20]
    block = rows[20 * 7:21 * 7]
    for row, choice in zip(block, combos):
        # off units show as zeros in the descriptor; on units carry the forecast
        np.testing.assert_array_equal(row.features[20:], np.where(choice.on_mask, solar_at(pred, t + 1), 0.0))
        act, p = solar_at(profiles, t + 1), solar_at(pred, t + 1)
        on = choice.on_mask
        assert row.l1 == pytest.approx(2.0 * np.abs(p[on] - act[on]).sum())
        assert row.l2 in (0.0, 50.0)
        assert row.target == row.l1 + row.l2
    # the all-off pattern never pays a mis-commitment penalty
    assert all(r.l1 == 0 for r in rows if r.pattern == 6)


def test_subset_calibration(ref_net, profiles):
    pred = predicted_profiles(profiles)
    rows, used = gen_subset_dataset(ref_net, profiles, pred, DEFAULT_LEVELS[0], None, [1, 2])
    assert np.mean([r.l1 for r in rows]) == pytest.approx(25.0)
    assert used.l2_congestion_penalty == 50.0


def test_subset_csv_round_trip_with_components(tmp_path, ref_net, profiles):
    pred = predicted_profiles(profiles)
    rows, _ = gen_subset_dataset(ref_net, profiles, pred, DEFAULT_LEVELS[2], PenaltyConfig(), [2])
    write_subset_csv(rows, tmp_path / "s.csv")
    write_subset_components(rows, tmp_path / "s_comp.csv")
    back = read_subset_csv(tmp_path / "s.csv", tmp_path / "s_comp.csv")
    assert [r.target for r in back] == [r.target for r in rows]
    assert [r.l2 for r in back] == [r.l2 for r in rows]
    assert [r.pattern for r in back] == [r.pattern for r in rows]


def test_variant_datasets_share_labels(ref_net, profiles):
    pred = predicted_profiles(profiles)
    act_rows, pred_rows = gen_variant_datasets(ref_net, profiles, pred, DEFAULT_LEVELS, [1, 2], 40, seed=3)
    assert len(act_rows) == len(pred_rows) == 40
    assert [r.label for r in act_rows] == [r.label for r in pred_rows]
    assert any(not np.array_equal(a.features, p.features) for a, p in zip(act_rows, pred_rows))


def test_variant_needs_history(ref_net, profiles):
    with pytest.raises(SolarDataError):
        gen_variant_datasets(ref_net, profiles, predicted_profiles(profiles), DEFAULT_LEVELS, [0], 10, 0)
