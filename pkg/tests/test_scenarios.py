import numpy as np

from owam.scenarios import drift_dataset, metr_la_like, planted_dataset, write_metr_la_csv
from owam.stream import diurnal_profile, generate_synthetic, load_csv


def _ratio(ds, sensor):
    # anomaly factor: observed / noiseless base, exact when noise is off
    return ds.column(sensor) / diurnal_profile(ds.n_steps)


def test_planted_group_leads_target_by_lag():
    ds, target, planted = planted_dataset(4, n_sensors=8, n_planted=2, days=2, noise_sigma=0.0, lag=2)
    t = _ratio(ds, target)
    for s in planted:
        np.testing.assert_allclose(_ratio(ds, s)[:-2], t[2:], rtol=1e-9)
    assert np.any(t != 1.0)


def test_unrelated_sensors_have_own_schedules():
    ds, target, _ = planted_dataset(4, n_sensors=8, n_planted=2, days=2, noise_sigma=0.0)
    t = _ratio(ds, target) != 1.0
    for s in ds.sensor_ids[3:]:
        assert not np.array_equal(_ratio(ds, s) != 1.0, t)


def test_phase_jitter_keeps_target_group_shape():
    a = planted_dataset(2, n_sensors=10, n_planted=3, days=2, phase_jitter_h=3.0)[0]
    b = planted_dataset(2, n_sensors=10, n_planted=3, days=2)[0]
    np.testing.assert_array_equal(a.values[:, :4], b.values[:, :4])
    assert not np.array_equal(a.values[:, 4:], b.values[:, 4:])


def test_shifted_profiles_stay_periodic():
    ds = generate_synthetic(3, 576, 0, noise_sigma=0.0, shift_steps=[0, 5, -30], level_scale=[1.0, 0.5, 2.0])
    np.testing.assert_array_equal(ds.values[:288], ds.values[288:])
    np.testing.assert_allclose(ds.values[:, 1], 0.5 * np.roll(ds.values[:, 0], 5))


def test_drift_swaps_upstream_group():
    ds, target, group_a, group_b = drift_dataset(1, days=5, noise_sigma=0.0, level_shift=1.0)
    cut = int(0.6 * ds.n_steps)
    t = _ratio(ds, target)
    a, b = _ratio(ds, group_a[0]), _ratio(ds, group_b[0])
    np.testing.assert_allclose(a[:cut - 2], t[2:cut], rtol=1e-9)
    np.testing.assert_allclose(b[cut:-2], t[cut + 2:], rtol=1e-9)


def test_metr_la_like_round_trip(tmp_path):
    ds, targets, mask = metr_la_like(0, n_sensors=12, days=2, n_targets=2, group_size=2, missing=0.05)
    path = tmp_path / "m.csv"
    write_metr_la_csv(ds, path, mask)
    back = load_csv(path, zero_is_missing=True)
    assert back.sensor_ids == ds.sensor_ids and set(targets) <= set(ds.sensor_ids)
    np.testing.assert_array_equal(back.timestamps, ds.timestamps)
    np.testing.assert_allclose(back.values[~mask], ds.values.round(4)[~mask], rtol=0, atol=1e-12)
