import dataclasses
import math

import numpy as np
import pytest

from owam.forecaster import Forecaster, ForecasterConfig, FusedScaler, build_samples
from owam.harness import (
    NO_UPDATE, OWAM_DYNAMIC, STATIC_INCREMENTAL, UPDATE_MODES, RunConfig, RunError, TickClock, bench,
    check_prequential, format_duration, parse_duration, read_table, report_rows, rmse, run, run_offline,
    run_online, write_table, _seed_for,
)
from owam.scenarios import drift_dataset, planted_dataset
from owam.stream import Dataset, split_index

TINY = ForecasterConfig(hidden_dim=6, epochs=3, batch_size=32)


@pytest.fixture(scope="module")
def ds():
    return planted_dataset(0, n_sensors=8, n_planted=2, days=4)[0]


def _cfg(**kw):
    base = dict(targets=("s000", "s003"), theta=0.25, seed=1, model=TINY)
    base.update(kw)
    return RunConfig(**base)


def test_rmse_examples():
    y = np.array([1.0, 2.0, 3.0])
    assert rmse(y, y) == 0.0
    assert rmse(y + 2.5, y) == pytest.approx(2.5, abs=1e-15)
    rng = np.random.default_rng(0)
    p, t = rng.normal(size=100), rng.normal(size=100)
    assert abs(rmse(p, t) - math.sqrt(sum((a - b) ** 2 for a, b in zip(p, t)) / 100)) < 1e-12
    with pytest.raises(ValueError):
        rmse([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        rmse([], [])


@pytest.mark.parametrize("text, secs", [("1h", 3600), ("30d", 2_592_000), ("90m", 5400), ("1w", 604_800),
                                        ("600", 600)])
def test_durations(text, secs):
    assert parse_duration(text) == secs
    assert parse_duration(format_duration(secs)) == secs


def test_config_validation(ds):
    with pytest.raises(ValueError, match="window_T"):
        _cfg(mode="online").validate(ds)
    with pytest.raises(ValueError, match="targets"):
        _cfg(targets=()).validate(ds)
    with pytest.raises(ValueError, match="not in dataset"):
        _cfg(targets=("nope",)).validate(ds)
    with pytest.raises(ValueError):
        _cfg(theta=1.5).validate(ds)


def test_offline_report(ds):
    rep = run_offline(ds, _cfg(), TickClock())
    assert [t.target for t in rep.targets] == ["s000", "s003"]
    n_test = ds.n_steps - split_index(ds.n_steps, 0.8)
    assert all(t.n_predictions == n_test and t.rmse >= 0 and t.k == 2 for t in rep.targets)
    assert rep.rmse == pytest.approx(np.mean([t.rmse for t in rep.targets]), abs=1e-12)
    assert all(t.instance_pred_time_ms > 0 for t in rep.targets)


def test_deterministic_replay(ds):
    a = report_rows(run_offline(ds, _cfg(), TickClock()))
    b = report_rows(run_offline(ds, _cfg(), TickClock()))
    assert a == b


def test_wall_clock_only_moves_timing_columns(ds):
    a = report_rows(run_offline(ds, _cfg()))
    b = report_rows(run_offline(ds, _cfg()))
    strip = lambda rows: [{k: v for k, v in r.items() if not k.endswith(("_s", "_ms"))} for r in rows]  # noqa: E731
    assert strip(a) == strip(b)


def test_theta_zero_equals_target_only_model(ds):
    rep = run_offline(ds, _cfg(theta=0.0, targets=("s003",)), TickClock())
    n_train = split_index(ds.n_steps, 0.8)
    scaler = FusedScaler.fit(ds, ["s003"], np.ones(1), stop=n_train)
    m = Forecaster(1, TINY, _seed_for(1, 2, ds.index("s003")), scaler)
    m.train(build_samples(ds, "s003", None, stop=n_train))
    test = build_samples(ds, "s003", None, start=n_train)
    assert rep.targets[0].k == 0
    assert rep.rmse == rmse(m.predict_batch(test), test.Y)


def test_online_window_count(ds):
    rep = run_online(ds, _cfg(mode="online", window_T=3600), TickClock())
    n_base = split_index(ds.n_steps, 0.5)
    for t in rep.targets:
        assert len(t.windows) == (ds.n_steps - n_base) // 12
    assert rep.targets[0].windows[0].window_start == ds.timestamps[n_base]


@pytest.mark.parametrize("mode", UPDATE_MODES)
def test_event_log_is_prequential(ds, mode):
    rep = run_online(ds, _cfg(mode="online", update_mode=mode, window_T=3 * 3600), TickClock())
    assert check_prequential(rep.events) == []
    kinds = {e["event"] for e in rep.events}
    assert ("train" in kinds) == (mode != NO_UPDATE)
    assert ("ae_update" in kinds) == (mode == OWAM_DYNAMIC)


def test_check_prequential_catches_violations():
    bad = [{"window": 0, "target": "a", "event": "train", "data_end": 10},
           {"window": 0, "target": "a", "event": "evaluate", "data_end": 10}]
    assert check_prequential(bad)
    shared = [{"window": 0, "target": "a", "event": "evaluate", "data_end": 10},
              {"window": 0, "target": "*", "event": "ae_update", "data_end": 10},
              {"window": 0, "target": "b", "event": "evaluate", "data_end": 10}]
    assert check_prequential(shared)


@pytest.mark.parametrize("mode", UPDATE_MODES)
def test_future_data_cannot_leak(ds, mode):
    # perturbing window j must leave every earlier window's score bit-identical
    cfg = _cfg(mode="online", update_mode=mode, window_T=6 * 3600)
    n_base = split_index(ds.n_steps, 0.5)
    j = 3
    vals = ds.values.copy()
    lo = n_base + j * 72
    vals[lo:lo + 72] *= 1.7
    other = Dataset(ds.sensor_ids, ds.timestamps, vals, ds.sample_interval)
    a = run_online(ds, cfg, TickClock()).trace()
    b = run_online(other, cfg, TickClock()).trace()
    early = lambda tr: [(w.target, w.window_start, w.rmse) for w in tr if w.window_start < ds.timestamps[lo]]  # noqa: E731
    assert early(a) == early(b)
    assert [w.rmse for w in a] != [w.rmse for w in b]


def test_no_update_trace_replays_frozen_model(ds):
    cfg = _cfg(mode="online", update_mode=NO_UPDATE, window_T=6 * 3600)
    rep = run_online(ds, cfg, TickClock())
    base = run_offline(ds, dataclasses.replace(cfg, mode="offline"), TickClock(), train_fraction=0.5)
    T = 72
    n_base = split_index(ds.n_steps, 0.5)
    for t in rep.targets:
        model, _ = base.models[t.target]
        wm = base.weight_maps[t.target]
        for j, w in enumerate(t.windows):
            s = build_samples(ds, t.target, wm, start=n_base + j * T, stop=n_base + (j + 1) * T)
            assert w.rmse == pytest.approx(rmse(model.predict_batch(s), s.Y), abs=1e-9)


def test_mode_reduction(ds):
    n_base = split_index(ds.n_steps, 0.5)
    span = (ds.n_steps - n_base) * ds.sample_interval
    online = run_online(ds, _cfg(mode="online", update_mode=NO_UPDATE, window_T=span), TickClock())
    offline = run_offline(ds, _cfg(), TickClock(), train_fraction=0.5)
    assert abs(online.rmse - offline.rmse) < 1e-9


def test_aggregates_recomputable_from_traces(ds):
    rep = run_online(ds, _cfg(mode="online", update_mode=STATIC_INCREMENTAL, window_T=6 * 3600), TickClock())
    per_target = []
    for t in rep.targets:
        expect = np.mean([w.rmse for w in t.windows if not w.skipped])
        assert abs(t.rmse - expect) < 1e-12
        per_target.append(expect)
    assert abs(rep.rmse - np.mean(per_target)) < 1e-12


def test_owam_rejects_subhour_window(ds):
    with pytest.raises(ValueError, match="FPD"):
        run_online(ds, _cfg(mode="online", window_T=1800))
    with pytest.raises(ValueError, match="multiple"):
        run_online(ds, _cfg(mode="online", window_T=1000))


def test_errors_name_the_target(ds, monkeypatch):
    def explode(self, samples, *a, **kw):
        raise FloatingPointError("non-finite training loss")

    monkeypatch.setattr(Forecaster, "train", explode)
    with pytest.raises(RunError, match="s001.*non-finite"):
        run_offline(ds, _cfg(targets=("s001",)))


def test_bench_rows_and_round_trip(ds, tmp_path):
    cfgs = [_cfg(loss_kind="emd"), _cfg(loss_kind="rmse"), _cfg(loss_kind="rmse"),
            _cfg(mode="online", window_T=1800)]
    rows = bench(ds, cfgs, TickClock())
    means = [r for r in rows if r["target"] == "__mean__"]
    assert len({r["run_id"] for r in means}) == 4
    assert [r["status"] for r in means][:3] == ["ok"] * 3
    assert means[3]["status"].startswith("failed")
    assert all(r["instance_pred_time_ms"] > 0 for r in rows if r["status"] == "ok")
    write_table(rows, tmp_path / "bench.csv")
    back = read_table(tmp_path / "bench.csv")
    for a, b in zip(rows, back):
        assert {k: ("" if v is None else v) for k, v in a.items()} == b


def test_bench_needs_configs(ds):
    with pytest.raises(ValueError):
        bench(ds, [])


def test_run_dispatch(ds):
    assert run(ds, _cfg(), TickClock()).config.mode == "offline"


def test_drift_scenario_shape():
    d, target, a, b = drift_dataset(0, days=4)
    assert target == "s000" and a == ["s001", "s002", "s003"] and b == ["s004", "s005", "s006"]
    cut = int(0.6 * d.n_steps)
    # target relative to the untouched sensors at the same step, so the daily cycle cancels
    ratio = d.column(target) / np.median(d.values[:, 7:], axis=1)
    assert np.median(ratio[cut:]) > 1.2 * np.median(ratio[:cut])
