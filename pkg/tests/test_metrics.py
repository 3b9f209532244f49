import json
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from quadtune import metrics, nn
from quadtune.errors import ConfigError, InvalidInputError
from quadtune.metrics import (
    Quartiles,
    channel_metrics,
    overshoot,
    run_trials,
    settling_time,
    steady_state_error,
    summarize,
    trajectory_metrics,
)

DT = 0.01
WN = 2 * math.pi * 0.5


def second_order_step(zeta, wn=WN):
    """Unit step response of wn²/(s² + 2ζ wn s + wn²)."""
    if zeta < 1:
        wd = wn * math.sqrt(1 - zeta**2)
        phi = math.acos(zeta)
        return lambda t: 1 - np.exp(-zeta * wn * t) * np.sin(wd * t + phi) / math.sqrt(1 - zeta**2)
    if zeta == 1:
        return lambda t: 1 - (1 + wn * t) * np.exp(-wn * t)
    r = math.sqrt(zeta**2 - 1)
    s1, s2 = -wn * (zeta - r), -wn * (zeta + r)
    return lambda t: 1 + (s2 * np.exp(s1 * t) - s1 * np.exp(s2 * t)) / (s1 - s2)


def exact_settling_time(y, band=0.02, horizon=20.0):
    # last time |y - 1| = band, refined from a fine grid
    t = np.linspace(0, horizon, 200_001)
    g = np.abs(y(t) - 1) - band
    idx = np.flatnonzero(np.sign(g[:-1]) != np.sign(g[1:]))
    k = idx[-1]
    return brentq(lambda s: abs(y(s) - 1) - band, t[k], t[k + 1], xtol=1e-14)


@pytest.mark.parametrize("wn", [1.0, 2.0, 5.0, WN])
@pytest.mark.parametrize("zeta", [0.5, 0.7, 1.0, 1.5])
def test_second_order_oracle(zeta, wn):
    y = second_order_step(zeta, wn)
    t = np.arange(0, 3001) * DT
    signal = y(t)
    expected_os = 100 * math.exp(-zeta * math.pi / math.sqrt(1 - zeta**2)) if zeta < 1 else 0.0
    assert overshoot(signal, 0.0, 1.0) == pytest.approx(expected_os, abs=0.5)
    ts = settling_time(signal, 1.0, 1.0, 0.02, DT)
    assert abs(ts - exact_settling_time(y, horizon=30.0)) <= DT


@pytest.mark.parametrize("zeta", [0.5, 0.7, 1.0, 1.5])
def test_second_order_oracle_scaled_and_reversed(zeta):
    # step from 2.0 down to 0.5: percentages are relative to the 1.5 step magnitude
    y = second_order_step(zeta)
    t = np.arange(0, 2001) * DT
    signal = 2.0 - 1.5 * y(t)
    expected_os = 100 * math.exp(-zeta * math.pi / math.sqrt(1 - zeta**2)) if zeta < 1 else 0.0
    m = channel_metrics(signal, 2.0, 0.5, DT)
    assert m.overshoot == pytest.approx(expected_os, abs=0.5)
    assert abs(m.settling_time - exact_settling_time(y)) <= DT
    assert m.overshoot_abs == pytest.approx(m.overshoot / 100 * 1.5)


def test_underdamped_ordering():
    t = np.arange(0, 2001) * DT
    os = [overshoot(second_order_step(z)(t), 0, 1) for z in (0.3, 0.5, 0.7, 0.9)]
    assert os == sorted(os, reverse=True)


def test_already_settled_signal():
    assert settling_time(np.ones(100), 1.0, 1.0) == 0.0
    assert overshoot(np.ones(100), 0.0, 1.0) == 0.0


def test_unsettled_signal_returns_none():
    s = np.linspace(0, 0.5, 100)
    assert settling_time(s, 1.0, 1.0) is None


def test_steady_state_error_window():
    s = np.concatenate([np.zeros(800), np.full(200, 0.97)])
    assert steady_state_error(s, 1.0, 2.0, DT) == pytest.approx(0.03)
    assert steady_state_error(s, 1.0, 2.0, DT, step_magnitude=1.5) == pytest.approx(2.0)
    with pytest.raises(InvalidInputError):
        steady_state_error(s, 1.0, 20.0, DT)


def test_invalid_signals_rejected():
    with pytest.raises(InvalidInputError):
        settling_time([], 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        settling_time([1.0, 2.0], 1.0, 0.0)


def test_degenerate_step():
    m = channel_metrics(np.zeros(300), 0.0, 0.0, DT)
    assert m.degenerate and m.overshoot == 0.0 and m.settling_time == 0.0


def test_incomplete_trial_never_settles():
    m = channel_metrics(np.ones(50), 0.0, 1.0, DT, complete=False)
    assert m.settling_time is None
    assert m.steady_state_error == 0.0


def test_yaw_wraps_to_nearest_target():
    # yaw heading from 170° through ±180° to 360° ≡ 0°: a short path of 190°, no spurious 2π jump
    n = 1001
    t = np.arange(n) * DT
    unwrapped = 2 * math.pi - math.radians(190) * np.exp(-t)
    wrapped = np.angle(np.exp(1j * unwrapped))
    traj = np.zeros((n, len(metrics.TRAJECTORY_COLUMNS)))
    traj[:, 0] = t
    traj[:, 3] = 1.0
    traj[:, 6] = wrapped
    out = trajectory_metrics(traj, wrapped[0], np.array([0, 0, 1.0]), initial_position=np.array([0, 0, 1.0]))
    assert out["yaw"].step_magnitude == pytest.approx(math.radians(190), abs=1e-9)
    assert out["yaw"].overshoot == 0.0
    assert out["yaw"].steady_state_error < 0.1


# -- aggregation ------------------------------------------------------------------------


def test_quartiles_match_hand_values():
    q = Quartiles.of([1, 2, 3, 4, 5, 6, 7, 8, 9, 100])
    # linear interpolation: position (n-1)p
    assert (q.min, q.q1, q.median, q.q3, q.max) == (1, 3.25, 5.5, 7.75, 100)
    assert q.iqr == 4.5


def test_single_value_quartiles_degenerate():
    q = Quartiles.of([2.5])
    assert q.min == q.q1 == q.median == q.q3 == q.max == 2.5


def fake_report(trial, ts, os, sse, success=True):
    chans = {
        ch: metrics.ChannelMetrics(settling_time=ts, overshoot=os, steady_state_error=sse)
        for ch in metrics.CHANNELS
    }
    return metrics.TrialReport(trial=trial, seed=trial, initial_state={}, channels=chans, success=success,
                               reason="horizon" if success else "velocity", duration=10.0)


def test_summary_outliers_and_fractions():
    reports = [fake_report(i, 1.0 + 0.1 * i, 0.0, 1.0) for i in range(9)]
    reports.append(fake_report(9, 50.0, 5.0, 10.0))
    reports.append(fake_report(10, None, 0.0, 1.0, success=False))
    s = summarize(reports)
    x = s.channels["x"]
    assert x.n == 11 and x.unsettled == 1
    assert [t for t, _ in x.outliers["settling_time"]] == [9]
    assert x.fraction_zero_overshoot == pytest.approx(9 / 11)
    assert x.fraction_within_band == pytest.approx(9 / 11)
    assert s.success_fraction == pytest.approx(10 / 11)
    assert x.settling_time.median == pytest.approx(Quartiles.of([1.0 + 0.1 * i for i in range(9)] + [50.0]).median)


def test_summary_requires_reports():
    with pytest.raises(InvalidInputError):
        summarize([])


# -- evaluation protocol ---------------------------------------------------------------------


class Hover:
    """Teleports to the target on reset and then commands hover thrust."""

    def reset(self, env):
        from quadtune.dynamics import QuadrotorState

        env.set_state(QuadrotorState.hover())

    def __call__(self, obs, env):
        return np.zeros(4)


def test_run_trials_with_perfect_controller():
    reports = run_trials(controller=Hover(), preset="baseline", n_trials=3, horizon=1.0)
    assert len(reports) == 3
    for r in reports:
        assert r.success and r.reason == "horizon"
        assert r.trajectory.shape == (101, len(metrics.TRAJECTORY_COLUMNS))
        for ch in metrics.CHANNELS:
            assert r.channels[ch].overshoot == 0.0


def test_run_trials_requires_policy_or_controller():
    with pytest.raises(InvalidInputError):
        run_trials(n_trials=1)
    with pytest.raises(InvalidInputError):
        run_trials(controller=Hover(), n_trials=1)
    with pytest.raises(InvalidInputError):
        run_trials(controller=Hover(), preset="baseline", n_trials=0)


@pytest.fixture
def checkpoint(tmp_path):
    from quadtune.ppo import _checkpoint_metadata, PpoConfig
    from quadtune.presets import load_preset
    from quadtune.dynamics import QuadrotorParams
    from quadtune.env import InitSpec, ObservationSpec

    meta = _checkpoint_metadata(load_preset("baseline"), QuadrotorParams(), ObservationSpec(), InitSpec(),
                                PpoConfig(), 0, 0, 0)
    return nn.save_checkpoint(tmp_path / "p.npz", nn.init_policy(0), meta)


def test_evaluation_is_bit_reproducible(checkpoint):
    a = run_trials(checkpoint, n_trials=5, horizon=2.0, seed=4)
    b = run_trials(checkpoint, n_trials=5, horizon=2.0, seed=4)
    for ra, rb in zip(a, b):
        assert ra.trajectory.tobytes() == rb.trajectory.tobytes()
        assert ra.to_dict() == rb.to_dict()


def test_single_trial_summary(checkpoint):
    s = summarize(run_trials(checkpoint, n_trials=1, horizon=1.0))
    q = s.channels["x"].overshoot
    assert q.min == q.q1 == q.median == q.q3 == q.max


def test_preset_mismatch_rejected(checkpoint):
    with pytest.raises(ConfigError):
        run_trials(checkpoint, n_trials=1, preset="inspection")


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        run_trials(tmp_path / "none.npz", n_trials=1)


def test_write_reports(checkpoint, tmp_path):
    reports = run_trials(checkpoint, n_trials=2, horizon=1.0)
    out = tmp_path / "eval"
    metrics.write_reports(out, reports, summarize(reports))
    data = json.loads((out / "reports.json").read_text())
    assert len(data) == 2 and data[0]["trajectory_path"] == "trajectories/trial_000.csv"
    header = (out / "trajectories" / "trial_000.csv").read_text().splitlines()[0]
    assert header == ",".join(metrics.TRAJECTORY_COLUMNS)
    rows = (out / "summary.csv").read_text().splitlines()
    assert len(rows) == 1 + len(metrics.METRICS) * len(metrics.CHANNELS)
