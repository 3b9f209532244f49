"""
Step-response metrics and the randomized evaluation protocol.

Each trial starts from a random state and targets hover at (0, 0, 1) with
zero yaw. The x, y, z and yaw channels are scored separately. Percentages
are relative to the channel's own step magnitude ``|target - initial|``,
since three of the four targets are zero.
"""

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .dynamics import QuadrotorParams
from .env import CONTROL_DT, InitSpec, ObservationSpec, QuadrotorEnv
from .errors import ConfigError, InvalidInputError
from .presets import Preset, load_preset, reward_from_dict, termination_from_dict
from .quat import euler_from_quaternion

CHANNELS = ("x", "y", "z", "yaw")
METRICS = ("settling_time", "overshoot", "steady_state_error")
DEFAULT_BAND = 0.02
DEFAULT_WINDOW = 2.0  # s, tail used for steady-state error

TRAJECTORY_COLUMNS = (
    "t", "x", "y", "z", "roll", "pitch", "yaw", "vx", "vy", "vz", "wx", "wy", "wz",
    "a1", "a2", "a3", "a4", "reward",
)


def _signal(signal):
    s = np.asarray(signal, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise InvalidInputError("signal must be a non-empty 1-D sequence")
    return s


def settling_time(signal, target, step_magnitude, band_fraction=DEFAULT_BAND, dt=CONTROL_DT):
    """
    Earliest sample time after which the signal never leaves the band
    ``|s - target| <= band_fraction·step_magnitude``.

    Returns ``None`` when the final sample lies outside the band.
    """
    s = _signal(signal)
    if not step_magnitude > 0:
        raise InvalidInputError("step_magnitude must be positive")
    outside = np.abs(s - target) > band_fraction * step_magnitude
    if outside[-1]:
        return None
    hits = np.flatnonzero(outside)
    first = 0 if hits.size == 0 else hits[-1] + 1
    return first * dt


def overshoot(signal, initial, target):
    """Peak excursion past ``target`` in the step direction, in percent of ``|target - initial|``."""
    s = _signal(signal)
    step = target - initial
    if step == 0:
        return 0.0
    excursion = np.max((s - target) * np.sign(step))
    return max(0.0, float(excursion)) / abs(step) * 100.0


def steady_state_error(signal, target, window, dt=CONTROL_DT, step_magnitude=None):
    """
    Mean ``|s - target|`` over the last ``window`` seconds.

    In percent of ``step_magnitude`` when given, otherwise in signal units.
    """
    s = _signal(signal)
    n = int(round(window / dt))
    if n < 1 or n > s.size:
        raise InvalidInputError(f"window of {window} s needs {n} samples; signal has {s.size}")
    err = float(np.mean(np.abs(s[-n:] - target)))
    if step_magnitude is None:
        return err
    if not step_magnitude > 0:
        raise InvalidInputError("step_magnitude must be positive")
    return err / step_magnitude * 100.0


@dataclass
class ChannelMetrics:
    settling_time: Optional[float]
    overshoot: float
    steady_state_error: float
    overshoot_abs: float = 0.0
    steady_state_error_abs: float = 0.0
    step_magnitude: float = 0.0
    degenerate: bool = False


def channel_metrics(signal, initial, target, dt=CONTROL_DT, band_fraction=DEFAULT_BAND, window=DEFAULT_WINDOW,
                    complete=True):
    """
    All three metrics for one channel.

    ``complete=False`` marks a trial that ended early: it never counts as
    settled and the steady-state window shrinks to whatever was recorded.
    """
    s = _signal(signal)
    step = abs(target - initial)
    window = min(window, s.size * dt)
    sse_abs = steady_state_error(s, target, window, dt)
    if step == 0:
        return ChannelMetrics(
            settling_time=0.0 if complete and sse_abs == 0 else None,
            overshoot=0.0, steady_state_error=0.0, steady_state_error_abs=sse_abs, degenerate=True,
        )
    ov = overshoot(s, initial, target)
    return ChannelMetrics(
        settling_time=settling_time(s, target, step, band_fraction, dt) if complete else None,
        overshoot=ov,
        steady_state_error=sse_abs / step * 100.0,
        overshoot_abs=ov * step / 100.0,
        steady_state_error_abs=sse_abs,
        step_magnitude=step,
    )


@dataclass
class TrialReport:
    trial: int
    seed: int
    initial_state: dict
    channels: dict
    success: bool
    reason: Optional[str]
    duration: float
    trajectory: np.ndarray = field(repr=False, default=None)
    rpm: np.ndarray = field(repr=False, default=None)
    trajectory_path: Optional[str] = None

    def to_dict(self):
        return {
            "trial": self.trial,
            "seed": self.seed,
            "initial_state": self.initial_state,
            "channels": {k: dataclasses.asdict(v) for k, v in self.channels.items()},
            "success": self.success,
            "reason": self.reason,
            "duration": self.duration,
            "trajectory_path": self.trajectory_path,
        }


class _Recorder:
    def __init__(self):
        self.rows = []
        self.rpm = []

    def __call__(self, rec):
        x = rec["state"]
        roll, pitch, yaw = euler_from_quaternion(x[3:7])
        self.rows.append(
            [rec["t"], *x[0:3], roll, pitch, yaw, *x[7:10], *x[10:13], *rec["action"], rec["reward"]]
        )
        self.rpm.append(rec["rpm"])


def _yaw_signal(yaw):
    # continuous yaw; the target is whichever multiple of 2π the trace ends nearest
    unwrapped = np.unwrap(yaw)
    target = 2.0 * np.pi * np.round(unwrapped[-1] / (2.0 * np.pi))
    return unwrapped, target


def trajectory_metrics(traj, initial_yaw, target_position, dt=CONTROL_DT, band_fraction=DEFAULT_BAND,
                       window=DEFAULT_WINDOW, complete=True, initial_position=None):
    """Per-channel metrics from a trajectory array with :data:`TRAJECTORY_COLUMNS`."""
    cols = {name: traj[:, i] for i, name in enumerate(TRAJECTORY_COLUMNS)}
    p0 = initial_position if initial_position is not None else traj[0, 1:4]
    out = {}
    for i, ch in enumerate(("x", "y", "z")):
        out[ch] = channel_metrics(cols[ch], p0[i], target_position[i], dt, band_fraction, window, complete)
    yaw, yaw_target = _yaw_signal(np.concatenate([[initial_yaw], cols["yaw"]]))
    out["yaw"] = channel_metrics(yaw[1:], yaw[0], yaw_target, dt, band_fraction, window, complete)
    return out


def _resolve_policy(policy_checkpoint, preset):
    """Load a checkpoint and reconcile its preset with an explicitly requested one."""
    policy, meta = nn.load_checkpoint(policy_checkpoint)
    stored = Preset(
        name=meta.get("preset", "custom"),
        reward=reward_from_dict(meta["reward"]),
        termination=termination_from_dict(meta["termination"]),
    )
    if preset is not None:
        requested = load_preset(preset)
        if requested.name != stored.name or requested.termination != stored.termination:
            raise ConfigError(
                f"checkpoint was trained with preset {stored.name!r}, not {requested.name!r}", "preset"
            )
    params = QuadrotorParams(**meta["quadrotor"]) if "quadrotor" in meta else QuadrotorParams()
    return policy, stored, params


def run_trials(policy_checkpoint=None, n_trials=100, horizon=10.0, seed=0, preset=None, controller=None,
               params=None, observation=None, init=None, band_fraction=DEFAULT_BAND, window=DEFAULT_WINDOW,
               keep_trajectories=True):
    """
    Evaluate a policy on ``n_trials`` random initial states.

    Parameters
    ----------
    policy_checkpoint : path, optional
        Checkpoint written by training; the deterministic action
        ``tanh(actor mean)`` is used.
    controller : callable, optional
        Replaces the checkpoint: ``controller(obs, env) -> action``. If it has
        a ``reset(env)`` method it is called right after each reset and
        before the first recorded sample.
    preset : str or Preset, optional
        Required with ``controller``; with a checkpoint it must match the
        preset stored in the checkpoint.

    Returns
    -------
    list of TrialReport
    """
    if n_trials < 1:
        raise InvalidInputError("n_trials must be at least 1")
    if controller is None:
        if policy_checkpoint is None:
            raise InvalidInputError("need a policy checkpoint or a controller")
        policy, resolved, ckpt_params = _resolve_policy(policy_checkpoint, preset)
        params = params or ckpt_params

        def controller(obs, env):
            return nn.deterministic_action(policy, obs)
    else:
        if preset is None:
            raise InvalidInputError("a preset is required when evaluating a custom controller")
        resolved = load_preset(preset)
    termination = dataclasses.replace(resolved.termination, horizon=horizon)
    params = params or QuadrotorParams()
    init = init or InitSpec()
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_trials)]

    reports = []
    for k, trial_seed in enumerate(seeds):
        rec = _Recorder()
        env = QuadrotorEnv(resolved.reward, termination, params=params, observation=observation or ObservationSpec(),
                           init=init, seed=trial_seed)
        initial, _ = env.reset()
        if hasattr(controller, "reset"):
            controller.reset(env)
        env.recorder = rec
        rec(_reset_record(env))
        obs = env.observe()
        reason = None
        while not env.done:
            out = env.step(controller(obs, env))
            obs = out.observation
            reason = out.info["reason"]
        traj = np.asarray(rec.rows)
        complete = reason == "horizon"
        roll0, pitch0, yaw0 = euler_from_quaternion(initial.quaternion)
        channels = trajectory_metrics(traj, yaw0, env.target_position, CONTROL_DT, band_fraction, window,
                                      complete, initial_position=initial.position)
        reports.append(
            TrialReport(
                trial=k,
                seed=trial_seed,
                initial_state={
                    "position": initial.position.tolist(),
                    "euler": [roll0, pitch0, yaw0],
                },
                channels=channels,
                success=complete,
                reason=reason,
                duration=env.elapsed,
                trajectory=traj if keep_trajectories else None,
                rpm=np.asarray(rec.rpm) if keep_trajectories else None,
            )
        )
    return reports


def _reset_record(env):
    return {"t": 0.0, "state": env._x.copy(), "action": env.prev_action.copy(),
            "rpm": np.full(4, env.params.hover_rpm), "reward": 0.0}


# -- aggregation ------------------------------------------------------------


@dataclass
class Quartiles:
    min: float
    q1: float
    median: float
    q3: float
    max: float

    @classmethod
    def of(cls, values):
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            return cls(*(float("nan"),) * 5)
        q = np.percentile(v, [0, 25, 50, 75, 100])
        return cls(*(float(x) for x in q))

    @property
    def iqr(self):
        return self.q3 - self.q1


@dataclass
class ChannelSummary:
    settling_time: Quartiles
    overshoot: Quartiles
    steady_state_error: Quartiles
    outliers: dict
    n: int
    unsettled: int
    fraction_within_band: float
    fraction_zero_overshoot: float
    fraction_overshoot_within_band: float


@dataclass
class BatchSummary:
    channels: dict
    n_trials: int
    success_fraction: float
    band_fraction: float

    def to_dict(self):
        return dataclasses.asdict(self)


def _outliers(values, trials, q):
    lo, hi = q.q1 - 1.5 * q.iqr, q.q3 + 1.5 * q.iqr
    return [(int(t), float(v)) for t, v in zip(trials, values) if v < lo or v > hi]


def summarize(reports, band_fraction=DEFAULT_BAND):
    """
    Per-channel quartiles (linear interpolation) with 1.5·IQR outlier fences.

    Fractions count every trial, so failed trials (which never settle)
    lower them. Quartiles use the trials where the metric exists.
    """
    if not reports:
        raise InvalidInputError("need at least one report")
    band_pct = band_fraction * 100.0
    channels = {}
    n = len(reports)
    for ch in CHANNELS:
        stats = {}
        outliers = {}
        for metric in METRICS:
            pairs = [(r.trial, getattr(r.channels[ch], metric)) for r in reports]
            pairs = [(t, v) for t, v in pairs if v is not None and np.isfinite(v)]
            trials = [t for t, _ in pairs]
            values = [v for _, v in pairs]
            q = Quartiles.of(values)
            stats[metric] = q
            outliers[metric] = _outliers(values, trials, q)
        ok = [r for r in reports if r.success]
        channels[ch] = ChannelSummary(
            **stats,
            outliers=outliers,
            n=n,
            unsettled=sum(1 for r in reports if r.channels[ch].settling_time is None),
            fraction_within_band=sum(1 for r in ok if r.channels[ch].steady_state_error <= band_pct) / n,
            fraction_zero_overshoot=sum(1 for r in ok if r.channels[ch].overshoot == 0.0) / n,
            fraction_overshoot_within_band=sum(1 for r in ok if r.channels[ch].overshoot <= band_pct) / n,
        )
    return BatchSummary(
        channels=channels,
        n_trials=n,
        success_fraction=sum(r.success for r in reports) / n,
        band_fraction=band_fraction,
    )


# -- files ------------------------------------------------------------------


def write_trajectory_csv(path, rows, columns=TRAJECTORY_COLUMNS, footer=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
        if footer:
            fh.write(f"# {footer}\n")
    return path


def write_reports(out_dir, reports, summary):
    """Write ``reports.json``, ``summary.json``, ``summary.csv`` and one trajectory CSV per trial."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in reports:
        if r.trajectory is not None:
            p = write_trajectory_csv(out_dir / "trajectories" / f"trial_{r.trial:03d}.csv", r.trajectory)
            r.trajectory_path = str(p.relative_to(out_dir))
    (out_dir / "reports.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2))
    (out_dir / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2))
    with (out_dir / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "channel", "min", "q1", "median", "q3", "max", "outliers"])
        for metric in METRICS:
            for ch in CHANNELS:
                cs = summary.channels[ch]
                q = getattr(cs, metric)
                w.writerow([metric, ch, q.min, q.q1, q.median, q.q3, q.max, len(cs.outliers[metric])])
