"""
Command-line entry point.

    quadtune train    --preset baseline --seeds 5 --timesteps 6000000
    quadtune evaluate runs/baseline/seed_0/checkpoints/final.npz --trials 100 --horizon 10
    quadtune compare  a.npz b.npz c.npz --tests 5
    quadtune rollout  --hover --duration 10 --out hover.csv

Relative ``--out`` paths are placed under ``$QUADTUNE_OUT`` when it is set.

Exit codes: 0 success, 2 configuration/checkpoint error, 3 runtime error,
4 numerical divergence, 5 missing input file.
"""

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics, nn, svg
from .config import ExperimentConfig, load_config, serialize_config
from .dynamics import QuadrotorState
from .env import QuadrotorEnv
from .errors import CheckpointVersionError, ConfigError, NumericalDivergenceError, QuadtuneError
from .metrics import CHANNELS, METRICS, TRAJECTORY_COLUMNS
from .ppo import train
from .presets import PRESET_NAMES
from .quat import euler_from_quaternion

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DIVERGED, EXIT_MISSING = 0, 2, 3, 4, 5
OUT_ENV = "QUADTUNE_OUT"

log = logging.getLogger("quadtune")


def _out_dir(path):
    path = Path(path)
    root = os.environ.get(OUT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _experiment(args):
    if args.config:
        cfg = load_config(args.config)
        if args.preset and cfg.preset and args.preset != cfg.preset:
            raise ConfigError(f"--preset {args.preset} conflicts with config preset {cfg.preset}", "preset")
    else:
        cfg = ExperimentConfig.from_preset(args.preset or "baseline")
    changes = {}
    if args.timesteps is not None:
        changes["ppo"] = dataclasses.replace(cfg.ppo, total_timesteps=args.timesteps)
    if args.seeds is not None or args.seed is not None:
        first = args.seed if args.seed is not None else (cfg.seeds[0] if args.config else 0)
        count = args.seeds if args.seeds is not None else 1
        changes["seeds"] = tuple(range(first, first + count))
    if args.out is not None:
        changes["out"] = args.out
    return dataclasses.replace(cfg, **changes)


def cmd_train(args):
    cfg = _experiment(args)
    out = _out_dir(cfg.out)
    (out / "config.yaml").write_text(serialize_config(cfg))
    curves, status = {}, EXIT_OK
    for seed in cfg.seeds:
        seed_dir = out / f"seed_{seed}"
        log.info("training preset %s, seed %d -> %s", cfg.preset or "custom", seed, seed_dir)
        result = train(
            cfg.as_preset(), cfg.ppo, seed, out_dir=seed_dir, params=cfg.quadrotor,
            observation=cfg.observation, init=cfg.init, resume_from=args.resume,
        )
        curves[seed] = result.curve
        if result.diverged:
            (seed_dir / "FAILED").write_text("numerical divergence; last checkpoint retained\n")
            status = EXIT_DIVERGED
    _plot_curves(out / "learning_curve.svg", curves, cfg.preset or "custom")
    return status


def _plot_curves(path, curves, label):
    rows = [c for c in curves.values() if c]
    if not rows:
        return
    n = min(len(c) for c in rows)
    steps = np.array([r["timesteps"] for r in rows[0][:n]], dtype=float)
    rew = np.array([[r["episode_mean_reward"] for r in c[:n]] for c in rows], dtype=float)
    series = [(f"{label} mean of {len(rows)} seed(s)", steps, np.nanmean(rew, axis=0))]
    bands = [(steps, np.nanmin(rew, axis=0), np.nanmax(rew, axis=0))]
    svg.line_chart(path, series, title="Rollout episode mean reward", xlabel="timesteps",
                   ylabel="episode reward", bands=bands)


def _label(path, meta):
    return meta.get("preset") or Path(path).stem


def cmd_evaluate(args):
    metas = [nn.load_checkpoint(c)[1] for c in args.checkpoints]
    out = _out_dir(args.out or "eval")
    groups = {m: {} for m in METRICS}
    for ckpt, meta in zip(args.checkpoints, metas):
        label = _label(ckpt, meta)
        sub = out / label if len(args.checkpoints) > 1 else out
        reports = metrics.run_trials(ckpt, n_trials=args.trials, horizon=args.horizon, seed=args.seed,
                                     preset=args.preset)
        summary = metrics.summarize(reports)
        metrics.write_reports(sub, reports, summary)
        for m in METRICS:
            groups[m][label] = {ch: getattr(summary.channels[ch], m) for ch in CHANNELS}
        log.info("%s: %d trials, success %.0f%%", label, len(reports), 100 * summary.success_fraction)
    units = {"settling_time": "s", "overshoot": "% of step", "steady_state_error": "% of step"}
    for m in METRICS:
        svg.boxplot(out / f"{m}.svg", groups[m], CHANNELS, title=m.replace("_", " "), ylabel=units[m])
    return EXIT_OK


def _check_compatible(loaded):
    sizes = {(tuple(p.actor.layer_sizes), tuple(p.critic.layer_sizes)) for p, _ in loaded}
    if len(sizes) > 1:
        raise CheckpointVersionError(f"checkpoints have different network shapes: {sorted(sizes)}")


def cmd_compare(args):
    if len(args.checkpoints) < 2:
        raise ConfigError("compare needs at least two checkpoints", "checkpoints")
    loaded = [nn.load_checkpoint(c) for c in args.checkpoints]
    _check_compatible(loaded)
    out = _out_dir(args.out or "compare")
    labels, runs = [], []
    for i, (ckpt, (_, meta)) in enumerate(zip(args.checkpoints, loaded)):
        label = _label(ckpt, meta)
        if label in labels:
            label = f"{label}#{i}"
        labels.append(label)
        runs.append(metrics.run_trials(ckpt, n_trials=args.tests, horizon=args.horizon, seed=args.seed))
    col = {name: i for i, name in enumerate(TRAJECTORY_COLUMNS)}
    panels = []
    for ch in CHANNELS:
        series = []
        for label, reports in zip(labels, runs):
            for k, r in enumerate(reports):
                series.append((label if k == 0 else "", r.trajectory[:, 0], r.trajectory[:, col[ch]]))
        panels.append((ch, "rad" if ch == "yaw" else "m", series))
    svg.stacked_line_charts(out / "trajectories.svg", panels)

    rpm_panels, rpm_rows = [], {}
    for motor in range(4):
        series = []
        for label, reports in zip(labels, runs):
            n = min(len(r.rpm) for r in reports)
            mean = np.mean([r.rpm[:n, motor] for r in reports], axis=0)
            t = reports[0].trajectory[:n, 0]
            series.append((label, t, mean))
            rpm_rows[(label, motor)] = (t, mean)
        rpm_panels.append((f"motor {motor + 1}", "RPM", series))
    svg.stacked_line_charts(out / "rpm.svg", rpm_panels)
    with (out / "rpm_mean.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "motor", "t", "rpm"])
        for (label, motor), (t, mean) in rpm_rows.items():
            for ti, v in zip(t, mean):
                w.writerow([label, motor + 1, repr(float(ti)), repr(float(v))])
    return EXIT_OK


class HoverController:
    """Commands hover thrust regardless of the observation."""

    def __call__(self, obs, env):
        return np.zeros(4)


class RandomController:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def __call__(self, obs, env):
        return self.rng.uniform(-1.0, 1.0, 4)


ROLLOUT_COLUMNS = TRAJECTORY_COLUMNS + ("qx", "qy", "qz", "qw", "q_norm", "rpm1", "rpm2", "rpm3", "rpm4")


def rollout(controller, preset, duration, seed=0, start=None, params=None):
    """One episode; returns ``(rows, reason)`` with rows matching :data:`ROLLOUT_COLUMNS`."""
    from .presets import load_preset

    p = load_preset(preset)
    if duration <= 0:
        return [], None
    term = dataclasses.replace(p.termination, horizon=duration)
    rows = []

    def record(rec):
        x = rec["state"]
        q = x[3:7]
        rows.append([rec["t"], *x[0:3], *euler_from_quaternion(q), *x[7:10], *x[10:13], *rec["action"],
                     rec["reward"], *q, float(np.linalg.norm(q)), *rec["rpm"]])

    env = QuadrotorEnv(p.reward, term, params=params, seed=seed, recorder=record)
    _, obs = env.reset(state=start)
    reason = None
    while not env.done:
        out = env.step(controller(obs, env))
        obs = out.observation
        reason = out.info["reason"]
    return rows, f"reason={reason} terminated={reason != 'horizon'} t={env.elapsed:.2f}"


def cmd_rollout(args):
    if args.checkpoint:
        policy, meta = nn.load_checkpoint(args.checkpoint)
        preset = meta.get("preset") or args.preset or "baseline"

        def controller(obs, env):
            return nn.deterministic_action(policy, obs)
        start = None
    elif args.random:
        controller, preset, start = RandomController(args.seed), args.preset or "baseline", QuadrotorState.hover()
    else:
        controller, preset, start = HoverController(), args.preset or "baseline", QuadrotorState.hover()
    rows, footer = rollout(controller, preset, args.duration, seed=args.seed, start=start)
    out = Path(args.out or "rollout.csv")
    root = os.environ.get(OUT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    metrics.write_trajectory_csv(out, rows, ROLLOUT_COLUMNS, footer=footer)
    log.info("wrote %d rows to %s (%s)", len(rows), out, footer)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="quadtune", description=__doc__.split("\n\n")[0])
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one policy per seed")
    p.add_argument("--config")
    p.add_argument("--preset", choices=None)
    p.add_argument("--seed", type=int, help="first seed")
    p.add_argument("--seeds", type=int, help="number of consecutive seeds")
    p.add_argument("--timesteps", type=int)
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="randomized step-response trials")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="overlay matched-seed trials of several policies")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--tests", type=int, default=5)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("rollout", help="log one episode to CSV")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--checkpoint")
    src.add_argument("--hover", action="store_true", help="built-in hover controller (default)")
    src.add_argument("--random", action="store_true", help="uniform random actions")
    p.add_argument("--preset")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rollout)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    preset = getattr(args, "preset", None)
    try:
        if preset is not None and preset not in PRESET_NAMES:
            raise ConfigError(f"unknown preset {preset!r}; valid presets: {', '.join(PRESET_NAMES)}", "preset")
        return args.func(args)
    except (ConfigError, CheckpointVersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalDivergenceError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except QuadtuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
