"""Command-line entry point: ``racelab {train,eval,race,plot,track}``.

Every command that produces files creates one run directory,
``<runs-root>/<timestamp>-<label>-<hash>/``, and writes ``manifest.json``
there before doing any work. Exit codes: 0 success, 1 usage error,
2 runtime failure (divergence, I/O, unreadable inputs).

Config files are YAML (JSON is valid YAML too)::

    algorithm: td3
    steps: 50000          # gradient updates (off-policy methods)
    episodes: 600         # episode budget (ppo)
    eval_episodes: 100
    seeds: [0, 1, 2]      # or a count, e.g. 10
    workers: 1
    env: {obstacles: true, chicanes: true, turn_limit: true, low_speed_termination: true, dt: 0.04}
    track: {track_width: 0.2, map_resolution: 1300}
    hyperparams: {gamma: 0.99, batch_size: 64}

A manifest is itself a valid config: its ``resolved`` block is read back
as-is, so ``train --config runs/<run>/manifest.json`` repeats the run.
Command-line flags override file values.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from . import harness
from .agents import ALGORITHMS, AgentHyperparams, load_agent
from .environment import EnvConfig
from .track import TrackConfig, export_pgm, export_svg, generate_track

logger = logging.getLogger("racelab")

TOGGLES = ("obstacles", "chicanes", "turn_limit", "low_speed_termination")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    data = data or {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a mapping")
    if "resolved" in data:  # a manifest from an earlier run
        data = data["resolved"]
    return data


def _pick(cls, d, what):
    d = d or {}
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise UsageError(f"unknown {what} keys: {', '.join(unknown)}")
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _parse_seeds(value):
    if isinstance(value, int):
        if value < 1:
            raise UsageError("--seeds count must be positive")
        return tuple(range(value))
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    text = str(value).strip()
    try:
        if "," in text:
            return tuple(int(v) for v in text.split(",") if v.strip())
        return _parse_seeds(int(text))
    except ValueError:
        raise UsageError(f"bad seed list {value!r}") from None


def resolve(file_cfg: dict, args) -> dict:
    """Merge config file and flags into one plain-data dict (flags win)."""
    cfg = dict(file_cfg)
    env = dict(cfg.get("env") or {})
    track = dict(cfg.get("track") or env.pop("track", None) or {})
    for name in TOGGLES:
        flag = getattr(args, name, None)
        if flag is not None:
            env[name] = flag
    for key in ("algorithm", "steps", "episodes", "eval_episodes", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "seed", None) is not None:
        cfg["seeds"] = [args.seed]
    elif getattr(args, "seeds", None) is not None:
        cfg["seeds"] = list(_parse_seeds(args.seeds))
    cfg["env"], cfg["track"] = env, track
    cfg.setdefault("hyperparams", {})
    return cfg


def build_env_config(cfg: dict) -> EnvConfig:
    try:
        track = TrackConfig(**_pick(TrackConfig, cfg.get("track"), "track"))
        return EnvConfig(track=track, **_pick(EnvConfig, {k: v for k, v in (cfg.get("env") or {}).items()
                                                          if k != "track"}, "env"))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid environment config: {exc}") from None


def build_train_config(cfg: dict) -> tuple[harness.TrainRunConfig, int]:
    algo = cfg.get("algorithm")
    if algo is None:
        raise UsageError("no algorithm given (use --algo or 'algorithm:' in the config)")
    if algo not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {algo!r}; choose from {', '.join(sorted(ALGORITHMS))}")
    hp = AgentHyperparams(**_pick(AgentHyperparams, cfg.get("hyperparams"), "hyperparams"))
    defaults = harness.TrainRunConfig(algorithm=algo)
    seeds = _parse_seeds(cfg["seeds"]) if "seeds" in cfg else defaults.seeds
    try:
        run = harness.TrainRunConfig(algorithm=algo, steps=int(cfg.get("steps", defaults.steps)),
                                     episodes=int(cfg.get("episodes", defaults.episodes)),
                                     eval_episodes=int(cfg.get("eval_episodes", defaults.eval_episodes)),
                                     seeds=seeds, env=build_env_config(cfg), hp=hp)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    workers = int(cfg.get("workers", 1))
    if workers < 1:
        raise UsageError("--workers must be at least 1")
    return run, workers


def resolved_dict(run: harness.TrainRunConfig | None, env: EnvConfig, workers=1, extra=None) -> dict:
    env_d = asdict(env)
    track = env_d.pop("track")
    out = {"env": env_d, "track": track}
    if run is not None:
        out.update(algorithm=run.algorithm, steps=run.steps, episodes=run.episodes, eval_episodes=run.eval_episodes,
                   seeds=list(run.seeds), workers=workers, hyperparams=asdict(run.hp))
    out.update(extra or {})
    return json.loads(json.dumps(out))  # tuples -> lists, plain types only


def config_hash(resolved: dict) -> str:
    return hashlib.sha1(json.dumps(resolved, sort_keys=True).encode()).hexdigest()[:10]


# ---------------------------------------------------------------------------
# run directories


def make_run_dir(args, label, resolved) -> Path:
    digest = config_hash(resolved)
    if args.out is not None:
        out = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = Path(args.runs_root) / f"{stamp}-{label}-{digest}"
        k = 1
        while out.exists():
            out = Path(args.runs_root) / f"{stamp}-{label}-{digest}-{k}"
            k += 1
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = {"command": args.command, "argv": args.argv, "config_file": args.config,
                    "resolved": resolved, "output_dir": str(out),
                    "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "config_hash": digest}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as exc:
        raise RuntimeError(f"cannot write to output directory {out}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = resolve(load_config_file(args.config) if args.config else {}, args)
    run, workers = build_train_config(cfg)
    resolved = resolved_dict(run, run.env, workers)
    out = make_run_dir(args, run.algorithm, resolved)
    for sub in ("eval", "replays"):
        (out / sub).mkdir(exist_ok=True)
    log = harness.run_training(run, out, workers=workers)
    if args.plot:
        harness.plot_curves([log], out / "curves" / "curve.png", title=f"{run.algorithm} training")
    failed = [s.seed for s in log.series if s.failed]
    final = log.mean[-1] if len(log.mean) else float("nan")
    print(f"{run.algorithm}: {len(run.seeds)} seed(s), final smoothed return {final:.3f}, output {out}")
    if failed:
        print(f"diverged seeds: {failed}", file=sys.stderr)
        return 2
    return 0


def cmd_eval(args) -> int:
    cfg = resolve(load_config_file(args.config) if args.config else {}, args)
    env = build_env_config(cfg)
    if args.episodes < 0:
        raise UsageError("--episodes must be non-negative")
    for ck in args.checkpoints:
        if not Path(ck).is_file():
            raise FileNotFoundError(f"checkpoint not found: {ck}")
    base = harness.EVAL_SEED_BASE if args.seed is None else args.seed
    resolved = resolved_dict(None, env, extra={"checkpoints": [str(c) for c in args.checkpoints],
                                               "eval_episodes": args.episodes, "seed_base": base})
    out = make_run_dir(args, "eval", resolved)
    (out / "eval").mkdir(exist_ok=True)
    for ck in args.checkpoints:
        agent = load_agent(ck)
        report = harness.evaluate(agent, args.episodes, env, seed_base=base)
        (out / "eval" / f"{Path(ck).stem}.json").write_text(report.to_json())
        row = report.summary()
        print(json.dumps({"checkpoint": str(ck), "algorithm": agent.name, **row}))
    return 0


def cmd_race(args) -> int:
    cfg = resolve(load_config_file(args.config) if args.config else {}, args)
    env = build_env_config(cfg)
    for ck in args.checkpoints:
        if not Path(ck).is_file():
            raise FileNotFoundError(f"checkpoint not found: {ck}")
    seed = 0 if args.seed is None else args.seed
    resolved = resolved_dict(None, env, extra={"checkpoints": [str(c) for c in args.checkpoints], "track_seed": seed})
    out = make_run_dir(args, "race", resolved)
    (out / "replays").mkdir(exist_ok=True)
    names = [f"{i}:{Path(c).stem}" for i, c in enumerate(args.checkpoints)]
    replay = harness.race([load_agent(c) for c in args.checkpoints], env, seed, names)
    stem = out / "replays" / f"race_{seed}"
    stem.with_suffix(".json").write_text(replay.to_json())
    stem.with_suffix(".svg").write_text(harness.replay_svg(replay))
    for t in replay.traces:
        print(f"{t.name}: {t.outcome}, {len(t.actions)} steps, reward {float(t.rewards.sum()):.3f}")
    print(f"replay written to {stem.with_suffix('.json')}")
    return 0


def _curve_label(path: Path) -> str:
    # curves/curve.csv inside a run directory: label with the run's algorithm
    manifest = path.resolve().parent.parent / "manifest.json"
    if manifest.is_file():
        algo = json.loads(manifest.read_text()).get("resolved", {}).get("algorithm")
        if algo:
            return algo
    return path.stem


def cmd_plot(args) -> int:
    if args.labels and len(args.labels) != len(args.curves):
        raise UsageError("--labels needs one label per curve file")
    logs = []
    for i, path in enumerate(args.curves):
        series = harness.read_curve_csv(path)
        name = args.labels[i] if args.labels else _curve_label(Path(path))
        for s in series:
            s.algorithm = name
        logs.append(harness.aggregate_curves(series, args.window))
    target = Path(args.output)
    if target.suffix.lower() not in (".png", ".svg", ".pdf"):
        raise UsageError("--output must end in .png, .svg or .pdf")
    target.parent.mkdir(parents=True, exist_ok=True)
    harness.plot_curves(logs, target)
    print(f"plot written to {target}")
    return 0


def cmd_track(args) -> int:
    cfg = resolve(load_config_file(args.config) if args.config else {}, args)
    env = build_env_config(cfg)
    seed = 0 if args.seed is None else args.seed
    resolved = resolved_dict(None, env, extra={"track_seed": seed})
    out = make_run_dir(args, "track", resolved)
    borders, tmap = generate_track(env.track_config(seed))
    export_pgm(tmap, out / f"track_{seed}.pgm")
    export_svg(borders, out / f"track_{seed}.svg")
    print(f"track {seed}: length {borders.length():.3f}, {len(tmap.obstacles)} obstacles, "
          f"{len(borders.chicanes)} chicanes, written to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_env_flags(p, default_on=True):
    for name in TOGGLES:
        flag = name.replace("_", "-")
        p.add_argument(f"--{flag}", dest=name, action="store_true", default=None,
                       help=f"enable {name.replace('_', ' ')}" + (" (default)" if default_on else ""))
        p.add_argument(f"--no-{flag}", dest=name, action="store_false", help=f"disable {name.replace('_', ' ')}")


def _add_run_flags(p):
    p.add_argument("--config", help="YAML config file (or a previous manifest.json)")
    p.add_argument("--out", help="exact output directory (default: a new directory under --runs-root)")
    p.add_argument("--runs-root", default="runs", help="parent of generated run directories (default: runs)")


def build_parser():
    parser = _Parser(prog="racelab", description="Train, evaluate and race agents on procedural tracks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train one algorithm over one or more seeds")
    p.add_argument("--algo", dest="algorithm", help=f"one of {', '.join(sorted(ALGORITHMS))}")
    p.add_argument("--steps", type=int, help="gradient updates per seed (off-policy)")
    p.add_argument("--episodes", type=int, help="episode budget per seed (ppo)")
    p.add_argument("--seeds", help="seed count N (runs 0..N-1) or comma list")
    p.add_argument("--seed", type=int, help="train a single seed")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--plot", action="store_true", help="also render curves/curve.png")
    _add_run_flags(p)
    _add_env_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints deterministically")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--episodes", type=int, default=100, help="evaluation episodes (default 100)")
    p.add_argument("--seed", type=int, help="first track seed (default: the fixed evaluation block)")
    _add_run_flags(p)
    _add_env_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("race", help="run checkpoints on one track and export a replay")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--seed", type=int, help="track seed (default 0)")
    _add_run_flags(p)
    _add_env_flags(p)
    p.set_defaults(func=cmd_race)

    p = sub.add_parser("plot", help="plot mean curves with 95%% bands from curve CSVs")
    p.add_argument("curves", nargs="+", help="curve CSV files, one algorithm each")
    p.add_argument("-o", "--output", default="curves.png")
    p.add_argument("--labels", nargs="+", help="legend labels, one per file")
    p.add_argument("--window", type=int, default=harness.SMOOTHING_WINDOW)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("track", help="export a track as PGM and SVG")
    p.add_argument("--seed", type=int)
    _add_run_flags(p)
    _add_env_flags(p)
    p.set_defaults(func=cmd_track)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.argv = list(sys.argv[1:] if argv is None else argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
