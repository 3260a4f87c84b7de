"""Training loops, evaluation, curve aggregation and race replays.

Metric definitions used throughout:

* episodic reward: sum of per-step rewards, failure penalty included;
* mean speed: car speed averaged over all non-terminal steps of all
  evaluation episodes (pooled, not averaged per episode);
* completed episode: the car covered a full lap.

Evaluation tracks come from a fixed seed block (``EVAL_SEED_BASE + i``) so
reports of different algorithms see the same tracks.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import agents as agents_mod
from .agents import Agent, AgentHyperparams, load_agent, make_agent
from .environment import COMPLETED, NONE, TIMEOUT, EnvConfig, Racer
from .nncore import NonFiniteError
from .track import borders_svg

logger = logging.getLogger(__name__)

EVAL_SEED_BASE = 10_000_000
SMOOTHING_WINDOW = 20
Z95 = 1.96


@dataclass(frozen=True)
class TrainRunConfig:
    algorithm: str = "sac"
    steps: int = 50000  # gradient updates, off-policy methods
    episodes: int = 600  # PPO budget
    eval_episodes: int = 100
    seeds: tuple[int, ...] = tuple(range(10))
    env: EnvConfig = field(default_factory=EnvConfig)
    hp: AgentHyperparams = field(default_factory=AgentHyperparams)

    def __post_init__(self):
        if self.algorithm not in agents_mod.ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.steps < 0 or self.episodes < 0 or self.eval_episodes < 0:
            raise ValueError("budgets must be non-negative")
        if not self.seeds:
            raise ValueError("need at least one seed")


@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    length: int
    wall_clock: float = 0.0
    cause: str = ""


@dataclass
class SeedCurve:
    algorithm: str
    seed: int
    episodes: list[EpisodeRecord] = field(default_factory=list)
    failed: bool = False
    wall_clock: float = 0.0

    @property
    def returns(self):
        return np.array([e.ret for e in self.episodes])


@dataclass
class CurveLog:
    algorithm: str
    series: list[SeedCurve]
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    window: int = SMOOTHING_WINDOW


@dataclass
class TrainResult:
    agent: Agent
    curve: SeedCurve


@dataclass
class EvalReport:
    completed_episodes: int
    mean_episodic_reward: float
    mean_speed: float
    episodes: list[dict] = field(default_factory=list)

    def summary(self):
        return {"completed": self.completed_episodes, "mean_reward": self.mean_episodic_reward,
                "mean_speed": self.mean_speed}

    def to_json(self):
        return json.dumps({**self.summary(), "episodes": self.episodes}, indent=2)


# ---------------------------------------------------------------------------
# training


def _env_seed(seed):
    return int(seed) + 2**32


def train(config: TrainRunConfig, seed: int | None = None) -> TrainResult:
    """Train one agent to its budget; a NonFiniteError marks the curve failed."""
    seed = config.seeds[0] if seed is None else seed
    agent = make_agent(config.algorithm, config.hp, seed)
    env = Racer(config.env, seed=_env_seed(seed))
    curve = SeedCurve(config.algorithm, int(seed))
    start = time.perf_counter()
    try:
        if agent.off_policy:
            _train_off_policy(agent, env, config.steps, curve, start)
        else:
            _train_ppo(agent, env, config.episodes, curve, start)
    except NonFiniteError as exc:
        logger.error("%s seed %s diverged: %s", config.algorithm, seed, exc)
        curve.failed = True
    curve.wall_clock = time.perf_counter() - start
    return TrainResult(agent, curve)


def _train_off_policy(agent, env, steps, curve, start):
    if steps <= 0:
        return
    warmup = agent.hp.warmup_steps
    obs = env.reset()
    agent.start_episode()
    ep_ret, ep_len, t, updates = 0.0, 0, 0, 0
    while updates < steps:
        action = agent.random_action() if t < warmup else agent.select_action(obs, "train")
        res = env.step(action)
        terminal = res.done and res.info != TIMEOUT
        agent.buffer.add(obs, action, res.reward, res.observation, terminal)
        t += 1
        ep_ret += res.reward
        ep_len += 1
        obs = res.observation
        if t > warmup and len(agent.buffer) >= agent.hp.batch_size:
            agent.update()
            updates += 1
        if res.done:
            curve.episodes.append(EpisodeRecord(len(curve.episodes), ep_ret, ep_len, time.perf_counter() - start, res.info))
            obs = env.reset()
            agent.start_episode()
            ep_ret, ep_len = 0.0, 0


def _train_ppo(agent, env, episodes, curve, start):
    hp = agent.hp
    for _ in range(episodes):
        obs = env.reset()
        ep_ret, ep_len = 0.0, 0
        while True:
            action, raw, logp, value = agent.act(obs)
            res = env.step(action)
            terminal = res.done and res.info != TIMEOUT
            agent.trajectory.add(obs, raw, logp, value, res.reward, terminal)
            ep_ret += res.reward
            ep_len += 1
            obs = res.observation
            if res.done:
                last = agent.value(obs) if res.info == TIMEOUT else 0.0
                agent.trajectory.finish_episode(last, hp.gamma, hp.gae_lambda)
                break
        curve.episodes.append(EpisodeRecord(len(curve.episodes), ep_ret, ep_len, time.perf_counter() - start, res.info))
        agent.update()


# ---------------------------------------------------------------------------
# evaluation


def run_episode(agent, env: Racer, seed, mode="eval", record=False):
    """One episode on track ``seed``; returns a dict with the outcome and optionally the trace."""
    obs = env.reset(seed)
    if mode == "train":
        agent.start_episode()
    positions, headings, actions, rewards, speeds = [env.state.position.copy()], [env.state.heading], [], [], []
    total = 0.0
    while True:
        action = np.asarray(agent.select_action(obs, mode), dtype=float)
        res = env.step(action)
        total += res.reward
        if res.info == NONE:
            speeds.append(env.state.speed)
        if record:
            positions.append(env.state.position.copy())
            headings.append(env.state.heading)
            actions.append(np.clip(action, -1.0, 1.0))
            rewards.append(res.reward)
        obs = res.observation
        if res.done:
            break
    out = {"seed": int(seed), "return": total, "length": env.state.steps, "cause": res.info,
           "completed": res.info == COMPLETED, "speed_sum": float(np.sum(speeds)), "speed_steps": len(speeds)}
    if record:
        out.update(positions=np.array(positions), headings=np.array(headings), actions=np.array(actions),
                   rewards=np.array(rewards))
    return out


def evaluate(agent_or_path, eval_episodes: int = 100, env_config: EnvConfig | None = None,
             seed_base: int = EVAL_SEED_BASE, algorithm: str | None = None) -> EvalReport:
    """Deterministic-mode rollouts on the fixed evaluation track block."""
    agent = agent_or_path if isinstance(agent_or_path, Agent) else load_agent(agent_or_path, algorithm)
    env = Racer(env_config or EnvConfig())
    records, speed_sum, speed_steps = [], 0.0, 0
    for i in range(eval_episodes):
        ep = run_episode(agent, env, seed_base + i)
        speed_sum += ep.pop("speed_sum")
        speed_steps += ep.pop("speed_steps")
        records.append(ep)
    completed = sum(r["completed"] for r in records)
    mean_reward = float(np.mean([r["return"] for r in records])) if records else 0.0
    return EvalReport(completed, mean_reward, speed_sum / speed_steps if speed_steps else 0.0, records)


# ---------------------------------------------------------------------------
# curves


def moving_average(x, window=SMOOTHING_WINDOW):
    """Trailing mean over ``window`` entries (shorter at the start)."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def aggregate_curves(series: list[SeedCurve], window: int = SMOOTHING_WINDOW) -> CurveLog:
    """Smoothed mean and 95% normal band across seeds, per episode index.

    Series are truncated to the shortest one. With a single seed the band has
    zero width.
    """
    if not series:
        raise ValueError("no curves to aggregate")
    names = {s.algorithm for s in series}
    if len(names) != 1:
        raise ValueError(f"cannot aggregate different algorithms: {sorted(names)}")
    n_ep = min(len(s.episodes) for s in series)
    smooth = np.array([moving_average(s.returns[:n_ep], window) for s in series]).reshape(len(series), n_ep)
    mean = smooth.mean(axis=0)
    if len(series) > 1:
        half = Z95 * smooth.std(axis=0, ddof=1) / np.sqrt(len(series))
    else:
        half = np.zeros(n_ep)
    return CurveLog(series[0].algorithm, list(series), mean, mean - half, mean + half, window)


def write_curve_csv(path, series: list[SeedCurve]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["episode", "return", "length", "seed"])
        for s in series:
            for e in s.episodes:
                w.writerow([e.episode, repr(float(e.ret)), e.length, s.seed])


def read_curve_csv(path, algorithm=None) -> list[SeedCurve]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"curve file not found: {path}")
    algorithm = algorithm or path.stem
    by_seed: dict[int, SeedCurve] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"episode", "return", "length", "seed"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns episode, return, length, seed")
        for row in reader:
            try:
                seed = int(row["seed"])
                rec = EpisodeRecord(int(row["episode"]), float(row["return"]), int(row["length"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: malformed row {row}") from exc
            by_seed.setdefault(seed, SeedCurve(algorithm, seed)).episodes.append(rec)
    if not by_seed:
        raise ValueError(f"{path}: no data rows")
    return [by_seed[k] for k in sorted(by_seed)]


def write_aggregate_csv(path, log: CurveLog):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["episode", "mean", "lower", "upper", "n_seeds"])
        for i, (m, lo, hi) in enumerate(zip(log.mean, log.lower, log.upper)):
            w.writerow([i, repr(float(m)), repr(float(lo)), repr(float(hi)), len(log.series)])


def plot_curves(logs: list[CurveLog], path, title="Training curves"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    for log in logs:
        x = np.arange(len(log.mean))
        ax.plot(x, log.mean, label=f"{log.algorithm} (n={len(log.series)})")
        ax.fill_between(x, log.lower, log.upper, alpha=0.25)
    ax.set_xlabel("episode")
    ax.set_ylabel(f"episodic reward (moving average, {logs[0].window if logs else SMOOTHING_WINDOW})")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# multi-seed runs


def _train_job(args):
    config, seed, ckpt_path = args
    result = train(config, seed)
    if ckpt_path is not None:
        result.agent.save(ckpt_path, {"failed": result.curve.failed})
    return result.curve


def run_training(config: TrainRunConfig, out_dir, workers: int = 1) -> CurveLog:
    """Train every seed, writing checkpoints and curve CSVs under ``out_dir``.

    Layout: ``checkpoints/seed_<s>.ckpt``, ``curves/seed_<s>.csv``,
    ``curves/curve.csv`` (all seeds), ``curves/aggregate.csv``, ``timing.json``.
    """
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    jobs = [(config, s, out / "checkpoints" / f"seed_{s}.ckpt") for s in config.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            curves = list(pool.map(_train_job, jobs))
    else:
        curves = [_train_job(j) for j in jobs]
    for c in curves:
        write_curve_csv(out / "curves" / f"seed_{c.seed}.csv", [c])
    write_curve_csv(out / "curves" / "curve.csv", curves)
    log = aggregate_curves(curves)
    write_aggregate_csv(out / "curves" / "aggregate.csv", log)
    timing = {"algorithm": config.algorithm,
              "per_seed_seconds": {str(c.seed): c.wall_clock for c in curves},
              "mean_seconds": float(np.mean([c.wall_clock for c in curves])),
              "failed_seeds": [c.seed for c in curves if c.failed]}
    (out / "timing.json").write_text(json.dumps(timing, indent=2))
    return log


# ---------------------------------------------------------------------------
# races


@dataclass
class AgentTrace:
    name: str
    positions: np.ndarray  # (steps + 1, 2), including the start pose
    headings: np.ndarray
    actions: np.ndarray  # clamped actions actually applied
    rewards: np.ndarray
    outcome: str


@dataclass
class RaceReplay:
    track_seed: int
    env: dict
    traces: list[AgentTrace]

    def to_json(self):
        return json.dumps({
            "track_seed": self.track_seed,
            "env": self.env,
            "agents": [{"name": t.name, "outcome": t.outcome, "positions": t.positions.tolist(),
                        "headings": t.headings.tolist(), "actions": t.actions.tolist(),
                        "rewards": t.rewards.tolist()} for t in self.traces],
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        traces = [AgentTrace(a["name"], np.array(a["positions"]).reshape(-1, 2), np.array(a["headings"]),
                             np.array(a["actions"]).reshape(-1, 2), np.array(a["rewards"]), a["outcome"])
                  for a in d["agents"]]
        return cls(d["track_seed"], d["env"], traces)


def env_config_to_dict(cfg: EnvConfig):
    return asdict(cfg)


def env_config_from_dict(d) -> EnvConfig:
    from .track import TrackConfig

    d = dict(d)
    track = d.pop("track", {}) or {}
    track = {k: tuple(v) if isinstance(v, list) else v for k, v in track.items()}
    return EnvConfig(track=TrackConfig(**track), **d)


def race(agents, env_config: EnvConfig | None = None, seed: int = 0, names=None) -> RaceReplay:
    """Run every agent separately on the same track and collect the traces."""
    if not agents:
        raise ValueError("a race needs at least one agent")
    cfg = env_config or EnvConfig()
    loaded = [a if isinstance(a, Agent) else load_agent(a) for a in agents]
    names = names or [str(a) if not isinstance(a, Agent) else f"{a.name}-{i}" for i, a in enumerate(agents)]
    traces = []
    for name, agent in zip(names, loaded):
        ep = run_episode(agent, Racer(cfg), seed, record=True)
        traces.append(AgentTrace(name, ep["positions"], ep["headings"], ep["actions"], ep["rewards"], ep["cause"]))
    return RaceReplay(int(seed), env_config_to_dict(cfg), traces)


def resimulate(trace: AgentTrace, env_config: EnvConfig, seed: int):
    """Replay recorded actions; returns positions, headings, rewards, outcome."""
    env = Racer(env_config)
    env.reset(seed)
    pos, head, rew = [env.state.position.copy()], [env.state.heading], []
    cause = NONE
    for a in trace.actions:
        res = env.step(a)
        pos.append(env.state.position.copy())
        head.append(env.state.heading)
        rew.append(res.reward)
        cause = res.info
    return np.array(pos), np.array(head), np.array(rew), cause


def validate_replay(replay: RaceReplay) -> bool:
    """True when every trace re-simulates bit-exactly from its actions."""
    cfg = env_config_from_dict(replay.env)
    for t in replay.traces:
        pos, head, rew, cause = resimulate(t, cfg, replay.track_seed)
        if not (np.array_equal(pos, t.positions) and np.array_equal(head, t.headings)
                and np.array_equal(rew, t.rewards) and cause == t.outcome):
            return False
    return True


COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def replay_svg(replay: RaceReplay, size=650) -> str:
    cfg = env_config_from_dict(replay.env)
    env = Racer(cfg)
    env.reset(replay.track_seed)
    extent = cfg.track.world_extent
    scale = size / extent
    parts = []
    for ob in env.track_map.obstacles:
        corners = []
        for sa, sl in ((-1, 0), (1, 0), (1, 1), (-1, 1)):
            p = ob.center + sa * ob.half_length * ob.tangent + ob.lateral[sl] * ob.normal
            corners.append(f"{(p[0] + extent / 2) * scale:.2f},{(extent / 2 - p[1]) * scale:.2f}")
        parts.append(f'<polygon points="{" ".join(corners)}" fill="#888"/>')
    for i, t in enumerate(replay.traces):
        pts = " ".join(f"{(x + extent / 2) * scale:.2f},{(extent / 2 - y) * scale:.2f}" for x, y in t.positions)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{COLORS[i % len(COLORS)]}" stroke-width="1.5">'
                     f"<title>{t.name}: {t.outcome}</title></polyline>")
    return borders_svg(env.borders, extent, size, extra="\n".join(parts) + "\n")
