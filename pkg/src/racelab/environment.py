"""Car simulation on a track map: kinematics, lidar, rewards and termination.

The public surface mirrors the usual reset/step contract::

    env = Racer(EnvConfig(), seed=0)
    obs = env.reset()
    obs, reward, done, cause = env.step([accel, turn])

Observations are 5-vectors ``(alpha_max, d_prev, d_max, d_next, speed)`` built
from the 19-ray lidar by :func:`observe`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numba
import numpy as np

from .track import SplineBorders, TrackConfig, TrackMap, generate_track

N_RAYS = 19
LIDAR_ANGLES = np.deg2rad(np.linspace(-30.0, 30.0, N_RAYS))
OBS_DIM = 5
ACT_DIM = 2

NONE, COMPLETED, OFF_TRACK, TOO_SLOW, TIMEOUT = "none", "completed", "off_track", "too_slow", "timeout"
FAILURES = (OFF_TRACK, TOO_SLOW)


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.04
    max_linear_acc: float = 0.5
    max_steer: float = 0.12
    angular_acc_tolerance: float = 0.8
    nominal_max_speed: float = 1.0
    low_speed_threshold: float = 0.05
    low_speed_patience: int = 20
    max_episode_steps: int = 1000
    failure_penalty: float = -1.0
    initial_speed: float = 0.1
    obstacles: bool = True
    chicanes: bool = True
    turn_limit: bool = True
    low_speed_termination: bool = True
    track: TrackConfig = field(default_factory=TrackConfig)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for name in ("max_linear_acc", "max_steer", "angular_acc_tolerance", "nominal_max_speed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.failure_penalty >= 0:
            raise ValueError("failure_penalty must be negative")
        if self.max_episode_steps <= 0 or self.low_speed_patience <= 0:
            raise ValueError("step limits must be positive")

    def track_config(self, seed: int) -> TrackConfig:
        return replace(self.track, rng_seed=int(seed), enable_obstacles=self.obstacles, enable_chicanes=self.chicanes)


@dataclass(frozen=True)
class CarState:
    position: np.ndarray
    heading: float
    speed: float
    arc_progress: float = 0.0
    steps: int = 0
    slow_steps: int = 0
    raw_progress: float = 0.0  # signed, unwrapped lap fraction
    centerline_index: int = 0


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    info: str


def max_turn_at_speed(speed, config: EnvConfig):
    """Largest turn (radians per step) allowed at ``speed``.

    Bounds speed times turn rate by the tolerated angular acceleration.
    """
    return min(config.max_steer, config.angular_acc_tolerance * config.dt / max(speed, 1e-9))


@numba.njit(cache=True)
def _march(grid, ox, oy, cell, x, y, angles, step, max_range, out):
    n = grid.shape[0]
    limit = int(math.ceil(max_range / step))
    for k in range(angles.shape[0]):
        dx = math.cos(angles[k])
        dy = math.sin(angles[k])
        i = 1
        while i < limit:
            px = x + i * step * dx
            py = y + i * step * dy
            ix = int(math.floor((px - ox) / cell))
            iy = int(math.floor((py - oy) / cell))
            if ix < 0 or iy < 0 or ix >= n or iy >= n or not grid[iy, ix]:
                break
            i += 1
        out[k] = min(i * step, max_range)


@numba.njit(cache=True)
def _segment_clear(grid, ox, oy, cell, x0, y0, x1, y1):
    n = grid.shape[0]
    length = math.hypot(x1 - x0, y1 - y0)
    k = max(1, int(math.ceil(length / cell)))
    for i in range(1, k + 1):
        px = x0 + (x1 - x0) * i / k
        py = y0 + (y1 - y0) * i / k
        ix = int(math.floor((px - ox) / cell))
        iy = int(math.floor((py - oy) / cell))
        if ix < 0 or iy < 0 or ix >= n or iy >= n or not grid[iy, ix]:
            return False
    return True


def lidar_scan(position, heading, track_map: TrackMap, max_range=None, step=None):
    """Distances to the first blocked cell along 19 rays over -30..+30 degrees."""
    x, y = float(position[0]), float(position[1])
    if not track_map.is_inside(np.array([x, y])):
        raise ValueError("lidar is undefined outside the track")
    cell = track_map.cell_size
    max_range = cell * track_map.resolution if max_range is None else max_range
    out = np.empty(N_RAYS)
    _march(track_map.grid, track_map.origin[0], track_map.origin[1], cell, x, y,
           heading + LIDAR_ANGLES, cell if step is None else step, max_range, out)
    return out


def observe(lidar, speed):
    """Reduce the lidar to (angle of the longest ray, its two neighbours, speed)."""
    lidar = np.asarray(lidar, dtype=float)
    m = int(np.argmax(lidar))
    lo, hi = max(m - 1, 0), min(m + 1, N_RAYS - 1)
    return np.array([LIDAR_ANGLES[m], lidar[lo], lidar[m], lidar[hi], float(speed)])


def compute_reward(new_state: CarState, cause: str, config: EnvConfig):
    if cause in FAILURES:
        return config.failure_penalty
    return new_state.speed * config.dt


def check_termination(state: CarState, track_map: TrackMap, config: EnvConfig, clear=None):
    """Termination cause, checked as off_track, too_slow, completed, timeout."""
    if clear is None:
        clear = bool(track_map.is_inside(state.position))
    if not clear:
        return OFF_TRACK
    if config.low_speed_termination and state.slow_steps >= config.low_speed_patience:
        return TOO_SLOW
    if state.arc_progress >= 1.0:
        return COMPLETED
    if state.steps >= config.max_episode_steps:
        return TIMEOUT
    return NONE


def kinematics(state: CarState, action, config: EnvConfig):
    """Forward-Euler pose update; returns (position, heading, speed)."""
    acc = min(max(float(action[0]), -1.0), 1.0)
    turn = min(max(float(action[1]), -1.0), 1.0)
    speed = max(0.0, state.speed + acc * config.max_linear_acc * config.dt)
    limit = max_turn_at_speed(speed, config) if config.turn_limit else config.max_steer
    heading = state.heading + turn * limit
    position = state.position + speed * config.dt * np.array([math.cos(heading), math.sin(heading)])
    return position, heading, speed


class ProgressTracker:
    """Lap fraction of the nearest centerline sample, searched locally."""

    def __init__(self, borders: SplineBorders, samples: int = 4000):
        _, self.points, s = borders.arc_length_table(samples)
        self.length = s[-1]
        self.fraction = s[:-1] / self.length
        self.spacing = self.length / samples

    def nearest(self, position, hint, reach):
        n = len(self.points)
        window = int(reach / self.spacing) + 40
        idx = (hint + np.arange(-window, window + 1)) % n
        d = self.points[idx] - position
        return int(idx[np.argmin(d[:, 0] ** 2 + d[:, 1] ** 2)])

    def delta(self, i, j):
        d = self.fraction[j] - self.fraction[i]
        return d - round(d)


class Racer:
    """Single-car environment with a freshly generated track per episode."""

    def __init__(self, config: EnvConfig | None = None, seed: int | None = None,
                 recorder: Callable | None = None):
        self.config = config or EnvConfig()
        self.rng = np.random.default_rng(seed)
        self.recorder = recorder
        self.state: CarState | None = None
        self.done = True
        self.track_seed = None
        self.borders = None
        self.track_map = None

    def reset(self, seed: int | None = None):
        if seed is None:
            seed = int(self.rng.integers(2**63 - 1))
        self.track_seed = int(seed)
        self.borders, self.track_map = generate_track(self.config.track_config(seed))
        self.progress = ProgressTracker(self.borders)
        self.state = CarState(
            position=np.asarray(self.borders.start_point, dtype=float),
            heading=self.borders.start_heading,
            speed=self.config.initial_speed,
        )
        self.done = False
        return self.observation()

    def lidar(self):
        return lidar_scan(self.state.position, self.state.heading, self.track_map)

    def observation(self):
        return observe(self.lidar(), self.state.speed)

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeFinishedError("step() called on a finished episode; call reset() first")
        cfg, prev = self.config, self.state
        position, heading, speed = kinematics(prev, action, cfg)
        tm = self.track_map
        clear = _segment_clear(tm.grid, tm.origin[0], tm.origin[1], tm.cell_size,
                               prev.position[0], prev.position[1], position[0], position[1])
        idx = self.progress.nearest(position, prev.centerline_index, speed * cfg.dt)
        raw = prev.raw_progress + self.progress.delta(prev.centerline_index, idx)
        slow = prev.slow_steps + 1 if speed < cfg.low_speed_threshold else 0
        state = CarState(position, heading, speed, max(prev.arc_progress, raw), prev.steps + 1, slow, raw, idx)
        cause = check_termination(state, tm, cfg, clear)
        reward = compute_reward(state, cause, cfg)
        self.state = state
        self.done = cause != NONE
        obs = observe(np.zeros(N_RAYS), speed) if cause == OFF_TRACK else self.observation()
        if self.recorder is not None:
            self.recorder(state, np.clip(np.asarray(action, dtype=float), -1, 1), reward)
        return StepResult(obs, reward, self.done, cause)
