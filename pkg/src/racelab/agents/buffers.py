from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity, obs_dim, act_dim):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros((capacity, 1))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros((capacity, 1))
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done):
        i = self.ptr
        self.obs[i] = obs
        self.act[i] = action
        self.rew[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.integers(0, self.size, batch_size)
        return self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.done[idx]


def gae_compute(rewards, values, dones, last_value, gamma, lam):
    """Generalized advantage estimates and returns for one trajectory.

    ``values[t]`` estimates state t; ``last_value`` bootstraps the state after
    the final step and is ignored when that step is terminal.
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise ValueError("empty trajectory")
    values = np.asarray(values, dtype=float)
    notdone = 1.0 - np.asarray(dones, dtype=float)
    next_values = np.append(values[1:], last_value)
    deltas = rewards + gamma * next_values * notdone - values
    adv = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = deltas[t] + gamma * lam * notdone[t] * acc
        adv[t] = acc
    return adv, adv + values


@dataclass
class TrajectoryBuffer:
    """Rollout storage for one or more complete episodes."""

    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    advantages: list = field(default_factory=list)
    returns: list = field(default_factory=list)
    _start: int = 0

    def add(self, obs, action, log_prob, value, reward, done):
        self.obs.append(obs)
        self.actions.append(action)
        self.log_probs.append(log_prob)
        self.values.append(value)
        self.rewards.append(reward)
        self.dones.append(done)

    def finish_episode(self, last_value, gamma, lam):
        s = self._start
        adv, ret = gae_compute(self.rewards[s:], self.values[s:], self.dones[s:], last_value, gamma, lam)
        self.advantages.extend(adv)
        self.returns.extend(ret)
        self._start = len(self.rewards)

    def __len__(self):
        return len(self.rewards)

    def arrays(self):
        if len(self.advantages) != len(self.rewards):
            raise ValueError("call finish_episode() before using the trajectory")
        return (np.array(self.obs), np.array(self.actions), np.array(self.log_probs),
                np.array(self.advantages), np.array(self.returns))

    def clear(self):
        self.__init__()
