from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import nncore
from ..environment import ACT_DIM, OBS_DIM
from .buffers import ReplayBuffer


@dataclass(frozen=True)
class AgentHyperparams:
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    buffer_size: int = 50000
    batch_size: int = 64
    warmup_steps: int = 1000
    # DDPG / TD3
    exploration_noise: float = 0.1
    # DDPG2
    param_noise: float = 0.2
    # TD3 / DSAC
    policy_delay: int = 2
    target_noise: float = 0.1
    target_noise_clip: float = 0.5
    # SAC / DSAC
    target_entropy: float = -ACT_DIM
    init_alpha: float = 0.05
    dsac_min_sigma: float = 1.0
    dsac_bound: float = 10.0
    # PPO
    ppo_lr: float = 3e-4
    ppo_minibatch: int = 64
    ppo_epochs: int = 10
    gae_lambda: float = 0.95
    ppo_clip: float = 0.25
    ppo_entropy_coef: float = 0.01
    ppo_target_kl: float = 0.01
    ppo_init_log_std: float = math.log(0.3)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__}
        return cls(**known)


class Agent:
    """Common plumbing: RNG, checkpointing, action-space clamping."""

    name = "agent"
    off_policy = True

    def __init__(self, hp: AgentHyperparams | None = None, seed: int = 0):
        self.hp = hp or AgentHyperparams()
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.obs_dim, self.act_dim = OBS_DIM, ACT_DIM
        self.updates = 0
        if self.off_policy:
            self.buffer = ReplayBuffer(self.hp.buffer_size, self.obs_dim, self.act_dim)

    # subclasses fill these in
    def networks(self) -> dict:
        raise NotImplementedError

    def extra_tensors(self) -> dict:
        return {}

    def load_extra(self, tensors):
        pass

    def start_episode(self):
        pass

    def select_action(self, obs, mode="train"):
        raise NotImplementedError

    def random_action(self):
        return self.rng.uniform(-1.0, 1.0, self.act_dim)

    def sample(self):
        return self.buffer.sample(self.hp.batch_size, self.rng)

    def state_tensors(self):
        out = {name: net.params.copy() for name, net in self.networks().items()}
        out.update(self.extra_tensors())
        return out

    def save(self, path, meta=None):
        info = {"algorithm": self.name, "hyperparams": asdict(self.hp), "seed": self.seed, "updates": self.updates}
        info.update(meta or {})
        nncore.save_tensors(path, self.state_tensors(), info)

    def load_state(self, tensors):
        for name, net in self.networks().items():
            if name not in tensors or tensors[name].size != net.size:
                raise ValueError(f"checkpoint has no matching tensor {name!r} for {self.name}")
            net.params[:] = tensors[name]
        self.load_extra(tensors)


def clamp_action(a):
    return np.clip(a, -1.0, 1.0)
