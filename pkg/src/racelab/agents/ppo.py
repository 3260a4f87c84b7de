"""PPO with a clipped surrogate, GAE, entropy bonus and KL early stopping.

The policy is a Gaussian whose mean is the tanh output of the actor and whose
log-std is a learned, state-independent vector. Environment actions are the
clipped samples; log-probabilities refer to the unclipped ones.
"""

from __future__ import annotations

import logging

import numpy as np

from ..nncore import Adam, AdamState, Mlp, adam_step, check_finite, gaussian_log_prob
from .base import Agent
from .buffers import TrajectoryBuffer

logger = logging.getLogger(__name__)


def build_ppo_actor(rng=None):
    return Mlp([5, 64, 64, 2], ["tanh", "tanh", "tanh"], rng, final_init=1e-2)


def build_ppo_critic(rng=None):
    return Mlp([5, 64, 64, 1], ["tanh", "tanh", "linear"], rng)


def clipped_surrogate(ratio, adv, clip):
    """Per-sample ``min(r A, clip(r) A)`` and where the unclipped term is active."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    use_unclipped = unclipped <= clipped
    return np.where(use_unclipped, unclipped, clipped), use_unclipped


class PPO(Agent):
    name = "ppo"
    off_policy = False

    def __init__(self, hp=None, seed=0):
        super().__init__(hp, seed)
        self.actor = build_ppo_actor(self.rng)
        self.critic = build_ppo_critic(self.rng)
        self.log_std = np.full(self.act_dim, self.hp.ppo_init_log_std)
        self.actor_opt = Adam(self.actor, self.hp.ppo_lr)
        self.critic_opt = Adam(self.critic, self.hp.ppo_lr)
        self.log_std_opt = AdamState(self.hp.ppo_lr, self.act_dim)
        self.trajectory = TrajectoryBuffer()
        self.epoch_callback = None

    def networks(self):
        return {"actor": self.actor, "critic": self.critic}

    def extra_tensors(self):
        return {"log_std": self.log_std.copy()}

    def load_extra(self, tensors):
        if "log_std" in tensors:
            self.log_std[:] = tensors["log_std"]

    def act(self, obs):
        """Sample for training: ``(env_action, raw_action, log_prob, value)``."""
        mu = self.actor(obs)
        raw = mu + np.exp(self.log_std) * self.rng.standard_normal(self.act_dim)
        logp = float(gaussian_log_prob(raw, mu, self.log_std))
        value = float(self.critic(obs)[0])
        return np.clip(raw, -1.0, 1.0), raw, logp, value

    def select_action(self, obs, mode="train"):
        if mode == "train":
            return self.act(obs)[0]
        return self.actor(obs)

    def value(self, obs):
        return float(self.critic(obs)[0])

    def log_probs(self, obs, raw):
        return gaussian_log_prob(raw, self.actor(obs), self.log_std)

    def update(self, trajectory: TrajectoryBuffer | None = None):
        """Clipped-surrogate epochs over shuffled mini-batches of complete episodes."""
        hp = self.hp
        traj = self.trajectory if trajectory is None else trajectory
        obs, raw, old_logp, adv, ret = traj.arrays()
        if len(obs) == 0:
            raise ValueError("PPO update needs at least one complete episode")
        if len(adv) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        n = len(obs)
        stats = {"epochs": 0, "kl": [], "policy_loss": 0.0, "value_loss": 0.0, "skipped": 0, "first_ratio": None}
        for epoch in range(hp.ppo_epochs):
            perm = self.rng.permutation(n)
            for start in range(0, n, hp.ppo_minibatch):
                idx = perm[start:start + hp.ppo_minibatch]
                stats["policy_loss"], skipped, ratio = self._policy_step(obs[idx], raw[idx], old_logp[idx], adv[idx])
                stats["skipped"] += skipped
                if stats["first_ratio"] is None:
                    stats["first_ratio"] = ratio
                stats["value_loss"] = self._value_step(obs[idx], ret[idx])
            stats["epochs"] = epoch + 1
            kl = float(np.mean(old_logp - self.log_probs(obs, raw)))
            stats["kl"].append(kl)
            if self.epoch_callback is not None:
                self.epoch_callback(epoch, kl, self)
            if kl > hp.ppo_target_kl:
                break
        self.updates += 1
        if trajectory is None:
            self.trajectory = TrajectoryBuffer()
        return stats

    def _policy_step(self, obs, raw, old_logp, adv):
        hp = self.hp
        mu = self.actor(obs)
        sigma = np.exp(self.log_std)
        logp = gaussian_log_prob(raw, mu, self.log_std)
        with np.errstate(over="ignore", invalid="ignore"):
            ratio = np.exp(logp - old_logp)
        ok = np.isfinite(ratio)
        skipped = int(np.count_nonzero(~ok))
        if skipped:
            logger.warning("skipping %d samples with non-finite probability ratio", skipped)
        m = max(int(ok.sum()), 1)
        ratio_ok = np.where(ok, ratio, 1.0)
        surr, use_unclipped = clipped_surrogate(ratio_ok, adv, hp.ppo_clip)
        entropy = float(np.sum(self.log_std + 0.5 * np.log(2 * np.pi * np.e)))
        loss = -float(np.sum(surr * ok)) / m - hp.ppo_entropy_coef * entropy
        check_finite(loss, "policy loss")
        g_logp = -((use_unclipped & ok) * ratio_ok * adv) / m
        z = (raw - mu) / sigma
        g_mu = g_logp[:, None] * z / sigma
        g_log_std = (g_logp[:, None] * (z * z - 1.0)).sum(axis=0) - hp.ppo_entropy_coef
        grads, _ = self.actor.backward(g_mu)
        self.actor_opt.step(grads)
        adam_step(self.log_std, g_log_std, self.log_std_opt)
        return loss, skipped, ratio

    def _value_step(self, obs, ret):
        v = self.critic(obs)[:, 0]
        diff = v - ret
        loss = float(np.mean(diff**2))
        check_finite(loss, "value loss")
        grads, _ = self.critic.backward((2.0 * diff / len(v))[:, None])
        self.critic_opt.step(grads)
        return loss


def ppo_update(agent: PPO, trajectory=None):
    return agent.update(trajectory)
