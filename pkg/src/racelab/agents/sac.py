"""Soft actor-critic and its distributional-critic variant."""

from __future__ import annotations

import math

import numpy as np

from ..nncore import (Adam, AdamState, GaussianHead, adam_step, check_finite, gaussian_nll, soft_update,
                      squashed_sample, squashed_sample_backward)
from .base import Agent
from .td3 import build_q_network


def build_gaussian_actor(rng=None):
    return GaussianHead(5, 2, (64, 64), rng)


def build_distributional_critic(min_sigma=1.0, rng=None):
    return GaussianHead(7, 1, (64, 64), rng, log_sigma_min=math.log(min_sigma), log_sigma_max=2.0, final_init=None)


class _EntropyRegularized(Agent):
    def __init__(self, hp=None, seed=0):
        super().__init__(hp, seed)
        self.actor = build_gaussian_actor(self.rng)
        self.actor_opt = Adam(self.actor, self.hp.actor_lr)
        self.log_alpha = np.array([math.log(self.hp.init_alpha)])
        self.alpha_opt = AdamState(self.hp.actor_lr, 1)

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha[0]))

    def extra_tensors(self):
        return {"log_alpha": self.log_alpha.copy()}

    def load_extra(self, tensors):
        if "log_alpha" in tensors:
            self.log_alpha[:] = tensors["log_alpha"]

    def select_action(self, obs, mode="train"):
        mu, log_sigma = self.actor(obs)
        if mode != "train":
            return np.tanh(mu)
        a, _ = squashed_sample(mu, log_sigma, self.rng.standard_normal(mu.shape))
        return a

    def policy_sample(self, s):
        mu, ls = self.actor(s)
        eps = self.rng.standard_normal(mu.shape)
        a, logp = squashed_sample(mu, ls, eps)
        return a, logp[:, None], (mu, ls, eps)

    def actor_and_alpha_step(self, s, action_value_grad):
        """One actor step on ``alpha log pi - Q`` and one temperature step.

        ``action_value_grad(s, a)`` returns ``(q, dq/da)`` for the critic the
        actor ascends.
        """
        n = len(s)
        alpha = self.alpha
        a, logp, (mu, ls, eps) = self.policy_sample(s)
        q, dq_da = action_value_grad(s, a)
        loss = float(np.mean(alpha * logp - q))
        check_finite(loss, "actor loss")
        g_mu, g_ls = squashed_sample_backward(mu, ls, eps, -dq_da / n, np.full(n, alpha / n))
        grads, _ = self.actor.backward(g_mu, g_ls)
        self.actor_opt.step(grads)
        # temperature is optimized in log space so it stays positive
        g_alpha = np.array([-np.mean(logp + self.hp.target_entropy)])
        adam_step(self.log_alpha, g_alpha, self.alpha_opt)
        return {"actor_loss": loss, "alpha": self.alpha, "entropy": -float(np.mean(logp))}


class SAC(_EntropyRegularized):
    name = "sac"

    def __init__(self, hp=None, seed=0):
        super().__init__(hp, seed)
        self.q1 = build_q_network(self.rng)
        self.q2 = build_q_network(self.rng)
        self.q1_target = self.q1.clone()
        self.q2_target = self.q2.clone()
        self.q1_opt = Adam(self.q1, self.hp.critic_lr)
        self.q2_opt = Adam(self.q2, self.hp.critic_lr)

    def networks(self):
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2, "q1_target": self.q1_target,
                "q2_target": self.q2_target}

    def soft_target(self, r, d, s2):
        a2, logp2, _ = self.policy_sample(s2)
        q = np.minimum(self.q1_target(s2, a2), self.q2_target(s2, a2))
        return r + self.hp.gamma * (1.0 - d) * (q - self.alpha * logp2)

    def _min_q(self, s, a):
        q1 = self.q1(s, a)
        q2 = self.q2(s, a)
        pick1 = q1 <= q2
        _, _, g1 = self.q1.backward(np.ones_like(q1))
        _, _, g2 = self.q2.backward(np.ones_like(q2))
        return np.where(pick1, q1, q2), np.where(pick1, g1, g2)

    def update(self, batch=None):
        s, a, r, s2, d = self.sample() if batch is None else batch
        n = len(s)
        y = self.soft_target(r, d, s2)
        losses = {}
        for key, q, opt in (("q1_loss", self.q1, self.q1_opt), ("q2_loss", self.q2, self.q2_opt)):
            diff = q(s, a) - y
            losses[key] = float(np.mean(diff**2))
            check_finite(losses[key], "critic loss")
            grads, _, _ = q.backward(2.0 * diff / n)
            opt.step(grads)
        losses.update(self.actor_and_alpha_step(s, self._min_q))
        soft_update(self.q1_target, self.q1, self.hp.tau)
        soft_update(self.q2_target, self.q2, self.hp.tau)
        self.updates += 1
        return losses


def clamp_target(sampled_target, mean_target, bound):
    """Keep a sampled TD target within ``bound`` of the mean target."""
    return np.clip(sampled_target, mean_target - bound, mean_target + bound)


class DSAC(_EntropyRegularized):
    """SAC with one Gaussian critic ``N(Q_mu, Q_sigma)`` instead of twin critics.

    The mean head regresses the expected soft TD target; the deviation head is
    fitted by likelihood to a target sampled from the target critic's
    distribution and clamped to ``dsac_bound`` around the expected target.
    Critic sigma never drops below ``dsac_min_sigma``.
    """

    name = "dsac"

    def __init__(self, hp=None, seed=0):
        super().__init__(hp, seed)
        self.critic = build_distributional_critic(self.hp.dsac_min_sigma, self.rng)
        self.critic_target = self.critic.clone()
        self.critic_opt = Adam(self.critic, self.hp.critic_lr)

    def networks(self):
        return {"actor": self.actor, "critic": self.critic, "critic_target": self.critic_target}

    def critic_value(self, net, s, a):
        mu, ls = net(np.concatenate([s, a], axis=-1))
        return mu, ls

    def targets(self, r, d, s2):
        """Returns the expected soft target and its clamped sampled counterpart."""
        hp = self.hp
        a2, logp2, _ = self.policy_sample(s2)
        mu_t, ls_t = self.critic_value(self.critic_target, s2, a2)
        z = mu_t + np.exp(ls_t) * self.rng.standard_normal(mu_t.shape)
        mean = r + hp.gamma * (1.0 - d) * (mu_t - self.alpha * logp2)
        sampled = r + hp.gamma * (1.0 - d) * (z - self.alpha * logp2)
        return mean, clamp_target(sampled, mean, hp.dsac_bound)

    def critic_grads(self, mu, ls, mean_target, bounded_target):
        """Gradients of the split likelihood loss w.r.t. the critic heads.

        The mean head sees the expected target with sigma held fixed; the
        deviation head sees the clamped sampled target with the mean held fixed.
        """
        n = len(mu)
        nll_mu, g_mu, _ = gaussian_nll(mean_target, mu, ls)
        nll_sigma, _, g_ls = gaussian_nll(bounded_target, mu, ls)
        return float(np.mean(nll_mu)), float(np.mean(nll_sigma)), g_mu / n, g_ls / n

    def _q_mu(self, s, a):
        mu, _ = self.critic_value(self.critic, s, a)
        _, g_in = self.critic.backward(np.ones_like(mu), np.zeros_like(mu))
        return mu, g_in[..., self.obs_dim:]

    def update(self, batch=None):
        s, a, r, s2, d = self.sample() if batch is None else batch
        mean, bounded = self.targets(r, d, s2)
        mu, ls = self.critic_value(self.critic, s, a)
        loss_mu, loss_sigma, g_mu, g_ls = self.critic_grads(mu, ls, mean, bounded)
        check_finite(loss_mu + loss_sigma, "critic loss")
        grads, _ = self.critic.backward(g_mu, g_ls)
        self.critic_opt.step(grads)
        losses = {"critic_loss": loss_mu, "sigma_loss": loss_sigma}
        self.updates += 1
        if self.updates % self.hp.policy_delay == 0:
            losses.update(self.actor_and_alpha_step(s, self._q_mu))
            soft_update(self.critic_target, self.critic, self.hp.tau)
        return losses


def sac_update(agent: SAC, batch=None):
    return agent.update(batch)


def dsac_update(agent: DSAC, batch=None):
    return agent.update(batch)
