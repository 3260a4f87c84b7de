from __future__ import annotations

import numpy as np

from ..nncore import Adam, Mlp, QNetwork, check_finite, soft_update
from .base import Agent, clamp_action


def build_td3_actor(rng=None):
    return Mlp([5, 64, 64, 2], ["relu", "relu", "tanh"], rng, final_init=3e-3)


def build_q_network(rng=None):
    return QNetwork(5, 2, (64, 64), rng)


def smoothed_target_action(target_action, rng, std, clip):
    noise = np.clip(rng.normal(0.0, std, target_action.shape), -clip, clip)
    return np.clip(target_action + noise, -1.0, 1.0)


def clipped_double_q_target(r, d, q1, q2, gamma):
    return r + gamma * (1.0 - d) * np.minimum(q1, q2)


class TD3(Agent):
    name = "td3"

    def __init__(self, hp=None, seed=0):
        super().__init__(hp, seed)
        self.actor = build_td3_actor(self.rng)
        self.q1 = build_q_network(self.rng)
        self.q2 = build_q_network(self.rng)
        self.actor_target = self.actor.clone()
        self.q1_target = self.q1.clone()
        self.q2_target = self.q2.clone()
        self.actor_opt = Adam(self.actor, self.hp.actor_lr)
        self.q1_opt = Adam(self.q1, self.hp.critic_lr)
        self.q2_opt = Adam(self.q2, self.hp.critic_lr)

    def networks(self):
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2, "actor_target": self.actor_target,
                "q1_target": self.q1_target, "q2_target": self.q2_target}

    def select_action(self, obs, mode="train"):
        a = self.actor(obs)
        if mode == "train":
            a = a + self.rng.normal(0.0, self.hp.exploration_noise, a.shape)
        return clamp_action(a)

    def update(self, batch=None):
        hp = self.hp
        s, a, r, s2, d = self.sample() if batch is None else batch
        n = len(s)
        a2 = smoothed_target_action(self.actor_target(s2), self.rng, hp.target_noise, hp.target_noise_clip)
        y = clipped_double_q_target(r, d, self.q1_target(s2, a2), self.q2_target(s2, a2), hp.gamma)
        losses = {}
        for key, q, opt in (("q1_loss", self.q1, self.q1_opt), ("q2_loss", self.q2, self.q2_opt)):
            diff = q(s, a) - y
            losses[key] = float(np.mean(diff**2))
            check_finite(losses[key], "critic loss")
            grads, _, _ = q.backward(2.0 * diff / n)
            opt.step(grads)

        self.updates += 1
        if self.updates % hp.policy_delay == 0:
            q = self.q1(s, self.actor(s))
            losses["actor_loss"] = -float(np.mean(q))
            _, _, g_act = self.q1.backward(np.full_like(q, -1.0 / n))
            grads, _ = self.actor.backward(g_act)
            self.actor_opt.step(grads)
            soft_update(self.actor_target, self.actor, hp.tau)
            soft_update(self.q1_target, self.q1, hp.tau)
            soft_update(self.q2_target, self.q2, hp.tau)
        return losses


def td3_update(agent: TD3, batch=None):
    return agent.update(batch)
