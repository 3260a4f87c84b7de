"""DDPG with a two-tower actor, and DDPG2 with parameter-space exploration."""

from __future__ import annotations

import numpy as np

from ..nncore import Adam, ConcatCritic, Mlp, TwoTowerActor, check_finite, soft_update
from .base import Agent, clamp_action


def build_ddpg_actor(rng=None):
    return TwoTowerActor(obs_dim=5, hidden=(32, 32), rng=rng)


def build_ddpg_critic(rng=None):
    return ConcatCritic(obs_dim=5, act_dim=2, state_hidden=(16, 32), action_hidden=(32,), head_hidden=(64, 64), rng=rng)


def build_ddpg2_actor(rng=None):
    return Mlp([5, 64, 64, 2], ["relu", "relu", "tanh"], rng, final_init=3e-3)


class DDPG(Agent):
    name = "ddpg"

    def __init__(self, hp=None, seed=0):
        super().__init__(hp, seed)
        self.actor = self.build_actor()
        self.critic = build_ddpg_critic(self.rng)
        self.actor_target = self.actor.clone()
        self.critic_target = self.critic.clone()
        self.actor_opt = Adam(self.actor, self.hp.actor_lr)
        self.critic_opt = Adam(self.critic, self.hp.critic_lr)

    def build_actor(self):
        return build_ddpg_actor(self.rng)

    def networks(self):
        return {"actor": self.actor, "critic": self.critic,
                "actor_target": self.actor_target, "critic_target": self.critic_target}

    def select_action(self, obs, mode="train"):
        a = self.actor(obs)
        if mode == "train":
            a = a + self.rng.normal(0.0, self.hp.exploration_noise, a.shape)
        return clamp_action(a)

    def critic_target_values(self, r, d, s2):
        q2 = self.critic_target(s2, self.actor_target(s2))
        return r + self.hp.gamma * (1.0 - d) * q2

    def update(self, batch=None):
        s, a, r, s2, d = self.sample() if batch is None else batch
        n = len(s)
        y = self.critic_target_values(r, d, s2)
        diff = self.critic(s, a) - y
        critic_loss = float(np.mean(diff**2))
        check_finite(critic_loss, "critic loss")
        grads, _, _ = self.critic.backward(2.0 * diff / n)
        self.critic_opt.step(grads)

        q = self.critic(s, self.actor(s))
        actor_loss = -float(np.mean(q))
        _, _, g_act = self.critic.backward(np.full_like(q, -1.0 / n))
        grads, _ = self.actor.backward(g_act)
        self.actor_opt.step(grads)

        soft_update(self.actor_target, self.actor, self.hp.tau)
        soft_update(self.critic_target, self.critic, self.hp.tau)
        self.updates += 1
        return {"critic_loss": critic_loss, "actor_loss": actor_loss}


class DDPG2(DDPG):
    """DDPG exploring through a weight-perturbed copy of the actor.

    The perturbation (i.i.d. normal, fixed std) is redrawn at every episode
    start; targets and evaluation use the unperturbed actor.
    """

    name = "ddpg2"

    def __init__(self, hp=None, seed=0):
        super().__init__(hp, seed)
        self.perturbed = self.actor.clone()

    def build_actor(self):
        return build_ddpg2_actor(self.rng)

    def start_episode(self):
        self.perturbed = self.actor.clone()
        self.perturbed.params += self.rng.normal(0.0, self.hp.param_noise, self.actor.size)

    def select_action(self, obs, mode="train"):
        net = self.perturbed if mode == "train" else self.actor
        return clamp_action(net(obs))


def ddpg_update(agent: DDPG, batch=None):
    return agent.update(batch)


def ddpg2_select_action(agent: DDPG2, obs, mode="train"):
    return agent.select_action(obs, mode)
