"""Baseline continuous-control learners on the 5-value racer observation."""

from .. import nncore
from .base import Agent, AgentHyperparams
from .buffers import ReplayBuffer, TrajectoryBuffer, gae_compute
from .ddpg import DDPG, DDPG2, build_ddpg_actor, build_ddpg_critic, ddpg2_select_action, ddpg_update
from .ppo import PPO, clipped_surrogate, ppo_update
from .sac import DSAC, SAC, clamp_target, dsac_update, sac_update
from .td3 import TD3, clipped_double_q_target, smoothed_target_action, td3_update

ALGORITHMS = {cls.name: cls for cls in (DDPG, DDPG2, TD3, SAC, DSAC, PPO)}


def make_agent(algorithm: str, hp: AgentHyperparams | None = None, seed: int = 0) -> Agent:
    try:
        cls = ALGORITHMS[algorithm]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {sorted(ALGORITHMS)}") from None
    return cls(hp, seed)


def load_agent(path, algorithm: str | None = None) -> Agent:
    """Rebuild an agent from a checkpoint written by :meth:`Agent.save`."""
    tensors, meta = nncore.load_tensors(path)
    name = meta.get("algorithm")
    if algorithm is not None and algorithm != name:
        raise ValueError(f"checkpoint holds a {name!r} agent, not {algorithm!r}")
    agent = make_agent(name, AgentHyperparams.from_dict(meta.get("hyperparams")), meta.get("seed", 0))
    agent.load_state(tensors)
    agent.updates = meta.get("updates", 0)
    return agent


def select_action(agent: Agent, obs, mode="train"):
    return agent.select_action(obs, mode)


__all__ = [
    "ALGORITHMS", "Agent", "AgentHyperparams", "DDPG", "DDPG2", "DSAC", "PPO", "ReplayBuffer", "SAC", "TD3",
    "TrajectoryBuffer", "build_ddpg_actor", "build_ddpg_critic", "clamp_target", "clipped_double_q_target",
    "clipped_surrogate", "ddpg2_select_action", "ddpg_update", "dsac_update", "gae_compute", "load_agent",
    "make_agent", "ppo_update", "sac_update", "select_action", "smoothed_target_action", "td3_update",
]
