"""Hand-written drivers used as environment and harness oracles."""

import numpy as np

from racelab.agents import Agent


def follow_the_gap(obs, gain=2.0, speed_per_distance=0.6):
    """Steer toward the longest lidar ray; target speed grows with free distance."""
    alpha, _, d_max, _, v = obs
    target = np.clip(speed_per_distance * d_max, 0.12, 0.8)
    return np.array([np.clip((target - v) * 10, -1, 1), np.clip(alpha * gain, -1, 1)])


class ScriptedAgent(Agent):
    """Deterministic heuristic driver behind the agent interface."""

    name = "scripted"
    off_policy = False

    def __init__(self, gain=2.0, speed_per_distance=0.6):
        super().__init__()
        self.gain, self.speed_per_distance = gain, speed_per_distance

    def networks(self):
        return {}

    def select_action(self, obs, mode="train"):
        return follow_the_gap(obs, self.gain, self.speed_per_distance)
