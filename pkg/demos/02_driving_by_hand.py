# %% [markdown]
# # Driving by hand
#
# The observation has five entries. The first is the angle of the longest
# lidar ray; the next three are distances along that ray and its two
# neighbours; the last is speed. Actions are (acceleration, turn) in [-1, 1].

# %%
import numpy as np

from racelab import EnvConfig, Racer

env = Racer(EnvConfig())
obs = env.reset(seed=0)
print("observation:", np.round(obs, 3))
print("full lidar:", np.round(env.lidar(), 2))

# %% [markdown]
# A tiny controller: steer toward the longest ray, and pick a target speed
# proportional to the free distance ahead.


# %%
def drive(obs):
    alpha, _, d_max, _, v = obs
    target = np.clip(0.6 * d_max, 0.12, 0.8)
    return [np.clip((target - v) * 10, -1, 1), np.clip(2 * alpha, -1, 1)]


total, steps = 0.0, 0
while True:
    obs, reward, done, cause = env.step(drive(obs))
    total += reward
    steps += 1
    if done:
        break
print(f"{cause} after {steps} steps, return {total:.3f}, lap fraction {env.state.arc_progress:.3f}")

# %% [markdown]
# The reward is the distance covered per step, so a completed lap earns
# roughly the lap length. Failures (leaving the track, stalling) end the
# episode with a penalty of -1.

# %%
outcomes = {}
for seed in range(20):
    obs = env.reset(seed)
    while True:
        obs, _, done, cause = env.step(drive(obs))
        if done:
            outcomes[cause] = outcomes.get(cause, 0) + 1
            break
print(outcomes)
