# %% [markdown]
# # Training an agent and racing it
#
# A short SAC run. Off-policy agents collect 1000 random steps first, then
# do one gradient update per environment step. Longer budgets (50k updates)
# are needed before laps are completed reliably; this demo stops far earlier.

# %%
from racelab.harness import TrainRunConfig, evaluate, race, replay_svg, train, validate_replay

result = train(TrainRunConfig("sac", steps=3000, seeds=(0,)))
returns = result.curve.returns
print(f"{len(returns)} training episodes, last ten mean return {returns[-10:].mean():.3f}")

# %% [markdown]
# Evaluation is deterministic and uses a fixed block of track seeds, so
# numbers from different agents are comparable.

# %%
report = evaluate(result.agent, 10)
print(report.summary())

# %% [markdown]
# A race runs each agent on the same track and records every pose and
# action. Replays re-simulate exactly from the recorded actions.

# %%
replay = race([result.agent], seed=5, names=["sac-3k"])
print(replay.traces[0].outcome, len(replay.traces[0].actions), "steps")
print("re-simulates exactly:", validate_replay(replay))
with open("race_5.svg", "w") as f:
    f.write(replay_svg(replay))
