import numpy as np
import pytest

from racelab.agents import (ALGORITHMS, AgentHyperparams, ReplayBuffer, TrajectoryBuffer, clamp_target,
                            clipped_double_q_target, clipped_surrogate, gae_compute, load_agent, make_agent,
                            smoothed_target_action)

from oracles import brute_gae


def fill(agent, n=200, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        agent.buffer.add(rng.normal(size=5), rng.uniform(-1, 1, 2), rng.normal(0, 0.02), rng.normal(size=5),
                         rng.uniform() < 0.05)


def ppo_trajectory(agent, n=40, seed=0):
    rng = np.random.default_rng(seed)
    for t in range(n):
        obs = rng.normal(size=5)
        _, raw, logp, value = agent.act(obs)
        agent.trajectory.add(obs, raw, logp, value, rng.normal(0, 0.02), t == n - 1)
    agent.trajectory.finish_episode(0.0, agent.hp.gamma, agent.hp.gae_lambda)


# -- GAE -------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_gae_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 60))
    r, v = rng.normal(size=n), rng.normal(size=n)
    d = rng.uniform(size=n) < 0.1
    last = rng.normal()
    adv, ret = gae_compute(r, v, d, last, 0.99, 0.95)
    assert np.max(np.abs(adv - brute_gae(r, v, d, last, 0.99, 0.95))) < 1e-12
    assert np.allclose(ret, adv + v)


def test_gae_lambda_extremes():
    r, v = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.1, -0.2])
    one, _ = gae_compute(r, v, [0, 0, 1], 9.0, 0.9, 1.0)
    # lambda = 1 gives Monte-Carlo return minus baseline; the bootstrap is unused after a terminal step
    assert np.allclose(one, [1 + 0.9 * 2 + 0.81 * 3 - 0.5, 2 + 0.9 * 3 - 0.1, 3 + 0.2])
    zero, _ = gae_compute(r, v, [0, 0, 0], 9.0, 0.9, 0.0)
    assert np.allclose(zero, [1 + 0.9 * 0.1 - 0.5, 2 - 0.9 * 0.2 - 0.1, 3 + 0.9 * 9 + 0.2])


def test_gae_rejects_empty():
    with pytest.raises(ValueError):
        gae_compute([], [], [], 0.0, 0.99, 0.95)


# -- PPO -------------------------------------------------------------------


@pytest.mark.parametrize("ratio,adv,expected", [
    (1.5, 2.0, 1.25 * 2.0),   # positive advantage: gain capped at 1 + clip
    (0.5, 2.0, 0.5 * 2.0),    # positive advantage, ratio below band: unclipped is smaller
    (0.5, -2.0, 0.75 * -2.0),  # negative advantage: loss capped at 1 - clip
    (1.5, -2.0, 1.5 * -2.0),  # negative advantage, ratio above band: unclipped is smaller
    (1.1, 3.0, 1.1 * 3.0),    # inside the band
])
def test_clipped_surrogate_closed_form(ratio, adv, expected):
    surr, _ = clipped_surrogate(np.array([ratio]), np.array([adv]), 0.25)
    assert surr[0] == pytest.approx(expected, abs=1e-15)


def test_clipped_surrogate_gradient_mask():
    _, use = clipped_surrogate(np.array([1.5, 0.5, 1.1]), np.array([1.0, 1.0, 1.0]), 0.25)
    assert use.tolist() == [False, True, True]


def test_ppo_first_epoch_ratio_is_one():
    agent = make_agent("ppo", seed=3)
    ppo_trajectory(agent)
    stats = agent.update()
    assert np.allclose(stats["first_ratio"], 1.0, atol=1e-12)
    assert 1 <= stats["epochs"] <= agent.hp.ppo_epochs
    assert len(agent.trajectory) == 0


def test_ppo_kl_early_stop():
    agent = make_agent("ppo", AgentHyperparams(ppo_target_kl=-1.0), seed=3)
    ppo_trajectory(agent)
    assert agent.update()["epochs"] == 1


def test_ppo_skips_non_finite_ratios():
    agent = make_agent("ppo", seed=4)
    ppo_trajectory(agent)
    agent.trajectory.log_probs[0] = -np.inf
    stats = agent.update()
    assert stats["skipped"] >= 1
    assert np.isfinite(agent.actor.params).all()


def test_ppo_needs_finished_episode():
    agent = make_agent("ppo")
    agent.trajectory.add(np.zeros(5), np.zeros(2), 0.0, 0.0, 0.0, False)
    with pytest.raises(ValueError):
        agent.update()


def test_trajectory_buffer_segments():
    buf = TrajectoryBuffer()
    for t in range(3):
        buf.add(np.zeros(5), np.zeros(2), 0.0, 0.0, 1.0, t == 2)
    buf.finish_episode(0.0, 1.0, 1.0)
    buf.add(np.zeros(5), np.zeros(2), 0.0, 0.0, 1.0, True)
    buf.finish_episode(0.0, 1.0, 1.0)
    assert buf.arrays()[3].tolist() == [3.0, 2.0, 1.0, 1.0]
    buf.clear()
    assert len(buf) == 0


# -- TD3 -------------------------------------------------------------------


def test_clipped_double_q_takes_minimum():
    r, d = np.array([[1.0], [1.0]]), np.array([[0.0], [1.0]])
    y = clipped_double_q_target(r, d, np.array([[5.0], [5.0]]), np.array([[3.0], [-7.0]]), 0.5)
    assert y.tolist() == [[2.5], [1.0]]


def test_target_smoothing_noise_is_clipped():
    rng = np.random.default_rng(0)
    base = np.zeros((1000, 2))
    out = smoothed_target_action(base, rng, std=100.0, clip=0.5)
    assert np.all(np.abs(out) <= 0.5) and np.mean(np.abs(out) == 0.5) > 0.99
    edge = smoothed_target_action(np.full((100, 2), 0.9), rng, std=1.0, clip=0.5)
    assert edge.max() <= 1.0


def test_td3_policy_delay():
    agent = make_agent("td3", seed=0)
    fill(agent)
    snapshots = [agent.actor.params.copy()]
    target = [agent.q1_target.params.copy()]
    for _ in range(4):
        agent.update()
        snapshots.append(agent.actor.params.copy())
        target.append(agent.q1_target.params.copy())
    moved = [not np.array_equal(a, b) for a, b in zip(snapshots, snapshots[1:])]
    assert moved == [False, True, False, True]
    assert [not np.array_equal(a, b) for a, b in zip(target, target[1:])] == moved


# -- SAC / DSAC ------------------------------------------------------------


def test_dsac_target_clamp():
    mean = np.array([0.0, 5.0, -5.0])
    assert clamp_target(np.array([20.0, 5.5, -30.0]), mean, 10.0).tolist() == [10.0, 5.5, -15.0]


def test_dsac_sigma_floor():
    agent = make_agent("dsac", seed=0)
    agent.critic.net.b[-1][1] = -10.0
    _, ls = agent.critic_value(agent.critic, np.zeros((3, 5)), np.zeros((3, 2)))
    assert np.all(np.exp(ls) >= agent.hp.dsac_min_sigma)


def test_sac_temperature_tracks_entropy():
    agent = make_agent("sac", seed=0)
    fill(agent)
    a0 = agent.alpha
    agent.log_alpha[:] = np.log(a0)
    stats = agent.update()
    if stats["entropy"] > agent.hp.target_entropy:
        assert agent.alpha < a0
    else:
        assert agent.alpha > a0


# -- DDPG2 -----------------------------------------------------------------


def test_ddpg2_perturbation():
    agent = make_agent("ddpg2", seed=0)
    obs = np.random.default_rng(0).normal(size=5)
    agent.start_episode()
    diff = agent.perturbed.params - agent.actor.params
    assert 0.15 < diff.std() < 0.25
    train_a = agent.select_action(obs, "train")
    assert np.array_equal(train_a, agent.select_action(obs, "train"))
    assert np.array_equal(agent.select_action(obs, "eval"), np.clip(agent.actor(obs), -1, 1))
    agent.start_episode()
    assert not np.array_equal(diff, agent.perturbed.params - agent.actor.params)


# -- shared ----------------------------------------------------------------


@pytest.mark.parametrize("algo", sorted(ALGORITHMS))
def test_updates_finite_and_actions_bounded(algo):
    agent = make_agent(algo, seed=1)
    rng = np.random.default_rng(1)
    if agent.off_policy:
        fill(agent)
        for _ in range(5):
            losses = agent.update()
            assert all(np.isfinite(v) for v in losses.values())
    else:
        ppo_trajectory(agent)
        agent.update()
    agent.start_episode()
    for mode in ("train", "eval"):
        for _ in range(50):
            a = agent.select_action(rng.normal(0, 3, 5), mode)
            assert a.shape == (2,) and np.all(np.abs(a) <= 1.0)


@pytest.mark.parametrize("algo", sorted(ALGORITHMS))
def test_checkpoint_roundtrip(algo, tmp_path):
    agent = make_agent(algo, seed=2)
    if agent.off_policy:
        fill(agent)
        agent.update()
    path = tmp_path / f"{algo}.ckpt"
    agent.save(path)
    back = load_agent(path)
    assert type(back) is type(agent) and back.updates == agent.updates
    obs = np.random.default_rng(0).normal(size=(10, 5))
    for o in obs:
        assert np.array_equal(back.select_action(o, "eval"), agent.select_action(o, "eval"))
    for k, v in agent.state_tensors().items():
        assert np.array_equal(back.state_tensors()[k], v)
    with pytest.raises(ValueError):
        load_agent(path, algorithm="ppo" if algo != "ppo" else "sac")


def test_unknown_algorithm():
    with pytest.raises(ValueError, match="unknown algorithm"):
        make_agent("nosuch")


def test_same_seed_same_agent():
    a, b = make_agent("sac", seed=5), make_agent("sac", seed=5)
    assert np.array_equal(a.actor.params, b.actor.params)
    fill(a)
    fill(b)
    assert a.update() == b.update()


def test_replay_buffer_fifo_and_sampling():
    buf = ReplayBuffer(3, 1, 1)
    for i in range(5):
        buf.add([i], [0], i, [i + 1], False)
    assert len(buf) == 3 and sorted(buf.obs[:, 0]) == [2, 3, 4]
    s = buf.sample(3, np.random.default_rng(0))
    assert set(s[0][:, 0]) <= {2.0, 3.0, 4.0}
    assert np.array_equal(s[3][:, 0], s[0][:, 0] + 1)
    with pytest.raises(ValueError):
        ReplayBuffer(10, 1, 1).sample(2, np.random.default_rng(0))


def test_hyperparams_defaults():
    hp = AgentHyperparams()
    assert (hp.gamma, hp.tau, hp.actor_lr, hp.critic_lr, hp.batch_size) == (0.99, 0.005, 1e-3, 1e-3, 64)
    assert (hp.ppo_clip, hp.gae_lambda, hp.ppo_epochs, hp.target_noise_clip) == (0.25, 0.95, 10, 0.5)
    assert AgentHyperparams.from_dict({"gamma": 0.9, "bogus": 1}).gamma == 0.9
