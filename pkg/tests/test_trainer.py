"""Trainer tests: rewards, GAE, rollouts, PPO updates, and the train loop."""

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from emberplan import dynamics, policy, trainer
from emberplan.autodiff import Adam, load_checkpoint, no_grad, tree_values
from emberplan.belief import (BeliefState, DEFAULT_KERNEL, Observation, kernel,
                              covariance_trace, lattice_points,
                              posterior_marginals)
from emberplan.policy import PolicyInput
from emberplan.trainer import (EpisodeBuffer, TrainConfig, compute_advantages,
                               gather_minibatch, lr_for_update, ppo_update,
                               replay_decision, replay_minibatch, reward,
                               rollout_indexed, toy_train_config)


def tiny_config(**overrides):
    base = dict(n_nodes=20, k_neighbors=4, resolution=6, render_radius=0.08,
                max_episode_len=12, embed_dim=16, n_heads=1,
                budget_range=(1.0, 1.5), total_episodes=4, batch_size=2,
                minibatch_size=16, ppo_epochs=2, workers=1, master_seed=7)
    base.update(overrides)
    return TrainConfig(**base)


def tiny_models(config):
    return trainer.init_models(config)


def snapshot(params):
    return tree_values(params.values)


def buffers_equal(a: EpisodeBuffer, b: EpisodeBuffer) -> bool:
    for f in dataclasses.fields(a):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if isinstance(va, np.ndarray):
            if va.shape != vb.shape or not np.array_equal(va, vb):
                return False
        elif va != vb:
            return False
    return True


# ---------------------------------------------------------------------------
# reward


def test_reward_unchanged_trace_is_zero():
    assert reward(100.0, 100.0) == 0.0


def test_reward_halved_trace():
    assert reward(100.0, 50.0) == 0.5


def test_reward_rejects_nonpositive_previous_trace():
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError, match="positive"):
            reward(bad, 1.0)


def test_reward_matches_dense_solve_traces():
    # Recompute both traces with a textbook dense solve and compare rewards.
    params = DEFAULT_KERNEL
    obs1 = Observation((0.3, 0.4), 1.0, 0.6)
    obs2 = Observation((0.5, 0.5), 1.0, 0.2)
    before = BeliefState(params, 8, (obs1,))
    after = before.with_observations([obs2])
    t = 1.0
    got = reward(covariance_trace(before, t), covariance_trace(after, t))

    queries = lattice_points(8, t)

    def dense_trace(observations):
        X = np.array([o.coords() for o in observations])
        K = kernel(X, X, params) + params.noise_variance * np.eye(len(X))
        Kqx = kernel(queries, X, params)
        prior = kernel(queries, queries, params)
        post = prior - Kqx @ np.linalg.inv(K) @ Kqx.T
        return float(np.trace(post))

    want = (dense_trace((obs1,)) - dense_trace((obs1, obs2))) \
        / dense_trace((obs1,))
    assert abs(got - want) < 1e-9


# ---------------------------------------------------------------------------
# config


def test_config_validation():
    with pytest.raises(ValueError, match="budget"):
        tiny_config(budget_range=(3.0, 2.0))
    with pytest.raises(ValueError, match="fuel"):
        tiny_config(fuel_range=(0.0, 1.0))
    with pytest.raises(ValueError, match="k"):
        tiny_config(k_neighbors=20)
    with pytest.raises(ValueError, match="prediction mode"):
        tiny_config(prediction_mode="both")
    with pytest.raises(ValueError, match="workers"):
        tiny_config(workers=0)
    with pytest.raises(ValueError, match="discount"):
        tiny_config(discount=0.0)
    with pytest.raises(ValueError, match="lambda"):
        tiny_config(gae_lambda=1.5)
    with pytest.raises(ValueError, match="time scale"):
        tiny_config(time_scale=0)
    with pytest.raises(ValueError, match="time scale"):
        tiny_config(time_scale=2.5)


def test_toy_profile_is_valid_and_small():
    cfg = toy_train_config()
    assert cfg.resolution == 8
    assert cfg.n_nodes == 50
    assert cfg.k_neighbors == 10
    assert cfg.embed_dim == 16
    assert cfg.total_episodes <= 2000
    assert cfg.time_scale == 8


def test_randomization_horizon_follows_fire_clock():
    cfg = tiny_config(time_scale=4)
    spec = trainer.randomization_spec(cfg)
    assert spec.horizon == cfg.max_episode_len * 4 + 1
    assert trainer.randomization_spec(tiny_config()).horizon == \
        cfg.max_episode_len + 1


def test_lr_schedule_exact_at_boundaries():
    cfg = tiny_config()
    for step in (0, 1, 31):
        assert lr_for_update(cfg, step) == 1e-4
    assert lr_for_update(cfg, 32) == 1e-4 * 0.96
    assert lr_for_update(cfg, 63) == 1e-4 * 0.96
    assert lr_for_update(cfg, 64) == 1e-4 * 0.96 ** 2
    assert lr_for_update(cfg, 320) == 1e-4 * 0.96 ** 10


# ---------------------------------------------------------------------------
# advantages


def reward_value_buffer(rewards, values):
    t = len(rewards)

    def zeros(*shape):
        return np.zeros((t,) + shape)

    return EpisodeBuffer(
        episode_index=0, fuel_coefficient=1.0, budget=1.0,
        features=zeros(3, 4), current_nodes=np.zeros(t, np.int64),
        neighbors=np.zeros((t, 2), np.int64), masks=np.ones((t, 2), bool),
        budget_fractions=zeros(), grids=zeros(2, 4, 4),
        dpm_targets=zeros(4, 4), dpm_hidden=zeros(2, 64),
        policy_hidden=zeros(2, 16), latents=zeros(16),
        actions=np.zeros(t, np.int64), log_probs=zeros(),
        values=np.asarray(values, dtype=float),
        rewards=np.asarray(rewards, dtype=float),
        traces_before=zeros(), traces_after=zeros(), rmses=zeros(),
        dpm_losses=zeros(), final_trace=1.0, final_rmse=0.0)


def test_gae_lambda_zero_is_one_step_td():
    rng = np.random.default_rng(3)
    r, v = rng.normal(size=6), rng.normal(size=6)
    adv, ret = compute_advantages(reward_value_buffer(r, v), 0.9, 0.0)
    v_next = np.append(v[1:], 0.0)
    assert np.allclose(adv, r + 0.9 * v_next - v, atol=1e-12)
    assert np.allclose(ret, adv + v, atol=1e-12)


def test_gae_monte_carlo_case():
    rng = np.random.default_rng(4)
    r, v = rng.normal(size=5), rng.normal(size=5)
    adv, _ = compute_advantages(reward_value_buffer(r, v), 1.0, 1.0)
    tails = np.cumsum(r[::-1])[::-1]
    assert np.allclose(adv, tails - v, atol=1e-12)


def test_gae_matches_recursive_definition():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(1, 12))
        r, v = rng.normal(size=n), rng.normal(size=n)
        gamma = float(rng.uniform(0.8, 1.0))
        lam = float(rng.uniform(0.0, 1.0))
        adv, _ = compute_advantages(reward_value_buffer(r, v), gamma, lam)
        want = np.zeros(n)
        for t in range(n):
            acc = 0.0
            for j in range(n - 1, t - 1, -1):
                v_next = v[j + 1] if j + 1 < n else 0.0
                delta = r[j] + gamma * v_next - v[j]
                acc = delta + gamma * lam * acc
            want[t] = acc
        assert np.allclose(adv, want, atol=1e-10)


# ---------------------------------------------------------------------------
# rollouts


@pytest.fixture(scope="module")
def tiny_rollout():
    cfg = tiny_config()
    pp, dp = tiny_models(cfg)
    buf = rollout_indexed(cfg, snapshot(pp), snapshot(dp), 0)
    return cfg, pp, dp, buf


def test_rollout_records_decisions(tiny_rollout):
    cfg, _, _, buf = tiny_rollout
    assert buf.n_decisions > 0
    assert buf.n_decisions <= cfg.max_episode_len
    assert buf.features.shape == (buf.n_decisions, cfg.n_nodes, 4)
    assert buf.grids.shape[1:] == (2, cfg.resolution, cfg.resolution)
    assert buf.latents.shape == (buf.n_decisions, 16)
    assert np.all(np.isfinite(buf.latents))
    assert np.all(buf.log_probs <= 0.0)


def test_rollout_rewards_within_bounds(tiny_rollout):
    _, _, _, buf = tiny_rollout
    assert np.all(buf.rewards >= -1e-9)
    assert np.all(buf.rewards <= 1.0)
    assert np.all(buf.traces_before > 0)


def test_rollout_rewards_match_logged_traces(tiny_rollout):
    _, _, _, buf = tiny_rollout
    want = (buf.traces_before - buf.traces_after) / buf.traces_before
    assert np.allclose(buf.rewards, want, atol=1e-9)
    assert buf.final_trace == buf.traces_after[-1]


def test_rollout_actions_were_feasible(tiny_rollout):
    _, _, _, buf = tiny_rollout
    picked = buf.masks[np.arange(buf.n_decisions), buf.actions]
    assert picked.all()


def test_rollout_next_mode_targets_chain_into_inputs(tiny_rollout):
    # Under next-grid prediction, decision t's target is decision t+1's input.
    _, _, _, buf = tiny_rollout
    assert np.array_equal(buf.dpm_targets[:-1], buf.grids[1:, 0])


def test_rollout_budget_fractions_decrease(tiny_rollout):
    _, _, _, buf = tiny_rollout
    assert np.all(np.diff(buf.budget_fractions) < 1e-12)
    assert buf.budget_fractions[0] == 1.0


def test_rollout_deterministic(tiny_rollout):
    cfg, pp, dp, buf = tiny_rollout
    again = rollout_indexed(cfg, snapshot(pp), snapshot(dp), 0)
    assert buffers_equal(buf, again)


def test_zero_budget_episode_has_no_decisions():
    cfg = tiny_config(budget_range=(0.0, 0.0))
    pp, dp = tiny_models(cfg)
    buf = rollout_indexed(cfg, snapshot(pp), snapshot(dp), 1)
    assert buf.n_decisions == 0
    assert len(buf.observations) == 1
    belief = BeliefState(DEFAULT_KERNEL, cfg.resolution, buf.observations)
    assert abs(buf.final_trace - covariance_trace(belief, 0.0)) < 1e-12


def test_rollout_fire_clock_scaling():
    # With time_scale=3, measurements arriving at decision s read the fire
    # frame 3*s while belief timestamps stay on the decision clock.
    from emberplan.firesim import intensity_at, simulate_field
    cfg = tiny_config(time_scale=3)
    pp, dp = tiny_models(cfg)
    buf = rollout_indexed(cfg, snapshot(pp), snapshot(dp), 2)
    assert buf.n_decisions > 0

    env, _, _ = trainer.make_episode(cfg, 2)
    field = simulate_field(env, horizon=cfg.max_episode_len * 3 + 1,
                           resolution=cfg.resolution,
                           model=trainer.fire_model(cfg))
    for obs in buf.observations:
        assert obs.time == int(obs.time)
        assert obs.time <= buf.n_decisions
        want = intensity_at(field, obs.position, int(obs.time) * 3)
        assert abs(obs.value - want) < 1e-12

    # the RMSE log scores the mean channel against the scaled frames too
    belief = BeliefState(DEFAULT_KERNEL, cfg.resolution,
                         tuple(o for o in buf.observations if o.time <= 1.0))
    mean, _ = posterior_marginals(belief, lattice_points(cfg.resolution, 1.0))
    err = mean.reshape(cfg.resolution, cfg.resolution) - field.frames[3]
    assert abs(buf.rmses[0] - float(np.sqrt(np.mean(err ** 2)))) < 1e-12


def test_episode_observations_rebuild_final_belief(tiny_rollout):
    cfg, _, _, buf = tiny_rollout
    belief = BeliefState(DEFAULT_KERNEL, cfg.resolution, buf.observations)
    t_final = float(buf.n_decisions)
    assert abs(covariance_trace(belief, t_final) - buf.final_trace) < 1e-9


def test_collect_batch_worker_count_invariance():
    cfg = tiny_config()
    pp, dp = tiny_models(cfg)
    serial = trainer.collect_batch(cfg, pp, dp, range(4), pool=None)
    with ProcessPoolExecutor(2) as pool:
        fanned = trainer.collect_batch(cfg, pp, dp, range(4), pool=pool)
    assert len(serial) == len(fanned) == 4
    for a, b in zip(serial, fanned):
        assert buffers_equal(a, b)


# ---------------------------------------------------------------------------
# replay and PPO


def test_batched_replay_matches_reference(tiny_rollout):
    cfg, pp, dp, buf = tiny_rollout
    decisions = [(buf, t) for t in range(buf.n_decisions)]
    batch = gather_minibatch(decisions, np.arange(buf.n_decisions))
    logp, value, entropy, dpm = replay_minibatch(batch, pp, dp)
    singles = [replay_decision(buf, t, pp, dp) for t in range(buf.n_decisions)]
    assert np.allclose(logp.value, [s[0].value for s in singles], atol=1e-9)
    assert np.allclose(value.value, [s[1].value for s in singles], atol=1e-9)
    assert np.allclose(entropy.value, [s[2].value for s in singles], atol=1e-9)
    assert abs(dpm.value - np.mean([s[3].value for s in singles])) < 1e-9


def test_replay_at_snapshot_params_gives_unit_ratio(tiny_rollout):
    # Same parameters that acted -> new log-prob equals stored log-prob,
    # so the PPO ratio is 1 and clipping cannot bite.
    cfg, pp, dp, buf = tiny_rollout
    decisions = [(buf, t) for t in range(buf.n_decisions)]
    batch = gather_minibatch(decisions, np.arange(buf.n_decisions))
    logp, _, _, _ = replay_minibatch(batch, pp, dp)
    ratio = np.exp(logp.value - buf.log_probs)
    assert np.allclose(ratio, 1.0, atol=1e-9)
    adv = np.ones_like(ratio)
    assert np.allclose(np.minimum(ratio * adv, np.clip(ratio, 0.8, 1.2) * adv),
                       ratio * adv, atol=1e-12)


def test_zero_advantage_batch_leaves_params_still(tiny_rollout):
    cfg, pp, dp, buf = tiny_rollout
    frozen = dataclasses.replace(cfg, value_coef=0.0, entropy_coef=0.0,
                                 dpm_weight=0.0)
    quiet = dataclasses.replace(buf, rewards=np.zeros(buf.n_decisions),
                                values=np.zeros(buf.n_decisions))
    pp2, dp2 = tiny_models(cfg)
    before_p = snapshot(pp2)
    before_d = snapshot(dp2)
    opt = Adam(lr=frozen.lr)
    ppo_update([quiet], pp2, dp2, opt, frozen, np.random.default_rng(0))
    drift = max(np.abs(pp2.values[k].value - before_p[k]).max()
                for k in before_p)
    drift = max(drift, max(np.abs(dp2.values[k].value - before_d[k]).max()
                           for k in before_d))
    assert drift <= 1e-8


def test_ppo_update_aborts_on_nonfinite_loss(tiny_rollout):
    cfg, _, _, buf = tiny_rollout
    pp, dp = tiny_models(cfg)
    poisoned = dataclasses.replace(
        buf, dpm_targets=np.full_like(buf.dpm_targets, np.nan))
    opt = Adam(lr=cfg.lr)
    with pytest.raises(RuntimeError, match="non-finite"):
        ppo_update([poisoned], pp, dp, opt, cfg, np.random.default_rng(0))


def test_ppo_update_debug_checks_pass_on_healthy_batch(tiny_rollout):
    cfg, _, _, buf = tiny_rollout
    checked = dataclasses.replace(cfg, debug_checks=True, ppo_epochs=1)
    pp, dp = tiny_models(cfg)
    opt = Adam(lr=cfg.lr)
    stats = ppo_update([buf], pp, dp, opt, checked, np.random.default_rng(1))
    assert stats["n_decisions"] == buf.n_decisions
    assert np.isfinite(stats["total_loss"])


def test_ppo_update_requires_buffers():
    cfg = tiny_config()
    pp, dp = tiny_models(cfg)
    with pytest.raises(ValueError, match="buffer"):
        ppo_update([], pp, dp, Adam(), cfg, np.random.default_rng(0))


BANDIT_FEATURES = np.array([[0.5, 0.5, 0.0, 1.0],
                            [0.2, 0.8, 0.3, 0.9],
                            [0.8, 0.2, 0.7, 0.8]])
BANDIT_NEIGHBORS = np.array([1, 2])


def bandit_context(pp, dp):
    with no_grad():
        emb = policy.encode_graph(BANDIT_FEATURES, pp)
        z, _ = dynamics.encode(np.zeros((2, 4, 4)), None, dp)
        inp = PolicyInput(0, BANDIT_NEIGHBORS, np.ones(2, bool), 1.0,
                          z.value, None)
        dist, value, _ = policy.decode_action(emb, inp, pp)
    return dist, float(value.value)


def bandit_episode(index, pp, dp, rng):
    dist, value = bandit_context(pp, dp)
    action = policy.act(dist, "sample", rng)
    payout = 1.0 if action == 0 else 0.0
    t = 1

    def zeros(*shape):
        return np.zeros((t,) + shape)

    return EpisodeBuffer(
        episode_index=index, fuel_coefficient=1.0, budget=1.0,
        features=BANDIT_FEATURES[None], current_nodes=np.zeros(1, np.int64),
        neighbors=BANDIT_NEIGHBORS[None], masks=np.ones((1, 2), bool),
        budget_fractions=np.ones(1), grids=zeros(2, 4, 4),
        dpm_targets=zeros(4, 4), dpm_hidden=zeros(2, 64),
        policy_hidden=zeros(2, 16), latents=zeros(16),
        actions=np.array([action]), log_probs=np.array([float(dist.log_prob(action).value)]),
        values=np.array([value]), rewards=np.array([payout]),
        traces_before=np.ones(1), traces_after=np.ones(1), rmses=zeros(),
        dpm_losses=zeros(), final_trace=1.0, final_rmse=0.0)


def test_ppo_learns_two_armed_bandit():
    cfg = TrainConfig(n_nodes=3, k_neighbors=2, resolution=4,
                      embed_dim=16, n_heads=1, budget_range=(1.0, 1.0),
                      max_episode_len=1, total_episodes=16, batch_size=16,
                      minibatch_size=64, ppo_epochs=4, lr=0.01,
                      lr_decay_every=10 ** 6, dpm_weight=0.0, workers=1,
                      master_seed=0)
    rng = np.random.default_rng(42)
    pp, dp = tiny_models(cfg)
    opt = Adam(lr=cfg.lr)
    dist, _ = bandit_context(pp, dp)
    assert abs(dist.probabilities[0] - 0.5) < 0.05  # near-uniform start

    prob = dist.probabilities[0]
    for update in range(200):
        buffers = [bandit_episode(i, pp, dp, rng) for i in range(16)]
        ppo_update(buffers, pp, dp, opt, cfg, rng, update_index=update)
        prob = bandit_context(pp, dp)[0].probabilities[0]
        if prob > 0.9:
            break
    assert prob > 0.9


# ---------------------------------------------------------------------------
# the train loop


def test_train_smoke_logs_and_checkpoints(tmp_path):
    cfg = tiny_config()
    log_path = tmp_path / "train_log.jsonl"
    ckpt_dir = tmp_path / "ckpt"
    pp, dp, log = trainer.train(cfg, log_path=log_path,
                                checkpoint_dir=ckpt_dir, checkpoint_every=1)
    assert len(log) == cfg.total_episodes
    assert [rec["episode"] for rec in log] == [0, 1, 2, 3]
    assert [rec["batch"] for rec in log] == [0, 0, 1, 1]
    for rec in log:
        for key in ("fuel_coefficient", "return", "final_trace", "final_rmse",
                    "dpm_loss", "policy_loss", "value_loss", "entropy", "lr"):
            assert key in rec

    lines = log_path.read_text().strip().splitlines()
    assert len(lines) == cfg.total_episodes
    assert json.loads(lines[0])["episode"] == 0

    final = ckpt_dir / "checkpoint_final.etns"
    assert final.exists()
    pp2, dp2, meta = trainer.load_model(final)
    assert meta["prediction_mode"] == cfg.prediction_mode
    assert meta["time_scale"] == cfg.time_scale
    for key, var in pp.values.items():
        assert np.array_equal(var.value, pp2.values[key].value)
    for key, var in dp.values.items():
        assert np.array_equal(var.value, dp2.values[key].value)


def test_load_model_rejects_incomplete_metadata(tmp_path):
    from emberplan.autodiff import save_checkpoint
    path = tmp_path / "bad.etns"
    save_checkpoint(path, {"policy/embed_w": np.zeros((4, 8))},
                    {"embed_dim": 8, "n_heads": 1})
    with pytest.raises(ValueError, match="resolution"):
        trainer.load_model(path)
