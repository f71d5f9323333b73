"""Episode rollout and joint PPO training of the policy and dynamics model.

One simulator step elapses per decision. A decision made at step t uses the
belief lattice at t; the move finishes at t+1, edge measurements are stamped
there, and the reward compares the covariance trace at t+1 before and after
folding them in, so pure time drift never shows up as negative reward.

Rollouts run against an immutable parameter snapshot (optionally fanned out
over worker processes); a single updater then replays the recorded decisions
with gradients on. Each decision is replayed as its own graph: the stored
LSTM carries enter as constants, while the latent is recomputed so both the
surrogate loss and the grid-prediction loss reach the encoder weights.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import dynamics, policy
from .autodiff import Adam, no_grad, save_checkpoint, load_checkpoint, \
    tree_params, tree_values
from .belief import BeliefState, DEFAULT_KERNEL, Observation, covariance_trace, \
    lattice_points, posterior_marginals
from .dynamics import DpmParams, PREDICTION_MODES, target_for_mode
from .firesim import FireModelConfig, RandomizationSpec, intensity_at, \
    sample_environment, simulate_field
from .policy import PolicyInput, PolicyParams
from .roadmap import BUDGET_SLACK, RoadmapGraph, build_graph, distances_to_node, \
    initial_state, nearest_node, node_features, traverse

# Seed streams that must never collide with episode indices.
_INIT_STREAM = 2 ** 32
_SHUFFLE_STREAM = 2 ** 32 + 1

_DEST_ATTEMPTS = 64


@dataclass
class TrainConfig:
    """Environment, model, and PPO knobs in one place."""

    n_nodes: int = 200
    k_neighbors: int = 20
    budget_range: tuple = (7.0, 9.0)
    fuel_range: tuple = (1.0, 10.0)
    wind_speed: float = 5.0
    fire_count_range: tuple = (1, 3)
    resolution: int = 30
    render_radius: float = 0.03
    measurement_interval: float = 0.2
    max_episode_len: int = 256
    time_scale: int = 1           # fire steps elapsing per decision
    embed_dim: int = 128
    n_heads: int = 4
    prediction_mode: str = "next"
    total_episodes: int = 8192
    batch_size: int = 32
    minibatch_size: int = 64
    ppo_epochs: int = 8
    lr: float = 1e-4
    lr_decay_every: int = 32
    lr_decay_factor: float = 0.96
    clip_epsilon: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    dpm_weight: float = 1.0
    workers: int = 16
    master_seed: int = 0
    debug_checks: bool = False

    def __post_init__(self):
        lo, hi = self.budget_range
        if not 0 <= lo <= hi:
            raise ValueError(f"budget range must satisfy 0 <= lo <= hi, got {self.budget_range}")
        flo, fhi = self.fuel_range
        if not 0 < flo <= fhi:
            raise ValueError(f"fuel range must satisfy 0 < lo <= hi, got {self.fuel_range}")
        if not 1 <= self.k_neighbors < self.n_nodes:
            raise ValueError(f"need 1 <= k < n, got k={self.k_neighbors}, n={self.n_nodes}")
        if self.resolution < 2:
            raise ValueError(f"resolution must be at least 2, got {self.resolution}")
        if self.max_episode_len < 1:
            raise ValueError(f"max episode length must be positive, got {self.max_episode_len}")
        if self.time_scale < 1 or int(self.time_scale) != self.time_scale:
            raise ValueError(f"time scale must be a positive integer, got {self.time_scale}")
        if self.prediction_mode not in PREDICTION_MODES:
            raise ValueError(f"unknown prediction mode {self.prediction_mode!r}")
        for name in ("total_episodes", "batch_size", "minibatch_size", "ppo_epochs",
                     "lr_decay_every", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if not 0 < self.discount <= 1:
            raise ValueError(f"discount must lie in (0, 1], got {self.discount}")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError(f"GAE lambda must lie in [0, 1], got {self.gae_lambda}")
        if not self.clip_epsilon > 0:
            raise ValueError(f"clip epsilon must be positive, got {self.clip_epsilon}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def toy_train_config(**overrides) -> TrainConfig:
    """Desk-scale profile: 8x8 grids, 50-node graphs, a 16-wide policy.

    The fire clock runs 8 steps per decision so the short desk episodes
    still sweep the full arc of fire evolution that a 256-step episode
    sees: slow fires cross the square within an episode, fast ones flare
    and burn out. Without the compression both regimes look near-static
    from inside a ~30-decision episode.
    """
    base = dict(n_nodes=50, k_neighbors=10, resolution=8, render_radius=0.08,
                max_episode_len=64, time_scale=8, embed_dim=16, n_heads=1,
                total_episodes=1984, workers=1)
    base.update(overrides)
    return TrainConfig(**base)


def fire_model(config: TrainConfig) -> FireModelConfig:
    return FireModelConfig(render_radius=config.render_radius)


def randomization_spec(config: TrainConfig) -> RandomizationSpec:
    # horizon is counted in fire steps, so ignition draws scale with the clock
    return RandomizationSpec(fuel_range=config.fuel_range,
                             wind_speed=config.wind_speed,
                             fire_count_range=config.fire_count_range,
                             horizon=config.max_episode_len * config.time_scale + 1)


# ---------------------------------------------------------------------------
# episode buffers


@dataclass
class EpisodeBuffer:
    """Per-decision record of one rolled-out episode, as plain arrays.

    Stored LSTM carries are the values *entering* each decision, which is what
    a replay needs; ``observations`` is the full measurement set so a caller
    can rebuild the final belief and score it at any time.
    """

    episode_index: int
    fuel_coefficient: float
    budget: float
    features: np.ndarray          # (T, n, 4) node features per decision
    current_nodes: np.ndarray     # (T,)
    neighbors: np.ndarray         # (T, k)
    masks: np.ndarray             # (T, k) feasibility
    budget_fractions: np.ndarray  # (T,)
    grids: np.ndarray             # (T, 2, R, R) model inputs
    dpm_targets: np.ndarray       # (T, R, R)
    dpm_hidden: np.ndarray        # (T, 2, 64) carries entering each decision
    policy_hidden: np.ndarray     # (T, 2, d)
    latents: np.ndarray           # (T, 16)
    actions: np.ndarray           # (T,) neighbor slots
    log_probs: np.ndarray         # (T,)
    values: np.ndarray            # (T,)
    rewards: np.ndarray           # (T,)
    traces_before: np.ndarray     # (T,) trace at arrival time, pre-update
    traces_after: np.ndarray      # (T,)
    rmses: np.ndarray             # (T,)
    dpm_losses: np.ndarray        # (T,) forward-only prediction error
    final_trace: float
    final_rmse: float
    observations: tuple = ()

    def __post_init__(self):
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("episode rewards must be finite")

    @property
    def n_decisions(self) -> int:
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


def episode_rng(master_seed: int, episode_index: int) -> np.random.Generator:
    """Stream for one episode; a pure function of (master seed, index)."""
    ss = np.random.SeedSequence((int(master_seed), int(episode_index)))
    return np.random.default_rng(ss)


def make_episode(config: TrainConfig, episode_index: int):
    """Environment, roadmap, and the continuing rng for one episode."""
    rng = episode_rng(config.master_seed, episode_index)
    env = sample_environment(rng, randomization_spec(config))
    graph = build_graph(config.n_nodes, config.k_neighbors,
                        seed=int(rng.integers(2 ** 31)))
    return env, graph, rng


def feasible_mask(graph: RoadmapGraph, node: int, remaining: float,
                  dist_to_dest: np.ndarray) -> np.ndarray:
    """True for each neighbor the agent can visit and still reach the goal."""
    nbrs = graph.adjacency[node]
    return graph.edge_lengths[node] + dist_to_dest[nbrs] <= remaining + BUDGET_SLACK


def draw_endpoints(graph: RoadmapGraph, budget: float, rng):
    """Start and destination for one episode.

    Both are the nodes nearest to uniform draws; the destination is redrawn
    until the trip fits the budget, falling back to the start node (which
    always does). Returns (start, destination, distances to destination).
    """
    start = nearest_node(graph, rng.uniform(0.0, 1.0, 2))
    for _ in range(_DEST_ATTEMPTS):
        cand = nearest_node(graph, rng.uniform(0.0, 1.0, 2))
        d = distances_to_node(graph, cand)
        if d[start] <= budget + BUDGET_SLACK:
            return start, cand, d
    return start, start, distances_to_node(graph, start)


def rollout_episode(config: TrainConfig, graph: RoadmapGraph, env, policy_params,
                    dpm_params, rng, mode: str = "sample",
                    episode_index: int = 0, budget=None) -> EpisodeBuffer:
    """Run one episode against fixed parameters and record every decision.

    The budget is drawn from the config range unless passed explicitly
    (evaluation fixes it per cell). A zero-budget episode records no
    decisions and scores the initial belief only. Each decision advances
    the fire by ``config.time_scale`` simulator steps while belief time
    stays on the decision clock.
    """
    ts = config.time_scale
    field_truth = simulate_field(env, horizon=config.max_episode_len * ts + 1,
                                 resolution=config.resolution,
                                 model=fire_model(config))
    if budget is None:
        budget = float(rng.uniform(*config.budget_range))
    start, dest, dist_to_dest = draw_endpoints(graph, budget, rng)

    state = initial_state(start, budget)
    start_pos = graph.nodes[start]
    first = Observation((float(start_pos[0]), float(start_pos[1])), 0.0,
                        intensity_at(field_truth, start_pos, 0))
    belief = BeliefState(DEFAULT_KERNEL, config.resolution, (first,))
    grid, final_trace, final_rmse = _belief_grid_and_stats(
        belief, config.resolution, 0.0, field_truth, 0)

    dpm_hidden = dynamics.initial_hidden()
    lstm_hidden = policy.initial_hidden(policy_params)
    records = []

    for step in range(config.max_episode_len):
        t = float(step)
        mask = feasible_mask(graph, state.current_node, state.remaining_budget,
                             dist_to_dest)
        if not mask.any():
            break
        feats = node_features(graph, belief, t)
        fraction = state.remaining_budget / budget
        with no_grad():
            z, dpm_next = dynamics.encode(grid, dpm_hidden, dpm_params)
            emb = policy.encode_graph(feats, policy_params)
            inp = PolicyInput(state.current_node, graph.adjacency[state.current_node],
                              mask, fraction, z, lstm_hidden)
            dist, value, lstm_next = policy.decode_action(emb, inp, policy_params)
        action = policy.act(dist, mode, rng)
        target = int(graph.adjacency[state.current_node][action])

        prev_state = state
        state, points = traverse(state, graph, target, config.measurement_interval)
        t_next = float(step + 1)
        frame = (step + 1) * ts
        new_obs = [Observation((float(p[0]), float(p[1])), t_next,
                               intensity_at(field_truth, p, frame))
                   for p in points]
        trace_before = covariance_trace(belief, t_next)
        belief = belief.with_observations(new_obs)
        next_grid, trace_after, step_rmse = _belief_grid_and_stats(
            belief, config.resolution, t_next, field_truth, frame)
        dpm_target = target_for_mode(config.prediction_mode, grid[0], next_grid[0])
        with no_grad():
            pred = dynamics.decode(z, dpm_params)
        records.append({
            "features": feats,
            "current": prev_state.current_node,
            "neighbors": graph.adjacency[prev_state.current_node].copy(),
            "mask": mask,
            "fraction": fraction,
            "grid": grid,
            "target": dpm_target,
            "dpm_hidden": np.stack([dpm_hidden[0], dpm_hidden[1]]),
            "policy_hidden": np.stack([lstm_hidden[0], lstm_hidden[1]]),
            "z": z.value.copy(),
            "action": action,
            "log_prob": float(dist.log_prob(action).value),
            "value": float(value.value),
            "reward": reward(trace_before, trace_after),
            "trace_before": trace_before,
            "trace_after": trace_after,
            "rmse": step_rmse,
            "dpm_loss": float(np.mean((pred.value - dpm_target) ** 2)),
        })
        final_trace, final_rmse = trace_after, step_rmse
        grid = next_grid
        dpm_hidden = (dpm_next[0].value, dpm_next[1].value)
        lstm_hidden = (lstm_next[0].value, lstm_next[1].value)

    return _pack_buffer(config, graph, records, episode_index, env, budget,
                        final_trace, final_rmse, belief)


def _belief_grid_and_stats(belief, resolution, t, field_truth, frame):
    """One lattice pass shared by the model input, the trace, and the RMSE."""
    mean, var = posterior_marginals(belief, lattice_points(resolution, t))
    grid = np.stack([mean.reshape(resolution, resolution),
                     var.reshape(resolution, resolution)])
    err = grid[0] - field_truth.frames[int(frame)]
    return grid, float(var.sum()), float(np.sqrt(np.mean(err ** 2)))


def _pack_buffer(config, graph, records, episode_index, env, budget,
                 final_trace, final_rmse, belief) -> EpisodeBuffer:
    n, k, r = graph.n, graph.k, config.resolution

    def col(key, shape, dtype=float):
        if records:
            return np.array([rec[key] for rec in records], dtype=dtype)
        return np.zeros((0,) + shape, dtype=dtype)

    return EpisodeBuffer(
        episode_index=int(episode_index),
        fuel_coefficient=float(env.fuel_coefficient),
        budget=budget,
        features=col("features", (n, 4)),
        current_nodes=col("current", (), np.int64),
        neighbors=col("neighbors", (k,), np.int64),
        masks=col("mask", (k,), bool),
        budget_fractions=col("fraction", ()),
        grids=col("grid", (2, r, r)),
        dpm_targets=col("target", (r, r)),
        dpm_hidden=col("dpm_hidden", (2, dynamics.LSTM_HIDDEN)),
        policy_hidden=col("policy_hidden", (2, config.embed_dim)),
        latents=col("z", (dynamics.LATENT_DIM,)),
        actions=col("action", (), np.int64),
        log_probs=col("log_prob", ()),
        values=col("value", ()),
        rewards=col("reward", ()),
        traces_before=col("trace_before", ()),
        traces_after=col("trace_after", ()),
        rmses=col("rmse", ()),
        dpm_losses=col("dpm_loss", ()),
        final_trace=final_trace,
        final_rmse=final_rmse,
        observations=belief.observations,
    )


def reward(trace_prev: float, trace_new: float) -> float:
    """Fractional drop in posterior-covariance trace from one decision."""
    if not trace_prev > 0:
        raise ValueError(f"previous trace must be positive, got {trace_prev}")
    return (trace_prev - trace_new) / trace_prev


def compute_advantages(buffer: EpisodeBuffer, discount: float,
                       gae_lambda: float):
    """Raw GAE advantages and returns (normalization happens per batch)."""
    r, v = buffer.rewards, buffer.values
    n = len(r)
    adv = np.zeros(n)
    carry = 0.0
    for t in range(n - 1, -1, -1):
        v_next = v[t + 1] if t + 1 < n else 0.0
        delta = r[t] + discount * v_next - v[t]
        carry = delta + discount * gae_lambda * carry
        adv[t] = carry
    return adv, adv + v


# ---------------------------------------------------------------------------
# PPO update


def lr_for_update(config: TrainConfig, update_index: int) -> float:
    """Stepped exponential decay, counted in whole-batch updates."""
    return config.lr * config.lr_decay_factor ** (update_index // config.lr_decay_every)


def merged_params(policy_params: PolicyParams, dpm_params: DpmParams) -> dict:
    merged = {f"policy/{k}": v for k, v in policy_params.values.items()}
    merged.update({f"dpm/{k}": v for k, v in dpm_params.values.items()})
    return merged


def replay_decision(buffer: EpisodeBuffer, t: int, policy_params: PolicyParams,
                    dpm_params: DpmParams):
    """Rebuild one decision with gradients on (reference path).

    Returns (log-prob, value, entropy, grid-prediction loss) as graph nodes.
    The latent is recomputed from the stored grid and carry, so both the
    surrogate and the prediction loss backpropagate into the encoder.
    ``replay_minibatch`` is the vectorized twin the optimizer actually runs.
    """
    emb = policy.encode_graph(buffer.features[t], policy_params)
    z, _ = dynamics.encode(buffer.grids[t],
                           (buffer.dpm_hidden[t, 0], buffer.dpm_hidden[t, 1]),
                           dpm_params)
    inp = PolicyInput(int(buffer.current_nodes[t]), buffer.neighbors[t],
                      buffer.masks[t], float(buffer.budget_fractions[t]), z,
                      (buffer.policy_hidden[t, 0], buffer.policy_hidden[t, 1]))
    dist, value, _ = policy.decode_action(emb, inp, policy_params)
    log_prob = dist.log_prob(int(buffer.actions[t]))
    probs = ad.exp(dist.log_probs)
    entropy = -ad.sum_(probs * dist.log_probs)
    pred = dynamics.decode(z, dpm_params)
    dpm = dynamics.dpm_loss(pred, buffer.dpm_targets[t])
    return log_prob, value, entropy, dpm


def gather_minibatch(decisions, chunk) -> dict:
    """Stack the records named by ``chunk`` into batch-first arrays."""
    rows = [decisions[i] for i in chunk]

    def pick(name):
        return [getattr(b, name)[t] for b, t in rows]

    return {
        "features": np.stack(pick("features")),
        "grids": np.stack(pick("grids")),
        "dpm_hidden": np.stack(pick("dpm_hidden")),
        "policy_hidden": np.stack(pick("policy_hidden")),
        "current": np.array(pick("current_nodes")),
        "neighbors": np.stack(pick("neighbors")),
        "masks": np.stack(pick("masks")),
        "fractions": np.array(pick("budget_fractions")),
        "actions": np.array(pick("actions")),
        "old_log_probs": np.array(pick("log_probs")),
        "dpm_targets": np.stack(pick("dpm_targets")),
    }


def replay_minibatch(batch: dict, policy_params: PolicyParams,
                     dpm_params: DpmParams):
    """Replay a stack of recorded decisions as one graph.

    Mirrors ``replay_decision`` over the whole stack (up to float
    associativity); building one wide graph is far cheaper than many small
    ones. Returns per-decision log-probs, values, and entropies, each (B,),
    plus the mean grid-prediction loss.
    """
    v = policy_params.values
    d = policy_params.embed_dim
    n_b = batch["features"].shape[0]
    k = batch["neighbors"].shape[1]

    x = ad.dense(ad.constant(batch["features"]), v["embed_w"], v["embed_b"])
    x = ad.add(x, ad.multi_head_attention(
        x, x, x, policy._mha_view(v, "attn"), policy_params.n_heads))
    ffn = ad.dense(ad.relu(ad.dense(x, v["ffn1_w"], v["ffn1_b"])),
                   v["ffn2_w"], v["ffn2_b"])
    emb = ad.add(x, ffn)                                          # (B, n, d)

    z, _ = dynamics.encode_batch(
        batch["grids"], (batch["dpm_hidden"][:, 0], batch["dpm_hidden"][:, 1]),
        dpm_params)

    cur_idx = np.broadcast_to(batch["current"][:, None, None], (n_b, 1, d))
    cur = ad.reshape(ad.take_along(emb, cur_idx, axis=1), (n_b, d))
    plan = ad.tanh(ad.dense(ad.constant(batch["fractions"][:, None]),
                            v["plan_w"], v["plan_b"]))
    lstm_in = ad.concat([cur, plan, z], axis=-1)
    h = ad.constant(batch["policy_hidden"][:, 0])
    c = ad.constant(batch["policy_hidden"][:, 1])
    h, c = ad.lstm_step(lstm_in, h, c, v["lstm_w"], v["lstm_b"])
    ctx = ad.reshape(ad.multi_head_attention(
        ad.reshape(h, (n_b, 1, d)), emb, emb, policy._mha_view(v, "cross"),
        policy_params.n_heads), (n_b, d))

    query = ad.dense(ctx, v["ptr_q_w"], v["ptr_q_b"])
    nbr_idx = np.broadcast_to(batch["neighbors"][:, :, None], (n_b, k, d))
    keys = ad.dense(ad.take_along(emb, nbr_idx, axis=1),
                    v["ptr_k_w"], v["ptr_k_b"])
    scores = ad.reshape(ad.matmul(keys, ad.reshape(query, (n_b, d, 1))),
                        (n_b, k))
    logits = ad.mul(ad.constant(policy.POINTER_SCALE),
                    ad.tanh(ad.div(scores, ad.constant(np.sqrt(d)))))
    mask = np.where(batch["masks"], 0.0, policy.MASK_VALUE)
    log_probs = ad.log_softmax(ad.add(logits, ad.constant(mask)), axis=-1)
    taken = ad.reshape(ad.take_along(log_probs, batch["actions"][:, None],
                                     axis=1), (n_b,))
    probs = ad.exp(log_probs)
    entropy = -ad.sum_(probs * log_probs, axis=-1)

    critic_mid = ad.tanh(ad.dense(ctx, v["critic1_w"], v["critic1_b"]))
    values_out = ad.reshape(ad.dense(critic_mid, v["critic2_w"],
                                     v["critic2_b"]), (n_b,))

    pred = dynamics.decode_batch(z, dpm_params)
    dpm = dynamics.dpm_loss(pred, batch["dpm_targets"])
    return taken, values_out, entropy, dpm


def ppo_update(buffers, policy_params: PolicyParams, dpm_params: DpmParams,
               optimizer: Adam, config: TrainConfig, rng,
               update_index: int = 0) -> dict:
    """One full PPO pass over a batch of episode buffers.

    Runs ``ppo_epochs`` shuffled passes in minibatches of decisions and steps
    the optimizer after each; parameters update in place. Returns mean loss
    components for logging. A batch with no decisions is a no-op.
    """
    if not buffers:
        raise ValueError("need at least one episode buffer")
    decisions = []
    advantages = []
    returns = []
    for buf in buffers:
        adv, ret = compute_advantages(buf, config.discount, config.gae_lambda)
        for t in range(buf.n_decisions):
            decisions.append((buf, t))
        advantages.append(adv)
        returns.append(ret)
    total = len(decisions)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "dpm_loss": 0.0, "total_loss": 0.0, "n_decisions": total,
             "lr": lr_for_update(config, update_index)}
    if total == 0:
        return stats
    advantages = np.concatenate(advantages)
    returns = np.concatenate(returns)
    norm_adv = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    merged = merged_params(policy_params, dpm_params)
    rate = stats["lr"]
    eps = config.clip_epsilon
    sums = np.zeros(5)
    steps = 0
    for _ in range(config.ppo_epochs):
        order = rng.permutation(total)
        for lo in range(0, total, config.minibatch_size):
            chunk = order[lo:lo + config.minibatch_size]
            batch = gather_minibatch(decisions, chunk)
            log_prob, value, entropy, dpm_mean = replay_minibatch(
                batch, policy_params, dpm_params)
            ratio = ad.exp(log_prob - ad.constant(batch["old_log_probs"]))
            adv_c = ad.constant(norm_adv[chunk])
            plain = ratio * adv_c
            clipped = ad.clip(ratio, 1.0 - eps, 1.0 + eps) * adv_c
            objective = ad.minimum(plain, clipped)
            if config.debug_checks:
                assert objective.value.sum() <= plain.value.sum() + 1e-9, \
                    "clipped surrogate exceeded the unclipped objective"
            err = value - ad.constant(returns[chunk])
            policy_loss = -ad.mean(objective)
            value_loss = ad.mean(err * err)
            entropy_mean = ad.mean(entropy)
            loss = policy_loss + config.value_coef * value_loss \
                - config.entropy_coef * entropy_mean \
                + config.dpm_weight * dpm_mean
            parts = np.array([policy_loss.value, value_loss.value,
                              entropy_mean.value, dpm_mean.value, loss.value])
            if not np.all(np.isfinite(parts)):
                raise RuntimeError(
                    f"non-finite loss at update {update_index}: policy="
                    f"{parts[0]}, value={parts[1]}, entropy={parts[2]}, "
                    f"dpm={parts[3]}")
            grads = ad.gradients(loss, merged)
            optimizer.step(merged, grads, lr=rate)
            sums += parts
            steps += 1
    for i, key in enumerate(("policy_loss", "value_loss", "entropy",
                             "dpm_loss", "total_loss")):
        stats[key] = float(sums[i] / steps)
    return stats


# ---------------------------------------------------------------------------
# training loop


def init_models(config: TrainConfig):
    """Fresh policy and dynamics-model parameters from the master seed."""
    rng = np.random.default_rng(
        np.random.SeedSequence((config.master_seed, _INIT_STREAM)))
    policy_params = policy.init_policy_params(config.embed_dim, config.n_heads, rng)
    dpm_params = dynamics.init_dpm_params(config.resolution, rng)
    return policy_params, dpm_params


def rollout_indexed(config: TrainConfig, policy_values: dict, dpm_values: dict,
                    episode_index: int, mode: str = "sample") -> EpisodeBuffer:
    """Roll out one episode by index against a parameter snapshot."""
    policy_params = PolicyParams(config.embed_dim, config.n_heads,
                                 tree_params(policy_values))
    dpm_params = DpmParams(config.resolution, tree_params(dpm_values))
    env, graph, rng = make_episode(config, episode_index)
    return rollout_episode(config, graph, env, policy_params, dpm_params, rng,
                           mode=mode, episode_index=episode_index)


def _rollout_task(task):
    return rollout_indexed(*task)


def collect_batch(config: TrainConfig, policy_params: PolicyParams,
                  dpm_params: DpmParams, indices, pool=None,
                  mode: str = "sample"):
    """Roll out the indexed episodes against a frozen snapshot, in order."""
    pv, dv = tree_values(policy_params.values), tree_values(dpm_params.values)
    if pool is None:
        buffers = [rollout_indexed(config, pv, dv, int(i), mode) for i in indices]
    else:
        tasks = [(config, pv, dv, int(i), mode) for i in indices]
        buffers = list(pool.map(_rollout_task, tasks))
    buffers.sort(key=lambda b: b.episode_index)
    return buffers


def save_model(path, policy_params: PolicyParams, dpm_params: DpmParams,
               meta: dict | None = None) -> None:
    """Write both parameter trees plus shape metadata as one checkpoint."""
    tensors = {f"policy/{k}": v.value for k, v in policy_params.values.items()}
    tensors.update({f"dpm/{k}": v.value for k, v in dpm_params.values.items()})
    info = {"embed_dim": policy_params.embed_dim,
            "n_heads": policy_params.n_heads,
            "resolution": dpm_params.resolution}
    info.update(meta or {})
    save_checkpoint(path, tensors, info)


def load_model(path):
    """Read a checkpoint written by ``save_model``."""
    tensors, meta = load_checkpoint(path)
    for key in ("embed_dim", "n_heads", "resolution"):
        if key not in meta:
            raise ValueError(f"{path}: checkpoint metadata is missing {key!r}")
    pv = {k.split("/", 1)[1]: v for k, v in tensors.items()
          if k.startswith("policy/")}
    dv = {k.split("/", 1)[1]: v for k, v in tensors.items()
          if k.startswith("dpm/")}
    policy_params = PolicyParams(int(meta["embed_dim"]), int(meta["n_heads"]),
                                 tree_params(pv))
    dpm_params = DpmParams(int(meta["resolution"]), tree_params(dv))
    return policy_params, dpm_params, meta


def train(config: TrainConfig, log_path=None, checkpoint_dir=None,
          checkpoint_every: int = 50, mode: str = "sample"):
    """Run the full rollout/update loop.

    Returns the trained parameters and a list of per-episode log records
    (also appended as JSON lines to ``log_path`` when given). Checkpoints go
    to ``checkpoint_dir`` every ``checkpoint_every`` batches and at the end.
    """
    policy_params, dpm_params = init_models(config)
    optimizer = Adam(lr=config.lr)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence((config.master_seed, _SHUFFLE_STREAM)))
    n_batches = max(1, config.total_episodes // config.batch_size)
    pool = ProcessPoolExecutor(config.workers) if config.workers > 1 else None
    log = []
    log_file = open(log_path, "a") if log_path is not None else None
    try:
        for batch_index in range(n_batches):
            first = batch_index * config.batch_size
            indices = range(first, first + config.batch_size)
            buffers = collect_batch(config, policy_params, dpm_params, indices,
                                    pool, mode)
            stats = ppo_update(buffers, policy_params, dpm_params, optimizer,
                               config, shuffle_rng, update_index=batch_index)
            for buf in buffers:
                record = {
                    "episode": buf.episode_index,
                    "batch": batch_index,
                    "fuel_coefficient": buf.fuel_coefficient,
                    "budget": buf.budget,
                    "n_decisions": buf.n_decisions,
                    "return": buf.episode_return,
                    "final_trace": buf.final_trace,
                    "final_rmse": buf.final_rmse,
                    "dpm_loss": float(buf.dpm_losses.mean())
                    if buf.n_decisions else float("nan"),
                    "policy_loss": stats["policy_loss"],
                    "value_loss": stats["value_loss"],
                    "entropy": stats["entropy"],
                    "total_loss": stats["total_loss"],
                    "lr": stats["lr"],
                }
                log.append(record)
                if log_file is not None:
                    log_file.write(json.dumps(record) + "\n")
            if log_file is not None:
                log_file.flush()
            if checkpoint_dir is not None and (batch_index + 1) % checkpoint_every == 0:
                _checkpoint(checkpoint_dir, batch_index + 1, policy_params,
                            dpm_params, config)
        if checkpoint_dir is not None:
            _checkpoint(checkpoint_dir, "final", policy_params, dpm_params, config)
    finally:
        if pool is not None:
            pool.shutdown()
        if log_file is not None:
            log_file.close()
    return policy_params, dpm_params, log


def _checkpoint(checkpoint_dir, tag, policy_params, dpm_params, config):
    path = Path(checkpoint_dir)
    path.mkdir(parents=True, exist_ok=True)
    name = f"checkpoint_{tag}.etns" if isinstance(tag, str) \
        else f"checkpoint_{tag:05d}.etns"
    save_model(path / name, policy_params, dpm_params,
               {"master_seed": config.master_seed,
                "prediction_mode": config.prediction_mode,
                "time_scale": config.time_scale})
