"""Non-learning planners used as comparison points.

Two comparators run under the same episode accounting as the learned policy:
an entropy-greedy sampler that repeatedly walks toward the most uncertain
affordable node, and a uniformly random walker that follows the exact
start/destination/budget protocol of policy rollouts. Both return the
metrics record the evaluation harness tabulates, so results drop into the
same tables as learned-planner runs.

Time is counted identically to training: the fire advances ``time_scale``
simulator steps per edge traversed, measurements fall every fixed
arc-length interval, and each batch of measurements is stamped at the
arrival step on the decision clock.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .belief import BeliefState, DEFAULT_KERNEL, Observation, lattice_points, \
    posterior_marginals
from .firesim import EnvCharacteristics, FireModelConfig, intensity_at, \
    simulate_field
from .roadmap import BUDGET_SLACK, RoadmapGraph, distances_from_node, \
    initial_state, nearest_node, shortest_path, traverse
from .trainer import draw_endpoints, feasible_mask


@dataclass(frozen=True)
class BaselineConfig:
    """Knobs for the non-learning planners.

    The rendering and accounting fields mirror the training defaults so the
    comparators run on the same footing as the learned policy.
    """

    n_initial_observations: int = 100
    distance_weight: float = 1.0
    resolution: int = 30
    render_radius: float = 0.03
    measurement_interval: float = 0.2
    max_steps: int = 256
    time_scale: int = 1           # fire steps elapsing per decision

    def __post_init__(self):
        if self.n_initial_observations < 0:
            raise ValueError(f"initial observation count cannot be negative, "
                             f"got {self.n_initial_observations}")
        if not np.isfinite(self.distance_weight):
            raise ValueError("distance weight must be finite")
        if self.resolution < 2:
            raise ValueError(f"resolution must be at least 2, got {self.resolution}")
        if self.measurement_interval <= 0:
            raise ValueError("measurement interval must be positive")
        if self.max_steps < 1:
            raise ValueError(f"need at least one step, got {self.max_steps}")
        if self.time_scale < 1 or int(self.time_scale) != self.time_scale:
            raise ValueError(f"time scale must be a positive integer, got {self.time_scale}")


def toy_baseline_config(**overrides) -> BaselineConfig:
    """Desk-scale profile matching the toy training setup."""
    base = dict(resolution=8, render_radius=0.08, max_steps=64, time_scale=8)
    base.update(overrides)
    return BaselineConfig(**base)


@dataclass(frozen=True)
class MetricsRecord:
    """One evaluated episode, in the shape the harness tabulates.

    ``rmse_series`` holds the lattice RMSE after each decision step; an
    episode with no steps stores the single seeded-belief value instead, so
    ``cumulative_rmse`` (the series mean) is always defined. ``observations``
    keeps every measurement taken, seed points first, so any belief along
    the way can be rebuilt after the fact.
    """

    env: EnvCharacteristics
    budget: float
    n_decisions: int
    final_time: float
    final_trace: float
    cumulative_rmse: float
    rmse_series: np.ndarray
    seconds_per_decision: float
    trajectory: tuple = ()
    observations: tuple = ()
    n_seed_observations: int = 0

    def __post_init__(self):
        if self.budget < 0 or self.n_decisions < 0 or self.final_time < 0:
            raise ValueError("budget, decision count and final time must be non-negative")
        if not self.final_trace >= 0:
            raise ValueError(f"covariance trace cannot be negative, got {self.final_trace}")
        series = np.asarray(self.rmse_series, dtype=float)
        if series.ndim != 1 or series.size == 0:
            raise ValueError("rmse series must be a non-empty vector")
        if not np.all(np.isfinite(series)) or np.any(series < 0):
            raise ValueError("rmse series must be finite and non-negative")
        if self.seconds_per_decision < 0:
            raise ValueError("wall-clock per decision cannot be negative")


def _finish_record(env, budget, series, seeded_rmse, final_trace, final_time,
                   seconds_per_decision, trajectory, observations, n_seed):
    arr = np.asarray(series if series else [seeded_rmse], dtype=float)
    return MetricsRecord(
        env=env, budget=float(budget), n_decisions=len(series),
        final_time=float(final_time), final_trace=float(final_trace),
        cumulative_rmse=float(arr.mean()), rmse_series=arr,
        seconds_per_decision=float(seconds_per_decision),
        trajectory=tuple(int(v) for v in trajectory),
        observations=tuple(observations), n_seed_observations=int(n_seed))


def _lattice_stats(belief, resolution, t, field, frame):
    """(covariance trace, RMSE against the true frame) on the lattice at step t."""
    mean, var = posterior_marginals(belief, lattice_points(resolution, t))
    err = mean.reshape(resolution, resolution) - field.frames[int(frame)]
    return float(var.sum()), float(np.sqrt(np.mean(err ** 2)))


def predictive_entropy(variance):
    """Differential entropy of a Gaussian with the given variance, elementwise."""
    variance = np.asarray(variance, dtype=float)
    with np.errstate(divide="ignore"):
        return 0.5 * np.log(2.0 * np.pi * np.e * variance)


def entropy_minus_distance_target(belief: BeliefState, robot_position, candidates,
                                  t: float = 0.0, weight: float = 1.0) -> int:
    """Index of the candidate maximizing entropy minus weighted distance.

    The score is the Gaussian predictive entropy at the candidate location
    (evaluated at time ``t``) minus ``weight`` times the straight-line
    distance from the robot. Ties go to the lowest index.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.size == 0:
        raise ValueError("need at least one candidate")
    queries = np.column_stack([candidates, np.full(len(candidates), float(t))])
    _, var = posterior_marginals(belief, queries)
    dist = np.linalg.norm(candidates - np.asarray(robot_position, dtype=float),
                          axis=1)
    return int(np.argmax(predictive_entropy(var) - weight * dist))


def _next_target(graph, belief, state, config, t):
    """Pick the next waypoint, or None when nothing else is affordable.

    Affordability is judged by shortest-path distance (what walking there
    will actually cost); the score's distance term stays straight-line. The
    current node is never a target.
    """
    dists = distances_from_node(graph, state.current_node)
    ok = dists <= state.remaining_budget + BUDGET_SLACK
    ok[state.current_node] = False
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return None
    pick = entropy_minus_distance_target(
        belief, graph.nodes[state.current_node], graph.nodes[idx], t,
        config.distance_weight)
    return int(idx[pick])


def run_sampling_baseline(env: EnvCharacteristics, graph: RoadmapGraph,
                          budget: float, config: BaselineConfig,
                          rng) -> MetricsRecord:
    """Entropy-greedy sampling planner.

    Seeds the belief with uniformly random observations of the initial
    field, then repeatedly picks a target by entropy-minus-distance score
    and walks the shortest path to it, measuring along the way and
    re-planning on arrival, until no further target fits the budget.
    """
    model = FireModelConfig(render_radius=config.render_radius)
    field = simulate_field(env, horizon=config.max_steps * config.time_scale + 1,
                           resolution=config.resolution, model=model)
    seeds = rng.uniform(0.0, 1.0, (config.n_initial_observations, 2))
    observations = [Observation((float(x), float(y)), 0.0,
                                intensity_at(field, (x, y), 0))
                    for x, y in seeds]
    n_seed = len(observations)
    belief = BeliefState(DEFAULT_KERNEL, config.resolution, tuple(observations))
    start = nearest_node(graph, rng.uniform(0.0, 1.0, 2))
    state = initial_state(start, float(budget))

    trace, rmse = _lattice_stats(belief, config.resolution, 0.0, field, 0)
    series = []
    path = []
    step = 0
    began = time.perf_counter()
    while step < config.max_steps:
        if not path:
            target = _next_target(graph, belief, state, config, float(step))
            if target is None:
                break
            path = shortest_path(graph, state.current_node, target)[1:]
        state, points = traverse(state, graph, path.pop(0),
                                 config.measurement_interval)
        step += 1
        frame = step * config.time_scale
        new_obs = [Observation((float(p[0]), float(p[1])), float(step),
                               intensity_at(field, p, frame))
                   for p in points]
        observations.extend(new_obs)
        belief = belief.with_observations(new_obs)
        trace, rmse = _lattice_stats(belief, config.resolution, float(step),
                                     field, frame)
        series.append(rmse)
    seconds = (time.perf_counter() - began) / max(1, len(series))

    return _finish_record(env, budget, series, rmse, trace, float(step),
                          seconds, state.trajectory, observations, n_seed)


def run_random_policy(env: EnvCharacteristics, graph: RoadmapGraph,
                      budget: float, rng,
                      config: BaselineConfig = None) -> MetricsRecord:
    """Uniformly random walk under the learned policy's episode protocol.

    Start and destination come from the same draws as a policy rollout, the
    feasibility rule (including the reserve needed to still reach the
    destination) is identical, and measurements follow the same interval
    rule. Only the action choice differs: uniform over feasible neighbors.
    """
    if config is None:
        config = BaselineConfig()
    model = FireModelConfig(render_radius=config.render_radius)
    field = simulate_field(env, horizon=config.max_steps * config.time_scale + 1,
                           resolution=config.resolution, model=model)
    start, dest, dist_to_dest = draw_endpoints(graph, float(budget), rng)
    state = initial_state(start, float(budget))
    start_pos = graph.nodes[start]
    first = Observation((float(start_pos[0]), float(start_pos[1])), 0.0,
                        intensity_at(field, start_pos, 0))
    observations = [first]
    belief = BeliefState(DEFAULT_KERNEL, config.resolution, (first,))

    trace, rmse = _lattice_stats(belief, config.resolution, 0.0, field, 0)
    series = []
    began = time.perf_counter()
    for step in range(config.max_steps):
        mask = feasible_mask(graph, state.current_node,
                             state.remaining_budget, dist_to_dest)
        slots = np.flatnonzero(mask)
        if len(slots) == 0:
            break
        target = int(graph.adjacency[state.current_node,
                                     slots[rng.integers(len(slots))]])
        state, points = traverse(state, graph, target,
                                 config.measurement_interval)
        t_next = float(step + 1)
        frame = (step + 1) * config.time_scale
        new_obs = [Observation((float(p[0]), float(p[1])), t_next,
                               intensity_at(field, p, frame))
                   for p in points]
        observations.extend(new_obs)
        belief = belief.with_observations(new_obs)
        trace, rmse = _lattice_stats(belief, config.resolution, t_next, field,
                                     frame)
        series.append(rmse)
    seconds = (time.perf_counter() - began) / max(1, len(series))

    return _finish_record(env, budget, series, rmse, trace, float(len(series)),
                          seconds, state.trajectory, observations, 1)
