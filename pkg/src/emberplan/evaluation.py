"""Evaluation campaigns, metrics tables, latent export, and latency checks.

A campaign grids fuel coefficient against budget and runs every planner on
the same per-cell instance seeds, so rows pair across planners. Tables hold
only deterministic quantities; wall-clock is logged per instance but never
aggregated, keeping repeated runs bit-identical.

File outputs are delimited text with a schema-version header line, written
through ``repr`` so every float parses back exactly.
"""

from __future__ import annotations

import csv
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dynamics, policy
from .autodiff import no_grad, tree_params, tree_values
from .baselines import BaselineConfig, MetricsRecord, run_random_policy, \
    run_sampling_baseline
from .dynamics import DpmParams
from .firesim import RandomizationSpec, sample_environment
from .policy import PolicyInput, PolicyParams
from .roadmap import build_graph, nearest_node
from .trainer import TrainConfig, load_model, rollout_episode

SCHEMA_VERSION = 1
METRICS_TAG = f"# emberplan metrics v{SCHEMA_VERSION}"
SUMMARY_TAG = f"# emberplan summary v{SCHEMA_VERSION}"
LATENTS_TAG = f"# emberplan latents v{SCHEMA_VERSION}"

PLANNERS = ("policy", "random", "sampling")

_METRIC_COLUMNS = ["planner", "fuel", "budget", "instance", "seed", "fire_count",
                   "n_decisions", "final_trace", "cumulative_rmse",
                   "seconds_per_decision", "rmse_series"]
_SUMMARY_COLUMNS = ["planner", "fuel", "budget", "n", "mean_final_trace",
                    "std_final_trace", "mean_cumulative_rmse",
                    "std_cumulative_rmse"]


@dataclass(frozen=True)
class EvalSpec:
    """Campaign definition: which cells to run and at what scale.

    ``seeds`` lists one base seed per instance; left empty it defaults to
    0..n_instances-1. Fire counts cycle across instances within each cell.
    """

    fuel_values: tuple = (1.0, 5.0, 10.0)
    budgets: tuple = (7.0, 11.0, 15.0)
    n_instances: int = 200
    fire_counts: tuple = (1, 3, 5)
    checkpoint: str = None
    seeds: tuple = ()
    wind_speed: float = 5.0
    n_nodes: int = 200
    k_neighbors: int = 20
    resolution: int = 30
    render_radius: float = 0.03
    measurement_interval: float = 0.2
    max_steps: int = 256
    time_scale: int = 1
    distance_weight: float = 1.0
    n_initial_observations: int = 100
    workers: int = 1

    def __post_init__(self):
        for name in ("fuel_values", "budgets", "fire_counts"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be nonempty")
        if any(f <= 0 for f in self.fuel_values):
            raise ValueError("fuel coefficients must be positive")
        if any(b < 0 for b in self.budgets):
            raise ValueError("budgets must be non-negative")
        if any(c < 1 for c in self.fire_counts):
            raise ValueError("fire counts must be at least 1")
        if self.n_instances < 1:
            raise ValueError(f"need at least one instance, got {self.n_instances}")
        if self.seeds and len(self.seeds) < self.n_instances:
            raise ValueError(f"got {len(self.seeds)} seeds for "
                             f"{self.n_instances} instances")
        if self.workers < 1:
            raise ValueError(f"need at least one worker, got {self.workers}")
        if self.max_steps < 1 or self.resolution < 2:
            raise ValueError("max_steps and resolution must allow an episode")
        if self.time_scale < 1 or int(self.time_scale) != self.time_scale:
            raise ValueError(f"time scale must be a positive integer, got {self.time_scale}")

    def instance_seed(self, i: int) -> int:
        return int(self.seeds[i]) if self.seeds else i


def toy_eval_spec(**overrides) -> EvalSpec:
    """Desk-scale campaign matching the toy training profile."""
    base = dict(fuel_values=(1.0, 10.0), budgets=(8.0,), n_instances=50,
                n_nodes=50, k_neighbors=10, resolution=8, render_radius=0.08,
                max_steps=64, time_scale=8)
    base.update(overrides)
    return EvalSpec(**base)


@dataclass(frozen=True)
class CellStats:
    n: int
    mean_final_trace: float
    std_final_trace: float
    mean_cumulative_rmse: float
    std_cumulative_rmse: float


@dataclass(frozen=True)
class CampaignResult:
    planner: str
    rows: tuple
    cells: dict


# ---------------------------------------------------------------------------
# one instance


def _baseline_config(spec: EvalSpec) -> BaselineConfig:
    return BaselineConfig(n_initial_observations=spec.n_initial_observations,
                          distance_weight=spec.distance_weight,
                          resolution=spec.resolution,
                          render_radius=spec.render_radius,
                          measurement_interval=spec.measurement_interval,
                          max_steps=spec.max_steps,
                          time_scale=spec.time_scale)


def _policy_config(spec: EvalSpec, meta: dict) -> TrainConfig:
    if int(meta["resolution"]) != spec.resolution:
        raise ValueError(
            f"checkpoint was trained at resolution {meta['resolution']}, "
            f"the campaign asks for {spec.resolution}")
    trained_scale = int(meta.get("time_scale", 1))
    if trained_scale != spec.time_scale:
        raise ValueError(
            f"checkpoint was trained with time_scale {trained_scale}, "
            f"the campaign asks for {spec.time_scale}")
    return TrainConfig(n_nodes=spec.n_nodes, k_neighbors=spec.k_neighbors,
                       resolution=spec.resolution,
                       render_radius=spec.render_radius,
                       measurement_interval=spec.measurement_interval,
                       max_episode_len=spec.max_steps,
                       time_scale=spec.time_scale,
                       embed_dim=int(meta["embed_dim"]),
                       n_heads=int(meta["n_heads"]), workers=1)


def buffer_to_record(buf, graph, env, seconds_per_decision=0.0) -> MetricsRecord:
    """Reshape a rollout buffer into the campaign record format."""
    if buf.n_decisions:
        trajectory = [int(v) for v in buf.current_nodes]
        trajectory.append(int(graph.adjacency[int(buf.current_nodes[-1]),
                                              int(buf.actions[-1])]))
        series = np.asarray(buf.rmses, dtype=float)
    else:
        trajectory = [int(nearest_node(graph, buf.observations[0].position))]
        series = np.asarray([buf.final_rmse], dtype=float)
    return MetricsRecord(
        env=env, budget=float(buf.budget), n_decisions=int(buf.n_decisions),
        final_time=float(buf.n_decisions), final_trace=float(buf.final_trace),
        cumulative_rmse=float(series.mean()), rmse_series=series,
        seconds_per_decision=float(seconds_per_decision),
        trajectory=tuple(trajectory), observations=buf.observations,
        n_seed_observations=1)


def _run_instance(spec, planner, model_state, fuel, budget, fuel_idx,
                  budget_idx, instance):
    """One campaign cell instance; every planner shares this seed stream."""
    seed = spec.instance_seed(instance)
    rng = np.random.default_rng(np.random.SeedSequence((seed, fuel_idx,
                                                        budget_idx)))
    fire_count = int(spec.fire_counts[instance % len(spec.fire_counts)])
    rand = RandomizationSpec(fuel_range=(fuel, fuel), wind_speed=spec.wind_speed,
                             fire_count_range=(fire_count, fire_count),
                             horizon=spec.max_steps * spec.time_scale + 1)
    env = sample_environment(rng, rand)
    graph = build_graph(spec.n_nodes, spec.k_neighbors,
                        seed=int(rng.integers(2 ** 31)))

    if planner == "policy":
        policy_values, dpm_values, meta = model_state
        pp = PolicyParams(int(meta["embed_dim"]), int(meta["n_heads"]),
                          tree_params(policy_values))
        dp = DpmParams(int(meta["resolution"]), tree_params(dpm_values))
        config = _policy_config(spec, meta)
        began = time.perf_counter()
        buf = rollout_episode(config, graph, env, pp, dp, rng, mode="greedy",
                              budget=budget)
        seconds = (time.perf_counter() - began) / max(1, buf.n_decisions)
        record = buffer_to_record(buf, graph, env, seconds)
    elif planner == "random":
        record = run_random_policy(env, graph, budget, rng,
                                   _baseline_config(spec))
    else:
        record = run_sampling_baseline(env, graph, budget,
                                       _baseline_config(spec), rng)

    return {"planner": planner, "fuel": float(fuel), "budget": float(budget),
            "instance": int(instance), "seed": seed, "fire_count": fire_count,
            "n_decisions": record.n_decisions,
            "final_trace": record.final_trace,
            "cumulative_rmse": record.cumulative_rmse,
            "seconds_per_decision": record.seconds_per_decision,
            "rmse_series": [float(v) for v in record.rmse_series]}


def _instance_task(args):
    return _run_instance(*args)


# ---------------------------------------------------------------------------
# campaigns


def evaluate(spec: EvalSpec, planner: str, out_dir=None) -> CampaignResult:
    """Run one planner over the full campaign grid.

    Returns per-instance rows plus per-cell mean and std (population std, so
    a single instance reports 0). With ``out_dir`` set, writes the instance
    table and the summary table there. The learned planner requires
    ``spec.checkpoint``; evaluation never writes to it.
    """
    if planner not in PLANNERS:
        raise ValueError(f"unknown planner {planner!r}, expected one of {PLANNERS}")
    model_state = None
    if planner == "policy":
        if not spec.checkpoint:
            raise ValueError("the learned planner needs spec.checkpoint")
        pp, dp, meta = load_model(spec.checkpoint)
        _policy_config(spec, meta)  # fail fast on resolution mismatch
        model_state = (tree_values(pp.values), tree_values(dp.values), meta)

    tasks = [(spec, planner, model_state, fuel, budget, fi, bi, i)
             for fi, fuel in enumerate(spec.fuel_values)
             for bi, budget in enumerate(spec.budgets)
             for i in range(spec.n_instances)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_instance_task, tasks, chunksize=4))
    else:
        rows = [_instance_task(t) for t in tasks]

    cells = {}
    for fuel in spec.fuel_values:
        for budget in spec.budgets:
            got = [r for r in rows
                   if r["fuel"] == fuel and r["budget"] == budget]
            traces = [r["final_trace"] for r in got]
            rmses = [r["cumulative_rmse"] for r in got]
            cells[(float(fuel), float(budget))] = CellStats(
                n=len(got),
                mean_final_trace=float(np.mean(traces)),
                std_final_trace=float(np.std(traces)),
                mean_cumulative_rmse=float(np.mean(rmses)),
                std_cumulative_rmse=float(np.std(rmses)))

    result = CampaignResult(planner=planner, rows=tuple(rows), cells=cells)
    if out_dir is not None:
        write_campaign(result, out_dir)
    return result


def summary_table(result: CampaignResult) -> str:
    """Summary as delimited text; deterministic for a given campaign."""
    lines = [SUMMARY_TAG, ",".join(_SUMMARY_COLUMNS)]
    for (fuel, budget), c in sorted(result.cells.items()):
        lines.append(",".join([result.planner, repr(fuel), repr(budget),
                               str(c.n), repr(c.mean_final_trace),
                               repr(c.std_final_trace),
                               repr(c.mean_cumulative_rmse),
                               repr(c.std_cumulative_rmse)]))
    return "\n".join(lines) + "\n"


def write_campaign(result: CampaignResult, out_dir) -> tuple:
    """Write the per-instance table and the summary; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    instances = out / f"{result.planner}_instances.csv"
    with open(instances, "w", newline="") as fh:
        fh.write(METRICS_TAG + "\n")
        writer = csv.writer(fh)
        writer.writerow(_METRIC_COLUMNS)
        for r in result.rows:
            writer.writerow([r["planner"], repr(r["fuel"]), repr(r["budget"]),
                             r["instance"], r["seed"], r["fire_count"],
                             r["n_decisions"], repr(r["final_trace"]),
                             repr(r["cumulative_rmse"]),
                             repr(r["seconds_per_decision"]),
                             ";".join(repr(v) for v in r["rmse_series"])])
    summary = out / f"{result.planner}_summary.csv"
    summary.write_text(summary_table(result))
    return instances, summary


def read_metrics(path) -> list:
    """Parse a per-instance table back into row dicts, exactly."""
    with open(path, newline="") as fh:
        tag = fh.readline().strip()
        if tag != METRICS_TAG:
            raise ValueError(f"unrecognized metrics header {tag!r}")
        rows = []
        for raw in csv.DictReader(fh):
            rows.append({
                "planner": raw["planner"], "fuel": float(raw["fuel"]),
                "budget": float(raw["budget"]),
                "instance": int(raw["instance"]), "seed": int(raw["seed"]),
                "fire_count": int(raw["fire_count"]),
                "n_decisions": int(raw["n_decisions"]),
                "final_trace": float(raw["final_trace"]),
                "cumulative_rmse": float(raw["cumulative_rmse"]),
                "seconds_per_decision": float(raw["seconds_per_decision"]),
                "rmse_series": [float(v) for v in raw["rmse_series"].split(";")
                                if v]})
        return rows


# ---------------------------------------------------------------------------
# latent export and probing


def export_latents(spec: EvalSpec, checkpoint=None, path=None, budget=None):
    """Final per-episode embeddings for each fuel condition.

    Runs greedy episodes (same instance seeds as the first budget column of
    an evaluation campaign) and keeps the latent that conditioned the last
    decision. Returns (labels, Z); with ``path`` set, also writes one row
    per episode: fuel label plus 16 embedding values.
    """
    checkpoint = checkpoint or spec.checkpoint
    if not checkpoint:
        raise ValueError("latent export needs a checkpoint")
    pp, dp, meta = load_model(checkpoint)
    config = _policy_config(spec, meta)
    if budget is None:
        budget = spec.budgets[0]

    labels, rows = [], []
    for fi, fuel in enumerate(spec.fuel_values):
        for i in range(spec.n_instances):
            seed = spec.instance_seed(i)
            rng = np.random.default_rng(np.random.SeedSequence((seed, fi, 0)))
            fire_count = int(spec.fire_counts[i % len(spec.fire_counts)])
            rand = RandomizationSpec(fuel_range=(fuel, fuel),
                                     wind_speed=spec.wind_speed,
                                     fire_count_range=(fire_count, fire_count),
                                     horizon=spec.max_steps * spec.time_scale + 1)
            env = sample_environment(rng, rand)
            graph = build_graph(spec.n_nodes, spec.k_neighbors,
                                seed=int(rng.integers(2 ** 31)))
            buf = rollout_episode(config, graph, env, pp, dp, rng,
                                  mode="greedy", budget=float(budget))
            if buf.n_decisions:
                z = np.asarray(buf.latents[-1], dtype=float)
            else:
                with no_grad():
                    z_var, _ = dynamics.encode(
                        _initial_grid(buf, config.resolution), None, dp)
                z = np.asarray(z_var.value, dtype=float)
            labels.append(float(fuel))
            rows.append(z)
    labels = np.asarray(labels)
    Z = np.asarray(rows)
    if path is not None:
        write_latents(path, labels, Z)
    return labels, Z


def _initial_grid(buf, resolution):
    # zero-decision episodes never filled buf.grids; rebuild from the one obs
    from .belief import BeliefState, DEFAULT_KERNEL, lattice_points, \
        posterior_marginals
    belief = BeliefState(DEFAULT_KERNEL, resolution, buf.observations)
    mean, var = posterior_marginals(belief, lattice_points(resolution, 0.0))
    return np.stack([mean.reshape(resolution, resolution),
                     var.reshape(resolution, resolution)])


def write_latents(path, labels, Z) -> None:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise ValueError(f"latents must be a matrix, got shape {Z.shape}")
    header = ["fuel"] + [f"z{i:02d}" for i in range(Z.shape[1])]
    with open(path, "w", newline="") as fh:
        fh.write(LATENTS_TAG + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for label, row in zip(labels, Z):
            writer.writerow([repr(float(label))] + [repr(float(v)) for v in row])


def read_latents(path):
    with open(path, newline="") as fh:
        tag = fh.readline().strip()
        if tag != LATENTS_TAG:
            raise ValueError(f"unrecognized latents header {tag!r}")
        reader = csv.reader(fh)
        next(reader)  # column names
        labels, rows = [], []
        for row in reader:
            labels.append(float(row[0]))
            rows.append([float(v) for v in row[1:]])
    return np.asarray(labels), np.asarray(rows)


def latent_probe(source, n_folds: int = 5, shuffle_seed: int = 0) -> float:
    """Cross-validated accuracy of a linear read-out on the embeddings.

    ``source`` is a latents file path or a (labels, Z) pair. A least-squares
    one-hot classifier is trained on each fold split; the returned value is
    overall held-out accuracy. Needs at least two classes with 20 rows each.
    """
    if isinstance(source, (str, Path)):
        labels, Z = read_latents(source)
    else:
        labels, Z = source
        labels = np.asarray(labels, dtype=float)
        Z = np.asarray(Z, dtype=float)
    classes, class_idx = np.unique(labels, return_inverse=True)
    if len(classes) < 2:
        raise ValueError(f"need at least two classes, got {len(classes)}")
    counts = np.bincount(class_idx)
    if counts.min() < 20:
        raise ValueError(f"need at least 20 rows per class, got {counts.min()}")

    n = len(labels)
    order = np.random.default_rng(shuffle_seed).permutation(n)
    X = np.column_stack([Z, np.ones(n)])
    onehot = np.eye(len(classes))[class_idx]
    correct = 0
    for fold in range(n_folds):
        test = order[fold::n_folds]
        train = np.setdiff1d(order, test)
        W, *_ = np.linalg.lstsq(X[train], onehot[train], rcond=None)
        pred = np.argmax(X[test] @ W, axis=1)
        correct += int(np.sum(pred == class_idx[test]))
    return correct / n


# ---------------------------------------------------------------------------
# latency


def decision_latency(checkpoint=None, n_nodes: int = 200, k_neighbors: int = 20,
                     resolution: int = 30, embed_dim: int = 128,
                     n_heads: int = 4, passes: int = 100, seed: int = 0) -> float:
    """Median seconds per greedy decision pass at deployment scale.

    One pass covers everything a deployed decision recomputes: the latent
    encoding of the belief grid, the graph embedding, and the pointer
    decode. Without a checkpoint, freshly initialized weights stand in;
    latency does not depend on the values.
    """
    rng = np.random.default_rng(seed)
    if checkpoint:
        pp, dp, meta = load_model(checkpoint)
        resolution = int(meta["resolution"])
    else:
        pp = policy.init_policy_params(embed_dim, n_heads, rng)
        dp = dynamics.init_dpm_params(resolution, rng)
    graph = build_graph(n_nodes, k_neighbors, seed=int(rng.integers(2 ** 31)))
    features = np.column_stack([graph.nodes,
                                rng.uniform(0, 1, n_nodes),
                                rng.uniform(0, 1, n_nodes)])
    grid = rng.uniform(0, 1, (2, resolution, resolution))
    hidden = dynamics.initial_hidden()
    lstm_hidden = policy.initial_hidden(pp)
    node = 0
    mask = np.ones(k_neighbors, dtype=bool)

    timings = []
    for _ in range(passes):
        began = time.perf_counter()
        with no_grad():
            z, _ = dynamics.encode(grid, hidden, dp)
            emb = policy.encode_graph(features, pp)
            inp = PolicyInput(node, graph.adjacency[node], mask, 0.5, z,
                              lstm_hidden)
            dist, _, _ = policy.decode_action(emb, inp, pp)
            policy.act(dist, "greedy", rng)
        timings.append(time.perf_counter() - began)
    return float(statistics.median(timings))
