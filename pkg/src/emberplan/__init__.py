"""Robust informative path planning for spatio-temporal wildfire monitoring.

The package splits into a simulation stack (fire fields, GP beliefs, roadmap
graphs), a learning stack (autodiff, dynamics model, attention policy, PPO
trainer), and a measurement stack (baselines, evaluation campaigns, the CLI).
The names below cover the common entry points; the submodules stay importable
for everything else.
"""

from .belief import (BeliefState, DEFAULT_KERNEL, KernelParams, Observation,
                     belief_grid, covariance_trace, kernel, lattice_points,
                     make_belief, posterior, posterior_marginals, rmse,
                     update_belief)
from .baselines import (BaselineConfig, MetricsRecord,
                        entropy_minus_distance_target, predictive_entropy,
                        run_random_policy, run_sampling_baseline,
                        toy_baseline_config)
from .evaluation import (EvalSpec, decision_latency, evaluate, export_latents,
                         latent_probe, read_latents, read_metrics,
                         summary_table, toy_eval_spec, write_campaign)
from .firesim import (EnvCharacteristics, FireModelConfig, GroundTruthField,
                      RandomizationSpec, fuel_time, intensity_at,
                      length_to_breadth, load_field, sample_environment,
                      save_field, simulate_field, spread_direction,
                      spread_rate)
from .roadmap import (BUDGET_SLACK, DEFAULT_MEASUREMENT_INTERVAL,
                      PlanningState, RoadmapGraph, build_graph,
                      distances_from_node, distances_to_node, initial_state,
                      load_graph, nearest_node, node_features, save_graph,
                      shortest_path, traverse)
from .trainer import (EpisodeBuffer, TrainConfig, load_model, reward,
                      rollout_episode, save_model, toy_train_config, train)

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig", "BeliefState", "BUDGET_SLACK", "DEFAULT_KERNEL",
    "DEFAULT_MEASUREMENT_INTERVAL", "EnvCharacteristics", "EpisodeBuffer",
    "EvalSpec", "FireModelConfig", "GroundTruthField", "KernelParams",
    "MetricsRecord", "Observation", "PlanningState", "RandomizationSpec",
    "RoadmapGraph", "TrainConfig", "belief_grid", "build_graph",
    "covariance_trace", "decision_latency", "distances_from_node",
    "distances_to_node", "entropy_minus_distance_target", "evaluate",
    "export_latents", "fuel_time", "initial_state", "intensity_at", "kernel",
    "latent_probe", "lattice_points", "length_to_breadth", "load_field",
    "load_graph", "load_model", "make_belief", "nearest_node",
    "node_features", "posterior", "posterior_marginals", "predictive_entropy",
    "read_latents", "read_metrics", "reward", "rmse", "rollout_episode",
    "run_random_policy", "run_sampling_baseline", "sample_environment",
    "save_field", "save_graph", "save_model", "shortest_path",
    "simulate_field", "spread_direction", "spread_rate", "summary_table",
    "toy_baseline_config", "toy_eval_spec", "toy_train_config", "train",
    "traverse", "update_belief", "write_campaign",
]
