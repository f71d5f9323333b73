"""Command-line shell for simulation, training, and evaluation campaigns.

Every subcommand accepts ``--config FILE``, a JSON object whose keys are the
subcommand's flag names (underscored). Explicit flags override the file,
which overrides built-in defaults. Exit codes: 0 on success, 1 for usage
problems (bad flags, bad config, missing required values), 2 for runtime
failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .evaluation import EvalSpec, decision_latency, evaluate, export_latents, \
    latent_probe, summary_table, toy_eval_spec
from .firesim import FireModelConfig, RandomizationSpec, sample_environment, \
    save_field, simulate_field
from .roadmap import build_graph, save_graph
from .trainer import TrainConfig, toy_train_config, train


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the documented contract is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _usage(message: str):
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(1)


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            loaded = json.load(fh)
    except OSError as exc:
        _usage(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        _usage(f"config file is not valid JSON: {exc}")
    if not isinstance(loaded, dict):
        _usage("config file must hold a JSON object")
    return loaded


def _merge(args, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        loaded = _load_config(args.config)
        unknown = set(loaded) - set(defaults)
        if unknown:
            _usage(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged.update(loaded)
    for key in defaults:
        given = getattr(args, key, None)
        if given is not None:
            merged[key] = given
    return merged


def _floats(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return tuple(float(v) for v in str(value).split(",") if v)


def _ints(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).split(",") if v)


def _need(merged: dict, key: str):
    if merged.get(key) is None:
        _usage(f"missing required value: {key.replace('_', '-')}")
    return merged[key]


# ---------------------------------------------------------------------------
# subcommands


_SIMULATE_DEFAULTS = dict(fuel=1.0, wind=5.0, fires=1, horizon=65,
                          resolution=30, radius=0.03, seed=0, out=None)


def _cmd_simulate(args) -> int:
    opts = _merge(args, _SIMULATE_DEFAULTS)
    out = _need(opts, "out")
    spec = RandomizationSpec(fuel_range=(float(opts["fuel"]), float(opts["fuel"])),
                             wind_speed=float(opts["wind"]),
                             fire_count_range=(int(opts["fires"]), int(opts["fires"])),
                             horizon=int(opts["horizon"]))
    env = sample_environment(np.random.default_rng(int(opts["seed"])), spec)
    field = simulate_field(env, horizon=int(opts["horizon"]),
                           resolution=int(opts["resolution"]),
                           model=FireModelConfig(render_radius=float(opts["radius"])))
    save_field(out, field)
    print(f"wrote {field.frames.shape[0]} frames at resolution "
          f"{field.frames.shape[1]} to {out}")
    return 0


_GRAPH_DEFAULTS = dict(nodes=200, neighbors=20, seed=0, out=None)


def _cmd_build_graph(args) -> int:
    opts = _merge(args, _GRAPH_DEFAULTS)
    out = _need(opts, "out")
    graph = build_graph(int(opts["nodes"]), int(opts["neighbors"]),
                        seed=int(opts["seed"]))
    save_graph(graph, out)
    print(f"wrote graph with {graph.n} nodes, k={graph.k} to {out}")
    return 0


_TRAIN_DEFAULTS = dict(profile="full", episodes=None, batch_size=None,
                       minibatch_size=None, workers=None, master_seed=None,
                       lr=None, embed_dim=None, n_heads=None, n_nodes=None,
                       k_neighbors=None, resolution=None, prediction_mode=None,
                       time_scale=None, log=None, checkpoint_dir=None,
                       checkpoint_every=50)

_TRAIN_FIELD_MAP = dict(episodes="total_episodes", batch_size="batch_size",
                        minibatch_size="minibatch_size", workers="workers",
                        master_seed="master_seed", lr="lr",
                        embed_dim="embed_dim", n_heads="n_heads",
                        n_nodes="n_nodes", k_neighbors="k_neighbors",
                        resolution="resolution",
                        prediction_mode="prediction_mode",
                        time_scale="time_scale")


def _cmd_train(args) -> int:
    opts = _merge(args, _TRAIN_DEFAULTS)
    if opts["profile"] not in ("full", "toy"):
        _usage(f"unknown profile {opts['profile']!r}")
    base = toy_train_config() if opts["profile"] == "toy" else TrainConfig()
    overrides = {field: type(getattr(base, field))(opts[key])
                 for key, field in _TRAIN_FIELD_MAP.items()
                 if opts[key] is not None}
    config = dataclasses.replace(base, **overrides)
    _, _, log = train(config, log_path=opts["log"],
                      checkpoint_dir=opts["checkpoint_dir"],
                      checkpoint_every=int(opts["checkpoint_every"]))
    print(f"trained {config.total_episodes} episodes"
          + (f", checkpoints in {opts['checkpoint_dir']}"
             if opts["checkpoint_dir"] else ""))
    if log:
        last = log[-1]
        print(f"final episode return {last['return']:.4f}, "
              f"dpm loss {last['dpm_loss']:.6f}")
    return 0


_EVAL_DEFAULTS = dict(profile="full", planner="policy", checkpoint=None,
                      fuels=None, budgets=None, instances=None,
                      fire_counts=None, seeds=None, nodes=None, neighbors=None,
                      resolution=None, radius=None, max_steps=None,
                      time_scale=None, workers=None, out_dir=None)


def _eval_spec(opts) -> EvalSpec:
    if opts["profile"] not in ("full", "toy"):
        _usage(f"unknown profile {opts['profile']!r}")
    base = toy_eval_spec() if opts["profile"] == "toy" else EvalSpec()
    overrides = {}
    if opts["fuels"] is not None:
        overrides["fuel_values"] = _floats(opts["fuels"])
    if opts["budgets"] is not None:
        overrides["budgets"] = _floats(opts["budgets"])
    if opts["instances"] is not None:
        overrides["n_instances"] = int(opts["instances"])
    if opts["fire_counts"] is not None:
        overrides["fire_counts"] = _ints(opts["fire_counts"])
    if opts["seeds"] is not None:
        overrides["seeds"] = _ints(opts["seeds"])
    if opts["checkpoint"] is not None:
        overrides["checkpoint"] = str(opts["checkpoint"])
    if opts["nodes"] is not None:
        overrides["n_nodes"] = int(opts["nodes"])
    if opts["neighbors"] is not None:
        overrides["k_neighbors"] = int(opts["neighbors"])
    if opts["resolution"] is not None:
        overrides["resolution"] = int(opts["resolution"])
    if opts["radius"] is not None:
        overrides["render_radius"] = float(opts["radius"])
    if opts["max_steps"] is not None:
        overrides["max_steps"] = int(opts["max_steps"])
    if opts["time_scale"] is not None:
        overrides["time_scale"] = int(opts["time_scale"])
    if opts["workers"] is not None:
        overrides["workers"] = int(opts["workers"])
    return dataclasses.replace(base, **overrides)


_BASELINE_DEFAULTS = {**_EVAL_DEFAULTS, "planner": "sampling"}


def _run_campaign(args, defaults, allowed) -> int:
    opts = _merge(args, defaults)
    if opts["planner"] not in allowed:
        _usage(f"planner must be one of {', '.join(allowed)}")
    spec = _eval_spec(opts)
    result = evaluate(spec, opts["planner"], out_dir=opts["out_dir"])
    sys.stdout.write(summary_table(result))
    return 0


def _cmd_eval(args) -> int:
    return _run_campaign(args, _EVAL_DEFAULTS, ("policy", "random", "sampling"))


def _cmd_baseline(args) -> int:
    return _run_campaign(args, _BASELINE_DEFAULTS, ("sampling", "random"))


_LATENTS_DEFAULTS = dict(profile="full", checkpoint=None, fuels=None,
                         budgets=None, instances=None, fire_counts=None,
                         seeds=None, nodes=None, neighbors=None,
                         resolution=None, radius=None, max_steps=None,
                         time_scale=None, workers=None, out=None, budget=None)


def _cmd_export_latents(args) -> int:
    opts = _merge(args, _LATENTS_DEFAULTS)
    out = _need(opts, "out")
    _need(opts, "checkpoint")
    spec = _eval_spec({**opts, "planner": "policy", "out_dir": None})
    budget = float(opts["budget"]) if opts["budget"] is not None else None
    labels, Z = export_latents(spec, checkpoint=opts["checkpoint"], path=out,
                               budget=budget)
    print(f"wrote {len(labels)} embeddings of width {Z.shape[1]} to {out}")
    return 0


_PROBE_DEFAULTS = dict(latents=None, folds=5)


def _cmd_probe(args) -> int:
    opts = _merge(args, _PROBE_DEFAULTS)
    path = _need(opts, "latents")
    accuracy = latent_probe(path, n_folds=int(opts["folds"]))
    print(f"probe accuracy: {accuracy:.4f}")
    return 0


_LATENCY_DEFAULTS = dict(checkpoint=None, nodes=200, neighbors=20,
                         resolution=30, embed_dim=128, n_heads=4, passes=100)


def _cmd_latency(args) -> int:
    opts = _merge(args, _LATENCY_DEFAULTS)
    seconds = decision_latency(opts["checkpoint"], n_nodes=int(opts["nodes"]),
                               k_neighbors=int(opts["neighbors"]),
                               resolution=int(opts["resolution"]),
                               embed_dim=int(opts["embed_dim"]),
                               n_heads=int(opts["n_heads"]),
                               passes=int(opts["passes"]))
    print(f"median decision latency: {seconds:.4f} s")
    return 0


# ---------------------------------------------------------------------------
# wiring


def _add_flags(sub, defaults: dict):
    sub.add_argument("--config", help="JSON file of flag values")
    for key, value in defaults.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            raise AssertionError("no boolean flags defined")
        sub.add_argument(flag, default=None, dest=key)


def build_parser() -> _Parser:
    parser = _Parser(prog="emberplan",
                     description="wildfire monitoring path planner toolkit")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)
    for name, handler, defaults, blurb in (
            ("simulate", _cmd_simulate, _SIMULATE_DEFAULTS,
             "render a fire episode to a field file"),
            ("build-graph", _cmd_build_graph, _GRAPH_DEFAULTS,
             "sample a roadmap graph and write it to a file"),
            ("train", _cmd_train, _TRAIN_DEFAULTS,
             "run the training loop"),
            ("eval", _cmd_eval, _EVAL_DEFAULTS,
             "run an evaluation campaign and print the summary table"),
            ("baseline", _cmd_baseline, _BASELINE_DEFAULTS,
             "run a non-learning comparison campaign"),
            ("export-latents", _cmd_export_latents, _LATENTS_DEFAULTS,
             "collect per-episode embeddings into a file"),
            ("probe", _cmd_probe, _PROBE_DEFAULTS,
             "score embedding separability with a linear read-out"),
            ("latency", _cmd_latency, _LATENCY_DEFAULTS,
             "measure greedy decision latency")):
        sub = subs.add_parser(name, help=blurb)
        _add_flags(sub, defaults)
        sub.set_defaults(func=handler)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
