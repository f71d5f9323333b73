"""Waypoint-selection policy over the belief-augmented roadmap.

A self-attention encoder embeds every node's (x, y, mean, std) features; an
LSTM decoder conditioned on the current node, the normalized budget, and the
dynamics latent attends over the graph and points at one of the k neighbors.
The critic shares the decoder context. Attention weights double as the policy
via a scaled-tanh pointer with additive feasibility masking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Var, add, as_var, concat, constant, dense, div,
                       log_softmax, lstm_step, matmul, mul,
                       multi_head_attention, narrow, param, relu, reshape,
                       take_along, tanh)
from .dynamics import LATENT_DIM

DEFAULT_EMBED_DIM = 128
DEFAULT_HEADS = 4
POINTER_SCALE = 10.0
MASK_VALUE = -1e9

_MHA_KEYS = ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")


@dataclass
class PolicyParams:
    """Parameter tree plus the width/head configuration it was built for."""

    embed_dim: int
    n_heads: int
    values: dict


def _glorot(rng, shape):
    fan_in, fan_out = shape[0], shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def _mha_params(values: dict, prefix: str, rng, d: int) -> None:
    for key in ("wq", "wk", "wv", "wo"):
        values[f"{prefix}_{key}"] = param(_glorot(rng, (d, d)))
    for key in ("bq", "bk", "bv", "bo"):
        values[f"{prefix}_{key}"] = param(np.zeros(d))


def _mha_view(values: dict, prefix: str) -> dict:
    return {key: values[f"{prefix}_{key}"] for key in _MHA_KEYS}


def init_policy_params(embed_dim: int = DEFAULT_EMBED_DIM,
                       n_heads: int = DEFAULT_HEADS, rng=None) -> PolicyParams:
    """Glorot weights and zero biases in a fixed draw order.

    The pointer query projection and the critic output layer start at zero,
    so an untrained policy is uniform over feasible neighbors and predicts
    value 0 everywhere.
    """
    if rng is None:
        raise ValueError("an rng is required to initialize policy parameters")
    if embed_dim % n_heads != 0:
        raise ValueError(
            f"embedding width {embed_dim} is not divisible by {n_heads} heads")
    d = embed_dim
    values = {"embed_w": param(_glorot(rng, (4, d))),
              "embed_b": param(np.zeros(d))}
    _mha_params(values, "attn", rng, d)
    values["ffn1_w"] = param(_glorot(rng, (d, 2 * d)))
    values["ffn1_b"] = param(np.zeros(2 * d))
    values["ffn2_w"] = param(_glorot(rng, (2 * d, d)))
    values["ffn2_b"] = param(np.zeros(d))
    values["plan_w"] = param(_glorot(rng, (1, d)))
    values["plan_b"] = param(np.zeros(d))
    values["lstm_w"] = param(_glorot(rng, (3 * d + LATENT_DIM, 4 * d)))
    values["lstm_b"] = param(np.zeros(4 * d))
    _mha_params(values, "cross", rng, d)
    values["ptr_k_w"] = param(_glorot(rng, (d, d)))
    values["ptr_k_b"] = param(np.zeros(d))
    values["ptr_q_w"] = param(np.zeros((d, d)))
    values["ptr_q_b"] = param(np.zeros(d))
    values["critic1_w"] = param(_glorot(rng, (d, d)))
    values["critic1_b"] = param(np.zeros(d))
    values["critic2_w"] = param(np.zeros((d, 1)))
    values["critic2_b"] = param(np.zeros(1))
    return PolicyParams(d, n_heads, values)


def initial_hidden(params: PolicyParams) -> tuple[np.ndarray, np.ndarray]:
    """Fresh zero (hidden, cell) carry for the decoder LSTM."""
    return np.zeros(params.embed_dim), np.zeros(params.embed_dim)


def _feature_array(nodes) -> np.ndarray:
    if isinstance(nodes, np.ndarray):
        feats = nodes
    elif nodes and hasattr(nodes[0], "belief_mean"):
        feats = np.array([[a.position[0], a.position[1],
                           a.belief_mean, a.belief_std] for a in nodes])
    else:
        feats = np.asarray(nodes, dtype=float)
    if feats.ndim != 2 or feats.shape[1] != 4:
        raise ValueError(
            f"need (n, 4) node features (x, y, mean, std), got {feats.shape}")
    return feats


def encode_graph(nodes, params: PolicyParams) -> Var:
    """Embed all nodes and mix them through one self-attention block.

    Accepts an (n, 4) feature array or a list of augmented nodes; returns the
    (n, d) embedding matrix.
    """
    feats = _feature_array(nodes)
    n = len(feats)
    d = params.embed_dim
    v = params.values
    x = dense(constant(feats), v["embed_w"], v["embed_b"])
    xb = reshape(x, (1, n, d))
    xb = add(xb, multi_head_attention(xb, xb, xb, _mha_view(v, "attn"),
                                      params.n_heads))
    ffn = dense(relu(dense(xb, v["ffn1_w"], v["ffn1_b"])),
                v["ffn2_w"], v["ffn2_b"])
    return reshape(add(xb, ffn), (n, d))


@dataclass
class PolicyInput:
    """Decision context: where the agent is and what it may still do."""

    current_node: int
    neighbors: np.ndarray
    feasible: np.ndarray
    budget_fraction: float
    z: object
    hidden: tuple | None = None

    def __post_init__(self):
        self.neighbors = np.asarray(self.neighbors, dtype=np.int64)
        self.feasible = np.asarray(self.feasible, dtype=bool)
        if self.neighbors.shape != self.feasible.shape or self.neighbors.ndim != 1:
            raise ValueError("neighbors and the feasibility mask must be "
                             "matching 1-D arrays")
        if not 0.0 <= self.budget_fraction <= 1.0:
            raise ValueError(f"normalized budget must lie in [0, 1], "
                             f"got {self.budget_fraction}")
        z = self.z.value if isinstance(self.z, Var) else np.asarray(self.z)
        if z.shape != (LATENT_DIM,):
            raise ValueError(f"context latent must have length {LATENT_DIM}, "
                             f"got shape {z.shape}")


@dataclass
class ActionDistribution:
    """Masked categorical over the k neighbors of the current node."""

    probabilities: np.ndarray
    log_probs: Var
    feasible: np.ndarray

    def log_prob(self, index: int) -> Var:
        """In-graph log-probability of one neighbor choice."""
        return reshape(narrow(self.log_probs, -1, int(index), 1), ())


def decode_action(embeddings: Var, inp: PolicyInput, params: PolicyParams):
    """One decision step.

    Returns the action distribution over ``inp.neighbors``, the critic value,
    and the advanced decoder LSTM carry. Raises if every neighbor is masked
    infeasible; the caller ends the episode instead of deciding.
    """
    n, d = embeddings.value.shape
    if d != params.embed_dim:
        raise ValueError(f"embeddings width {d} does not match the policy "
                         f"width {params.embed_dim}")
    if not 0 <= inp.current_node < n:
        raise ValueError(f"current node {inp.current_node} outside the graph")
    if inp.neighbors.min() < 0 or inp.neighbors.max() >= n:
        raise ValueError("neighbor indices outside the graph")
    if not np.any(inp.feasible):
        raise ValueError("every neighbor is infeasible; end the episode "
                         "instead of deciding")
    v = params.values
    k = len(inp.neighbors)

    cur = reshape(take_along(embeddings,
                             np.full((1, d), inp.current_node), axis=0), (d,))
    plan = tanh(dense(constant(np.array([inp.budget_fraction])),
                      v["plan_w"], v["plan_b"]))
    lstm_in = concat([cur, plan, as_var(inp.z)], axis=-1)
    if inp.hidden is None:
        h, c = (constant(np.zeros(d)), constant(np.zeros(d)))
    else:
        h, c = (as_var(a) for a in inp.hidden)
    h, c = lstm_step(lstm_in, h, c, v["lstm_w"], v["lstm_b"])

    ctx = reshape(multi_head_attention(reshape(h, (1, 1, d)),
                                       reshape(embeddings, (1, n, d)),
                                       reshape(embeddings, (1, n, d)),
                                       _mha_view(v, "cross"), params.n_heads),
                  (d,))

    query = dense(ctx, v["ptr_q_w"], v["ptr_q_b"])
    nbr = take_along(embeddings,
                     np.broadcast_to(inp.neighbors[:, None], (k, d)), axis=0)
    keys = dense(nbr, v["ptr_k_w"], v["ptr_k_b"])
    scores = reshape(matmul(keys, reshape(query, (d, 1))), (k,))
    logits = mul(constant(POINTER_SCALE),
                 tanh(div(scores, constant(np.sqrt(d)))))
    mask = np.where(inp.feasible, 0.0, MASK_VALUE)
    log_probs = log_softmax(add(logits, constant(mask)), axis=-1)
    probs = np.exp(log_probs.value)

    hidden_val = tanh(dense(ctx, v["critic1_w"], v["critic1_b"]))
    value = reshape(dense(hidden_val, v["critic2_w"], v["critic2_b"]), ())

    dist = ActionDistribution(probs, log_probs, inp.feasible.copy())
    return dist, value, (h, c)


def act(dist: ActionDistribution, mode: str, rng=None) -> int:
    """Pick a neighbor slot: ``sample`` draws from the distribution,
    ``greedy`` takes the argmax with ties going to the lowest index."""
    p = dist.probabilities
    if mode == "greedy":
        return int(np.argmax(p))
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling an action requires an rng")
        return int(rng.choice(len(p), p=p / p.sum()))
    raise ValueError(f"unknown action mode {mode!r}; use 'sample' or 'greedy'")
