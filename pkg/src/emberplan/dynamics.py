"""Environment-dynamics prediction from belief-grid sequences.

A small conv+LSTM encoder compresses the sequence of 2-channel belief grids
into a 16-dimensional context latent; a dense+transposed-conv decoder predicts
the mean channel of a configurable target grid. The prediction error is the
auxiliary training signal that shapes the latent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Var, as_var, constant, conv2d, conv2d_transpose, dense,
                       lstm_step, mse, narrow, param, reshape, tanh)

LATENT_DIM = 16
LSTM_HIDDEN = 64
CONV_CHANNELS = (2, 8, 16)
PREDICTION_MODES = ("current", "delta", "next")
DEFAULT_PREDICTION_MODE = "next"


def padded_resolution(resolution: int) -> int:
    """Smallest multiple of 4 that fits the grid (two stride-2 halvings)."""
    return max(4, -(-resolution // 4) * 4)


@dataclass
class DpmParams:
    """Parameter tree for the dynamics model at a fixed grid resolution."""

    resolution: int
    values: dict


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def init_dpm_params(resolution: int, rng) -> DpmParams:
    """Glorot-uniform weights, zero biases; draw order is fixed for a seed."""
    if resolution < 2:
        raise ValueError(f"grid resolution must be at least 2, got {resolution}")
    rp = padded_resolution(resolution)
    side = rp // 4
    flat = CONV_CHANNELS[2] * side * side
    c0, c1, c2 = CONV_CHANNELS
    values = {
        "conv1_w": param(_glorot(rng, (c1, c0, 3, 3), c0 * 9, c1 * 9)),
        "conv1_b": param(np.zeros(c1)),
        "conv2_w": param(_glorot(rng, (c2, c1, 3, 3), c1 * 9, c2 * 9)),
        "conv2_b": param(np.zeros(c2)),
        "lstm_w": param(_glorot(rng, (flat + LSTM_HIDDEN, 4 * LSTM_HIDDEN),
                                flat + LSTM_HIDDEN, 4 * LSTM_HIDDEN)),
        "lstm_b": param(np.zeros(4 * LSTM_HIDDEN)),
        "latent_w": param(_glorot(rng, (LSTM_HIDDEN, LATENT_DIM),
                                  LSTM_HIDDEN, LATENT_DIM)),
        "latent_b": param(np.zeros(LATENT_DIM)),
        "dec_w": param(_glorot(rng, (LATENT_DIM, flat), LATENT_DIM, flat)),
        "dec_b": param(np.zeros(flat)),
        "tconv1_w": param(_glorot(rng, (c2, c1, 4, 4), c2 * 16, c1 * 16)),
        "tconv1_b": param(np.zeros(c1)),
        "tconv2_w": param(_glorot(rng, (c1, 1, 4, 4), c1 * 16, 16)),
        "tconv2_b": param(np.zeros(1)),
    }
    return DpmParams(resolution, values)


def initial_hidden() -> tuple[np.ndarray, np.ndarray]:
    """Fresh zero LSTM carry (hidden, cell) for the start of an episode."""
    return np.zeros(LSTM_HIDDEN), np.zeros(LSTM_HIDDEN)


def encode(grid, hidden, params: DpmParams):
    """Fold one belief grid into the running context.

    ``grid`` is a (2, R, R) mean/variance image; ``hidden`` the (h, c) carry
    from the previous call (or None at episode start). Returns the 16-vector
    latent and the advanced carry.
    """
    g = np.asarray(grid, dtype=float)
    r = params.resolution
    if g.shape != (2, r, r):
        raise ValueError(
            f"belief grid shape {g.shape} does not match the model "
            f"resolution {r}")
    rp = padded_resolution(r)
    lo = (rp - r) // 2
    hi = rp - r - lo
    g = np.pad(g, ((0, 0), (lo, hi), (lo, hi)))
    v = params.values
    x = constant(g[None])
    x = tanh(conv2d(x, v["conv1_w"], v["conv1_b"], stride=2, padding=1))
    x = tanh(conv2d(x, v["conv2_w"], v["conv2_b"], stride=2, padding=1))
    flat = reshape(x, (int(np.prod(x.value.shape)),))
    if hidden is None:
        h, c = (constant(a) for a in initial_hidden())
    else:
        h, c = (as_var(a) for a in hidden)
    h, c = lstm_step(flat, h, c, v["lstm_w"], v["lstm_b"])
    z = dense(h, v["latent_w"], v["latent_b"])
    return z, (h, c)


def decode(z, params: DpmParams) -> Var:
    """Expand a context latent into the predicted (R, R) mean grid."""
    zv = as_var(z)
    if zv.value.shape != (LATENT_DIM,):
        raise ValueError(f"latent must be a {LATENT_DIM}-vector, "
                         f"got shape {zv.value.shape}")
    r = params.resolution
    rp = padded_resolution(r)
    side = rp // 4
    v = params.values
    x = tanh(dense(zv, v["dec_w"], v["dec_b"]))
    x = reshape(x, (1, CONV_CHANNELS[2], side, side))
    x = tanh(conv2d_transpose(x, v["tconv1_w"], v["tconv1_b"], stride=2, padding=1))
    x = conv2d_transpose(x, v["tconv2_w"], v["tconv2_b"], stride=2, padding=1)
    lo = (rp - r) // 2
    x = narrow(narrow(x, 2, lo, r), 3, lo, r)
    return reshape(x, (r, r))


def encode_batch(grids, hidden, params: DpmParams):
    """Batched twin of ``encode`` for replay.

    ``grids`` is (B, 2, R, R) and ``hidden`` a pair of (B, H) carries (or
    None for zeros). Matches per-sample ``encode`` up to float associativity.
    """
    g = np.asarray(grids, dtype=float)
    r = params.resolution
    if g.ndim != 4 or g.shape[1:] != (2, r, r):
        raise ValueError(
            f"belief grid stack shape {g.shape} does not match the model "
            f"resolution {r}")
    rp = padded_resolution(r)
    lo = (rp - r) // 2
    hi = rp - r - lo
    g = np.pad(g, ((0, 0), (0, 0), (lo, hi), (lo, hi)))
    v = params.values
    x = constant(g)
    x = tanh(conv2d(x, v["conv1_w"], v["conv1_b"], stride=2, padding=1))
    x = tanh(conv2d(x, v["conv2_w"], v["conv2_b"], stride=2, padding=1))
    b = g.shape[0]
    flat = reshape(x, (b, int(np.prod(x.value.shape[1:]))))
    if hidden is None:
        h, c = (constant(np.zeros((b, LSTM_HIDDEN))) for _ in range(2))
    else:
        h, c = (as_var(a) for a in hidden)
    h, c = lstm_step(flat, h, c, v["lstm_w"], v["lstm_b"])
    z = dense(h, v["latent_w"], v["latent_b"])
    return z, (h, c)


def decode_batch(z, params: DpmParams) -> Var:
    """Batched twin of ``decode``: (B, 16) latents to (B, R, R) grids."""
    zv = as_var(z)
    if zv.value.ndim != 2 or zv.value.shape[1] != LATENT_DIM:
        raise ValueError(f"latent stack must be (B, {LATENT_DIM}), "
                         f"got shape {zv.value.shape}")
    r = params.resolution
    rp = padded_resolution(r)
    side = rp // 4
    v = params.values
    b = zv.value.shape[0]
    x = tanh(dense(zv, v["dec_w"], v["dec_b"]))
    x = reshape(x, (b, CONV_CHANNELS[2], side, side))
    x = tanh(conv2d_transpose(x, v["tconv1_w"], v["tconv1_b"], stride=2, padding=1))
    x = conv2d_transpose(x, v["tconv2_w"], v["tconv2_b"], stride=2, padding=1)
    lo = (rp - r) // 2
    x = narrow(narrow(x, 2, lo, r), 3, lo, r)
    return reshape(x, (b, r, r))


def dpm_loss(predicted, target) -> Var:
    """Mean squared error over all grid entries."""
    p = as_var(predicted)
    t = as_var(target)
    if p.value.shape != t.value.shape:
        raise ValueError(
            f"prediction shape {p.value.shape} does not match target "
            f"shape {t.value.shape}")
    return mse(p, t)


def target_for_mode(mode: str, b_t: np.ndarray, b_next: np.ndarray) -> np.ndarray:
    """Prediction target for an ablation mode.

    ``current`` reconstructs the input grid, ``delta`` predicts the change,
    and ``next`` (the default elsewhere) predicts the upcoming grid.
    """
    if mode not in PREDICTION_MODES:
        raise ValueError(f"unknown prediction mode {mode!r}; "
                         f"expected one of {PREDICTION_MODES}")
    b_t = np.asarray(b_t, dtype=float)
    b_next = np.asarray(b_next, dtype=float)
    if b_t.shape != b_next.shape:
        raise ValueError(f"grid shapes differ: {b_t.shape} vs {b_next.shape}")
    if mode == "current":
        return b_t
    if mode == "delta":
        return b_next - b_t
    return b_next
