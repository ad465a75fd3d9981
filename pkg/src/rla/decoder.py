"""Dual-channel LSTM decoder and occlusion-aware compositing.

The reconstruction channel is an LSTM that reads only its own previous hidden
state (initialized from the encoder) and adds a per-pixel increment to an
unbounded accumulator at every step. The detection channel reads the
reconstruction channel's current top-layer hidden state and accumulates
per-pixel occlusion scores the same way. Both accumulators pass through a
sigmoid after the last step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import as_batch, encode
from .errors import ContractError, DimensionError
from .lstm import lstm_step, zero_state


@dataclass
class DecoderOutput:
    steps: list  # [(X_t, S_t)] pre-sigmoid accumulators; S_t is None without detection
    X_rec: T.Tensor
    S_det: T.Tensor | None


def decode(model, enc, steps=None, detect=True):
    """Unroll both channels for ``steps`` iterations (default: the model's)."""
    cfg = model.config
    n_steps = cfg.steps if steps is None else int(steps)
    if n_steps < 1:
        raise ContractError(f"decoder needs at least one step, got {n_steps}")
    if len(enc.states) != len(model.rec):
        raise DimensionError(
            f"encoder has {len(enc.states)} layers, decoder has {len(model.rec)}")
    B = enc.h_enc.shape[0]
    rec_state = list(enc.states)
    det_state = [zero_state(B, p.hidden) for p in model.det]
    X = S = None
    trace = []
    for _ in range(n_steps):
        inp = None
        for k, params in enumerate(model.rec):
            rec_state[k] = lstm_step(params, inp, rec_state[k])
            inp = rec_state[k].h
        dX = T.linear(inp, model.rec_out.W, model.rec_out.b)
        X = dX if X is None else X + dX
        if detect:
            for k, params in enumerate(model.det):
                det_state[k] = lstm_step(params, inp, det_state[k])
                inp = det_state[k].h
            dS = T.linear(inp, model.det_out.W, model.det_out.b)
            S = dS if S is None else S + dS
        trace.append((X, S))
    return DecoderOutput(trace, T.sigmoid(X), T.sigmoid(S) if detect else None)


def composite(X_rec, X_occ, S_det):
    """Blend reconstruction and input by occlusion score: rec·S + occ·(1−S)."""
    X_rec, X_occ, S_det = T.as_tensor(X_rec), T.as_tensor(X_occ), T.as_tensor(S_det)
    if not (X_rec.shape == X_occ.shape == S_det.shape):
        raise DimensionError(
            f"composite: shapes {X_rec.shape}, {X_occ.shape}, {S_det.shape} differ")
    return T.blend(X_rec, X_occ, S_det)


@dataclass
class Forward:
    """Tape-visible tensors of one full forward pass, flattened to (batch, H*W)."""

    steps: list
    X_rec: T.Tensor
    S_det: T.Tensor | None
    X_tilde: T.Tensor | None
    X_occ: T.Tensor


def forward(model, X_occ, steps=None, detect=True):
    x = as_batch(X_occ, model.config)
    flat = T.Tensor(x.reshape(x.shape[0], -1))
    out = decode(model, encode(model, x), steps=steps, detect=detect)
    X_tilde = composite(out.X_rec, flat, out.S_det) if detect else None
    return Forward(out.steps, out.X_rec, out.S_det, X_tilde, flat)


@dataclass
class RecoveryTrace:
    """Progressive output as (batch, H, W) arrays.

    ``steps`` holds the raw accumulators (X_t, S_t); ``step_images`` gives their
    sigmoid views, which is what a per-step panel displays.
    """

    steps: list
    X_rec: np.ndarray
    S_det: np.ndarray
    X_tilde: np.ndarray

    def step_images(self):
        return [(_sigmoid(X), _sigmoid(S)) for X, S in self.steps]


def _sigmoid(a):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-a))


def recover(model, X_occ, steps=None):
    """Run the model without recording gradients and return numpy images."""
    shape = (-1, model.config.height, model.config.width)
    fw = forward(model, X_occ, steps=steps)
    return RecoveryTrace(
        [(X.data.reshape(shape), S.data.reshape(shape)) for X, S in fw.steps],
        fw.X_rec.data.reshape(shape),
        fw.S_det.data.reshape(shape),
        fw.X_tilde.data.reshape(shape),
    )
