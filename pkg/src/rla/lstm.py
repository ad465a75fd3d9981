"""Sequence and two-predecessor spatial LSTM cells.

All cells operate on row batches: inputs are (batch, width) tensors. Gate
pre-activations are stacked in a single weight block per input source, in the
order (input, forget, candidate, output) for the sequence cell and
(input, forget-above, forget-left, candidate, output) for the spatial cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor

FORGET_BIAS = 1.0


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


def zero_state(batch, hidden):
    return LstmState(T.zeros((batch, hidden)), T.zeros((batch, hidden)))


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class LstmParams:
    """Weights of one sequence LSTM layer.

    ``W_x`` is None for a cell without external input (the reconstruction
    channel's first layer reads only its own previous hidden state).
    """

    W_x: Tensor | None
    W_h: Tensor
    b: Tensor

    @property
    def hidden(self):
        return self.W_h.shape[1]

    @property
    def input_dim(self):
        return 0 if self.W_x is None else self.W_x.shape[1]

    def tensors(self):
        out = {"W_h": self.W_h, "b": self.b}
        if self.W_x is not None:
            out["W_x"] = self.W_x
        return out

    @classmethod
    def init(cls, rng, input_dim, hidden):
        fan_in = input_dim + hidden
        W_x = Tensor(_uniform(rng, (4 * hidden, input_dim), fan_in)) if input_dim else None
        W_h = Tensor(_uniform(rng, (4 * hidden, hidden), fan_in))
        b = _uniform(rng, (4 * hidden,), fan_in)
        b[hidden:2 * hidden] = FORGET_BIAS
        return cls(W_x, W_h, Tensor(b))

    @classmethod
    def from_gates(cls, W_x, W_h, b):
        """Build from per-gate lists ``[i, f, c, o]`` of matrices / bias vectors."""
        stack_x = None if W_x is None else Tensor(np.concatenate(W_x, axis=0))
        return cls(stack_x, Tensor(np.concatenate(W_h, axis=0)), Tensor(np.concatenate(b)))


def lstm_step(params, x, prev):
    """One step of the standard LSTM recurrence; returns the new state."""
    H = params.hidden
    if prev.h.shape[-1] != H or prev.c.shape[-1] != H:
        raise DimensionError(f"state width {prev.h.shape[-1]} != hidden {H}")
    z = T.linear(prev.h, params.W_h, params.b)
    if params.W_x is not None:
        if x is None or x.shape[-1] != params.input_dim:
            got = None if x is None else x.shape
            raise DimensionError(f"lstm input {got} does not match input dim {params.input_dim}")
        z = z + T.linear(x, params.W_x)
    elif x is not None:
        raise DimensionError("this cell takes no external input")
    i = T.sigmoid(z[:, :H])
    f = T.sigmoid(z[:, H:2 * H])
    g = T.tanh(z[:, 2 * H:3 * H])
    o = T.sigmoid(z[:, 3 * H:])
    c = f * prev.c + i * g
    h = o * T.tanh(c)
    return LstmState(h, c)


@dataclass
class SpatialLstmParams:
    """Single affine block over ``[x, x_coarse, h_above, h_left]``."""

    W: Tensor
    b: Tensor
    input_dim: int
    coarse_dim: int

    @property
    def hidden(self):
        return self.W.shape[0] // 5

    def tensors(self):
        return {"W": self.W, "b": self.b}

    @classmethod
    def init(cls, rng, input_dim, coarse_dim, hidden):
        fan_in = input_dim + coarse_dim + 2 * hidden
        W = _uniform(rng, (5 * hidden, fan_in), fan_in)
        b = _uniform(rng, (5 * hidden,), fan_in)
        b[hidden:3 * hidden] = FORGET_BIAS
        return cls(Tensor(W), Tensor(b), input_dim, coarse_dim)


def spatial_lstm_step(params, x, x_coarse, above, left, literal=False):
    """One grid site of the spatial LSTM.

    ``above`` is the state at (i-1, j), ``left`` at (i, j-1); pass zero states
    on the top row / left column. With ``literal=True`` the left forget gate
    multiplies the *above* memory instead of its own neighbour's, a variant
    kept for comparison with the standard pairing.
    """
    H = params.hidden
    if x.shape[-1] != params.input_dim:
        raise DimensionError(f"patch width {x.shape[-1]} != input dim {params.input_dim}")
    parts = [x]
    if params.coarse_dim:
        if x_coarse is None or x_coarse.shape[-1] != params.coarse_dim:
            got = None if x_coarse is None else x_coarse.shape
            raise DimensionError(f"coarse input {got} != coarse dim {params.coarse_dim}")
        parts.append(x_coarse)
    elif x_coarse is not None:
        raise DimensionError("cell configured without a coarse input")
    for s in (above, left):
        if s.h.shape[-1] != H or s.c.shape[-1] != H:
            raise DimensionError(f"neighbour state width {s.h.shape[-1]} != hidden {H}")
    parts += [above.h, left.h]
    z = T.linear(T.concat(parts, axis=1), params.W, params.b)
    i = T.sigmoid(z[:, :H])
    f_up = T.sigmoid(z[:, H:2 * H])
    f_left = T.sigmoid(z[:, 2 * H:3 * H])
    g = T.tanh(z[:, 3 * H:4 * H])
    o = T.sigmoid(z[:, 4 * H:])
    c = f_up * above.c + f_left * (above.c if literal else left.c) + i * g
    h = o * T.tanh(c)
    return LstmState(h, c)
