"""Multi-scale spatial LSTM encoder.

The image is tiled into an M×N grid of non-overlapping patches which are read
left-to-right, top-to-bottom. Every site also sees the whole image downscaled
to patch resolution (the coarse channel). A second layer, when configured,
runs the same scan over the first layer's hidden states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .lstm import LstmState, spatial_lstm_step, zero_state
from .tensor import Tensor


@dataclass
class PatchGrid:
    M: int
    N: int
    patch_h: int
    patch_w: int
    patches: np.ndarray  # (..., M, N, patch_h * patch_w), row-major sites
    coarse: np.ndarray  # (..., patch_h * patch_w)

    def reassemble(self):
        lead = self.patches.shape[:-3]
        p = self.patches.reshape(*lead, self.M, self.N, self.patch_h, self.patch_w)
        p = np.moveaxis(p, -3, -2)  # (..., M, ph, N, pw)
        return p.reshape(*lead, self.M * self.patch_h, self.N * self.patch_w)


def downscale(image, out_h, out_w):
    """Area-average an (..., H, W) array down to (..., out_h, out_w)."""
    H, W = image.shape[-2:]
    if H % out_h or W % out_w:
        raise ConfigError(f"cannot area-average {H}x{W} to {out_h}x{out_w}")
    lead = image.shape[:-2]
    blocks = image.reshape(*lead, out_h, H // out_h, out_w, W // out_w)
    # a mean lies within its block's range; clamping makes constant blocks exact
    return np.clip(blocks.mean(axis=(-3, -1)), blocks.min(axis=(-3, -1)),
                   blocks.max(axis=(-3, -1)))


def split_patches(image, M, N):
    """Tile an (..., H, W) image into an M×N grid plus its coarse view."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 2:
        raise DimensionError(f"expected an image, got shape {image.shape}")
    H, W = image.shape[-2:]
    if M < 1 or N < 1 or H % M or W % N:
        raise ConfigError(f"image {H}x{W} cannot be tiled by a {M}x{N} grid")
    ph, pw = H // M, W // N
    lead = image.shape[:-2]
    p = image.reshape(*lead, M, ph, N, pw)
    p = np.moveaxis(p, -2, -3).reshape(*lead, M, N, ph * pw)
    coarse = downscale(image, ph, pw).reshape(*lead, ph * pw)
    return PatchGrid(M, N, ph, pw, np.ascontiguousarray(p), coarse)


@dataclass
class EncoderOutput:
    states: list  # LstmState per layer at the last grid site

    @property
    def h_enc(self):
        return self.states[-1].h

    @property
    def c_enc(self):
        return self.states[-1].c


def as_batch(images, config):
    """Coerce input images to a (batch, H, W) float64 array."""
    x = np.asarray(images, dtype=np.float64)
    H, W = config.height, config.width
    if x.shape == (H, W):
        x = x[None]
    elif x.ndim == 2 and x.shape[1] == H * W:
        x = x.reshape(-1, H, W)
    if x.ndim != 3 or x.shape[1:] != (H, W):
        raise DimensionError(f"images of shape {np.shape(images)} do not match {H}x{W}")
    return x


def encode(model, images):
    """Scan the patch grid and return the final-site state of every layer."""
    cfg = model.config
    x = as_batch(images, cfg)
    B = x.shape[0]
    M, N = cfg.grid
    grid = split_patches(x, M, N)
    coarse = Tensor(grid.coarse) if cfg.use_coarse else None
    H = cfg.hidden
    zero = zero_state(B, H)
    # states[k][i][j] for layer k
    states = [[[None] * N for _ in range(M)] for _ in model.enc]
    for i in range(M):
        for j in range(N):
            inp = Tensor(grid.patches[:, i, j])
            c_in = coarse
            for k, params in enumerate(model.enc):
                above = states[k][i - 1][j] if i > 0 else zero
                left = states[k][i][j - 1] if j > 0 else zero
                s = spatial_lstm_step(params, inp, c_in, above, left,
                                      literal=cfg.literal_spatial_update)
                states[k][i][j] = s
                inp, c_in = s.h, None
    return EncoderOutput([LstmState(layer[M - 1][N - 1].h, layer[M - 1][N - 1].c)
                          for layer in states])
