"""RLA model container: architecture settings plus all trainable tensors."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .lstm import LstmParams, SpatialLstmParams
from .tensor import Tensor

GROUPS = ("enc", "rec", "det")


@dataclass
class RlaConfig:
    height: int = 32
    width: int = 32
    grid: tuple = (2, 2)
    hidden: int = 64
    layers: int = 2
    steps: int = 8
    use_coarse: bool = True
    literal_spatial_update: bool = False
    # initial final-step detection logit (spread over the steps); negative = prior
    # that pixels are unoccluded
    det_bias_init: float = -2.0

    def __post_init__(self):
        self.grid = tuple(int(v) for v in self.grid)
        M, N = self.grid
        if M < 1 or N < 1:
            raise ConfigError(f"grid must be positive, got {self.grid}")
        if self.height % M or self.width % N:
            raise ConfigError(
                f"image {self.height}x{self.width} is not divisible by grid {M}x{N}")
        if self.hidden < 1 or self.layers < 1:
            raise ConfigError("hidden size and layer count must be >= 1")
        if self.steps < 1:
            raise ConfigError(f"decoder steps must be >= 1, got {self.steps}")

    @property
    def patch_shape(self):
        M, N = self.grid
        return self.height // M, self.width // N

    @property
    def pixels(self):
        return self.height * self.width

    def to_dict(self):
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class OutputMap:
    """Affine read-out from a hidden state to one value per pixel."""

    W: Tensor
    b: Tensor

    def tensors(self):
        return {"W": self.W, "b": self.b}


class RlaModel:
    """Encoder, reconstruction channel and detection channel parameters.

    Parameter names are dotted paths such as ``enc.0.W`` or ``det.out.b``; the
    first component is the group used by the staged optimizer.
    """

    def __init__(self, config, enc, rec, rec_out, det, det_out):
        self.config = config
        self.enc = enc
        self.rec = rec
        self.rec_out = rec_out
        self.det = det
        self.det_out = det_out
        for name, t in self.named_parameters():
            t.name = name

    @classmethod
    def init(cls, config=None, seed=0):
        config = config or RlaConfig()
        rng = np.random.default_rng(seed)
        H = config.hidden
        ph, pw = config.patch_shape
        patch = ph * pw
        enc = [SpatialLstmParams.init(rng, patch, patch if config.use_coarse else 0, H)]
        enc += [SpatialLstmParams.init(rng, H, 0, H) for _ in range(config.layers - 1)]
        rec = [LstmParams.init(rng, 0, H)]
        rec += [LstmParams.init(rng, H, H) for _ in range(config.layers - 1)]
        bound = 1.0 / np.sqrt(H)
        rec_out = OutputMap(Tensor(rng.uniform(-bound, bound, (config.pixels, H))),
                            Tensor(np.zeros(config.pixels)))
        det = [LstmParams.init(rng, H, H) for _ in range(config.layers)]
        det_out = OutputMap(Tensor(rng.uniform(-bound, bound, (config.pixels, H))),
                            Tensor(np.full(config.pixels, config.det_bias_init / config.steps)))
        return cls(config, enc, rec, rec_out, det, det_out)

    def named_parameters(self):
        out = []
        for k, p in enumerate(self.enc):
            out += [(f"enc.{k}.{n}", t) for n, t in p.tensors().items()]
        for k, p in enumerate(self.rec):
            out += [(f"rec.{k}.{n}", t) for n, t in p.tensors().items()]
        out += [(f"rec.out.{n}", t) for n, t in self.rec_out.tensors().items()]
        for k, p in enumerate(self.det):
            out += [(f"det.{k}.{n}", t) for n, t in p.tensors().items()]
        out += [(f"det.out.{n}", t) for n, t in self.det_out.tensors().items()]
        return out

    def parameters(self, groups=GROUPS):
        return [t for n, t in self.named_parameters() if n.split(".", 1)[0] in groups]

    def set_trainable(self, groups):
        """Mark exactly the parameters in ``groups`` as requiring gradients."""
        for n, t in self.named_parameters():
            t.requires_grad = n.split(".", 1)[0] in groups

    def state_dict(self):
        return {n: t.data.copy() for n, t in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise ConfigError(f"state is missing parameters: {sorted(missing)}")
        for n, t in params.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != t.shape:
                raise ConfigError(f"{n}: shape {arr.shape} != expected {t.shape}")
            t.data = arr.copy()

    def copy(self):
        return copy.deepcopy(self)

    def fingerprint(self, groups=GROUPS):
        """SHA-256 over the raw bytes of the selected parameter groups."""
        h = hashlib.sha256()
        for n, t in self.named_parameters():
            if n.split(".", 1)[0] in groups:
                h.update(n.encode())
                h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def num_parameters(self):
        return sum(t.size for _, t in self.named_parameters())
