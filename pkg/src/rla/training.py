"""Multi-stage optimization and identity-preserving fine-tuning.

Stages:

1. encoder + reconstruction channel on ``(1/2K) Σ‖X_rec − X‖²`` (detector ignored)
2. detection channel only, on the composited MSE; everything else frozen
3. all three networks jointly on the composited MSE
4. alternating discriminator ascent / generator descent on
   ``L_mse + L_sup + L_adv`` with the identity classifier frozen

Every stage uses plain SGD with a fixed learning rate and draws minibatches
from a single seeded generator whose state is checkpointed.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .convnet import Classifier, Discriminator, discriminator_step, pretrain_discriminator
from .decoder import forward, recover
from .errors import ConfigError, ContractError, DivergenceError
from .losses import (adv_losses, joint_loss, mse_grads, mse_loss, reconstruction_grads,
                     reconstruction_loss, sup_loss)
from .model import RlaConfig, RlaModel

log = logging.getLogger(__name__)

STAGE_GROUPS = {1: ("enc", "rec"), 2: ("det",), 3: ("enc", "rec", "det"), 4: ("enc", "rec", "det")}


@dataclass
class TrainConfig:
    model: RlaConfig = field(default_factory=RlaConfig)
    lr: float = 0.05
    batch: int = 16
    stage_iters: tuple = (2000, 1000, 2000, 1000)
    seed: int = 0
    loss_weights: tuple = (1.0, 1.0, 1.0)
    grad_mode: str = "analytic"  # or "autodiff"
    non_saturating: bool = False
    d_lr: float | None = None
    disc_pretrain_epochs: int = 2
    checkpoint_every: int = 0

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = RlaConfig.from_dict(self.model)
        self.stage_iters = tuple(int(v) for v in self.stage_iters)
        self.loss_weights = tuple(float(v) for v in self.loss_weights)
        if self.batch < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch}")
        if len(self.stage_iters) != 4 or min(self.stage_iters) < 0:
            raise ConfigError(f"need four non-negative stage budgets, got {self.stage_iters}")
        if self.grad_mode not in ("analytic", "autodiff"):
            raise ConfigError(f"grad_mode must be 'analytic' or 'autodiff', got {self.grad_mode!r}")

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["stage_iters"] = list(self.stage_iters)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainData:
    """Flattened arrays: X_occ, X of shape (N, H*W); integer identity labels."""

    X_occ: np.ndarray
    X: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_split(cls, split):
        X_occ, X, _, labels = split.arrays()
        n = len(X)
        return cls(X_occ.reshape(n, -1), X.reshape(n, -1), labels)

    def __len__(self):
        return len(self.X)


class MetricsWriter:
    """Append-only JSON-lines metrics log (one record per iteration)."""

    def __init__(self, path=None):
        self.path = path
        self.records = []
        self._f = open(path, "a") if path else None

    def write(self, record):
        self.records.append(record)
        if self._f:
            self._f.write(json.dumps(record) + "\n")

    def close(self):
        if self._f:
            self._f.close()
            self._f = None


def _sgd(params, grads, lr):
    """Apply one SGD step; returns False (leaving every parameter untouched) when
    the step would produce a non-finite value."""
    updates = []
    for t in params:
        g = grads.get(t)
        if g is not None:
            with np.errstate(all="ignore"):
                new = t.data - lr * g
            if not np.all(np.isfinite(new)):
                return False
            updates.append((t, new))
    for t, new in updates:
        t.data[...] = new
    return True


def _finite(model):
    return all(np.all(np.isfinite(t.data)) for _, t in model.named_parameters())


class Trainer:
    """Owns the model, data, RNG and counters for a staged training run."""

    def __init__(self, model, data, cfg=None, metrics=None, checkpoint_dir=None,
                 classifier=None, discriminator=None, rng=None):
        self.model = model
        self.data = data if isinstance(data, TrainData) else TrainData.from_split(data)
        self.cfg = cfg or TrainConfig(model=model.config)
        self.metrics = metrics if isinstance(metrics, MetricsWriter) else MetricsWriter(metrics)
        self.checkpoint_dir = checkpoint_dir
        self.classifier = classifier
        self.discriminator = discriminator
        self.rng = rng if rng is not None else np.random.default_rng(self.cfg.seed)
        self.stage = 0
        self.iteration = 0
        if len(self.data) < 1:
            raise ContractError("training data is empty")

    # -- persistence -----------------------------------------------------

    def checkpoint(self):
        tensors = {f"model.{n}": a for n, a in self.model.state_dict().items()}
        if self.discriminator is not None:
            tensors.update({f"disc.{n}": a for n, a in self.discriminator.state_dict().items()})
        meta = {"kind": "rla", "config": self.model.config.to_dict(),
                "train": self.cfg.to_dict(), "rng": self.rng.bit_generator.state}
        return Checkpoint(tensors, self.stage, self.iteration, meta)

    def save(self, path):
        return save_checkpoint(path, self.checkpoint())

    @classmethod
    def resume(cls, path, data, cfg=None, **kw):
        ckpt = load_checkpoint(path)
        if ckpt.meta.get("kind") != "rla":
            raise ConfigError(f"{path} is not a model checkpoint")
        model = model_from_checkpoint(ckpt)
        cfg = cfg or TrainConfig.from_dict(ckpt.meta["train"])
        disc_state = ckpt.prefixed("disc")
        if disc_state and kw.get("discriminator") is None:
            disc = Discriminator(model.config.height, model.config.width)
            disc.load_state_dict(disc_state)
            kw["discriminator"] = disc
        rng = np.random.default_rng()
        rng.bit_generator.state = ckpt.meta["rng"]
        tr = cls(model, data, cfg, rng=rng, **kw)
        tr.stage, tr.iteration = ckpt.stage, ckpt.iteration
        return tr

    # -- one iteration per stage ------------------------------------------

    def _batch(self):
        idx = self.rng.permutation(len(self.data))[:self.cfg.batch]
        return self.data.X_occ[idx], self.data.X[idx], self.data.labels[idx]

    def _diverged(self, stage, it, loss):
        path = None
        if self.checkpoint_dir and _finite(self.model):
            path = self.save(os.path.join(self.checkpoint_dir, "diverged.ckpt"))
        what = f"loss is {loss}" if not np.isfinite(loss) else "parameter update is non-finite"
        raise DivergenceError(f"stage {stage} iteration {it}: {what}", path)

    def _mse_step(self, stage):
        m, cfg = self.model, self.cfg
        Xo, X, _ = self._batch()
        K = len(X)
        m.set_trainable(STAGE_GROUPS[stage])
        with T.GradientTape() as tape:
            fw = forward(m, Xo, detect=stage != 1)
            if stage == 1:
                loss = reconstruction_loss(fw.X_rec, X)
            else:
                loss = mse_loss(fw.X_rec, fw.S_det, fw.X_occ, X)
        value = loss.item()
        if not np.isfinite(value):
            return value, None
        if cfg.grad_mode == "autodiff":
            grads = tape.backward(loss)
        elif stage == 1:
            grads = tape.backward(seeds={fw.X_rec: reconstruction_grads(fw.X_rec.data, X, K)})
        else:
            dX, dS = mse_grads(fw.X_tilde.data, X, fw.S_det.data, fw.X_rec.data, Xo, K)
            seeds = {t: g for t, g in ((fw.X_rec, dX), (fw.S_det, dS)) if t.requires_grad}
            grads = tape.backward(seeds=seeds)
        if not _sgd(m.parameters(STAGE_GROUPS[stage]), grads, cfg.lr):
            return value, None
        return value, {"l_mse": value}

    def _finetune_step(self):
        m, cfg = self.model, self.cfg
        Xo, X, y = self._batch()
        m.set_trainable(STAGE_GROUPS[4])
        self.classifier.set_trainable(False)
        with T.GradientTape() as tape:
            fw = forward(m, Xo)
            d_obj, d_acc = discriminator_step(self.discriminator, X, fw.X_tilde.data,
                                              cfg.d_lr if cfg.d_lr is not None else cfg.lr)
            l_mse = mse_loss(fw.X_rec, fw.S_det, fw.X_occ, X)
            l_sup = sup_loss(self.classifier, fw.X_tilde, y)
            _, g_obj = adv_losses(self.discriminator, X, fw.X_tilde,
                                  non_saturating=cfg.non_saturating)
            total, report = joint_loss(l_mse, l_sup, g_obj, cfg.loss_weights)
        report.l_adv_d = d_obj
        if not np.isfinite(report.total):
            return report.total, None
        grads = tape.backward(total)
        if not _sgd(m.parameters(STAGE_GROUPS[4]), grads, cfg.lr):
            return report.total, None
        rec = report.as_record()
        rec["d_acc"] = d_acc
        return report.total, rec

    # -- driver --------------------------------------------------------------

    def prepare_stage4(self):
        if self.classifier is None:
            raise ContractError("stage 4 needs a pretrained identity classifier")
        if self.discriminator is None:
            cfg = self.model.config
            self.discriminator = Discriminator(cfg.height, cfg.width, seed=self.cfg.seed)
            fake = recover(self.model, self.data.X_occ).X_tilde.reshape(len(self.data), -1)
            pretrain_discriminator(self.discriminator, self.data.X, fake,
                                   self.cfg.disc_pretrain_epochs,
                                   lr=self.cfg.d_lr or self.cfg.lr,
                                   batch=self.cfg.batch, seed=self.cfg.seed)

    def run_stage(self, stage, iters=None):
        """Run ``stage`` up to ``iters`` iterations (default: its configured budget).

        Continues from the current counter when resuming inside the same stage.
        """
        if stage not in STAGE_GROUPS:
            raise ContractError(f"unknown stage {stage}")
        if stage < self.stage:
            raise ContractError(f"stage {stage} requested after stage {self.stage}")
        budget = self.cfg.stage_iters[stage - 1] if iters is None else int(iters)
        start = self.iteration if stage == self.stage else 0
        if stage != self.stage:
            self.stage, self.iteration = stage, 0
        if stage == 4 and start < budget:
            self.prepare_stage4()
        for it in range(start, budget):
            value, record = self._finetune_step() if stage == 4 else self._mse_step(stage)
            if record is None:
                self._diverged(stage, it + 1, value)
            self.iteration = it + 1
            self.metrics.write({"iter": self.iteration, "stage": stage, **record})
            if self.cfg.checkpoint_every and self.checkpoint_dir \
                    and self.iteration % self.cfg.checkpoint_every == 0:
                self.save(os.path.join(self.checkpoint_dir, "latest.ckpt"))
        self.model.set_trainable(())
        if self.checkpoint_dir:
            self.save(os.path.join(self.checkpoint_dir, f"stage{stage}.ckpt"))
            self.save(os.path.join(self.checkpoint_dir, "latest.ckpt"))
        return self.model


def model_from_checkpoint(ckpt):
    if isinstance(ckpt, (str, os.PathLike)):
        ckpt = load_checkpoint(ckpt)
    model = RlaModel.init(RlaConfig.from_dict(ckpt.meta["config"]))
    model.load_state_dict(ckpt.prefixed("model"))
    return model


def save_classifier(path, classifier):
    meta = {"kind": "classifier", "n_out": classifier.n_out,
            "height": classifier.height, "width": classifier.width,
            "trained": bool(classifier.trained)}
    tensors = {f"cls.{n}": a for n, a in classifier.state_dict().items()}
    return save_checkpoint(path, Checkpoint(tensors, 0, 0, meta))


def load_classifier(path):
    ckpt = load_checkpoint(path)
    if ckpt.meta.get("kind") != "classifier":
        raise ConfigError(f"{path} is not a classifier checkpoint")
    clf = Classifier(ckpt.meta["n_out"], ckpt.meta["height"], ckpt.meta["width"])
    clf.load_state_dict(ckpt.prefixed("cls"))
    clf.trained = bool(ckpt.meta.get("trained", True))
    return clf


def _run(stage, model, data, cfg, **kw):
    tr = Trainer(model, data, cfg, **kw)
    tr.run_stage(stage)
    tr.metrics.close()
    return tr


def stage1_pretrain_rec(model, data, cfg=None, **kw):
    return _run(1, model, data, cfg, **kw).model


def stage2_pretrain_det(model, data, cfg=None, **kw):
    return _run(2, model, data, cfg, **kw).model


def stage3_joint(model, data, cfg=None, **kw):
    return _run(3, model, data, cfg, **kw).model


def stage4_identity_finetune(model, classifier, discriminator, data, cfg=None, **kw):
    tr = _run(4, model, data, cfg, classifier=classifier, discriminator=discriminator, **kw)
    return tr.model, tr.discriminator


def train(model, data, cfg, stages=(1, 2, 3), **kw):
    """Run the listed stages in order on one trainer (one RNG stream)."""
    if list(stages) != sorted(set(stages)):
        raise ContractError(f"stages must be strictly increasing, got {list(stages)}")
    tr = Trainer(model, data, cfg, **kw)
    for s in stages:
        tr.run_stage(s)
    tr.metrics.close()
    return tr
