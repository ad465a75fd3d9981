import json

import numpy as np
import pytest

from rla import tensor as T
from rla.convnet import Classifier, pretrain_classifier
from rla.decoder import forward, recover
from rla.errors import ConfigError, ContractError, DivergenceError
from rla.losses import mse_loss
from rla.model import RlaConfig, RlaModel
from rla.synth import build_dataset, make_template_bank
from rla.tensor import GradientTape
from rla.training import (MetricsWriter, TrainConfig, TrainData, Trainer, load_classifier,
                          model_from_checkpoint, save_classifier, stage1_pretrain_rec,
                          stage2_pretrain_det, stage3_joint, stage4_identity_finetune, train)


@pytest.fixture(scope="module")
def split():
    # 8 train identities x 8 renders = 64 training samples
    return build_dataset(16, 8, make_template_bank(4, 32, 0), 3).train


@pytest.fixture(scope="module")
def data(split):
    return TrainData.from_split(split)


def small_cfg(**kw):
    model = kw.pop("model", RlaConfig(hidden=8, steps=3))
    return TrainConfig(model=model, batch=8, seed=0, **kw)


def fresh(cfg):
    return RlaModel.init(cfg.model, seed=cfg.seed)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch=0)
    with pytest.raises(ConfigError):
        TrainConfig(stage_iters=(1, 2, 3))
    with pytest.raises(ConfigError):
        TrainConfig(grad_mode="magic")
    with pytest.raises(ConfigError):
        RlaConfig(steps=0)
    with pytest.raises(ConfigError):
        RlaConfig(grid=(3, 3))
    cfg = small_cfg()
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_defaults():
    cfg = TrainConfig()
    assert cfg.lr == 0.05 and cfg.stage_iters == (2000, 1000, 2000, 1000)
    assert cfg.loss_weights == (1.0, 1.0, 1.0)
    assert RlaModel.init(RlaConfig()).num_parameters() > 0


@pytest.mark.parametrize("stage_fn", [stage1_pretrain_rec, stage2_pretrain_det, stage3_joint])
def test_zero_iterations_leave_parameters(stage_fn, data):
    cfg = small_cfg(stage_iters=(0, 0, 0, 0))
    model = fresh(cfg)
    before = model.fingerprint()
    stage_fn(model, data, cfg)
    assert model.fingerprint() == before


def test_stage1_reduces_loss_and_logs_every_iteration(tmp_path, split):
    cfg = TrainConfig(model=RlaConfig(hidden=32), batch=16, stage_iters=(200, 0, 0, 0), seed=0)
    model = fresh(cfg)
    path = tmp_path / "m.jsonl"
    stage1_pretrain_rec(model, TrainData.from_split(split), cfg, metrics=str(path))
    recs = [json.loads(line) for line in open(path)]
    assert [r["iter"] for r in recs] == list(range(1, 201))
    assert all(r["stage"] == 1 for r in recs)
    losses = np.array([r["l_mse"] for r in recs])
    assert losses[-20:].mean() < losses[:20].mean()


def test_stage1_ignores_detector(data):
    cfg = small_cfg(stage_iters=(5, 0, 0, 0))
    model = fresh(cfg)
    det = model.fingerprint(("det",))
    stage1_pretrain_rec(model, data, cfg)
    assert model.fingerprint(("det",)) == det
    assert model.fingerprint(("enc", "rec")) != fresh(cfg).fingerprint(("enc", "rec"))


def test_stage2_freezes_encoder_and_reconstruction(data):
    cfg = small_cfg(stage_iters=(3, 5, 0, 0))
    tr = Trainer(fresh(cfg), data, cfg)
    tr.run_stage(1)
    frozen = tr.model.fingerprint(("enc", "rec"))
    det = tr.model.fingerprint(("det",))
    tr.run_stage(2)
    assert tr.model.fingerprint(("enc", "rec")) == frozen
    assert tr.model.fingerprint(("det",)) != det


def test_detector_prefers_occluded_pixels(split, data):
    cfg = TrainConfig(model=RlaConfig(hidden=32), batch=16, stage_iters=(300, 300, 0, 0), seed=0)
    tr = train(fresh(cfg), data, cfg, stages=(1, 2))
    _, _, masks, _ = split.arrays()
    S = recover(tr.model, data.X_occ).S_det
    assert S[masks].mean() > S[~masks].mean()


def test_stage3_gradient_reaches_every_parameter(data):
    cfg = small_cfg()
    model = fresh(cfg)
    model.set_trainable(("enc", "rec", "det"))
    with GradientTape() as tape:
        fw = forward(model, data.X_occ[:8])
        loss = mse_loss(fw.X_rec, fw.S_det, fw.X_occ, data.X[:8])
    grads = tape.backward(loss)
    for name, t in model.named_parameters():
        assert np.any(grads[t] != 0), name


@pytest.mark.parametrize("stage", [1, 2, 3])
def test_analytic_and_autodiff_steps_agree(data, stage):
    models = {}
    for mode in ("analytic", "autodiff"):
        cfg = small_cfg(grad_mode=mode, stage_iters=(1, 1, 1, 0))
        tr = Trainer(fresh(cfg), data, cfg)
        for s in range(1, stage + 1):
            tr.run_stage(s)
        models[mode] = tr.model.state_dict()
    for name, a in models["analytic"].items():
        np.testing.assert_allclose(a, models["autodiff"][name], rtol=0, atol=1e-10, err_msg=name)


def test_training_is_reproducible(data):
    runs = []
    for _ in range(2):
        cfg = small_cfg(stage_iters=(4, 3, 4, 0))
        tr = train(fresh(cfg), data, cfg, stages=(1, 2, 3))
        runs.append((tr.metrics.records, tr.model.fingerprint()))
    assert runs[0] == runs[1]


def test_resume_matches_uninterrupted_run(tmp_path, data):
    cfg = small_cfg(stage_iters=(6, 4, 6, 0))
    full = train(fresh(cfg), data, cfg, stages=(1, 2, 3))

    tr = Trainer(fresh(cfg), data, cfg, checkpoint_dir=str(tmp_path))
    tr.run_stage(1)
    tr.run_stage(2)
    tr.run_stage(3, iters=2)
    tr.save(str(tmp_path / "mid.ckpt"))
    head = list(tr.metrics.records)

    resumed = Trainer.resume(str(tmp_path / "mid.ckpt"), data)
    assert (resumed.stage, resumed.iteration) == (3, 2)
    resumed.run_stage(3)
    assert head + resumed.metrics.records == full.metrics.records
    assert resumed.model.fingerprint() == full.model.fingerprint()


def test_stage_order_is_enforced(data):
    cfg = small_cfg(stage_iters=(1, 1, 1, 0))
    tr = Trainer(fresh(cfg), data, cfg)
    tr.run_stage(2)
    with pytest.raises(ContractError):
        tr.run_stage(1)
    with pytest.raises(ContractError):
        train(fresh(cfg), data, cfg, stages=(2, 1))
    with pytest.raises(ContractError):
        tr.run_stage(5)


def test_stage_checkpoints_written(tmp_path, data):
    cfg = small_cfg(stage_iters=(2, 0, 0, 0))
    tr = Trainer(fresh(cfg), data, cfg, checkpoint_dir=str(tmp_path))
    tr.run_stage(1)
    m = model_from_checkpoint(str(tmp_path / "stage1.ckpt"))
    assert m.fingerprint() == tr.model.fingerprint()
    from rla.checkpoint import load_checkpoint
    ck = load_checkpoint(str(tmp_path / "latest.ckpt"))
    assert (ck.stage, ck.iteration) == (1, 2)


def test_divergence_saves_last_finite_state(tmp_path, data):
    bad = TrainData(data.X_occ, np.full_like(data.X, np.nan), data.labels)
    cfg = small_cfg(stage_iters=(3, 0, 0, 0))
    tr = Trainer(fresh(cfg), bad, cfg, checkpoint_dir=str(tmp_path))
    with T.checks(False):
        with pytest.raises(DivergenceError) as exc:
            tr.run_stage(1)
    assert exc.value.checkpoint == str(tmp_path / "diverged.ckpt")
    assert model_from_checkpoint(exc.value.checkpoint).fingerprint() == fresh(cfg).fingerprint()


# ---------------------------------------------------------------- stage 4


@pytest.fixture(scope="module")
def classifier(split):
    _, X, _, labels = split.arrays()
    return pretrain_classifier(X, labels, 3, seed=0)


def test_stage4_needs_classifier(data):
    cfg = small_cfg(stage_iters=(0, 0, 0, 2))
    with pytest.raises(ContractError):
        Trainer(fresh(cfg), data, cfg).run_stage(4)


def test_stage4_freezes_classifier_and_logs_components(data, classifier):
    cfg = small_cfg(stage_iters=(0, 0, 0, 4))
    before = classifier.fingerprint()
    metrics = MetricsWriter()
    model, disc = stage4_identity_finetune(fresh(cfg), classifier, None, data, cfg,
                                           metrics=metrics)
    assert classifier.fingerprint() == before
    assert disc is not None
    for r in metrics.records:
        assert r["stage"] == 4
        assert r["total"] == r["l_mse"] + r["l_sup"] + r["l_adv_g"]
        assert 0.0 <= r["d_acc"] <= 1.0
        assert np.isfinite(r["l_adv_d"])
    # band wide enough to flag only a collapsed discriminator
    assert 0.05 < np.mean([r["d_acc"] for r in metrics.records]) < 0.95


def test_stage4_resume_keeps_discriminator(tmp_path, data, classifier):
    cfg = small_cfg(stage_iters=(0, 0, 0, 4))
    full = Trainer(fresh(cfg), data, cfg, classifier=classifier)
    full.run_stage(4)

    tr = Trainer(fresh(cfg), data, cfg, classifier=classifier)
    tr.run_stage(4, iters=2)
    tr.save(str(tmp_path / "s4.ckpt"))
    head = list(tr.metrics.records)
    resumed = Trainer.resume(str(tmp_path / "s4.ckpt"), data, classifier=classifier)
    resumed.run_stage(4)
    assert head + resumed.metrics.records == full.metrics.records


def test_classifier_checkpoint_roundtrip(tmp_path, classifier):
    save_classifier(str(tmp_path / "c.ckpt"), classifier)
    back = load_classifier(str(tmp_path / "c.ckpt"))
    assert back.fingerprint() == classifier.fingerprint() and back.trained
    with pytest.raises(ConfigError):
        Trainer.resume(str(tmp_path / "c.ckpt"), None)
