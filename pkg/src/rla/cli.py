"""Command-line entry point: ``rla synth|train|recover|eval``.

Every subcommand resolves its settings as built-in defaults, overlaid by an
optional ``--config`` JSON file, overlaid by flags given on the command line.
The effective settings are written to ``run_config.json`` in the output
directory; passing that file back through ``--config`` replays the run.

Exit codes: 0 success, 2 contract/config error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import shutil
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .convnet import pretrain_classifier
from .decoder import recover
from .errors import ConfigError, ContractError, DivergenceError, RlaError
from .evaluation import evaluate
from .io import load_dataset, load_manifest, read_pgm, save_dataset, write_pgm
from .model import RlaConfig, RlaModel
from .synth import build_dataset, make_template_bank
from .training import (MetricsWriter, TrainConfig, TrainData, Trainer, load_classifier,
                       model_from_checkpoint, save_classifier)

log = logging.getLogger("rla")

DEFAULTS = {
    "synth": {"ids": 20, "per_id": 10, "size": 32, "templates_per_category": 10,
              "test_fraction": 0.5, "seed": 0},
    "train": {"data": None, "stages": "1,2,3", "iters": None, "lr": 0.05, "batch": 16,
              "hidden": 64, "decoder_steps": 8, "grid": "2x2", "layers": 2,
              "stage_iters": [2000, 1000, 2000, 1000], "resume": None, "classifier": None,
              "pretrain_classifier": None, "classifier_lr": 0.05, "seed": 0,
              "grad_mode": "analytic", "checkpoint_every": 0},
    "recover": {"model": None, "input": None, "dump_steps": False, "seed": 0},
    "eval": {"model": None, "classifier": None, "data": None, "split": "test",
             "pairs": 300, "threshold": 0.5, "seed": 0},
}


def _parser():
    p = argparse.ArgumentParser(prog="rla", description="Occlusion recovery toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with default values for any flag")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--force", action="store_true", default=None,
                        help="allow writing into a non-empty output directory")
        return sp

    s = common(sub.add_parser("synth", help="generate an occluded face dataset"))
    s.add_argument("--ids", type=int, help="total identities (split between train and test)")
    s.add_argument("--per-id", type=int, help="images per identity")
    s.add_argument("--size", type=int, help="image side length")
    s.add_argument("--templates-per-category", type=int)
    s.add_argument("--test-fraction", type=float)

    t = common(sub.add_parser("train", help="run training stages"))
    t.add_argument("--data", help="dataset directory written by synth")
    t.add_argument("--stages", help="comma list from 1,2,3,4 in increasing order")
    t.add_argument("--iters", type=int, help="iterations for every listed stage")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--decoder-steps", type=int)
    t.add_argument("--grid", help="patch grid MxN")
    t.add_argument("--layers", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--classifier", help="identity classifier checkpoint (stage 4)")
    t.add_argument("--pretrain-classifier", type=int, metavar="EPOCHS",
                   help="train a classifier on the clean training faces first")
    t.add_argument("--classifier-lr", type=float)
    t.add_argument("--grad-mode", choices=("analytic", "autodiff"))
    t.add_argument("--checkpoint-every", type=int)

    r = common(sub.add_parser("recover", help="recover occluded images"))
    r.add_argument("--model", help="model checkpoint")
    r.add_argument("--input", help="PGM file, directory of PGMs, or manifest.json")
    r.add_argument("--dump-steps", action="store_true", default=None,
                   help="also write every decoder step's image and detection map")

    e = common(sub.add_parser("eval", help="verification EER and recovery metrics"))
    e.add_argument("--model", help="model checkpoint")
    e.add_argument("--classifier", help="identity classifier checkpoint")
    e.add_argument("--data", help="dataset directory or manifest.json")
    e.add_argument("--split", choices=("train", "test"))
    e.add_argument("--pairs", type=int, help="positive pairs (and as many negatives)")
    e.add_argument("--threshold", type=float, help="detector threshold for IoU")
    return p


def resolve(args):
    """Merge defaults, config file and explicit flags into one settings dict."""
    settings = dict(DEFAULTS[args.command])
    settings.update({"out": None, "force": False})
    if args.config:
        try:
            with open(args.config) as f:
                overlay = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        overlay.pop("command", None)
        unknown = set(overlay) - set(settings)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        settings.update(overlay)
    for k, v in vars(args).items():
        if k in settings and v is not None:
            settings[k] = v
    if not settings["out"]:
        raise ConfigError("--out is required")
    return settings


def _prepare_out(path, force, allow_existing=False):
    if os.path.isdir(path) and os.listdir(path) and not (force or allow_existing):
        raise ContractError(f"output directory {path} is not empty (use --force)")
    os.makedirs(path, exist_ok=True)


def _echo(settings, command):
    path = os.path.join(settings["out"], "run_config.json")
    with open(path, "w") as f:
        json.dump({"command": command, **settings}, f, indent=1, sort_keys=True)


def _require_file(path, what):
    if not path:
        raise ContractError(f"{what} is required")
    if not os.path.isfile(path):
        raise ContractError(f"{what} {path} does not exist")


# ---------------------------------------------------------------- commands


def cmd_synth(s):
    out = s["out"]
    if s["force"] and os.path.isdir(out):
        for sub in ("train", "test"):
            shutil.rmtree(os.path.join(out, sub), ignore_errors=True)
    _prepare_out(out, s["force"])
    bank = make_template_bank(s["templates_per_category"], s["size"], s["seed"])
    ds = build_dataset(s["ids"], s["per_id"], bank, s["seed"], size=s["size"],
                       test_fraction=s["test_fraction"])
    save_dataset(ds, out)
    _echo(s, "synth")
    print(f"wrote {len(ds.train)} train and {len(ds.test)} test pairs to {out}")
    return ds


def _parse_grid(text):
    try:
        m, n = (int(v) for v in str(text).lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"--grid must look like MxN, got {text!r}") from exc
    return m, n


def _parse_stages(text):
    try:
        stages = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--stages must be a comma list, got {text!r}") from exc
    if not stages or any(v not in (1, 2, 3, 4) for v in stages):
        raise ConfigError(f"stages must come from 1,2,3,4, got {text!r}")
    if stages != sorted(set(stages)):
        raise ContractError(f"stages must be in increasing order, got {text!r}")
    return stages


def _train_config(s, resolution):
    budgets = list(s["stage_iters"])
    stages = _parse_stages(s["stages"])
    if s["iters"] is not None:
        for st in stages:
            budgets[st - 1] = s["iters"]
    model_cfg = RlaConfig(height=resolution[0], width=resolution[1], grid=_parse_grid(s["grid"]),
                          hidden=s["hidden"], layers=s["layers"], steps=s["decoder_steps"])
    return stages, TrainConfig(model=model_cfg, lr=s["lr"], batch=s["batch"],
                               stage_iters=tuple(budgets), seed=s["seed"],
                               grad_mode=s["grad_mode"],
                               checkpoint_every=s["checkpoint_every"])


def _truncate_metrics(path, stage, iteration):
    """Drop records logged after the checkpoint being resumed from."""
    if not os.path.exists(path):
        return
    keep = []
    with open(path) as f:
        for line in f:
            r = json.loads(line)
            if (r["stage"], r["iter"]) <= (stage, iteration):
                keep.append(line)
    with open(path, "w") as f:
        f.writelines(keep)


def cmd_train(s):
    if not s["data"]:
        raise ContractError("--data is required")
    out = s["out"]
    _prepare_out(out, s["force"], allow_existing=bool(s["resume"]))
    ds = load_dataset(s["data"])
    data = TrainData.from_split(ds.train)
    stages, cfg = _train_config(s, ds.train.resolution)

    classifier = None
    if s["classifier"]:
        _require_file(s["classifier"], "classifier checkpoint")
        classifier = load_classifier(s["classifier"])
    elif s["pretrain_classifier"] is not None:
        _, X, _, labels = ds.train.arrays()
        classifier = pretrain_classifier(X, labels, s["pretrain_classifier"],
                                         lr=s["classifier_lr"], batch=cfg.batch, seed=s["seed"])
        save_classifier(os.path.join(out, "classifier.ckpt"), classifier)
        print(f"classifier train accuracy {classifier.accuracy(X, labels):.3f}")
    if 4 in stages and classifier is None:
        raise ContractError("stage 4 needs --classifier or --pretrain-classifier")

    metrics_path = os.path.join(out, "metrics.jsonl")
    if s["resume"]:
        _require_file(s["resume"], "resume checkpoint")
        ckpt = load_checkpoint(s["resume"])
        _truncate_metrics(metrics_path, ckpt.stage, ckpt.iteration)
        trainer = Trainer.resume(s["resume"], data, cfg, metrics=MetricsWriter(metrics_path),
                                 checkpoint_dir=out, classifier=classifier)
        if trainer.model.config != cfg.model:
            raise ConfigError("resume checkpoint was trained with a different model config")
    else:
        if os.path.exists(metrics_path):
            os.remove(metrics_path)
        model = RlaModel.init(cfg.model, seed=cfg.seed)
        trainer = Trainer(model, data, cfg, metrics=MetricsWriter(metrics_path),
                          checkpoint_dir=out, classifier=classifier)
    _echo(s, "train")
    try:
        for st in stages:
            if st < trainer.stage:
                continue
            trainer.run_stage(st)
            last = trainer.metrics.records[-1] if trainer.metrics.records else {}
            print(f"stage {st}: {trainer.iteration} iterations"
                  + (f", last loss {last.get('l_mse', float('nan')):.5f}" if last else ""))
    finally:
        trainer.metrics.close()
    return trainer


def _recover_inputs(path):
    if path and path.endswith(".json"):
        split = load_manifest(path)
        names = [f"{k:05d}" for k in range(len(split))]
        return names, np.stack([p.X_occ for p in split.pairs])
    if path and os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.pgm")))
    elif path and os.path.isfile(path):
        files = [path]
    else:
        raise ContractError(f"input {path} does not exist")
    if not files:
        raise ContractError(f"no .pgm images in {path}")
    images = [read_pgm(f) for f in files]
    if len({im.shape for im in images}) != 1:
        raise ConfigError("input images have different resolutions")
    return [os.path.splitext(os.path.basename(f))[0] for f in files], np.stack(images)


def cmd_recover(s):
    _require_file(s["model"], "model checkpoint")
    model = model_from_checkpoint(s["model"])
    names, X_occ = _recover_inputs(s["input"])
    cfg = model.config
    if X_occ.shape[1:] != (cfg.height, cfg.width):
        raise ConfigError(f"input resolution {X_occ.shape[1:]} does not match the "
                          f"checkpoint's {cfg.height}x{cfg.width}")
    _prepare_out(s["out"], s["force"])
    trace = recover(model, X_occ)
    steps = trace.step_images() if s["dump_steps"] else None
    for k, name in enumerate(names):
        write_pgm(os.path.join(s["out"], f"{name}.pgm"), trace.X_tilde[k])
        if steps is not None:
            d = os.path.join(s["out"], name)
            os.makedirs(d, exist_ok=True)
            for t, (X_t, S_t) in enumerate(steps, start=1):
                write_pgm(os.path.join(d, f"step{t}_rec.pgm"), X_t[k])
                write_pgm(os.path.join(d, f"step{t}_det.pgm"), S_t[k])
    _echo(s, "recover")
    print(f"recovered {len(names)} images into {s['out']}")
    return trace


def cmd_eval(s):
    _require_file(s["model"], "model checkpoint")
    _require_file(s["classifier"], "classifier checkpoint")
    model = model_from_checkpoint(s["model"])
    classifier = load_classifier(s["classifier"])
    if s["data"] and s["data"].endswith(".json"):
        split = load_manifest(s["data"])
    elif s["data"] and os.path.isdir(s["data"]):
        split = load_manifest(os.path.join(s["data"], s["split"], "manifest.json"))
    else:
        raise ContractError(f"dataset {s['data']} does not exist")
    _prepare_out(s["out"], s["force"])
    report = evaluate(model, classifier, split, s["pairs"], s["pairs"], seed=s["seed"],
                      threshold=s["threshold"])
    report.to_json(os.path.join(s["out"], "report.json"))
    _echo(s, "eval")
    print(report.table())
    return report


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "recover": cmd_recover, "eval": cmd_eval}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve(args)
        COMMANDS[args.command](settings)
    except DivergenceError as exc:
        print(f"rla: diverged: {exc}", file=sys.stderr)
        if exc.checkpoint:
            print(f"rla: last finite state saved to {exc.checkpoint}", file=sys.stderr)
        return 3
    except (RlaError, ValueError, OSError) as exc:
        print(f"rla: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
