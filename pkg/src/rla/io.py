"""On-disk formats: 8-bit binary PGM images and JSON dataset manifests."""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image

from .errors import ConfigError
from .synth import Dataset, ImagePair, Split, group_for

MANIFEST_VERSION = 1


def write_pgm(path, image):
    """Write a [0, 1] image as binary PGM (P5, maxval 255)."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 2:
        raise ConfigError(f"PGM needs a 2-D image, got shape {a.shape}")
    if a.dtype == bool:
        a = a.astype(np.float64)
    Image.fromarray(np.round(np.clip(a, 0, 1) * 255).astype(np.uint8), mode="L").save(
        path, format="PPM")


def read_pgm(path):
    """Read an 8-bit grayscale PGM into a float array in [0, 1]."""
    with Image.open(path) as im:
        if im.mode != "L":
            raise ConfigError(f"{path}: expected 8-bit grayscale PGM, got mode {im.mode}")
        return np.asarray(im, dtype=np.float64) / 255.0


def write_mask(path, mask):
    write_pgm(path, np.asarray(mask, dtype=np.float64))


def read_mask(path):
    return read_pgm(path) >= 0.5


def save_split(split, directory):
    """Write images plus ``manifest.json`` into ``directory``; returns the manifest path."""
    for sub in ("clean", "occluded", "mask"):
        os.makedirs(os.path.join(directory, sub), exist_ok=True)
    entries = []
    for k, p in enumerate(split.pairs):
        name = f"{k:05d}.pgm"
        rel = {sub: os.path.join(sub, name) for sub in ("clean", "occluded", "mask")}
        write_pgm(os.path.join(directory, rel["clean"]), p.X)
        write_pgm(os.path.join(directory, rel["occluded"]), p.X_occ)
        write_mask(os.path.join(directory, rel["mask"]), p.mask)
        entries.append({
            "clean": rel["clean"],
            "occluded": rel["occluded"],
            "mask": rel["mask"],
            "identity": int(p.identity),
            "category": p.category,
            "template_id": p.template_id,
        })
    manifest = {"version": MANIFEST_VERSION, "resolution": list(split.resolution),
                "entries": entries}
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return path


def load_manifest(path):
    """Load a split from its manifest; image paths are relative to the manifest."""
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("version") != MANIFEST_VERSION:
        raise ConfigError(f"{path}: unsupported manifest version {manifest.get('version')}")
    base = os.path.dirname(os.path.abspath(path))
    res = tuple(manifest["resolution"])
    pairs = []
    for e in manifest["entries"]:
        X = read_pgm(os.path.join(base, e["clean"]))
        X_occ = read_pgm(os.path.join(base, e["occluded"]))
        mask = read_mask(os.path.join(base, e["mask"]))
        if X.shape != res or X_occ.shape != res or mask.shape != res:
            raise ConfigError(f"{path}: entry {e['clean']} does not match resolution {res}")
        pairs.append(ImagePair(X, X_occ, mask, int(e["identity"]), e["category"],
                               e["template_id"],
                               group_for(e["category"], e["template_id"])))
    return Split(pairs, res)


def save_dataset(dataset, directory):
    return (save_split(dataset.train, os.path.join(directory, "train")),
            save_split(dataset.test, os.path.join(directory, "test")))


def load_dataset(directory):
    return Dataset(load_manifest(os.path.join(directory, "train", "manifest.json")),
                   load_manifest(os.path.join(directory, "test", "manifest.json")))
