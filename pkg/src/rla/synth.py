"""Procedural faces, occlusion templates and the occluded-pair dataset.

Faces are drawn from a per-identity attribute vector (face ellipse, eyes,
brows, nose, mouth, hairline, low-frequency skin texture). Each render adds a
small sub-pixel shift and an illumination scale derived from a jitter seed.

Occluders come in nine categories. Eye-region and lower-face categories are
anchored to their facial region; the rest land at uniformly random offsets.
All pixel values are quantized to multiples of 1/255 so that 8-bit PGM storage
round-trips exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError

CATEGORIES = ("glasses", "sunglasses", "mask", "hand", "eye-mask",
              "scarf", "phone", "book", "cup")
ANCHORED = {"glasses": "eyes", "sunglasses": "eyes", "eye-mask": "eyes",
            "mask": "lower", "scarf": "lower"}
# face row (fraction of height) each anchored region is centred on
ANCHOR_ROWS = {"eyes": 0.42, "lower": 0.76}
MIN_AREA, MAX_AREA = 0.05, 0.60


def quantize(a):
    return np.round(np.clip(a, 0.0, 1.0) * 255.0) / 255.0


@dataclass
class SyntheticIdentity:
    id: int
    attrs: dict


def make_identity(identity_id, seed=0):
    rng = np.random.default_rng([seed, 7919, int(identity_id)])
    u = rng.uniform
    attrs = {
        "face_w": u(0.30, 0.40),
        "face_h": u(0.40, 0.48),
        "face_y": u(-0.02, 0.04),
        "skin": u(0.50, 0.85),
        "background": u(0.05, 0.35),
        "bg_slope": u(-0.2, 0.2),
        "eye_y": u(0.37, 0.46),
        "eye_dx": u(0.12, 0.20),
        "eye_r": u(0.035, 0.065),
        "eye_ink": u(0.02, 0.25),
        "brow_gap": u(0.05, 0.09),
        "brow_tilt": u(-0.04, 0.04),
        "brow_ink": u(0.05, 0.4),
        "nose_len": u(0.08, 0.16),
        "mouth_y": u(0.66, 0.76),
        "mouth_w": u(0.10, 0.22),
        "mouth_curve": u(-0.05, 0.05),
        "mouth_ink": u(0.05, 0.4),
        "hair_line": u(0.12, 0.30),
        "hair_ink": u(0.02, 0.45),
        "tex_freq": rng.uniform(1.0, 4.0, size=(3, 2)),
        "tex_phase": rng.uniform(0, 2 * np.pi, size=3),
        "tex_amp": u(0.02, 0.06),
    }
    return SyntheticIdentity(int(identity_id), attrs)


def _soft(d, px):
    """Anti-aliased indicator of d < 0, about one pixel wide."""
    return np.clip(0.5 - d / px, 0.0, 1.0)


def render_face(identity, jitter_seed, size=32):
    """Deterministic grayscale face in [0, 1] for (identity, jitter_seed)."""
    a = identity.attrs
    rng = np.random.default_rng([int(jitter_seed), 104729, identity.id])
    dx, dy = rng.uniform(-1.0, 1.0, size=2) / size
    light = rng.uniform(0.9, 1.1)
    px = 1.0 / size
    c = (np.arange(size) + 0.5) / size - 0.5
    v, u = np.meshgrid(c - dy, c - dx, indexing="ij")

    img = a["background"] + a["bg_slope"] * u * 0.5
    fy = v - a["face_y"]
    r = np.sqrt((u / a["face_w"]) ** 2 + (fy / a["face_h"]) ** 2)
    face = _soft((r - 1.0) * min(a["face_w"], a["face_h"]), px)
    f = a["tex_freq"]
    tex = sum(np.cos(2 * np.pi * (f[k, 0] * u + f[k, 1] * v) + a["tex_phase"][k])
              for k in range(3)) * (a["tex_amp"] / 3.0)
    img = img * (1 - face) + (a["skin"] + tex) * face

    hair = face * _soft(v - (a["hair_line"] - 0.5), px)
    img = img * (1 - hair) + a["hair_ink"] * hair

    ey = a["eye_y"] - 0.5
    for side in (-1.0, 1.0):
        ex = side * a["eye_dx"]
        er = np.sqrt(((u - ex) / a["eye_r"]) ** 2 + ((v - ey) / (0.6 * a["eye_r"])) ** 2)
        eye = _soft((er - 1.0) * 0.6 * a["eye_r"], px)
        img = img * (1 - eye) + a["eye_ink"] * eye
        by = ey - a["brow_gap"] + side * a["brow_tilt"] * (u - ex) / a["eye_r"] * 0.1
        brow = (_soft(np.abs(v - by) - 0.018, px)
                * _soft(np.abs(u - ex) - 1.4 * a["eye_r"], px))
        img = img * (1 - 0.8 * brow) + a["brow_ink"] * 0.8 * brow

    nose = (_soft(np.abs(u) - 0.012, px) * _soft(ey + 0.04 - v, px)
            * _soft(v - (ey + 0.04 + a["nose_len"]), px))
    img = img - 0.15 * nose

    my = a["mouth_y"] - 0.5 + a["mouth_curve"] * (u / a["mouth_w"]) ** 2
    mouth = _soft(np.abs(v - my) - 0.018, px) * _soft(np.abs(u) - a["mouth_w"], px)
    img = img * (1 - mouth) + a["mouth_ink"] * mouth

    return quantize(img * light)


@dataclass
class OcclusionTemplate:
    category: str
    alpha: np.ndarray  # bool (h, w)
    texture: np.ndarray  # (h, w) in [0, 1]
    template_id: str
    group: str  # upper | lower | quarter | half

    @property
    def placement(self):
        return "anchored" if self.category in ANCHORED else "random"

    @property
    def anchor(self):
        return ANCHORED.get(self.category)

    @property
    def shape(self):
        return self.alpha.shape


def _ellipse(h, w, cy, cx, ry, rx):
    y, x = np.mgrid[0:h, 0:w] + 0.5
    return ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0


def _rect_mask(h, w):
    return np.ones((h, w), dtype=bool)


def _draw(category, size, rng, big):
    """Return (alpha, texture, group) for one procedurally drawn occluder."""
    s = size
    j = rng.uniform(0.9, 1.1)
    y, x = None, None
    if category in ("glasses", "sunglasses"):
        h, w = max(4, int(round(0.22 * s * j))), int(round(0.78 * s * j))
        rx, ry = w * 0.22, h * 0.48
        left = _ellipse(h, w, h / 2, w * 0.27, ry, rx)
        right = _ellipse(h, w, h / 2, w * 0.73, ry, rx)
        bridge = np.zeros((h, w), dtype=bool)
        bridge[int(h * 0.3):int(h * 0.3) + max(1, h // 5), int(w * 0.45):int(w * 0.55) + 1] = True
        if category == "glasses":
            t = max(1.0, 0.08 * s)
            inner_l = _ellipse(h, w, h / 2, w * 0.27, max(ry - t, 0.5), max(rx - t, 0.5))
            inner_r = _ellipse(h, w, h / 2, w * 0.73, max(ry - t, 0.5), max(rx - t, 0.5))
            alpha = (left & ~inner_l) | (right & ~inner_r) | bridge
            tex = np.full((h, w), rng.uniform(0.0, 0.3))
        else:
            alpha = left | right | bridge
            y, x = np.mgrid[0:h, 0:w]
            tex = rng.uniform(0.0, 0.12) + 0.08 * (x / w)
        group = "upper"
    elif category == "eye-mask":
        h, w = int(round(0.26 * s * j)), int(round(0.86 * s * j))
        alpha = _ellipse(h, w, h / 2, w / 2, h * 0.62, w * 0.52)
        y, x = np.mgrid[0:h, 0:w]
        tex = rng.uniform(0.15, 0.9) + 0.06 * np.sin(x * rng.uniform(0.5, 1.5))
        group = "upper"
    elif category == "mask":
        h, w = int(round(0.36 * s * j)), int(round(0.62 * s * j))
        alpha = _ellipse(h, w, h / 2, w / 2, h * 0.6, w * 0.56)
        y, x = np.mgrid[0:h, 0:w]
        tex = rng.uniform(0.75, 0.97) - 0.08 * ((y % 3) == 0)
        group = "lower"
    elif category == "scarf":
        h, w = int(round(0.32 * s * j)), min(s, int(round(0.95 * s * j)))
        alpha = _rect_mask(h, w)
        y, x = np.mgrid[0:h, 0:w]
        period = rng.integers(3, 6)
        lo, hi = rng.uniform(0.1, 0.5), rng.uniform(0.5, 0.95)
        tex = np.where(((x + y) // period) % 2 == 0, lo, hi)
        group = "lower"
    elif category in ("hand", "book"):
        if big:
            h, w = min(s, int(round(0.95 * s))), int(round(0.50 * s * j))
        else:
            h, w = int(round(0.45 * s * j)), int(round(0.45 * s * j))
        y, x = np.mgrid[0:h, 0:w]
        if category == "hand":
            palm = _ellipse(h, w, h * 0.62, w / 2, h * 0.40, w * 0.48)
            fingers = np.zeros((h, w), dtype=bool)
            fw = max(1, w // 6)
            for k in range(4):
                x0 = int(w * (0.12 + 0.2 * k))
                fingers[int(h * rng.uniform(0.02, 0.15)):int(h * 0.6), x0:x0 + fw] = True
            alpha = palm | fingers
            tex = rng.uniform(0.45, 0.8) + 0.05 * np.cos(y * 0.7)
        else:
            alpha = _rect_mask(h, w)
            tex = np.where((y % 4 == 0) & (x > 1) & (x < w - 2),
                           rng.uniform(0.0, 0.3), rng.uniform(0.3, 1.0))
        group = "half" if big else "quarter"
    elif category == "phone":
        h, w = int(round(0.50 * s * j)), int(round(0.28 * s * j))
        alpha = _rect_mask(h, w)
        tex = np.full((h, w), rng.uniform(0.02, 0.15))
        tex[2:-2, 1:-1] = rng.uniform(0.3, 0.8)
        group = "lower"
    elif category == "cup":
        h, w = int(round(0.40 * s * j)), int(round(0.45 * s * j))
        bw = int(round(w * 0.72))
        alpha = np.zeros((h, w), dtype=bool)
        alpha[:, :bw] = True
        ring = _ellipse(h, w, h / 2, bw, h * 0.25, (w - bw) * 0.95)
        hole = _ellipse(h, w, h / 2, bw, h * 0.12, (w - bw) * 0.45)
        alpha |= ring & ~hole
        y, x = np.mgrid[0:h, 0:w]
        tex = rng.uniform(0.6, 1.0) - 0.1 * (y < 2)
        group = "lower"
    else:
        raise ConfigError(f"unknown occlusion category {category!r}")
    return alpha, quantize(np.broadcast_to(tex, alpha.shape).copy()), group


def group_for(category, template_id):
    """Region group (upper / lower / quarter / half) used for per-row reporting."""
    if ANCHORED.get(category) == "eyes":
        return "upper"
    if category in ("hand", "book"):
        return "half" if int(template_id.rsplit("-", 1)[-1]) % 2 else "quarter"
    return "lower"


def make_template(category, index, size=32, seed=0):
    """Draw template ``index`` of ``category``; areas are kept within 5–60% of the image."""
    if category not in CATEGORIES:
        raise ConfigError(f"unknown occlusion category {category!r}")
    big = category in ("hand", "book") and index % 2 == 1
    for attempt in range(32):
        rng = np.random.default_rng([seed, CATEGORIES.index(category), index, attempt])
        alpha, tex, group = _draw(category, size, rng, big)
        frac = alpha.sum() / (size * size)
        if MIN_AREA <= frac <= MAX_AREA and alpha.shape[0] <= size and alpha.shape[1] <= size:
            return OcclusionTemplate(category, alpha, tex, f"{category}-{index:03d}", group)
    raise ConfigError(f"could not draw a valid {category} template at size {size}")


def make_template_bank(per_category=10, size=32, seed=0):
    return [make_template(c, k, size, seed) for c in CATEGORIES for k in range(per_category)]


def split_templates(bank, split_seed):
    """Halve every category's templates into disjoint (train, test) lists."""
    rng = np.random.default_rng([split_seed, 31337])
    train, test = [], []
    for c in CATEGORIES:
        items = [t for t in bank if t.category == c]
        if not items:
            continue
        if len(items) < 2:
            raise ContractError(f"category {c!r} needs at least 2 templates to split, has 1")
        order = rng.permutation(len(items))
        half = len(items) // 2
        train += [items[k] for k in order[:half]]
        test += [items[k] for k in order[half:]]
    if not train:
        raise ContractError("empty template bank")
    return train, test


@dataclass(eq=False)
class ImagePair:
    X: np.ndarray
    X_occ: np.ndarray
    mask: np.ndarray  # bool
    identity: int
    category: str
    template_id: str
    group: str = ""

    def __eq__(self, other):
        if not isinstance(other, ImagePair):
            return NotImplemented
        return (self.identity == other.identity and self.category == other.category
                and self.template_id == other.template_id
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.X_occ, other.X_occ)
                and np.array_equal(self.mask, other.mask))


def placement_offset(template, size, rng):
    """Top-left corner for a template: anchored categories sit on their region."""
    th, tw = template.shape
    H, W = size
    if th > H or tw > W:
        raise ContractError(f"template {template.template_id} ({th}x{tw}) exceeds image {H}x{W}")
    if template.anchor is not None:
        centre = ANCHOR_ROWS[template.anchor] * H
        top = int(round(centre - th / 2)) + int(rng.integers(-1, 2))
        left = int(round((W - tw) / 2)) + int(rng.integers(-1, 2))
        return min(max(top, 0), H - th), min(max(left, 0), W - tw)
    return int(rng.integers(0, H - th + 1)), int(rng.integers(0, W - tw + 1))


def apply_occlusion(X, template, rng=None, offset=None, identity=-1):
    """Paste ``template`` onto ``X`` through its alpha mask."""
    X = np.asarray(X, dtype=np.float64)
    th, tw = template.shape
    H, W = X.shape
    if th > H or tw > W:
        raise ContractError(f"template {template.template_id} ({th}x{tw}) exceeds image {H}x{W}")
    if offset is None:
        offset = placement_offset(template, (H, W), rng or np.random.default_rng())
    top, left = offset
    if top < 0 or left < 0 or top + th > H or left + tw > W:
        raise ContractError(f"offset {offset} puts template outside the image")
    mask = np.zeros((H, W), dtype=bool)
    mask[top:top + th, left:left + tw] = template.alpha
    tex = np.zeros((H, W))
    tex[top:top + th, left:left + tw] = template.texture
    X_occ = np.where(mask, tex, X)
    return ImagePair(X.copy(), X_occ, mask, int(identity), template.category,
                     template.template_id, template.group)


@dataclass(eq=False)
class Split:
    pairs: list = field(default_factory=list)
    resolution: tuple = (32, 32)

    def __len__(self):
        return len(self.pairs)

    def __eq__(self, other):
        return (isinstance(other, Split) and tuple(self.resolution) == tuple(other.resolution)
                and len(self.pairs) == len(other.pairs)
                and all(a == b for a, b in zip(self.pairs, other.pairs)))

    @property
    def identities(self):
        return sorted({p.identity for p in self.pairs})

    def arrays(self):
        """(X_occ, X, masks, labels) with labels renumbered 0..n_ids-1."""
        lookup = {i: k for k, i in enumerate(self.identities)}
        X_occ = np.stack([p.X_occ for p in self.pairs])
        X = np.stack([p.X for p in self.pairs])
        masks = np.stack([p.mask for p in self.pairs])
        labels = np.array([lookup[p.identity] for p in self.pairs], dtype=np.intp)
        return X_occ, X, masks, labels


@dataclass(eq=False)
class Dataset:
    train: Split
    test: Split

    def __eq__(self, other):
        return isinstance(other, Dataset) and self.train == other.train and self.test == other.test


def _make_split(ids, per_id, templates, split_seed, code, size, face_seed):
    by_cat = {}
    for t in templates:
        by_cat.setdefault(t.category, []).append(t)
    cats = [c for c in CATEGORIES if c in by_cat]
    pairs = []
    for k in range(len(ids) * per_id):
        rng = np.random.default_rng([split_seed, code, k])
        ident = make_identity(ids[k // per_id], face_seed)
        X = render_face(ident, int(rng.integers(2**31)), size)
        cat = cats[int(rng.integers(len(cats)))]
        tmpl = by_cat[cat][int(rng.integers(len(by_cat[cat])))]
        pairs.append(apply_occlusion(X, tmpl, rng, identity=ident.id))
    return Split(pairs, (size, size))


def build_dataset(n_ids, per_id, template_bank, split_seed, size=32, test_fraction=0.5,
                  face_seed=None):
    """Occluded-pair dataset with identity- and template-disjoint train/test splits."""
    if n_ids < 2:
        raise ContractError("need at least two identities to form disjoint splits")
    if per_id < 1:
        raise ContractError("per_id must be >= 1")
    n_test = min(n_ids - 1, max(1, int(round(n_ids * test_fraction))))
    rng = np.random.default_rng([split_seed, 271828])
    ids = rng.permutation(n_ids)
    test_ids, train_ids = sorted(ids[:n_test].tolist()), sorted(ids[n_test:].tolist())
    train_t, test_t = split_templates(template_bank, split_seed)
    face_seed = split_seed if face_seed is None else face_seed
    return Dataset(_make_split(train_ids, per_id, train_t, split_seed, 0, size, face_seed),
                   _make_split(test_ids, per_id, test_t, split_seed, 1, size, face_seed))
