"""Verification-style evaluation and recovery metrics.

Faces are compared by cosine similarity of the identity classifier's hidden
features. The equal error rate is read off the convex hull of the ROC curve in
(FAR, FRR) space, computed with exact rational arithmetic so that it does not
depend on float rounding in the sweep.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .decoder import recover
from .errors import ContractError, DimensionError
from .synth import CATEGORIES

GROUPS = ("upper", "lower", "quarter", "half")


class UntrainedClassifierWarning(UserWarning):
    pass


def extract_features(classifier, images):
    """Hidden-layer activations, one row per image (a single image gives one row)."""
    if not getattr(classifier, "trained", True):
        warnings.warn("extracting features from an untrained classifier",
                      UntrainedClassifierWarning, stacklevel=2)
    return classifier.features(np.asarray(images, dtype=np.float64)).data


def cosine_similarity(a, b, eps=1e-12):
    """Row-wise cosine similarity; an all-zero row has similarity 0 with anything."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionError(f"feature shapes differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    return np.einsum("ij,ij->i", a, b) / np.maximum(na * nb, eps)


# ---------------------------------------------------------------- EER


def _operating_points(scores, labels):
    """Exact (FAR, FRR) at every distinct threshold, ordered by rising FAR.

    A pair is accepted when its score is >= the threshold; thresholds run from
    above the maximum score down past the minimum.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise DimensionError("scores and labels must be 1-D of equal length")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ContractError("EER needs both positive and negative pairs")
    if not np.all(np.isfinite(s)):
        raise ContractError("scores must be finite")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # cut after each run of equal scores
    cuts = np.flatnonzero(np.diff(s) != 0)
    cuts = np.concatenate([cuts, [len(s) - 1]])
    tp = np.cumsum(y)[cuts]
    fp = np.cumsum(~y)[cuts]
    points = [(Fraction(0), Fraction(1))]
    points += [(Fraction(int(f), n_neg), Fraction(n_pos - int(t), n_pos)) for t, f in zip(tp, fp)]
    return points


def _lower_hull(points):
    """Lower-left convex hull of (FAR, FRR) points sorted by FAR then FRR."""
    pts = sorted(set(points))
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def _diagonal_crossing(a, b):
    """Point where segment a-b meets FAR == FRR, or None."""
    da, db = a[0] - a[1], b[0] - b[1]
    if da == 0:
        return a[0]
    if db == 0:
        return b[0]
    if (da < 0) == (db < 0):
        return None
    w = da / (da - db)
    return a[0] + w * (b[0] - a[0])


def compute_eer_exact(scores, labels):
    """EER as a :class:`fractions.Fraction`."""
    hull = _lower_hull(_operating_points(scores, labels))
    best = None
    for a, b in zip(hull, hull[1:]):
        x = _diagonal_crossing(a, b)
        if x is not None and (best is None or x < best):
            best = x
    if best is None:  # single-point hull cannot happen: (0,1) and (1,0) are always present
        raise ContractError("ROC hull never meets the diagonal")
    return best


def compute_eer(scores, labels=None):
    """Equal error rate of verification scores (higher = more likely same identity).

    ``scores`` is either a sequence of ``(similarity, label)`` tuples or a score
    array with ``labels`` given separately.
    """
    if labels is None:
        pairs = list(scores)
        scores = [p[0] for p in pairs]
        labels = [bool(p[1]) for p in pairs]
    return float(compute_eer_exact(scores, labels))


def pooled_eer(per_category):
    """EER of all categories' ``(scores, labels)`` pooled into one set."""
    s = np.concatenate([np.asarray(v[0], dtype=np.float64) for v in per_category.values()])
    y = np.concatenate([np.asarray(v[1], dtype=bool) for v in per_category.values()])
    return compute_eer(s, y)


# ---------------------------------------------------------------- recovery metrics


def detector_iou(S_det, mask, threshold=0.5):
    """IoU of ``S_det >= threshold`` against a boolean mask; empty vs empty is 1."""
    S = np.asarray(S_det, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if S.shape != m.shape:
        raise DimensionError(f"S_det shape {S.shape} != mask shape {m.shape}")
    pred = S >= threshold
    union = np.count_nonzero(pred | m)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & m) / union


def masked_mse(images, X, masks):
    """Mean over images of the squared error inside each ground-truth mask.

    Images whose mask is empty are skipped; outside the mask an occluded image
    equals the clean one, so this isolates the region that needs recovery.
    """
    images = np.asarray(images, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    per = []
    for a, b, m in zip(images, X, masks):
        if m.any():
            per.append(np.mean((a[m] - b[m]) ** 2))
    return float(np.mean(per)) if per else 0.0


# ---------------------------------------------------------------- pairs


@dataclass
class PairSet:
    """Verification pairs over a split.

    Each pair holds one clean image and one occluded image (indices into the
    split); ``occluded_first`` records which side carries the occlusion.
    """

    clean: np.ndarray
    occluded: np.ndarray
    same: np.ndarray
    occluded_first: np.ndarray

    @property
    def n_positive(self):
        return int(self.same.sum())

    @property
    def n_negative(self):
        return int((~self.same).sum())

    def __len__(self):
        return len(self.same)


def make_pairs(identities, n_pos=300, n_neg=300, seed=0):
    """Draw positive and negative pairs from per-sample identity labels.

    Positives use two distinct samples of one identity; negatives use samples of
    two different identities. Which member is occluded alternates pair by pair.
    """
    ids = np.asarray(identities)
    rng = np.random.default_rng(seed)
    by_id = {}
    for k, i in enumerate(ids.tolist()):
        by_id.setdefault(i, []).append(k)
    multi = [i for i, ks in by_id.items() if len(ks) >= 2]
    if n_pos and not multi:
        raise ContractError("positive pairs need an identity with two or more samples")
    if n_neg and len(by_id) < 2:
        raise ContractError("negative pairs need at least two identities")
    clean, occ, same = [], [], []
    for _ in range(n_pos):
        ks = by_id[multi[int(rng.integers(len(multi)))]]
        a, b = rng.choice(len(ks), 2, replace=False)
        clean.append(ks[a])
        occ.append(ks[b])
        same.append(True)
    for _ in range(n_neg):
        while True:
            a, b = rng.integers(len(ids), size=2)
            if ids[a] != ids[b]:
                break
        clean.append(int(a))
        occ.append(int(b))
        same.append(False)
    n = n_pos + n_neg
    return PairSet(np.array(clean, dtype=np.intp), np.array(occ, dtype=np.intp),
                   np.array(same, dtype=bool), np.arange(n) % 2 == 1)


def pair_scores(features_clean, features_other, pairs):
    """Cosine similarity for every pair; the pair's sides are swapped when
    ``occluded_first`` is set, which cosine similarity ignores but keeps the
    protocol explicit."""
    a = features_clean[pairs.clean]
    b = features_other[pairs.occluded]
    first = pairs.occluded_first[:, None]
    return cosine_similarity(np.where(first, b, a), np.where(first, a, b))


# ---------------------------------------------------------------- report


@dataclass
class EvalReport:
    eer: float
    per_category: dict = field(default_factory=dict)
    masked_mse: float = 0.0
    detector_iou: float = 0.0
    occluded_eer: float = 0.0
    occluded_per_category: dict = field(default_factory=dict)
    baseline_masked_mse: float = 0.0
    per_group: dict = field(default_factory=dict)
    occluded_per_group: dict = field(default_factory=dict)
    n_pairs: int = 0

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text

    def table(self):
        """Aligned text table: one row per category and per region group."""
        rows = [("", "occluded", "recovered")]
        for name in self.per_category:
            rows.append((name, self.occluded_per_category.get(name), self.per_category[name]))
        for name in self.per_group:
            rows.append((f"[{name}]", self.occluded_per_group.get(name), self.per_group[name]))
        rows.append(("all", self.occluded_eer, self.eer))

        def fmt(v):
            return v if isinstance(v, str) else ("-" if v is None else f"{100 * v:.1f}%")

        cells = [[fmt(c) for c in r] for r in rows]
        w0 = max(len(r[0]) for r in cells)
        w = max(len(c) for r in cells for c in r[1:])
        lines = ["EER".ljust(w0) + "  " + "  ".join(c.rjust(w) for c in cells[0][1:])]
        lines += [r[0].ljust(w0) + "  " + "  ".join(c.rjust(w) for c in r[1:]) for r in cells[1:]]
        lines.append(f"masked MSE: recovered {self.masked_mse:.5f}  "
                     f"occluded {self.baseline_masked_mse:.5f}")
        lines.append(f"detector IoU: {self.detector_iou:.3f}")
        return "\n".join(lines)


def _grouped_eer(scores, same, keys, order):
    out = {}
    for k in order:
        sel = keys == k
        if sel.any() and same[sel].any() and (~same[sel]).any():
            out[k] = compute_eer(scores[sel], same[sel])
    return out


def evaluate(model, classifier, split, n_pos=300, n_neg=300, seed=0, threshold=0.5):
    """Recover every occluded image in ``split`` and score verification with it."""
    X_occ, X, masks, labels = split.arrays()
    if X.shape[1:] != (model.config.height, model.config.width):
        raise DimensionError(
            f"split resolution {X.shape[1:]} does not match model "
            f"{model.config.height}x{model.config.width}")
    trace = recover(model, X_occ)
    X_tilde = trace.X_tilde
    iou = float(np.mean([detector_iou(s, m, threshold) for s, m in zip(trace.S_det, masks)]))

    pairs = make_pairs(labels, n_pos, n_neg, seed)
    f_clean = extract_features(classifier, X)
    f_occ = extract_features(classifier, X_occ)
    f_rec = extract_features(classifier, X_tilde)
    s_rec = pair_scores(f_clean, f_rec, pairs)
    s_occ = pair_scores(f_clean, f_occ, pairs)

    cats = np.array([split.pairs[k].category for k in pairs.occluded])
    groups = np.array([split.pairs[k].group for k in pairs.occluded])
    present = [c for c in CATEGORIES if c in set(cats.tolist())]
    return EvalReport(
        eer=compute_eer(s_rec, pairs.same),
        per_category=_grouped_eer(s_rec, pairs.same, cats, present),
        masked_mse=masked_mse(X_tilde, X, masks),
        detector_iou=iou,
        occluded_eer=compute_eer(s_occ, pairs.same),
        occluded_per_category=_grouped_eer(s_occ, pairs.same, cats, present),
        baseline_masked_mse=masked_mse(X_occ, X, masks),
        per_group=_grouped_eer(s_rec, pairs.same, groups, GROUPS),
        occluded_per_group=_grouped_eer(s_occ, pairs.same, groups, GROUPS),
        n_pairs=len(pairs),
    )
