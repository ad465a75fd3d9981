"""
Face verification and equal error rate
======================================

Pairs hold one clean face and one occluded (or recovered) face. Faces are
compared by cosine similarity of classifier features and the EER summarizes
how well similarity separates same-identity pairs from the rest.
"""

import numpy as np

from rla.convnet import pretrain_classifier
from rla.evaluation import compute_eer, compute_eer_exact, evaluate, make_pairs
from rla.model import RlaConfig, RlaModel
from rla.synth import build_dataset, make_template_bank

# the EER on hand-made score sets
print("separated:", compute_eer([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]))
print("identical:", compute_eer([0.3, 0.7, 0.3, 0.7], [1, 1, 0, 0]))
print("one error per side:", compute_eer([(0.9, 1), (0.4, 1), (0.6, 0), (0.1, 0)]))
print("exact value:", compute_eer_exact([0.2, 0.5, 0.5, 0.9, 0.1], [1, 0, 1, 1, 0]))

ds = build_dataset(12, 6, make_template_bank(2, 32, 0), 1)
pairs = make_pairs(ds.test.arrays()[3], n_pos=40, n_neg=40, seed=0)
print(f"{pairs.n_positive} positive and {pairs.n_negative} negative pairs")

_, X, _, labels = ds.train.arrays()
clf = pretrain_classifier(X, labels, 10, seed=0)
print("classifier train accuracy", clf.accuracy(X, labels))

# an untrained recovery model, just to show the report layout
model = RlaModel.init(RlaConfig(hidden=8, steps=2), seed=0)
report = evaluate(model, clf, ds.test, 60, 60, seed=0)
print(report.table())
