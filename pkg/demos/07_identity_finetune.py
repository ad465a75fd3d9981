"""
Identity-aware fine-tuning
==========================

The last stage keeps the pixel loss and adds two terms computed on the blended
output: the negative log-likelihood of the true identity under a frozen
classifier, and a generator loss against a discriminator that is updated on
every iteration.
"""

import numpy as np

from rla.convnet import pretrain_classifier
from rla.model import RlaConfig, RlaModel
from rla.synth import build_dataset, make_template_bank
from rla.training import TrainConfig, TrainData, Trainer

ds = build_dataset(8, 6, make_template_bank(2, 32, 0), 2)
data = TrainData.from_split(ds.train)
_, X, _, labels = ds.train.arrays()
clf = pretrain_classifier(X, labels, 5, seed=0)

cfg = TrainConfig(model=RlaConfig(hidden=16, steps=4), batch=8, seed=0,
                  stage_iters=(100, 50, 50, 20))
trainer = Trainer(RlaModel.init(cfg.model, seed=0), data, cfg, classifier=clf)
before = clf.fingerprint()
for stage in (1, 2, 3, 4):
    trainer.run_stage(stage)

for r in trainer.metrics.records[-5:]:
    print({k: (round(v, 4) if isinstance(v, float) else v) for k, v in r.items()})
print("classifier unchanged:", clf.fingerprint() == before)
print("discriminator accuracy over stage 4:",
      np.mean([r["d_acc"] for r in trainer.metrics.records if r["stage"] == 4]).round(3))
