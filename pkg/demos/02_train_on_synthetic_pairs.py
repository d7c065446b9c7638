"""Walkthrough: training the scorer on synthetic preference pairs.

We plant a single direction in the 435-value body-keypoint vector that fully
determines realism, keep the text/image embeddings random, and check that the
keypoint-conditioned scorer discovers the signal while a keypoint-free
baseline cannot. This is the miniature version of the main separability
experiment in the tests.
"""

import numpy as np

from bodymetric.dataset import (
    RealismRecord,
    build_pairs,
    consolidate_record,
    split_dataset,
)
from bodymetric.evaluation import evaluate_pairs
from bodymetric.model import BODY_KEYPOINT_DIM
from bodymetric.training import FeatureSet, TrainConfig, train

DIM = 16
rng = np.random.default_rng(1)
unit = lambda v: v / np.linalg.norm(v)

planted = unit(rng.standard_normal(BODY_KEYPOINT_DIM))
t0 = unit(rng.standard_normal(DIM))

records, txt, img, kp = [], {}, {}, {}
for pi in range(120):
    prompt_id = f"p{pi:03d}"
    txt[prompt_id] = unit(t0 + 0.1 * rng.standard_normal(DIM))
    for ii in range(8):
        rec_id = f"{prompt_id}-{ii}"
        good = ii % 2 == 0
        kp[rec_id] = (1.0 if good else -1.0) * planted \
            + 0.05 * rng.standard_normal(BODY_KEYPOINT_DIM)
        img[rec_id] = unit(rng.standard_normal(DIM))
        records.append(consolidate_record(RealismRecord(
            id=rec_id, prompt=f"pose {pi}", prompt_id=prompt_id,
            source="generated", generator="demo",
            annotations=[9, 9, 8, 9, 9] if good else [2, 2, 2, 2, 2],
            txt_emb=prompt_id, img_emb=rec_id, body_kp=rec_id)))

features = FeatureSet(txt=txt, img=img, kp=kp)
records = split_dataset(records, (0.8, 0.1, 0.1), seed=7)
pairs = build_pairs(records, seed=3)
by_split = {r.id: r.split for r in records}
buckets = {"train": [], "val": [], "test": []}
for p in pairs:
    buckets[by_split[p.id_1]].append(p)
print(f"{len(records)} records -> {len(pairs)} pairs "
      f"({ {k: len(v) for k, v in buckets.items()} })")

records_by_id = {r.id: r for r in records}
for prior in ("keypoints", "none"):
    cfg = TrainConfig(steps=300, peak_lr=3e-3, warmup=30, batch=32,
                      eval_interval=50, seed=3, dim=DIM,
                      body_hidden=32, merge_hidden=32, prior=prior)
    ckpt = train(cfg, records, buckets["train"], buckets["val"], features)
    report = evaluate_pairs(ckpt.params, records_by_id, buckets["val"],
                            buckets["test"], features, prior)
    # checkpoint selection scores validation pairs at t=0, where ties can
    # only be hit by exact probability equality; the swept threshold is what
    # the reported test accuracy uses
    print(f"prior={prior:<9} best step {ckpt.step:>3} "
          f"val acc(t=0) {ckpt.val_accuracy:.3f}  test acc {report.accuracy:.3f} "
          f"(tie threshold t={report.t:.2f})")

print()
print("The keypoint prior recovers the planted geometry; without it the")
print("scorer has nothing but noise to fit and stays near chance.")
