"""Walkthrough: the end-to-end command-line pipeline, including feature
extraction with the companion embextract package.

Everything runs in a temporary directory:
  extract -> consolidate -> split -> pairs -> train -> eval -> score -> rank
The extractor's bundled "reference" backend derives deterministic embeddings
from content hashes, so the demo needs no model weights; with real encoder
and regressor weights the flow is identical.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from bodymetric import cli as bm
from bodymetric.dataset import RealismRecord, write_records
from embextract import cli as ex

root = Path(tempfile.mkdtemp(prefix="bodymetric-demo-"))
print(f"working in {root}")

# 1. fake a directory of generated images plus their prompts
rng = np.random.default_rng(0)
manifest_rows, records = [], []
for pi in range(12):
    prompt = f"a person performing action {pi}"
    for ii in range(6):
        rec_id = f"p{pi:02d}-{ii}"
        image = root / f"{rec_id}.img"
        image.write_bytes(rng.bytes(128))
        manifest_rows.append({"id": rec_id, "prompt": prompt, "image": str(image)})
        good = ii % 2 == 0
        records.append(RealismRecord(
            id=rec_id, prompt=prompt, prompt_id=f"p{pi:02d}",
            source="generated", generator="demo",
            annotations=[9, 9, 8, 9, 9] if good else [2, 2, 2, 2, 2],
            txt_emb=rec_id, img_emb=rec_id, body_kp=rec_id))

manifest = root / "manifest.jsonl"
manifest.write_text("".join(json.dumps(r) + "\n" for r in manifest_rows))
write_records(records, root / "records.jsonl")

# 2. extract features (text, image, keypoints) into EMB1 stores
feats = root / "feats"
assert ex.main(["--manifest", str(manifest), "--outdir", str(feats),
                "--dim", "16"]) == 0

# 3. consolidate scores, split by prompt, build preference pairs
run = lambda *argv: bm.main(list(argv))
assert run("consolidate", "--records", str(root / "records.jsonl"),
           "--out", str(root / "consolidated.jsonl")) == 0
assert run("split", "--records", str(root / "consolidated.jsonl"),
           "--out", str(root / "split.jsonl"), "--seed", "7") == 0
assert run("pairs", "--records", str(root / "split.jsonl"),
           "--out", str(root / "pairs.jsonl"), "--seed", "7") == 0

# 4. train a small scorer and evaluate it
cfg = root / "train.json"
cfg.write_text(json.dumps({"steps": 60, "peak_lr": 3e-3, "warmup": 10,
                           "batch": 16, "eval_interval": 20, "dim": 16,
                           "body_hidden": 16, "merge_hidden": 16}))
assert run("train", "--records", str(root / "split.jsonl"), "--emb", str(feats),
           "--pairs", str(root / "pairs.jsonl"), "--config", str(cfg),
           "--seed", "3", "--out", str(root / "model.bmck")) == 0
assert run("eval", "--checkpoint", str(root / "model.bmck"),
           "--records", str(root / "split.jsonl"), "--emb", str(feats),
           "--pairs", str(root / "pairs.jsonl"), "--out", str(root / "eval")) == 0

# 5. score every image and rank them
assert run("score", "--checkpoint", str(root / "model.bmck"),
           "--records", str(root / "split.jsonl"), "--emb", str(feats),
           "--out", str(root / "scores.json")) == 0
assert run("rank", "--scores", str(root / "scores.json"),
           "--out", str(root / "ranked.json")) == 0

print()
print("artifacts:")
for name in ("consolidated.jsonl", "split.jsonl", "pairs.jsonl", "model.bmck",
             "eval/report.txt", "scores.json", "ranked.json"):
    print(f"  {root / name}")
print()
print((root / "eval" / "report.txt").read_text())
