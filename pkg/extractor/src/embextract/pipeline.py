"""Batch extraction: manifest in, EMB1 stores out.

Per manifest id the pipeline emits a text embedding, an image embedding,
a 435-value body-keypoint row, and optionally a mesh-overlay embedding.
Unreadable images are skipped and listed in outdir/rejects.jsonl; a
regressor failure keeps the image but writes an all-zero keypoint row (the
downstream scorer treats all-zero keypoints as "prior unavailable") plus a
rejects entry. Stores are collected in memory and each written once.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import backends, emb1
from .manifest import read_manifest

KEYPOINT_DIM = backends.KEYPOINT_DIM


@dataclass
class ExtractionResult:
    txt: dict = field(default_factory=dict)
    img: dict = field(default_factory=dict)
    kp: dict = field(default_factory=dict)
    overlay: dict = field(default_factory=dict)
    rejects: list = field(default_factory=list)  # {"id", "reason"}


def _read_image(path):
    with open(path, "rb") as fh:
        return fh.read()


def run(entries, encoder, regressor, want_overlay=False):
    """Extract features for validated manifest entries."""
    result = ExtractionResult()
    for entry in entries:
        try:
            data = _read_image(entry.image)
        except OSError as exc:
            result.rejects.append({"id": entry.id,
                                   "reason": f"unreadable image: {exc.strerror or exc}"})
            continue
        try:
            kp = np.asarray(regressor.keypoints(data), dtype=np.float32)
            if kp.shape != (KEYPOINT_DIM,):
                raise backends.RegressorError(
                    f"regressor returned shape {kp.shape}, want ({KEYPOINT_DIM},)")
        except backends.RegressorError as exc:
            kp = np.zeros(KEYPOINT_DIM, dtype=np.float32)
            result.rejects.append({"id": entry.id, "reason": f"regressor: {exc}"})
        result.txt[entry.id] = encoder.encode_text(entry.prompt)
        result.img[entry.id] = encoder.encode_image(data)
        result.kp[entry.id] = kp
        if want_overlay:
            result.overlay[entry.id] = encoder.encode_overlay(data, kp)
    return result


def write_outputs(result, outdir, encoder, regressor):
    """Write the EMB1 stores, the rejects list, and the keypoint sidecar."""
    os.makedirs(outdir, exist_ok=True)
    paths = {}
    if result.txt:
        paths["txt"] = os.path.join(outdir, "txt.emb1")
        emb1.write_store(result.txt, paths["txt"])
        paths["img"] = os.path.join(outdir, "img.emb1")
        emb1.write_store(result.img, paths["img"])
        paths["kp"] = os.path.join(outdir, "kp.emb1")
        emb1.write_store(result.kp, paths["kp"])
    if result.overlay:
        paths["overlay"] = os.path.join(outdir, "overlay.emb1")
        emb1.write_store(result.overlay, paths["overlay"])

    sidecar = {
        "encoder": encoder.name,
        "dim": encoder.dim,
        "regressor": regressor.name,
        "keypoint_dim": KEYPOINT_DIM,
        "joint_ordering": backends.JOINT_ORDERING,
    }
    with open(os.path.join(outdir, "kp.meta.json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")

    with open(os.path.join(outdir, "rejects.jsonl"), "w", encoding="utf-8") as fh:
        for row in sorted(result.rejects, key=lambda r: r["id"]):
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return paths


def extract(manifest_path, outdir, encoder_name="reference",
            regressor_name="reference", dim=1024, want_overlay=False):
    entries = read_manifest(manifest_path)
    encoder = backends.make_encoder(encoder_name, dim)
    regressor = backends.make_regressor(regressor_name)
    result = run(entries, encoder, regressor, want_overlay=want_overlay)
    paths = write_outputs(result, outdir, encoder, regressor)
    return result, paths
