"""Encoder and body-regressor backends.

Real deployments wrap pretrained text/image encoders and an image-to-3D-body
regressor here. The bundled "reference" backend is a deterministic stand-in
that derives unit vectors from content hashes; it exercises the full file
pipeline without model weights and is what the tests run against.
"""

import hashlib

import numpy as np

from .errors import RegressorError

KEYPOINT_JOINTS = 145
KEYPOINT_DIM = KEYPOINT_JOINTS * 3  # (x, y, z) per joint

# documented in the sidecar metadata written next to each keypoint store
JOINT_ORDERING = (
    "145 joints x 3 (x, y, z), flattened row-major: body joints first, then "
    "left hand, right hand, and face landmarks, in the regressor's native order"
)


def _seeded_rng(*parts):
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(part)
        h.update(b"\x00")
    return np.random.default_rng(int.from_bytes(h.digest(), "little"))


def _unit(v):
    n = np.linalg.norm(v)
    return v / n


class ReferenceEncoder:
    """Hash-seeded stand-in for a pretrained text/image encoder pair."""

    name = "reference"

    def __init__(self, dim=1024):
        self.dim = int(dim)

    def encode_text(self, prompt: str):
        rng = _seeded_rng(b"txt", str(self.dim).encode(), prompt.encode("utf-8"))
        return _unit(rng.standard_normal(self.dim)).astype(np.float32)

    def encode_image(self, data: bytes):
        rng = _seeded_rng(b"img", str(self.dim).encode(), data)
        return _unit(rng.standard_normal(self.dim)).astype(np.float32)

    def encode_overlay(self, data: bytes, keypoints):
        # the mesh overlay render depends on both the image and the fit
        rng = _seeded_rng(b"ovl", str(self.dim).encode(), data,
                          np.asarray(keypoints, dtype="<f4").tobytes())
        return _unit(rng.standard_normal(self.dim)).astype(np.float32)


class ReferenceRegressor:
    """Hash-seeded stand-in for an image-to-body-keypoints regressor.

    Fails (like the real regressor does on images without a detectable
    person) on empty inputs; the pipeline turns that into a zero row plus a
    rejects entry.
    """

    name = "reference"

    def keypoints(self, data: bytes):
        if len(data) == 0:
            raise RegressorError("no body detected")
        rng = _seeded_rng(b"kp", data)
        return rng.standard_normal(KEYPOINT_DIM).astype(np.float32)


ENCODERS = {"reference": ReferenceEncoder}
REGRESSORS = {"reference": ReferenceRegressor}


def make_encoder(name, dim):
    if name not in ENCODERS:
        raise ValueError(f"unknown encoder {name!r}; have {sorted(ENCODERS)}")
    return ENCODERS[name](dim=dim)


def make_regressor(name):
    if name not in REGRESSORS:
        raise ValueError(f"unknown regressor {name!r}; have {sorted(REGRESSORS)}")
    return REGRESSORS[name]()
