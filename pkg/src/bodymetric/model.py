"""The body-realism scoring head.

A body-keypoint encoder projects the 435-value 3D keypoint vector into the
embedding space, a merge MLP fuses it with the (frozen, precomputed) image
embedding, and the score is the temperature-scaled cosine between the text
embedding and the merged feature. Pairwise probabilities come from a stable
two-way softmax over the scores. The pixel and latent variants used in the
ablation studies are provided alongside the keypoint path.
"""

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import DegenerateEmbeddingError, ShapeError
from .numerics import MlpParams, MlpSpec, init_mlp_params, mlp_forward
from .util import stage_rng

BODY_KEYPOINT_DIM = 435  # 145 joints x 3 coordinates
DEFAULT_DIM = 1024
DEFAULT_BODY_HIDDEN = 512
DEFAULT_MERGE_HIDDEN = 1024
DEFAULT_TAU = 10.0


@dataclass
class ScorerParams:
    """All trainable state of the scoring head.

    Temperature is held as a length-1 array so the optimizer can update it
    through the same path as the MLP weights.
    """

    dim: int
    body_spec: MlpSpec
    body_mlp: MlpParams
    merge_spec: MlpSpec
    merge_mlp: MlpParams
    temperature: np.ndarray  # shape (1,), > 0
    normalize: bool = True

    @property
    def tau(self) -> float:
        return float(self.temperature[0])

    def trainable_arrays(self):
        return self.body_mlp.arrays() + self.merge_mlp.arrays() + [self.temperature]

    def copy(self):
        return ScorerParams(
            dim=self.dim,
            body_spec=self.body_spec,
            body_mlp=self.body_mlp.copy(),
            merge_spec=self.merge_spec,
            merge_mlp=self.merge_mlp.copy(),
            temperature=self.temperature.copy(),
            normalize=self.normalize,
        )


@dataclass(frozen=True)
class ScoreResult:
    cosine: float
    logit: float


def init_scorer_params(
    seed: int,
    dim: int = DEFAULT_DIM,
    body_hidden: int = DEFAULT_BODY_HIDDEN,
    merge_hidden: int = DEFAULT_MERGE_HIDDEN,
    tau_init: float = DEFAULT_TAU,
    normalize: bool = True,
    activation: str = "gelu",
) -> ScorerParams:
    body_spec = MlpSpec((BODY_KEYPOINT_DIM, body_hidden, dim), activation)
    merge_spec = MlpSpec((2 * dim, merge_hidden, dim), activation)
    rng = stage_rng(seed, "init")
    return ScorerParams(
        dim=dim,
        body_spec=body_spec,
        body_mlp=init_mlp_params(body_spec, rng),
        merge_spec=merge_spec,
        merge_mlp=init_mlp_params(merge_spec, rng),
        temperature=np.array([float(tau_init)]),
        normalize=normalize,
    )


def _as_vector(v, dim, what):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (dim,):
        raise ShapeError(f"{what}: length {v.shape}, expected ({dim},)")
    return v


def unit(v):
    """L2-normalize; zero-norm input is a degenerate embedding."""
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise DegenerateEmbeddingError("zero-norm embedding cannot be normalized")
    return v / norm


def encode_body(params: ScorerParams, keypoints) -> np.ndarray:
    """Project a 435-value keypoint vector into the embedding space."""
    kp = _as_vector(keypoints, BODY_KEYPOINT_DIM, "body keypoints")
    out, _ = mlp_forward(params.body_spec, params.body_mlp, kp)
    return out


def merge_features(params: ScorerParams, img, body) -> np.ndarray:
    """Fuse image and body embeddings: merge_mlp(concat(img, body))."""
    img = _as_vector(img, params.dim, "image embedding")
    body = _as_vector(body, params.dim, "body embedding")
    out, _ = mlp_forward(params.merge_spec, params.merge_mlp, np.concatenate([img, body]))
    return out


def score(params: ScorerParams, txt, merged) -> ScoreResult:
    """Temperature-scaled cosine between text and merged features.

    With normalization disabled (sensitivity studies) the ``cosine`` field
    holds the raw inner product instead.
    """
    txt = _as_vector(txt, params.dim, "text embedding")
    merged = _as_vector(merged, params.dim, "merged embedding")
    if params.normalize:
        c = float(unit(txt) @ unit(merged))
    else:
        c = float(txt @ merged)
    return ScoreResult(cosine=c, logit=params.tau * c)


def pair_probabilities(logit_1: float, logit_2: float) -> np.ndarray:
    """Two-way softmax with max-subtraction; exact at extreme logits."""
    logits = np.array([logit_1, logit_2], dtype=np.float64)
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def score_keypoints(params: ScorerParams, txt, img, keypoints) -> ScoreResult:
    """Full keypoint-prior path: encode body, merge with image, score."""
    return score(params, txt, merge_features(params, img, encode_body(params, keypoints)))


def score_pixel_variant(params: ScorerParams, txt, img_overlay, img) -> ScoreResult:
    """Ablation path that swaps the body embedding for a mesh-overlay image embedding."""
    return score(params, txt, merge_features(params, img, img_overlay))


def score_latent_variant(params: ScorerParams, txt, img) -> ScoreResult:
    """Ablation path that scores text against the raw image embedding."""
    return score(params, txt, img)
