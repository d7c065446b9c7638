"""Training loop for the scoring head over frozen text/image embeddings.

Supports the main pairwise preference objective (with prompt-frequency
weighting inside each batch) plus the ablation objectives: regression on the
consolidated score, the text-modality reformulation, and the latent-cosine
auxiliary loss. Only the body encoder, merge head, regression head and
temperature are trained; the text/image encoder outputs arrive precomputed.
"""

import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import evaluation, model, numerics
from .errors import DomainError, FormatError, NumericError
from .model import BODY_KEYPOINT_DIM, ScorerParams
from .numerics import (
    LrSchedule,
    MlpParams,
    MlpSpec,
    OptimState,
    adamw_step,
    init_mlp_params,
    kl_preference_loss,
    lr_at_step,
    mlp_backward,
    mlp_forward,
)
from .util import atomic_write_bytes, canonical_json, stage_rng

BMCK_MAGIC = b"BMCK"
BMCK_VERSION = 1

OBJECTIVES = ("preference", "regression", "text_variant")
PRIORS = ("keypoints", "pixel", "latent", "none")

TXT_REALISTIC_SUFFIX = "::realistic"
TXT_UNREALISTIC_SUFFIX = "::unrealistic"


@dataclass
class TrainConfig:
    steps: int = 4000
    peak_lr: float = 3e-6
    warmup: int = 500
    batch: int = 64
    eval_interval: int = 100
    seed: int = 0
    objective: str = "preference"
    prior: str = "keypoints"
    latent_weight: float = 1.0
    swap_text_preference: bool = False
    # scoring-head hyperparameters
    dim: int = model.DEFAULT_DIM
    body_hidden: int = model.DEFAULT_BODY_HIDDEN
    merge_hidden: int = model.DEFAULT_MERGE_HIDDEN
    reg_hidden: int = 256
    tau_init: float = model.DEFAULT_TAU
    normalize: bool = True
    activation: str = "gelu"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise DomainError(f"unknown objective {self.objective!r}")
        if self.prior not in PRIORS:
            raise DomainError(f"unknown prior {self.prior!r}")
        if self.steps < 0:
            raise DomainError("steps must be >= 0")
        if self.steps > 0 and self.warmup >= self.steps:
            raise DomainError("warmup must be < steps")
        if self.objective != "regression" and self.batch < 2:
            raise DomainError("batch must be >= 2 for preference objectives")
        if self.latent_weight < 0:
            raise DomainError("latent_weight must be >= 0")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise FormatError(f"unknown TrainConfig keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class FeatureSet:
    """Precomputed embedding tables keyed by the ids in record feature refs."""

    txt: dict
    img: dict
    kp: dict | None = None
    overlay: dict | None = None


@dataclass
class RegressionHead:
    """Scalar score head F used by the regression ablation objective."""

    spec: MlpSpec
    params: MlpParams


def init_regression_head(seed: int, dim: int, hidden: int = 256,
                         activation: str = "gelu") -> RegressionHead:
    spec = MlpSpec((dim, hidden, 1), activation)
    return RegressionHead(spec, init_mlp_params(spec, stage_rng(seed, "reg-init")))


@dataclass
class Checkpoint:
    params: ScorerParams
    config: dict
    step: int
    val_accuracy: float
    reg_head: RegressionHead | None = None
    history: list = field(default_factory=list)  # (step, train_loss); not serialized


def batch_weights(prompt_ids):
    """Inverse in-batch prompt frequency weights."""
    if len(prompt_ids) == 0:
        raise DomainError("batch_weights needs a non-empty batch")
    counts = {}
    for pid in prompt_ids:
        counts[pid] = counts.get(pid, 0) + 1
    return np.array([1.0 / counts[pid] for pid in prompt_ids])


def make_text_variant(prompt: str, consolidated: float, swap: bool = False):
    """Two realism-suffixed prompts plus their preference distribution.

    The mapping follows the printed rule (mass on the "realistic" prompt when
    the score is low); ``swap`` inverts it for sensitivity studies.
    """
    x1 = prompt + ", realistic body"
    x2 = prompt + ", unrealistic body"
    if consolidated < 3:
        p = (1.0, 0.0)
    elif consolidated > 7:
        p = (0.0, 1.0)
    else:
        p = (0.5, 0.5)
    if swap and p != (0.5, 0.5):
        p = (p[1], p[0])
    return x1, x2, p


def regression_loss(reg: RegressionHead, img_emb, r: float):
    """Squared error of the scalar head against the consolidated score."""
    out, tape = mlp_forward(reg.spec, reg.params, img_emb)
    diff = float(out[0]) - float(r)
    grads, _ = mlp_backward(tape, np.array([2.0 * diff]))
    return diff * diff, grads


def latent_cosine_loss(img_emb, body_emb):
    """1 - cos(img, body) plus the gradient with respect to the body embedding."""
    img_u = model.unit(np.asarray(img_emb, dtype=np.float64))
    body = np.asarray(body_emb, dtype=np.float64)
    body_norm = float(np.linalg.norm(body))
    if body_norm < 1e-12:
        raise model.DegenerateEmbeddingError("zero-norm body embedding")
    body_u = body / body_norm
    c = float(img_u @ body_u)
    grad_body = -(img_u - c * body_u) / body_norm
    return 1.0 - c, grad_body


# ---------------------------------------------------------------------------
# Forward/backward for one training example


def _cosine_with_grad(txt_u, m, normalize):
    """Cosine (or raw dot) of fixed unit text vs merged vector, with d/dm."""
    if normalize:
        m_norm = float(np.linalg.norm(m))
        if m_norm < 1e-12:
            raise model.DegenerateEmbeddingError("zero-norm merged embedding")
        m_u = m / m_norm
        c = float(txt_u @ m_u)
        return c, (txt_u - c * m_u) / m_norm
    return float(txt_u @ m), txt_u


class _Trainables:
    """Flat array list (body, merge, tau, optional reg) plus grad buffers."""

    def __init__(self, params: ScorerParams, reg: RegressionHead | None):
        self.params = params
        self.reg = reg
        self.arrays = params.trainable_arrays()
        n_body = 2 * len(params.body_mlp.weights)
        self.body_slice = slice(0, n_body)
        self.merge_slice = slice(n_body, n_body + 2 * len(params.merge_mlp.weights))
        self.tau_index = len(self.arrays) - 1
        self.reg_slice = None
        if reg is not None:
            start = len(self.arrays)
            self.arrays = self.arrays + reg.params.arrays()
            self.reg_slice = slice(start, len(self.arrays))

    def zero_grads(self):
        return [np.zeros_like(a) for a in self.arrays]


def _add_mlp_grads(buffers, sl, grads: MlpParams, weight):
    flat = grads.arrays()
    for buf, g in zip(buffers[sl], flat):
        buf += weight * g


def _preference_example(tr: _Trainables, cfg: TrainConfig, pair, rec1, rec2,
                        features: FeatureSet, buffers, weight):
    params = tr.params
    txt = features.txt[rec1.txt_emb]
    txt_u = model.unit(txt) if cfg.normalize else np.asarray(txt, dtype=np.float64)

    sides = []
    for rec in (rec1, rec2):
        img = features.img[rec.img_emb]
        tape_b = tape_m = None
        if cfg.prior == "keypoints":
            body, tape_b = mlp_forward(params.body_spec, params.body_mlp,
                                       features.kp[rec.body_kp])
            merged, tape_m = mlp_forward(params.merge_spec, params.merge_mlp,
                                         np.concatenate([img, body]))
        elif cfg.prior == "pixel":
            merged, tape_m = mlp_forward(params.merge_spec, params.merge_mlp,
                                         np.concatenate([img, features.overlay[rec.img_emb]]))
        else:  # latent / none: raw image embedding is the merged feature
            merged = np.asarray(img, dtype=np.float64)
        c, dc_dm = _cosine_with_grad(txt_u, merged, cfg.normalize)
        sides.append((rec, c, dc_dm, tape_b, tape_m))

    tau = params.tau
    p_hat = model.pair_probabilities(tau * sides[0][1], tau * sides[1][1])
    loss, dlogits = kl_preference_loss(np.asarray(pair.p), p_hat)

    for (rec, c, dc_dm, tape_b, tape_m), dlogit in zip(sides, dlogits):
        buffers[tr.tau_index][0] += weight * dlogit * c
        if tape_m is None:
            continue
        dm = (weight * dlogit * tau) * dc_dm
        merge_grads, dconcat = mlp_backward(tape_m, dm)
        _add_mlp_grads(buffers, tr.merge_slice, merge_grads, 1.0)
        if tape_b is not None:
            body_grads, _ = mlp_backward(tape_b, dconcat[params.dim:])
            _add_mlp_grads(buffers, tr.body_slice, body_grads, 1.0)

    if cfg.prior == "latent" and cfg.latent_weight > 0:
        for rec in (rec1, rec2):
            body, tape_b = mlp_forward(params.body_spec, params.body_mlp,
                                       features.kp[rec.body_kp])
            aux, grad_body = latent_cosine_loss(features.img[rec.img_emb], body)
            loss += cfg.latent_weight * aux
            body_grads, _ = mlp_backward(tape_b, (weight * cfg.latent_weight) * grad_body)
            _add_mlp_grads(buffers, tr.body_slice, body_grads, 1.0)

    return loss


def _text_variant_example(tr: _Trainables, cfg: TrainConfig, rec,
                          features: FeatureSet, buffers, weight):
    params = tr.params
    _, _, p = make_text_variant(rec.prompt, rec.consolidated, cfg.swap_text_preference)
    img = features.img[rec.img_emb]
    keys = (rec.txt_emb + TXT_REALISTIC_SUFFIX, rec.txt_emb + TXT_UNREALISTIC_SUFFIX)
    cosines = []
    for key in keys:
        txt = features.txt[key]
        txt_u = model.unit(txt) if cfg.normalize else np.asarray(txt, dtype=np.float64)
        c, _ = _cosine_with_grad(txt_u, np.asarray(img, dtype=np.float64), cfg.normalize)
        cosines.append(c)
    tau = params.tau
    p_hat = model.pair_probabilities(tau * cosines[0], tau * cosines[1])
    loss, dlogits = kl_preference_loss(np.asarray(p), p_hat)
    for c, dlogit in zip(cosines, dlogits):
        buffers[tr.tau_index][0] += weight * dlogit * c
    return loss


def _regression_example(tr: _Trainables, cfg: TrainConfig, rec,
                        features: FeatureSet, buffers, weight):
    loss, grads = regression_loss(tr.reg, features.img[rec.img_emb], rec.consolidated)
    _add_mlp_grads(buffers, tr.reg_slice, grads, weight)
    return loss


# ---------------------------------------------------------------------------
# Validation


def _validation_phats(params, reg, cfg, records_by_id, pairs, features):
    if cfg.objective == "regression":
        phats = []
        for pair in pairs:
            outs = []
            for rid in (pair.id_1, pair.id_2):
                out, _ = mlp_forward(reg.spec, reg.params,
                                     features.img[records_by_id[rid].img_emb])
                outs.append(float(out[0]))
            phats.append(model.pair_probabilities(outs[0], outs[1]))
        return phats
    prior = cfg.prior if cfg.objective == "preference" else "none"
    return evaluation.score_pairs(params, records_by_id, pairs, features, prior)


def validation_accuracy(params, reg, cfg, records_by_id, pairs, features):
    """Pairwise accuracy at tie threshold 0 (the in-training protocol)."""
    phats = _validation_phats(params, reg, cfg, records_by_id, pairs, features)
    labels = [evaluation.outcome_from_p(p.p) for p in pairs]
    preds = [evaluation.predict_outcome(ph, 0.0) for ph in phats]
    return evaluation.accuracy(preds, labels)


# ---------------------------------------------------------------------------
# Train loop


def _check_features(records, cfg: TrainConfig, features: FeatureSet):
    missing = []
    for rec in records:
        if rec.txt_emb not in features.txt:
            missing.append(("txt", rec.id))
        if rec.img_emb not in features.img:
            missing.append(("img", rec.id))
        if cfg.prior in ("keypoints", "latent") and cfg.objective == "preference":
            if features.kp is None or rec.body_kp not in features.kp:
                missing.append(("kp", rec.id))
        if cfg.prior == "pixel" and cfg.objective == "preference":
            if features.overlay is None or rec.img_emb not in features.overlay:
                missing.append(("overlay", rec.id))
        if cfg.objective == "text_variant":
            for suffix in (TXT_REALISTIC_SUFFIX, TXT_UNREALISTIC_SUFFIX):
                if rec.txt_emb + suffix not in features.txt:
                    missing.append(("txt-variant", rec.id))
    if missing:
        raise DomainError(f"unresolved feature refs (first 5): {missing[:5]}")


def train(cfg: TrainConfig, records, train_pairs, val_pairs,
          features: FeatureSet) -> Checkpoint:
    """Run the optimizer and return the checkpoint with the best validation accuracy.

    Ties on accuracy resolve to the earliest step. Validation runs at step 0,
    every ``eval_interval`` steps, and at the final step.
    """
    records_by_id = {r.id: r for r in records}
    params = model.init_scorer_params(
        cfg.seed, dim=cfg.dim, body_hidden=cfg.body_hidden, merge_hidden=cfg.merge_hidden,
        tau_init=cfg.tau_init, normalize=cfg.normalize, activation=cfg.activation,
    )
    reg = init_regression_head(cfg.seed, cfg.dim, cfg.reg_hidden, cfg.activation) \
        if cfg.objective == "regression" else None

    train_ids = sorted({p.id_1 for p in train_pairs} | {p.id_2 for p in train_pairs})
    if cfg.objective == "preference":
        examples = list(train_pairs)
        _check_features([records_by_id[rid] for rid in train_ids], cfg, features)
    else:
        examples = [records_by_id[rid] for rid in train_ids]
        examples = [r for r in examples if isinstance(r.consolidated, (int, float))]
        _check_features(examples, cfg, features)
    val_records = [records_by_id[p.id_1] for p in val_pairs]
    val_records += [records_by_id[p.id_2] for p in val_pairs]
    _check_features(val_records, cfg, features)

    tr = _Trainables(params, reg)
    opt = OptimState.for_params(tr.arrays)

    def snapshot(step, acc):
        return Checkpoint(params.copy(), asdict(cfg), step, acc,
                          RegressionHead(reg.spec, reg.params.copy()) if reg else None)

    best = snapshot(0, validation_accuracy(params, reg, cfg, records_by_id, val_pairs, features))
    best.history = history = []
    if cfg.steps == 0 or not examples:
        return best

    schedule = LrSchedule(cfg.peak_lr, cfg.warmup, cfg.steps)
    rng = stage_rng(cfg.seed, "train")
    order = []
    for step in range(1, cfg.steps + 1):
        if len(order) < cfg.batch:
            order.extend(rng.permutation(len(examples)).tolist())
        batch = [examples[i] for i in order[: cfg.batch]]
        del order[: cfg.batch]

        if cfg.objective == "preference":
            prompt_ids = [p.prompt_id for p in batch]
        else:
            prompt_ids = [r.prompt_id for r in batch]
        weights = batch_weights(prompt_ids)
        weights = weights / weights.sum()

        buffers = tr.zero_grads()
        batch_loss = 0.0
        for ex, w in zip(batch, weights):
            if cfg.objective == "preference":
                loss = _preference_example(tr, cfg, ex, records_by_id[ex.id_1],
                                           records_by_id[ex.id_2], features, buffers, w)
            elif cfg.objective == "text_variant":
                loss = _text_variant_example(tr, cfg, ex, features, buffers, w)
            else:
                loss = _regression_example(tr, cfg, ex, features, buffers, w)
            batch_loss += w * loss
        if not np.isfinite(batch_loss):
            ids = [(e.id_1, e.id_2) if cfg.objective == "preference" else e.id for e in batch]
            raise NumericError(f"non-finite loss at step {step}; batch ids {ids}")
        history.append((step, float(batch_loss)))

        adamw_step(tr.arrays, buffers, opt, lr_at_step(step, schedule))

        if step % cfg.eval_interval == 0 or step == cfg.steps:
            acc = validation_accuracy(params, reg, cfg, records_by_id, val_pairs, features)
            if acc > best.val_accuracy:
                best = snapshot(step, acc)
                best.history = history
    return best


# ---------------------------------------------------------------------------
# BMCK checkpoint format


def _pack_tensor(buf, arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        rows, cols = 1, arr.shape[0]
    else:
        rows, cols = arr.shape
    buf.write(struct.pack("<II", rows, cols))
    buf.write(arr.astype("<f4").tobytes())


def save_checkpoint(ckpt: Checkpoint, path):
    config = dict(ckpt.config)
    config["step"] = ckpt.step
    config["val_accuracy"] = ckpt.val_accuracy
    config["has_reg_head"] = ckpt.reg_head is not None
    payload = canonical_json(config).encode("utf-8")
    buf = io.BytesIO()
    buf.write(BMCK_MAGIC)
    buf.write(struct.pack("<I", BMCK_VERSION))
    buf.write(struct.pack("<I", len(payload)))
    buf.write(payload)
    tensors = ckpt.params.trainable_arrays()
    if ckpt.reg_head is not None:
        tensors = tensors + ckpt.reg_head.params.arrays()
    for arr in tensors:
        _pack_tensor(buf, arr)
    atomic_write_bytes(path, buf.getvalue())


def _read_tensor(data, offset, what):
    if offset + 8 > len(data):
        raise FormatError(f"truncated header of {what}", offset=offset)
    rows, cols = struct.unpack_from("<II", data, offset)
    offset += 8
    nbytes = 4 * rows * cols
    if offset + nbytes > len(data):
        raise FormatError(f"truncated values of {what}", offset=offset)
    arr = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset)
    arr = arr.astype(np.float64).reshape(rows, cols)
    return (arr[0] if rows == 1 else arr), offset + nbytes


def _read_mlp(data, offset, spec, name):
    dims = spec.layer_dims
    weights, biases = [], []
    for i in range(len(dims) - 1):
        w, offset = _read_tensor(data, offset, f"{name} layer {i} weight")
        b, offset = _read_tensor(data, offset, f"{name} layer {i} bias")
        w = np.atleast_2d(w)
        if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
            raise FormatError(f"{name} layer {i}: tensor shape does not match config")
        weights.append(w)
        biases.append(b)
    return MlpParams(weights, biases), offset


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != BMCK_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {BMCK_MAGIC!r}", offset=0)
    if len(data) < 12:
        raise FormatError("truncated header", offset=4)
    (version,) = struct.unpack_from("<I", data, 4)
    if version != BMCK_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    (json_len,) = struct.unpack_from("<I", data, 8)
    if 12 + json_len > len(data):
        raise FormatError("truncated config block", offset=12)
    try:
        config = json.loads(data[12 : 12 + json_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad config block: {exc}", offset=12) from exc
    offset = 12 + json_len

    dim = config["dim"]
    activation = config.get("activation", "gelu")
    body_spec = MlpSpec((BODY_KEYPOINT_DIM, config["body_hidden"], dim), activation)
    merge_spec = MlpSpec((2 * dim, config["merge_hidden"], dim), activation)
    body, offset = _read_mlp(data, offset, body_spec, "body")
    merge, offset = _read_mlp(data, offset, merge_spec, "merge")
    tau, offset = _read_tensor(data, offset, "temperature")
    params = ScorerParams(
        dim=dim, body_spec=body_spec, body_mlp=body, merge_spec=merge_spec,
        merge_mlp=merge, temperature=np.asarray(tau, dtype=np.float64),
        normalize=config.get("normalize", True),
    )
    reg = None
    if config.get("has_reg_head"):
        reg_spec = MlpSpec((dim, config.get("reg_hidden", 256), 1), activation)
        reg_params, offset = _read_mlp(data, offset, reg_spec, "regression head")
        reg = RegressionHead(reg_spec, reg_params)
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes", offset=offset)
    step = config.pop("step", 0)
    val_acc = config.pop("val_accuracy", float("nan"))
    config.pop("has_reg_head", None)
    return Checkpoint(params, config, step, val_acc, reg)
