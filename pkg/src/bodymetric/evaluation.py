"""Pairwise preference evaluation, tie-threshold selection, T2I benchmarking,
and image ranking."""

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import ContractError, DomainError
from .util import canonical_json, thread_count


class PairOutcome(enum.Enum):
    FIRST = "FIRST"
    SECOND = "SECOND"
    TIE = "TIE"


def outcome_from_p(p) -> PairOutcome:
    """Ground-truth outcome for a pair's preference distribution."""
    if tuple(p) == (0.5, 0.5):
        return PairOutcome.TIE
    return PairOutcome.FIRST if p[0] > p[1] else PairOutcome.SECOND


def predict_outcome(p_hat, t: float) -> PairOutcome:
    """Tie when the probability gap is below t; exact equality is always a tie."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"tie threshold {t} outside [0,1]")
    a, b = float(p_hat[0]), float(p_hat[1])
    if a == b or abs(a - b) < t:
        return PairOutcome.TIE
    return PairOutcome.FIRST if a > b else PairOutcome.SECOND


def accuracy(predictions, labels) -> float:
    """Exact-match fraction; a predicted TIE only counts against a TIE label."""
    if len(predictions) != len(labels):
        raise ContractError(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise ContractError("accuracy of an empty set is undefined")
    hits = sum(1 for p, l in zip(predictions, labels) if p == l)
    return hits / len(labels)


def select_tie_threshold(p_hats, labels, grid_step: float = 0.01):
    """Sweep tie thresholds over [0,1]; return (best t, full (t, accuracy) curve).

    The smallest t wins ties in accuracy.
    """
    if not labels:
        raise ContractError("threshold selection needs a non-empty validation set")
    n_steps = round(1.0 / grid_step)
    curve = []
    best_t, best_acc = 0.0, -1.0
    for k in range(n_steps + 1):
        t = k * grid_step
        preds = [predict_outcome(ph, t) for ph in p_hats]
        acc = accuracy(preds, labels)
        curve.append((t, acc))
        if acc > best_acc:
            best_t, best_acc = t, acc
    return best_t, curve


@dataclass
class EvalReport:
    accuracy: float
    t: float
    curve: list  # (t, accuracy) pairs from validation sweep
    counts: dict  # predicted outcome counts at the chosen threshold

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "t": self.t,
            "curve": [{"t": t, "accuracy": a} for t, a in self.curve],
            "counts": dict(self.counts),
        }

    def to_json(self):
        return canonical_json(self.to_dict())

    def to_text(self):
        lines = [
            f"{'accuracy':<12}{self.accuracy:.6f}",
            f"{'t':<12}{self.t:.2f}",
        ]
        for name in ("FIRST", "SECOND", "TIE"):
            lines.append(f"{name:<12}{self.counts.get(name, 0)}")
        return "\n".join(lines) + "\n"

    def curve_csv(self):
        rows = ["t,accuracy"]
        rows += [f"{t:.2f},{a:.6f}" for t, a in self.curve]
        return "\n".join(rows) + "\n"


def _pair_phat(params, rec1, rec2, features, prior):
    txt = features.txt[rec1.txt_emb]
    logits = []
    for rec in (rec1, rec2):
        img = features.img[rec.img_emb]
        if prior == "keypoints":
            result = model.score_keypoints(params, txt, img, features.kp[rec.body_kp])
        elif prior == "pixel":
            result = model.score_pixel_variant(params, txt, features.overlay[rec.img_emb], img)
        else:  # latent or none: text vs raw image embedding
            result = model.score_latent_variant(params, txt, img)
        logits.append(result.logit)
    return model.pair_probabilities(logits[0], logits[1])


def score_pairs(params, records_by_id, pairs, features, prior):
    """Predicted pair probabilities for a list of pairs (order-preserving)."""

    def one(pair):
        return _pair_phat(params, records_by_id[pair.id_1], records_by_id[pair.id_2], features, prior)

    workers = thread_count()
    if workers > 1 and len(pairs) > 64:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, pairs))
    return [one(pair) for pair in pairs]


def evaluate_pairs(params, records_by_id, val_pairs, test_pairs, features, prior,
                   grid_step: float = 0.01) -> EvalReport:
    """Select the tie threshold on validation pairs, report accuracy on test pairs."""
    val_phat = score_pairs(params, records_by_id, val_pairs, features, prior)
    val_labels = [outcome_from_p(p.p) for p in val_pairs]
    t_star, curve = select_tie_threshold(val_phat, val_labels, grid_step)

    test_phat = score_pairs(params, records_by_id, test_pairs, features, prior)
    test_labels = [outcome_from_p(p.p) for p in test_pairs]
    preds = [predict_outcome(ph, t_star) for ph in test_phat]
    counts = {name: 0 for name in ("FIRST", "SECOND", "TIE")}
    for p in preds:
        counts[p.value] += 1
    return EvalReport(accuracy=accuracy(preds, test_labels), t=t_star, curve=curve, counts=counts)


@dataclass
class BenchmarkReport:
    """Per-generator mean cosine scores, sorted from least to most realistic."""

    entries: list  # (generator, mean, count, std) ascending by mean

    def to_dict(self):
        return {
            "generators": [
                {"name": g, "mean": m, "count": n, "std": s}
                for g, m, n, s in self.entries
            ]
        }

    def to_json(self):
        return canonical_json(self.to_dict())

    def to_text(self):
        width = max([len(g) for g, *_ in self.entries] or [9])
        lines = [f"{'generator':<{width}}  {'mean':>10}  {'std':>10}  {'count':>6}"]
        for g, m, n, s in self.entries:
            lines.append(f"{g:<{width}}  {m:>10.4f}  {s:>10.4f}  {n:>6}")
        return "\n".join(lines) + "\n"


def benchmark(samples) -> BenchmarkReport:
    """samples: generator -> list of cosine scores. Empty groups are skipped."""
    entries = []
    skipped = []
    for gen in sorted(samples):
        scores = [float(s) for s in samples[gen]]
        if not scores:
            skipped.append(gen)
            continue
        arr = np.asarray(scores)
        entries.append((gen, float(arr.mean()), len(scores), float(arr.std())))
    if skipped:
        import warnings

        warnings.warn(f"benchmark: skipped empty generator groups {skipped}")
    entries.sort(key=lambda e: (e[1], e[0]))
    return BenchmarkReport(entries)


def rank_images(scores) -> list:
    """Ids sorted by descending score; equal scores break by id."""
    for key, value in scores.items():
        if not math.isfinite(value):
            raise DomainError(f"score for {key!r} is not finite")
    return sorted(scores, key=lambda k: (-scores[k], k))
