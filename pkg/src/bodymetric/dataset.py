"""Data pipeline: records, annotation consolidation, filtering, preference
pairs, prompt-disjoint splits, and the JSONL / EMB1 file formats.

Consolidation maps five 1-10 annotator scores to a single realism score:
top-2 mean when any score reaches 8, otherwise a median/IQR-filtered mean
(Tukey-hinge quartiles, strict open interval). Records where three or more
annotators mark the image invalid are dropped as invalid.
"""

import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DomainError, FormatError, ShapeError
from .util import atomic_write_bytes, canonical_json, stage_rng

INVALID = "invalid"
N_ANNOTATORS = 5
REAL_IMAGE_SCORE = 9.0
LOW_CUTOFF = 3.0
HIGH_CUTOFF = 7.0

EMB1_MAGIC = b"EMB1"

RECORD_FIELDS = (
    "id",
    "prompt",
    "prompt_id",
    "source",
    "generator",
    "annotations",
    "consolidated",
    "split",
    "txt_emb",
    "img_emb",
    "body_kp",
)


@dataclass
class RealismRecord:
    """One image: provenance, raw annotations, consolidated score, feature refs."""

    id: str
    prompt: str
    prompt_id: str
    source: str  # "generated" | "real"
    generator: str | None = None
    annotations: list = field(default_factory=list)
    consolidated: float | str | None = None  # number in [1,10], "invalid", or None
    split: str | None = None  # "train" | "val" | "test" | None
    txt_emb: str | None = None
    img_emb: str | None = None
    body_kp: str | None = None

    def to_dict(self):
        return {k: getattr(self, k) for k in RECORD_FIELDS}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(RECORD_FIELDS)
        if unknown:
            raise FormatError(f"record has unknown fields {sorted(unknown)}")
        missing = {"id", "prompt", "prompt_id", "source"} - set(d)
        if missing:
            raise FormatError(f"record missing required fields {sorted(missing)}")
        if d["source"] not in ("generated", "real"):
            raise FormatError(f"record {d['id']}: bad source {d['source']!r}")
        return cls(**{k: d.get(k) for k in RECORD_FIELDS} | {"annotations": d.get("annotations") or []})


@dataclass(frozen=True)
class PreferencePair:
    """Two records of one prompt plus the preference distribution over them."""

    prompt_id: str
    id_1: str
    id_2: str
    p: tuple  # (1,0), (0,1) or (0.5,0.5)


@dataclass(frozen=True)
class DetectionSummary:
    human_count: int
    unique_class_count: int
    min_human_confidence: float

    def __post_init__(self):
        if not (0.0 <= self.min_human_confidence <= 1.0):
            raise DomainError(f"confidence {self.min_human_confidence} outside [0,1]")


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str | None = None  # "A" (>3 humans), "B" (>3 classes), "C" (confidence < 0.98)


def _check_annotation_values(r):
    if len(r) != N_ANNOTATORS:
        raise DomainError(f"expected {N_ANNOTATORS} annotations, got {len(r)}")
    for v in r:
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise DomainError(f"annotation {v!r} is not an integer")
        if not 1 <= v <= 10:
            raise DomainError(f"annotation {v} outside [1,10]")


def _tukey_hinges(sorted_vals):
    """Quartiles as medians of the lower/upper halves, middle excluded for odd n."""
    n = len(sorted_vals)
    half = n // 2
    lower = sorted_vals[:half]
    upper = sorted_vals[n - half:]

    def median(vals):
        m = len(vals)
        mid = m // 2
        if m % 2:
            return float(vals[mid])
        return (vals[mid - 1] + vals[mid]) / 2.0

    return median(lower), median(upper)


def consolidate_scores(r):
    """Distill five 1-10 annotator scores into one realism score."""
    _check_annotation_values(r)
    s = sorted(r)
    if s[-1] >= 8:
        return (s[-2] + s[-1]) / 2.0
    m = float(s[2])
    q1, q3 = _tukey_hinges(s)
    iqr = q3 - q1
    low, high = m - 0.5 * iqr, m + 0.5 * iqr
    kept = [v for v in s if low < v < high]
    if kept:
        return sum(kept) / len(kept)
    return sum(s) / len(s)


def is_invalid(annotations):
    """True when 3 or more of the 5 annotators marked the image invalid."""
    if len(annotations) != N_ANNOTATORS:
        raise DomainError(f"expected {N_ANNOTATORS} annotations, got {len(annotations)}")
    return sum(1 for a in annotations if a == INVALID) >= 3


def consolidate_record(record: RealismRecord) -> RealismRecord:
    """Fill the consolidated field of one record (returns a new record)."""
    out = RealismRecord(**record.to_dict())
    if record.source == "real":
        out.consolidated = REAL_IMAGE_SCORE
        return out
    if is_invalid(record.annotations):
        out.consolidated = INVALID
        return out
    numeric = [a for a in record.annotations if a != INVALID]
    if len(numeric) < N_ANNOTATORS:
        # Fewer than 3 invalid marks but not a full score set: no consolidated
        # score; the record is excluded from pair construction downstream.
        out.consolidated = None
        return out
    out.consolidated = consolidate_scores(numeric)
    return out


def filter_image(d: DetectionSummary) -> FilterDecision:
    """Detection-based keep/drop rule; first failing rule (A, B, C) is reported."""
    if d.human_count > 3:
        return FilterDecision(False, "A")
    if d.unique_class_count > 3:
        return FilterDecision(False, "B")
    if d.min_human_confidence < 0.98:
        return FilterDecision(False, "C")
    return FilterDecision(True, None)


def _bucket(consolidated):
    if not isinstance(consolidated, (int, float)):
        return None
    if consolidated < LOW_CUTOFF:
        return "LOW"
    if consolidated > HIGH_CUTOFF:
        return "HIGH"
    return None


def build_pairs(records, seed: int):
    """Construct preference pairs within each prompt.

    Only records with consolidated < 3 (LOW) or > 7 (HIGH) participate.
    Cross-bucket pairs put all probability mass on the HIGH record; pairs
    within one bucket are ties. Tie and non-tie pairs are count-balanced by
    seeded subsampling of the larger class.
    """
    by_prompt = {}
    for rec in records:
        if _bucket(rec.consolidated) is None:
            continue
        by_prompt.setdefault(rec.prompt_id, []).append(rec)

    ties, non_ties = [], []
    for prompt_id in sorted(by_prompt):
        group = sorted(by_prompt[prompt_id], key=lambda r: r.id)
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                a, b = group[i], group[j]
                ba, bb = _bucket(a.consolidated), _bucket(b.consolidated)
                if ba == bb:
                    ties.append(PreferencePair(prompt_id, a.id, b.id, (0.5, 0.5)))
                elif ba == "HIGH":
                    non_ties.append(PreferencePair(prompt_id, a.id, b.id, (1.0, 0.0)))
                else:
                    non_ties.append(PreferencePair(prompt_id, a.id, b.id, (0.0, 1.0)))

    # Balance only when both classes exist; subsampling to an empty minority
    # would contradict the single-pair contract.
    rng = stage_rng(seed, "pairs")
    if non_ties and len(ties) > len(non_ties):
        idx = rng.permutation(len(ties))[: len(non_ties)]
        ties = [ties[i] for i in sorted(idx)]
    elif ties and len(non_ties) > len(ties):
        idx = rng.permutation(len(non_ties))[: len(ties)]
        non_ties = [non_ties[i] for i in sorted(idx)]
    pairs = ties + non_ties
    pairs.sort(key=lambda p: (p.prompt_id, p.id_1, p.id_2))
    return pairs


def split_dataset(records, ratios, seed: int):
    """Assign train/val/test splits per prompt; all records of a prompt share one."""
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise DomainError(f"ratios must be 3 values summing to 1, got {ratios}")
    prompts = sorted({r.prompt_id for r in records})
    rng = stage_rng(seed, "split")
    order = [prompts[i] for i in rng.permutation(len(prompts))]
    n = len(order)
    counts = [int(ratio * n) for ratio in ratios]
    remainders = [ratio * n - c for ratio, c in zip(ratios, counts)]
    leftover = n - sum(counts)
    for i in sorted(range(3), key=lambda k: (-remainders[k], k))[:leftover]:
        counts[i] += 1
    assignment = {}
    pos = 0
    for name, count in zip(("train", "val", "test"), counts):
        for prompt in order[pos : pos + count]:
            assignment[prompt] = name
        pos += count
    out = []
    for rec in records:
        clone = RealismRecord(**rec.to_dict())
        clone.split = assignment[rec.prompt_id]
        out.append(clone)
    return out


# ---------------------------------------------------------------------------
# Records JSONL


def read_records(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            records.append(RealismRecord.from_dict(d))
    return records


def write_records(records, path):
    lines = [canonical_json(r.to_dict()) for r in records]
    atomic_write_bytes(path, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"))


# ---------------------------------------------------------------------------
# EMB1 feature store


def store_embeddings(table, path, dim=None):
    """Write an id -> vector table in the EMB1 layout (float32 payload)."""
    items = list(table.items())
    if dim is None:
        dim = len(items[0][1]) if items else 0
    buf = io.BytesIO()
    buf.write(EMB1_MAGIC)
    buf.write(struct.pack("<II", dim, len(items)))
    for key, vec in items:
        vec = np.asarray(vec, dtype=np.float32)
        if vec.shape != (dim,):
            raise ShapeError(f"embedding {key!r}: length {vec.shape}, store dim {dim}")
        raw = key.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"id {key!r} longer than 65535 bytes")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(vec.tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_embeddings(path):
    """Read an EMB1 store into an ordered id -> float64 vector dict."""
    with open(path, "rb") as fh:
        data = fh.read()

    def need(offset, count, what):
        if offset + count > len(data):
            raise FormatError(f"truncated {what}", offset=offset)
        return data[offset : offset + count]

    if data[:4] != EMB1_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {EMB1_MAGIC!r}", offset=0)
    dim, count = struct.unpack("<II", need(4, 8, "header"))
    table = {}
    offset = 12
    for i in range(count):
        (id_len,) = struct.unpack("<H", need(offset, 2, f"id length of record {i}"))
        offset += 2
        try:
            key = need(offset, id_len, f"id of record {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"record {i}: id is not UTF-8", offset=offset) from exc
        offset += id_len
        raw = need(offset, 4 * dim, f"values of record {i} ({key!r})")
        offset += 4 * dim
        if key in table:
            raise FormatError(f"duplicate id {key!r}", offset=offset)
        table[key] = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after last record", offset=offset)
    return table
