"""Command-line entry point wiring the pipeline stages together.

Subcommands: consolidate | filter | pairs | split | train | eval | score |
rank | benchmark | selftest. Exit codes: 0 success, 1 usage error, 2
data/format error, 3 numeric failure.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

from . import dataset, evaluation, model, training
from .errors import (
    BodyMetricError,
    ContractError,
    DegenerateEmbeddingError,
    DomainError,
    FormatError,
    NumericError,
    ShapeError,
)
from .util import atomic_write_text, canonical_json

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

RUN_CONFIG_PATH_KEYS = ("records", "emb", "kp", "checkpoint", "out")


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_run_config(path):
    """RunConfig JSON: TrainConfig keys plus file paths and the global seed."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    known = set(training.TrainConfig.__dataclass_fields__) | set(RUN_CONFIG_PATH_KEYS)
    unknown = set(doc) - known
    if unknown:
        raise FormatError(f"unknown RunConfig keys {sorted(unknown)}")
    return doc


def _train_config(args):
    doc = _load_run_config(args.config) if args.config else {}
    cfg_keys = set(training.TrainConfig.__dataclass_fields__)
    cfg_dict = {k: v for k, v in doc.items() if k in cfg_keys}
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if getattr(args, "objective", None):
        cfg_dict["objective"] = args.objective
    if getattr(args, "prior", None):
        cfg_dict["prior"] = args.prior
    paths = {k: doc[k] for k in RUN_CONFIG_PATH_KEYS if k in doc}
    return training.TrainConfig.from_dict(cfg_dict), paths


def _resolve(args, paths, key, required=True):
    value = getattr(args, key, None) or paths.get(key)
    if required and value is None:
        raise FormatError(f"missing required path --{key}")
    return value


def _load_features(emb_dir, kp_path=None):
    def maybe(name):
        path = os.path.join(emb_dir, name)
        return dataset.load_embeddings(path) if os.path.exists(path) else None

    txt = maybe("txt.emb1")
    img = maybe("img.emb1")
    if txt is None or img is None:
        raise FormatError(f"feature dir {emb_dir!r} must contain txt.emb1 and img.emb1")
    kp = dataset.load_embeddings(kp_path) if kp_path else maybe("kp.emb1")
    return training.FeatureSet(txt=txt, img=img, kp=kp, overlay=maybe("overlay.emb1"))


# ---------------------------------------------------------------------------
# Subcommands


def cmd_consolidate(args):
    records = dataset.read_records(args.records)
    out = [dataset.consolidate_record(r) for r in records]
    dataset.write_records(out, args.out)
    print(f"consolidated {len(out)} records -> {args.out}")
    return EXIT_OK


def cmd_filter(args):
    records = dataset.read_records(args.records)
    decisions = {}
    with open(args.detections, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            summary = dataset.DetectionSummary(
                human_count=d["human_count"],
                unique_class_count=d["unique_class_count"],
                min_human_confidence=d["min_human_confidence"],
            )
            decisions[d["id"]] = dataset.filter_image(summary)
    kept, dropped = [], []
    for rec in records:
        decision = decisions.get(rec.id)
        if decision is None or decision.keep:
            kept.append(rec)
        else:
            dropped.append({"id": rec.id, "reason": decision.reason})
    dataset.write_records(kept, args.out)
    if args.rejects:
        atomic_write_text(args.rejects,
                          "".join(canonical_json(d) + "\n" for d in dropped))
    print(f"kept {len(kept)}, dropped {len(dropped)} -> {args.out}")
    return EXIT_OK


def cmd_pairs(args):
    records = dataset.read_records(args.records)
    pairs = dataset.build_pairs(records, args.seed)
    lines = [
        canonical_json({"prompt_id": p.prompt_id, "id_1": p.id_1, "id_2": p.id_2,
                        "p": list(p.p)})
        for p in pairs
    ]
    atomic_write_text(args.out, "".join(line + "\n" for line in lines))
    print(f"built {len(pairs)} pairs -> {args.out}")
    return EXIT_OK


def read_pairs(path):
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            pairs.append(dataset.PreferencePair(d["prompt_id"], d["id_1"], d["id_2"],
                                                tuple(d["p"])))
    return pairs


def cmd_split(args):
    records = dataset.read_records(args.records)
    ratios = tuple(float(x) for x in args.ratios.split(","))
    out = dataset.split_dataset(records, ratios, args.seed)
    dataset.write_records(out, args.out)
    counts = {}
    for rec in out:
        counts[rec.split] = counts.get(rec.split, 0) + 1
    print(f"split {len(out)} records {counts} -> {args.out}")
    return EXIT_OK


def _pairs_by_split(records, pairs):
    split_of = {r.id: r.split for r in records}
    buckets = {"train": [], "val": [], "test": [], None: []}
    for p in pairs:
        buckets.setdefault(split_of.get(p.id_1), []).append(p)
    return buckets


def cmd_train(args):
    cfg, paths = _train_config(args)
    records = dataset.read_records(_resolve(args, paths, "records"))
    features = _load_features(_resolve(args, paths, "emb"),
                              _resolve(args, paths, "kp", required=False))
    pairs = read_pairs(args.pairs) if args.pairs else dataset.build_pairs(records, cfg.seed)
    buckets = _pairs_by_split(records, pairs)
    train_pairs = buckets["train"] or buckets[None]
    val_pairs = buckets["val"] or train_pairs
    ckpt = training.train(cfg, records, train_pairs, val_pairs, features)
    out = _resolve(args, paths, "out", required=False) or _resolve(args, paths, "checkpoint")
    training.save_checkpoint(ckpt, out)
    print(f"trained {cfg.steps} steps; best step {ckpt.step} "
          f"val_accuracy {ckpt.val_accuracy:.4f} -> {out}")
    return EXIT_OK


def cmd_eval(args):
    ckpt = training.load_checkpoint(args.checkpoint)
    records = dataset.read_records(args.records)
    features = _load_features(args.emb, args.kp)
    pairs = read_pairs(args.pairs) if args.pairs else dataset.build_pairs(records, args.seed)
    buckets = _pairs_by_split(records, pairs)
    val_pairs = buckets["val"] or buckets[None] or pairs
    test_pairs = buckets["test"] or buckets[None] or pairs
    prior = ckpt.config.get("prior", "keypoints")
    records_by_id = {r.id: r for r in records}
    report = evaluation.evaluate_pairs(ckpt.params, records_by_id, val_pairs, test_pairs,
                                       features, prior, grid_step=args.threshold_grid)
    print(report.to_json())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write_text(os.path.join(args.out, "report.json"), report.to_json() + "\n")
        atomic_write_text(os.path.join(args.out, "report.txt"), report.to_text())
        atomic_write_text(os.path.join(args.out, "curve.csv"), report.curve_csv())
    return EXIT_OK


def _score_records(ckpt, records, features):
    scores = {}
    prior = ckpt.config.get("prior", "keypoints")
    for rec in records:
        txt = features.txt[rec.txt_emb]
        img = features.img[rec.img_emb]
        if prior == "keypoints":
            result = model.score_keypoints(ckpt.params, txt, img, features.kp[rec.body_kp])
        elif prior == "pixel":
            result = model.score_pixel_variant(ckpt.params, txt,
                                               features.overlay[rec.img_emb], img)
        else:
            result = model.score_latent_variant(ckpt.params, txt, img)
        scores[rec.id] = result.cosine
    return scores


def cmd_score(args):
    ckpt = training.load_checkpoint(args.checkpoint)
    records = dataset.read_records(args.records)
    features = _load_features(args.emb, args.kp)
    scores = _score_records(ckpt, records, features)
    text = canonical_json(scores)
    if args.out:
        atomic_write_text(args.out, text + "\n")
    print(text)
    return EXIT_OK


def cmd_rank(args):
    with open(args.scores, "r", encoding="utf-8") as fh:
        scores = json.load(fh)
    ranked = evaluation.rank_images(scores)
    text = canonical_json(ranked)
    if args.out:
        atomic_write_text(args.out, text + "\n")
    print(text)
    return EXIT_OK


def cmd_benchmark(args):
    with open(args.scores, "r", encoding="utf-8") as fh:
        samples = json.load(fh)
    report = evaluation.benchmark(samples)
    print(report.to_json())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write_text(os.path.join(args.out, "benchmark.json"), report.to_json() + "\n")
        atomic_write_text(os.path.join(args.out, "benchmark.txt"), report.to_text())
    return EXIT_OK


def cmd_selftest(args):
    from . import selftest

    return selftest.run(seed=args.seed)


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="bodymetric", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("consolidate", cmd_consolidate, help="fill consolidated realism scores")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)

    p = add("filter", cmd_filter, help="drop records by detection metadata rules")
    p.add_argument("--records", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rejects")

    p = add("pairs", cmd_pairs, help="construct preference pairs")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)

    p = add("split", cmd_split, help="assign prompt-disjoint train/val/test splits")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", default="0.8,0.1,0.1")

    p = add("train", cmd_train, help="train the scoring head")
    p.add_argument("--records")
    p.add_argument("--emb")
    p.add_argument("--kp")
    p.add_argument("--pairs")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--objective", choices=training.OBJECTIVES)
    p.add_argument("--prior", choices=training.PRIORS)
    p.set_defaults(seed=None)

    p = add("eval", cmd_eval, help="pairwise evaluation with tie-threshold sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--kp")
    p.add_argument("--pairs")
    p.add_argument("--out")
    p.add_argument("--threshold-grid", type=float, default=0.01)

    p = add("score", cmd_score, help="score records; prints id -> cosine JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--kp")
    p.add_argument("--out")

    p = add("rank", cmd_rank, help="rank image ids by descending score")
    p.add_argument("--scores", required=True)
    p.add_argument("--out")

    p = add("benchmark", cmd_benchmark, help="per-generator mean-score report")
    p.add_argument("--scores", required=True, help="JSON: generator -> list of scores")
    p.add_argument("--out")

    add("selftest", cmd_selftest, help="run the built-in invariant suite")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except (FormatError, DomainError, ContractError, ShapeError,
            FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, DegenerateEmbeddingError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BodyMetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
