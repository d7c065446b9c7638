"""Built-in invariant suite behind `bodymetric selftest`.

Quick spot checks, not the full pytest suite: consolidation against a
brute-force re-implementation on random tuples, analytic-vs-numeric MLP
gradients, loss identities, the EMB1 round trip, and schedule endpoints.
"""

import os
import tempfile

import numpy as np

from . import dataset, model, numerics
from .errors import BodyMetricError
from .util import stage_rng


def _brute_force_consolidate(r):
    # Independent rendering of the consolidation procedure, kept deliberately
    # separate from dataset.consolidate_scores.
    s = sorted(r)
    if s[4] >= 8:
        return (s[3] + s[4]) / 2
    m = s[2]
    q1 = (s[0] + s[1]) / 2
    q3 = (s[3] + s[4]) / 2
    half_iqr = (q3 - q1) / 2
    kept = [v for v in s if m - half_iqr < v < m + half_iqr]
    return sum(kept) / len(kept) if kept else sum(s) / 5


def _check_consolidation(rng):
    for _ in range(2000):
        r = rng.integers(1, 11, size=5).tolist()
        got = dataset.consolidate_scores(r)
        want = _brute_force_consolidate(r)
        if got != want:
            raise AssertionError(f"consolidation mismatch on {r}: {got} vs {want}")


def _check_gradients(rng):
    for _ in range(5):
        dims = tuple(int(d) for d in rng.integers(2, 7, size=3))
        spec = numerics.MlpSpec(dims, "gelu")
        params = numerics.init_mlp_params(spec, rng)
        x = rng.standard_normal(dims[0])
        upstream = rng.standard_normal(dims[-1])
        grads, _ = numerics.mlp_backward(numerics.mlp_forward(spec, params, x)[1], upstream)
        h = 1e-6
        for li in range(len(params.weights)):
            w = params.weights[li]
            idx = (int(rng.integers(w.shape[0])), int(rng.integers(w.shape[1])))
            orig = w[idx]
            w[idx] = orig + h
            up = float(upstream @ numerics.mlp_forward(spec, params, x)[0])
            w[idx] = orig - h
            dn = float(upstream @ numerics.mlp_forward(spec, params, x)[0])
            w[idx] = orig
            fd = (up - dn) / (2 * h)
            an = grads.weights[li][idx]
            if abs(fd - an) > 1e-4 * max(1.0, abs(fd)):
                raise AssertionError(f"gradient mismatch layer {li}: {an} vs {fd}")


def _check_loss_identities():
    loss, grad = numerics.kl_preference_loss([1.0, 0.0], [0.5, 0.5])
    assert abs(loss - np.log(2)) < 1e-12 and np.allclose(grad, [-0.5, 0.5])
    p_hat = model.pair_probabilities(1000.0, 0.0)
    assert np.isfinite(p_hat).all() and abs(p_hat.sum() - 1.0) < 1e-12
    assert numerics.lr_at_step(500, numerics.LrSchedule(3e-6, 500, 4000)) == 3e-6
    assert numerics.lr_at_step(4000, numerics.LrSchedule(3e-6, 500, 4000)) == 0.0


def _check_emb1_roundtrip(rng):
    table = {f"id{i}": rng.standard_normal(8) for i in range(5)}
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "t.emb1")
        dataset.store_embeddings(table, path)
        back = dataset.load_embeddings(path)
        dataset.store_embeddings(back, os.path.join(tmp, "t2.emb1"))
        with open(path, "rb") as a, open(os.path.join(tmp, "t2.emb1"), "rb") as b:
            assert a.read() == b.read()


def run(seed: int = 0) -> int:
    rng = stage_rng(seed, "selftest")
    checks = [
        ("consolidation vs brute force", lambda: _check_consolidation(rng)),
        ("mlp gradients vs finite differences", lambda: _check_gradients(rng)),
        ("loss and schedule identities", _check_loss_identities),
        ("EMB1 round trip", lambda: _check_emb1_roundtrip(rng)),
    ]
    failed = 0
    for name, fn in checks:
        try:
            fn()
            print(f"PASS {name}")
        except (AssertionError, BodyMetricError) as exc:
            print(f"FAIL {name}: {exc}")
            failed += 1
    return 0 if failed == 0 else 3
