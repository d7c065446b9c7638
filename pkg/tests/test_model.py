import numpy as np
import pytest
from hypothesis import given, strategies as st

from bodymetric import model
from bodymetric.errors import DegenerateEmbeddingError, ShapeError
from bodymetric.model import (
    BODY_KEYPOINT_DIM,
    ScorerParams,
    encode_body,
    init_scorer_params,
    merge_features,
    pair_probabilities,
    score,
    score_keypoints,
    score_latent_variant,
    score_pixel_variant,
)
from bodymetric.numerics import MlpParams, MlpSpec, mlp_forward


def small_params(dim=4, seed=0, tau=2.0, normalize=True):
    return init_scorer_params(seed, dim=dim, body_hidden=6, merge_hidden=6,
                              tau_init=tau, normalize=normalize)


def handcrafted_params(dim, body_weights, body_biases, merge_weights, merge_biases,
                       tau=1.0, activation="identity"):
    body_dims = (BODY_KEYPOINT_DIM,) + tuple(b.shape[0] for b in body_biases)
    merge_dims = (2 * dim,) + tuple(b.shape[0] for b in merge_biases)
    return ScorerParams(
        dim=dim,
        body_spec=MlpSpec(body_dims, activation),
        body_mlp=MlpParams(body_weights, body_biases),
        merge_spec=MlpSpec(merge_dims, activation),
        merge_mlp=MlpParams(merge_weights, merge_biases),
        temperature=np.array([tau]),
    )


class TestEncodeBody:
    def test_zero_weights_return_bias(self):
        dim = 3
        v = np.array([0.5, -1.0, 2.0])
        params = handcrafted_params(
            dim,
            [np.zeros((dim, BODY_KEYPOINT_DIM))], [v.copy()],
            [np.zeros((dim, 2 * dim))], [np.zeros(dim)],
        )
        out = encode_body(params, np.zeros(BODY_KEYPOINT_DIM))
        assert np.allclose(out, v)

    def test_default_output_dim_is_1024(self):
        params = init_scorer_params(0)
        out = encode_body(params, np.zeros(BODY_KEYPOINT_DIM))
        assert out.shape == (1024,)

    def test_matches_forward_oracle(self):
        params = init_scorer_params(42, dim=8, body_hidden=5, merge_hidden=5)
        kp = np.full(BODY_KEYPOINT_DIM, 0.1)
        expected, _ = mlp_forward(params.body_spec, params.body_mlp, kp)
        assert np.array_equal(encode_body(params, kp), expected)

    def test_wrong_keypoint_length(self):
        with pytest.raises(ShapeError):
            encode_body(small_params(), np.zeros(434))


class TestMergeFeatures:
    def test_projection_identity_returns_img(self):
        dim = 3
        w = np.hstack([np.eye(dim), np.zeros((dim, dim))])
        params = handcrafted_params(
            dim,
            [np.zeros((dim, BODY_KEYPOINT_DIM))], [np.zeros(dim)],
            [w], [np.zeros(dim)],
        )
        img = np.array([1.0, 2.0, 3.0])
        assert np.allclose(merge_features(params, img, [9.0, 9.0, 9.0]), img)

    def test_zero_weights_return_bias(self):
        dim = 2
        v = np.array([4.0, -4.0])
        params = handcrafted_params(
            dim,
            [np.zeros((dim, BODY_KEYPOINT_DIM))], [np.zeros(dim)],
            [np.zeros((dim, 2 * dim))], [v.copy()],
        )
        assert np.allclose(merge_features(params, [1.0, 2.0], [3.0, 4.0]), v)

    def test_matches_concat_forward_oracle(self):
        params = small_params(dim=5, seed=3)
        rng = np.random.default_rng(11)
        img, body = rng.standard_normal(5), rng.standard_normal(5)
        expected, _ = mlp_forward(params.merge_spec, params.merge_mlp,
                                  np.concatenate([img, body]))
        assert np.array_equal(merge_features(params, img, body), expected)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            merge_features(small_params(dim=4), np.ones(4), np.ones(3))


class TestScore:
    def test_self_similarity(self):
        params = small_params(tau=3.0)
        v = np.array([1.0, 2.0, -1.0, 0.5])
        result = score(params, v, v)
        assert result.cosine == pytest.approx(1.0)
        assert result.logit == pytest.approx(3.0)

    def test_orthogonal(self):
        params = small_params(dim=2, tau=5.0)
        result = score(params, [1.0, 0.0], [0.0, 1.0])
        assert result.cosine == 0.0
        assert result.logit == 0.0

    def test_hand_computation(self):
        params = small_params(dim=2, tau=2.0)
        result = score(params, [1.0, 0.0], [1.0, 1.0])
        assert result.cosine == pytest.approx(1 / np.sqrt(2))
        assert result.logit == pytest.approx(np.sqrt(2))

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateEmbeddingError):
            score(small_params(dim=2), [0.0, 0.0], [1.0, 1.0])

    def test_unnormalized_mode_uses_raw_inner_product(self):
        params = small_params(dim=2, tau=1.0, normalize=False)
        result = score(params, [2.0, 0.0], [3.0, 1.0])
        assert result.cosine == pytest.approx(6.0)

    @given(st.floats(0.1, 100.0), st.floats(0.1, 100.0))
    def test_scale_invariance(self, a, b):
        params = small_params(dim=3, tau=2.0)
        txt = np.array([1.0, -0.5, 2.0])
        merged = np.array([0.3, 0.7, -1.0])
        base = score(params, txt, merged)
        scaled = score(params, a * txt, b * merged)
        assert scaled.cosine == pytest.approx(base.cosine, rel=1e-12)
        assert scaled.logit == pytest.approx(base.logit, rel=1e-12)


class TestPairProbabilities:
    def test_equal_logits(self):
        assert np.allclose(pair_probabilities(1.3, 1.3), [0.5, 0.5])

    def test_log2_case(self):
        assert np.allclose(pair_probabilities(np.log(2), 0.0), [2 / 3, 1 / 3])

    def test_extreme_logits_stable(self):
        p = pair_probabilities(1000.0, 0.0)
        assert np.isfinite(p).all()
        assert p[0] == pytest.approx(1.0)
        # high-precision oracle: p2 = 1/(1+exp(1000)) underflows to 0
        assert p[1] == pytest.approx(0.0, abs=1e-300)

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_antisymmetry(self, a, b):
        assert np.allclose(pair_probabilities(a, b), pair_probabilities(b, a)[::-1])

    @given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0.01, 5.0))
    def test_monotone_in_first_logit(self, a, b, delta):
        assert pair_probabilities(a + delta, b)[0] > pair_probabilities(a, b)[0]

    @given(st.floats(-500, 500), st.floats(-500, 500))
    def test_sums_to_one(self, a, b):
        assert abs(pair_probabilities(a, b).sum() - 1.0) < 1e-12


class TestVariants:
    def test_pixel_duplicated_image_is_finite(self):
        params = small_params(dim=4, seed=5)
        rng = np.random.default_rng(1)
        txt, img = rng.standard_normal(4), rng.standard_normal(4)
        result = score_pixel_variant(params, txt, img, img)
        assert np.isfinite(result.logit)

    def test_pixel_equals_merge_then_score(self):
        params = small_params(dim=4, seed=5)
        rng = np.random.default_rng(2)
        txt, img, overlay = (rng.standard_normal(4) for _ in range(3))
        direct = score_pixel_variant(params, txt, overlay, img)
        composed = score(params, txt, merge_features(params, img, overlay))
        assert direct == composed

    def test_latent_equals_score_on_image(self):
        params = small_params(dim=4, seed=5)
        rng = np.random.default_rng(3)
        txt, img = rng.standard_normal(4), rng.standard_normal(4)
        assert score_latent_variant(params, txt, img) == score(params, txt, img)

    def test_latent_self_similarity(self):
        params = small_params(dim=3, tau=7.0)
        v = np.array([1.0, 1.0, 0.0])
        assert score_latent_variant(params, v, v).logit == pytest.approx(7.0)


def test_full_keypoint_path_shape_closure():
    params = small_params(dim=6, seed=8)
    rng = np.random.default_rng(4)
    result = score_keypoints(params, rng.standard_normal(6), rng.standard_normal(6),
                             rng.standard_normal(BODY_KEYPOINT_DIM))
    assert np.isfinite(result.cosine) and abs(result.cosine) <= 1 + 1e-9
    assert result.logit == pytest.approx(params.tau * result.cosine)


def test_init_is_seed_deterministic():
    a = init_scorer_params(42, dim=8, body_hidden=4, merge_hidden=4)
    b = init_scorer_params(42, dim=8, body_hidden=4, merge_hidden=4)
    for x, y in zip(a.trainable_arrays(), b.trainable_arrays()):
        assert np.array_equal(x, y)
