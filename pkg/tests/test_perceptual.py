"""Feature extraction, Gram matrices, and the image losses."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import stylestab.tensor as T
from stylestab.perceptual import (DEFAULT_CONTENT_TAPS, DEFAULT_STYLE_TAPS,
                                  FeatureMap, FeatureNet, LayerSpec,
                                  content_loss, feature_matrix, gram,
                                  image_loss, precompute_style_grams,
                                  style_loss)
from stylestab.tensor import Tensor, finite_difference_check


def fmap(arr, layer="r1"):
    return FeatureMap(layer, Tensor(np.asarray(arr, dtype=np.float64)))


def identity_net():
    layers = (LayerSpec("id", 3, 3, kernel=1, relu=False),)
    w = np.eye(3).reshape(3, 3, 1, 1)
    return FeatureNet(layers, weights={"id": (w, np.zeros(3))})


# ---- extract --------------------------------------------------------------

def test_extract_zero_image_gives_zero_features(net):
    feats = net.extract(Tensor(np.zeros((3, 8, 8))), DEFAULT_STYLE_TAPS)
    for f in feats:
        np.testing.assert_array_equal(f.tensor.data, 0.0)


def test_extract_identity_net_returns_input():
    img = np.random.default_rng(0).random((3, 5, 5))
    feats = identity_net().extract(Tensor(img), ("id",))
    np.testing.assert_allclose(feats[0].tensor.data, img, atol=1e-12)


def test_extract_unknown_tap_raises(net):
    with pytest.raises(KeyError):
        net.extract(Tensor(np.zeros((3, 8, 8))), ("nope",))


def test_extract_returns_taps_in_network_order(net):
    feats = net.extract(Tensor(np.zeros((3, 8, 8))), ("r2", "r1"))
    assert [f.layer for f in feats] == ["r1", "r2"]


def test_extract_matches_straight_line_forward(net):
    """Golden oracle: an independent numpy forward pass of the same net."""
    rng = np.random.default_rng(5)
    img = rng.random((3, 8, 8))

    def conv(x, w, b, stride):
        k = w.shape[2]
        pad = (k - 1) // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        h_out = (x.shape[1] + 2 * pad - k) // stride + 1
        w_out = (x.shape[2] + 2 * pad - k) // stride + 1
        out = np.zeros((w.shape[0], h_out, w_out))
        for co in range(w.shape[0]):
            for i in range(h_out):
                for j in range(w_out):
                    patch = xp[:, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[co, i, j] = np.sum(patch * w[co]) + b[co]
        return out

    x = img
    golden = {}
    for spec in net.layers:
        w, b = net.weights[spec.name]
        x = np.maximum(conv(x, w, b, spec.stride), 0.0)
        golden[spec.name] = x.copy()

    for f in net.extract(Tensor(img), ("r1", "r2", "r3")):
        np.testing.assert_allclose(f.tensor.data, golden[f.layer], atol=1e-10)


# ---- gram -----------------------------------------------------------------

def test_gram_single_pixel():
    g = gram(fmap([[[3.0]], [[4.0]]])).data
    np.testing.assert_array_equal(g, [[9.0, 12.0], [12.0, 16.0]])


def test_gram_zero_features():
    np.testing.assert_array_equal(gram(fmap(np.zeros((2, 3, 3)))).data, 0.0)


def test_gram_orthogonal_rows_are_diagonal():
    g = gram(fmap([[[1.0, 0.0]], [[0.0, 2.0]]])).data
    np.testing.assert_array_equal(g, [[1.0, 0.0], [0.0, 4.0]])


@given(hnp.arrays(np.float64, (3, 2, 4), elements=st.floats(-3, 3)))
def test_gram_symmetric_psd(arr):
    g = gram(fmap(arr)).data
    assert np.abs(g - g.T).max() < 1e-10
    assert np.linalg.eigvalsh(g).min() >= -1e-8 * max(np.trace(g), 1e-30)


@given(hnp.arrays(np.float64, (3, 2, 4), elements=st.floats(-3, 3)))
def test_gram_trace_equals_squared_frobenius_norm(arr):
    g = gram(fmap(arr)).data
    assert abs(np.trace(g) - np.sum(arr ** 2)) < 1e-10


def test_feature_matrix_reshape_roundtrip(rng):
    arr = rng.random((4, 3, 5))
    phi = feature_matrix(fmap(arr))
    assert phi.shape == (4, 15)
    np.testing.assert_array_equal(phi.data.reshape(4, 3, 5), arr)


# ---- content / style losses ----------------------------------------------

def test_content_loss_identical_features_is_zero(rng):
    f = fmap(rng.random((2, 3, 3)))
    assert content_loss([f], [f]).item() == 0.0


def test_content_loss_scalar_case():
    assert content_loss([fmap([[[2.0]]])], [fmap([[[5.0]]])]).item() == 9.0


def test_content_loss_matches_brute_force(rng):
    a, b = rng.random((4, 3, 5)), rng.random((4, 3, 5))
    want = np.sum((a - b) ** 2) / a.size
    assert abs(content_loss([fmap(a)], [fmap(b)]).item() - want) < 1e-12


def test_content_loss_layer_mismatch_raises(rng):
    with pytest.raises(ValueError):
        content_loss([fmap(rng.random((2, 2, 2)), "r1")],
                     [fmap(rng.random((2, 2, 2)), "r2")])


def grams_of(arrs):
    return [(f"r{i + 1}", gram(fmap(a)).data) for i, a in enumerate(arrs)]


def test_style_loss_identical_features_is_zero(rng):
    a = rng.random((2, 3, 3))
    assert style_loss([fmap(a)], grams_of([a])).item() == 0.0


def test_style_loss_invariant_under_pixel_permutation(rng):
    a = rng.random((3, 2, 4))
    perm = rng.permutation(8)
    b = a.reshape(3, 8)[:, perm].reshape(3, 2, 4)
    # permutation only reorders the matmul's summands; equality holds to
    # accumulation noise, not bitwise
    np.testing.assert_allclose(gram(fmap(a)).data, gram(fmap(b)).data,
                               rtol=0, atol=1e-12)
    assert style_loss([fmap(b)], grams_of([a])).item() < 1e-24


def test_style_loss_matches_brute_force(rng):
    a, b = rng.random((3, 2, 4)), rng.random((3, 2, 4))
    ga = a.reshape(3, 8) @ a.reshape(3, 8).T
    gb = b.reshape(3, 8) @ b.reshape(3, 8).T
    want = np.sum((ga - gb) ** 2) / a.size
    assert abs(style_loss([fmap(a)], grams_of([b])).item() - want) < 1e-12


def test_style_loss_layer_mismatch_raises(rng):
    with pytest.raises(ValueError):
        style_loss([fmap(rng.random((2, 2, 2)), "r2")],
                   grams_of([rng.random((2, 2, 2))]))


# ---- image_loss -----------------------------------------------------------

def test_image_loss_zero_weights(net, rng):
    p = Tensor(rng.random((3, 8, 8)))
    c = Tensor(rng.random((3, 8, 8)))
    grams = precompute_style_grams(net, Tensor(rng.random((3, 8, 8))),
                                   DEFAULT_STYLE_TAPS)
    assert image_loss(net, p, c, grams, 0.0, 0.0).item() == 0.0


def test_image_loss_content_term_vanishes_at_content(net, rng):
    c = Tensor(rng.random((3, 8, 8)))
    grams = precompute_style_grams(net, Tensor(rng.random((3, 8, 8))),
                                   DEFAULT_STYLE_TAPS)
    assert image_loss(net, c, c, grams, 1.0, 0.0).item() == 0.0


def test_image_loss_recomposes_from_parts(net, rng):
    p = Tensor(rng.random((3, 8, 8)))
    c = Tensor(rng.random((3, 8, 8)))
    s = Tensor(rng.random((3, 8, 8)))
    grams = precompute_style_grams(net, s, DEFAULT_STYLE_TAPS)
    lc = content_loss(net.extract(p, DEFAULT_CONTENT_TAPS),
                      net.extract(c, DEFAULT_CONTENT_TAPS)).item()
    ls = style_loss(net.extract(p, DEFAULT_STYLE_TAPS), grams).item()
    total = image_loss(net, p, c, grams, 1.0, 10.0).item()
    assert abs(total - (lc + 10.0 * ls)) < 1e-10


def test_loss_gradients_match_finite_differences(net, rng):
    c = Tensor(rng.random((3, 8, 8)))
    grams = precompute_style_grams(net, Tensor(rng.random((3, 8, 8))),
                                   DEFAULT_STYLE_TAPS)
    for _ in range(3):
        p = Tensor(rng.random((3, 8, 8)), requires_grad=True)
        err = finite_difference_check(
            lambda p: image_loss(net, p, c, grams, 1.0, 10.0), [p], rng=rng)
        assert err < 1e-4


def test_feature_net_is_deterministic_per_seed():
    assert FeatureNet(seed=3).weight_fingerprint() == FeatureNet(seed=3).weight_fingerprint()
    assert FeatureNet(seed=3).weight_fingerprint() != FeatureNet(seed=4).weight_fingerprint()
