"""Feature extraction network, Gram matrices, and image losses.

The loss network is a small frozen conv stack with named taps; weights
are seeded-random (or loaded from file) and never trained. All losses
are differentiable w.r.t. the synthesized image.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class LayerSpec:
    name: str
    c_in: int
    c_out: int
    kernel: int = 3
    stride: int = 1
    relu: bool = True


# conv3x3(3->16) relu [r1], conv3x3(16->16, /2) relu [r2], conv3x3(16->32) relu [r3]
SMALL_VGG = (
    LayerSpec("r1", 3, 16),
    LayerSpec("r2", 16, 16, stride=2),
    LayerSpec("r3", 16, 32),
)

DEFAULT_STYLE_TAPS = ("r1", "r2")
DEFAULT_CONTENT_TAPS = ("r3",)


def kaiming_conv(rng, c_out, c_in, k):
    std = np.sqrt(2.0 / (c_in * k * k))
    return rng.normal(0.0, std, size=(c_out, c_in, k, k))


@dataclass
class FeatureMap:
    layer: str
    tensor: Tensor

    @property
    def dims(self):
        return self.tensor.shape  # (C, H, W)


class FeatureNet:
    """Frozen convolutional feature extractor with named taps."""

    def __init__(self, layers=SMALL_VGG, weights=None, seed=0):
        self.layers = tuple(layers)
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("FeatureNet: duplicate layer names")
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = {}
            for l in self.layers:
                weights[l.name] = (kaiming_conv(rng, l.c_out, l.c_in, l.kernel),
                                   np.zeros(l.c_out))
        self.weights = {n: (np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                        for n, (w, b) in weights.items()}
        self.tap_names = tuple(names)

    def extract(self, image, taps):
        """Forward the image, returning FeatureMaps for the requested taps.

        Taps come back in network order regardless of the order given.
        """
        unknown = set(taps) - set(self.tap_names)
        if unknown:
            raise KeyError(f"unknown tap name(s): {sorted(unknown)}")
        wanted = set(taps)
        x = image if isinstance(image, Tensor) else Tensor(image)
        out = []
        for l in self.layers:
            w, b = self.weights[l.name]
            x = T.conv2d(x, Tensor(w), Tensor(b), stride=l.stride, pad=(l.kernel - 1) // 2)
            if l.relu:
                x = T.relu(x)
            if l.name in wanted:
                out.append(FeatureMap(l.name, x))
            if len(out) == len(wanted):
                break
        return out

    def weight_fingerprint(self):
        """Order-stable hashable summary, used to assert frozenness."""
        import hashlib
        h = hashlib.sha256()
        for name in sorted(self.weights):
            w, b = self.weights[name]
            h.update(name.encode())
            h.update(w.tobytes())
            h.update(b.tobytes())
        return h.hexdigest()


def feature_matrix(fmap):
    """Reshape a [C,H,W] feature map to the C x (H*W) matrix of per-pixel columns."""
    c, h, w = fmap.dims
    return T.reshape(fmap.tensor, (c, h * w))


def gram(fmap):
    """Gram matrix G = Phi Phi^T of a feature map (C x C, symmetric PSD)."""
    phi = feature_matrix(fmap)
    return T.matmul(phi, T.transpose(phi))


def content_loss(p_feats, c_feats):
    """Sum over content taps of normalized squared feature distance."""
    _check_aligned(p_feats, c_feats)
    total = None
    for fp, fc in zip(p_feats, c_feats):
        c, h, w = fp.dims
        term = T.scale(T.sum_all(T.square(T.sub(fp.tensor, fc.tensor))), 1.0 / (c * h * w))
        total = term if total is None else T.add(total, term)
    return total if total is not None else Tensor(0.0)


def style_loss(p_feats, style_grams):
    """Sum over style taps of normalized squared Frobenius Gram distance.

    style_grams: list of (layer_name, numpy C x C array), precomputed once
    per style image.
    """
    layers = [name for name, _ in style_grams]
    if [f.layer for f in p_feats] != layers:
        raise ValueError(f"style taps {[f.layer for f in p_feats]} do not match grams {layers}")
    total = None
    for fp, (_, gs) in zip(p_feats, style_grams):
        c, h, w = fp.dims
        gp = gram(fp)
        term = T.scale(T.sum_all(T.square(T.sub(gp, Tensor(gs)))), 1.0 / (c * h * w))
        total = term if total is None else T.add(total, term)
    return total if total is not None else Tensor(0.0)


def precompute_style_grams(net, style_image, taps):
    feats = net.extract(style_image, taps)
    return [(f.layer, gram(f).data.copy()) for f in feats]


def image_loss(net, p, c, style_grams, lambda_c, lambda_s,
               content_taps=DEFAULT_CONTENT_TAPS, style_taps=DEFAULT_STYLE_TAPS):
    """Weighted content + style loss of the synthesized image p."""
    if lambda_c < 0 or lambda_s < 0:
        raise ValueError("loss weights must be non-negative")
    total = Tensor(0.0)
    if lambda_c > 0:
        p_c = net.extract(p, content_taps)
        c_c = [FeatureMap(f.layer, f.tensor.detach()) for f in net.extract(c, content_taps)]
        total = T.add(total, T.scale(content_loss(p_c, c_c), lambda_c))
    if lambda_s > 0:
        p_s = net.extract(p, style_taps)
        total = T.add(total, T.scale(style_loss(p_s, style_grams), lambda_s))
    return total


def _check_aligned(a, b):
    if [f.layer for f in a] != [f.layer for f in b]:
        raise ValueError(f"layer mismatch: {[f.layer for f in a]} vs {[f.layer for f in b]}")
    for fa, fb in zip(a, b):
        if fa.dims != fb.dims:
            raise ValueError(f"shape mismatch at tap {fa.layer}: {fa.dims} vs {fb.dims}")
