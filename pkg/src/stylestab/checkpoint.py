"""Saving and loading stylizer models and feature-net weights in the
GSLW container. Architecture hyperparameters ride along as tensors so a
checkpoint is self-describing."""

import numpy as np

from . import fileio
from .perceptual import SMALL_VGG, FeatureNet
from .stylizer import RecurrentStylizer, StylizerConfig


def save_model(path, model):
    state = model.state_dict()
    state["__meta.widths"] = np.asarray(model.config.widths, dtype=np.float64)
    state["__meta.n_residual"] = np.asarray([model.config.n_residual], dtype=np.float64)
    state["__meta.kernel"] = np.asarray([model.config.kernel], dtype=np.float64)
    fileio.write_weights(path, state)


def load_model(path):
    state = fileio.read_weights(path)
    config = StylizerConfig(
        widths=tuple(int(v) for v in state.pop("__meta.widths")),
        n_residual=int(state.pop("__meta.n_residual")[0]),
        kernel=int(state.pop("__meta.kernel")[0]),
    )
    model = RecurrentStylizer(config, seed=0)
    model.load_state_dict(state)
    return model


def save_feature_net(path, net):
    state = {}
    for name, (w, b) in net.weights.items():
        state[name + ".w"] = w
        state[name + ".b"] = b
    fileio.write_weights(path, state)


def load_feature_net(path, layers=SMALL_VGG):
    state = fileio.read_weights(path)
    weights = {}
    for l in layers:
        try:
            weights[l.name] = (state[l.name + ".w"], state[l.name + ".b"])
        except KeyError:
            raise fileio.FormatError(f"feature weights missing layer {l.name!r}")
    return FeatureNet(layers, weights=weights)
