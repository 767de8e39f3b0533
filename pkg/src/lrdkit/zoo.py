"""Small reference models used by the CLI ``init`` command and the tests."""

import numpy as np

from .layers import LayerKind, LayerSpec
from .model import GlobalAvgPool, MaxPool2d, Model, ReLU


def _he(rng, fan_in, shape):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def conv(rng, C, S, k=3, padding=1, bias=True):
    return LayerSpec(LayerKind.CONV, _he(rng, C * k * k, (C, S, k, k)), np.zeros(S) if bias else None, padding)


def fc(rng, C, S, bias=True):
    return LayerSpec(LayerKind.FC, _he(rng, C, (C, S)), np.zeros(S) if bias else None)


def toy_cnn(in_channels=3, width=16, classes=3, seed=0):
    """conv3x3 -> relu -> pool -> conv3x3 -> relu -> global pool -> fc."""
    rng = np.random.default_rng(seed)
    return Model(
        {
            "conv1": conv(rng, in_channels, width),
            "relu1": ReLU(),
            "pool1": MaxPool2d(2),
            "conv2": conv(rng, width, 2 * width),
            "relu2": ReLU(),
            "gap": GlobalAvgPool(),
            "fc": fc(rng, 2 * width, classes),
        }
    )


def mlp(in_features=4, hidden=16, classes=2, seed=0):
    rng = np.random.default_rng(seed)
    return Model({"fc1": fc(rng, in_features, hidden), "relu": ReLU(), "fc2": fc(rng, hidden, classes)})


def single_conv(C=512, S=512, k=3, seed=0, padding=1):
    """One k×k convolution, e.g. the 512×512×3×3 layer used in rank-search demos."""
    rng = np.random.default_rng(seed)
    return Model({"conv": conv(rng, C, S, k, padding)})


def single_fc(C=512, S=512, seed=0):
    rng = np.random.default_rng(seed)
    return Model({"fc": fc(rng, C, S)})


ARCHITECTURES = {
    "toy-cnn": (toy_cnn, lambda kw: [kw.get("in_channels", 3), kw.get("size", 8), kw.get("size", 8)]),
    "mlp": (mlp, lambda kw: [kw.get("in_features", 4)]),
    "conv": (single_conv, lambda kw: [kw.get("C", 512), kw.get("size", 8), kw.get("size", 8)]),
    "fc": (single_fc, lambda kw: [kw.get("C", 512)]),
}


def build(arch, **kwargs):
    """Return ``(model, sample_shape)`` where ``sample_shape`` excludes the batch dim."""
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}")
    factory, shape = ARCHITECTURES[arch]
    size = kwargs.pop("size", None)
    shape_kw = dict(kwargs, **({"size": size} if size else {}))
    return factory(**kwargs), shape(shape_kw)

