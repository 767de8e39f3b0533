"""Layer descriptions: original trainable layers and their low-rank replacements."""

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


class LayerKind(str, Enum):
    FC = "fc"
    POINTWISE = "pointwise"
    CONV = "conv"


class FactorKind(str, Enum):
    SVD_PAIR = "svd_pair"
    TUCKER_TRIPLE = "tucker_triple"


@dataclass(eq=False)
class LayerSpec:
    """A dense trainable layer.

    ``weight`` is stored in-channels first: ``(C, S)`` for fully connected and
    pointwise layers, ``(C, S, k, k)`` for convolutions. ``trainable`` covers
    both weight and bias.
    """

    kind: LayerKind
    weight: np.ndarray
    bias: np.ndarray | None = None
    padding: int = 0
    trainable: bool = True

    def __post_init__(self):
        self.kind = LayerKind(self.kind)
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        w = self.weight
        if self.kind is LayerKind.CONV:
            if w.ndim != 4 or w.shape[2] != w.shape[3]:
                raise ValueError(f"conv weight must be (C, S, k, k), got {w.shape}")
            if w.shape[2] < 2:
                raise ValueError("1x1 convolutions use kind='pointwise' with a (C, S) weight")
        elif w.ndim != 2:
            raise ValueError(f"{self.kind.value} weight must be (C, S), got {w.shape}")
        if min(w.shape) < 1:
            raise ValueError("layer dimensions must be >= 1")
        if self.bias is not None and self.bias.shape != (w.shape[1],):
            raise ValueError(f"bias must have shape ({w.shape[1]},), got {self.bias.shape}")

    @property
    def in_channels(self):
        return self.weight.shape[0]

    @property
    def out_channels(self):
        return self.weight.shape[1]

    @property
    def kernel_size(self):
        return self.weight.shape[2] if self.kind is LayerKind.CONV else 1

    @property
    def dims(self):
        return list(self.weight.shape)

    def copy(self):
        return replace(
            self,
            weight=self.weight.copy(),
            bias=None if self.bias is None else self.bias.copy(),
        )


@dataclass(eq=False)
class FactorizedLayer:
    """A low-rank replacement: two sublayers (SVD) or three (Tucker-2)."""

    kind: FactorKind
    sublayers: list[LayerSpec]
    ranks: tuple[int, ...]
    origin: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = FactorKind(self.kind)
        self.ranks = tuple(int(r) for r in self.ranks)
        expected = 2 if self.kind is FactorKind.SVD_PAIR else 3
        if len(self.sublayers) != expected:
            raise ValueError(f"{self.kind.value} needs {expected} sublayers")
        for a, b in zip(self.sublayers, self.sublayers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError("sublayer dimensions do not chain")
        if any(s.bias is not None for s in self.sublayers[:-1]):
            raise ValueError("only the last sublayer may carry a bias")

    @property
    def in_channels(self):
        return self.sublayers[0].in_channels

    @property
    def out_channels(self):
        return self.sublayers[-1].out_channels

    @property
    def kernel_size(self):
        return max(s.kernel_size for s in self.sublayers)

    def copy(self):
        return FactorizedLayer(
            self.kind, [s.copy() for s in self.sublayers], self.ranks, self.origin, dict(self.meta)
        )


def param_count(layer):
    """Weights plus biases; factorized layers sum their sublayers."""
    if isinstance(layer, FactorizedLayer):
        return sum(param_count(s) for s in layer.sublayers)
    n = int(layer.weight.size)
    if layer.bias is not None:
        n += int(layer.bias.size)
    return n
