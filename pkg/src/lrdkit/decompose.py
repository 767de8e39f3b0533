"""Replace dense layers with truncated-SVD pairs or Tucker-2 triples."""

import numpy as np

from .layers import FactorKind, FactorizedLayer, LayerKind, LayerSpec, param_count
from .model import Model
from .tensor import mode_n_product, mode_n_unfold, multilinear_product, svd, truncated_svd

SIGMA_PLACEMENTS = ("second", "split")


class RankError(ValueError):
    pass


def _check_rank(name, r, hi):
    if not 1 <= r <= hi:
        raise RankError(f"{name}={r} outside [1, {hi}]")


def decompose_fc(layer, r, sigma="second", full=None, origin=""):
    """Split a ``(C, S)`` weight into ``C -> r`` and ``r -> S`` sublayers.

    With ``sigma="second"`` the first sublayer holds the orthonormal left
    singular vectors and the second holds ``diag(sigma) Vᵀ``; ``"split"``
    puts ``sqrt(sigma)`` on each side. ``full`` may carry a precomputed SVD
    of the weight so rank sweeps decompose only once.
    """
    if layer.kind not in (LayerKind.FC, LayerKind.POINTWISE):
        raise ValueError(f"decompose_fc needs an fc or pointwise layer, got {layer.kind.value}")
    if sigma not in SIGMA_PLACEMENTS:
        raise ValueError(f"sigma placement must be one of {SIGMA_PLACEMENTS}")
    C, S = layer.weight.shape
    _check_rank("r", r, min(C, S))
    t = truncated_svd(layer.weight, r, full=full)
    if sigma == "second":
        first, second = t.U, t.sigma[:, None] * t.Vt
    else:
        root = np.sqrt(t.sigma)
        first, second = t.U * root, root[:, None] * t.Vt
    subs = [
        LayerSpec(layer.kind, first, trainable=layer.trainable),
        LayerSpec(
            layer.kind,
            second,
            None if layer.bias is None else layer.bias.copy(),
            trainable=layer.trainable,
        ),
    ]
    return FactorizedLayer(FactorKind.SVD_PAIR, subs, (r,), origin, {"sigma": sigma})


def _conv3(layer):
    C, S, k, _ = layer.weight.shape
    return layer.weight.reshape(C, S, k * k)


def _hooi(W3, U, V, iters):
    r1, r2 = U.shape[1], V.shape[1]
    for _ in range(iters):
        U = svd(mode_n_unfold(mode_n_product(W3, V.T, 1), 0)).U[:, :r1]
        V = svd(mode_n_unfold(mode_n_product(W3, U.T, 0), 1)).U[:, :r2]
    return U, V


def decompose_conv_tucker2(layer, r1, r2, hooi_iters=0, factors=None, origin="", core=None):
    """Tucker-2 split of a ``(C, S, k, k)`` conv into 1×1, k×k and 1×1 convs.

    Factors come from truncated HOSVD of the ``(C, S, k²)`` reshape (spatial
    dims flattened row-major); ``hooi_iters`` optionally refines them.
    ``factors`` may pass precomputed full SVDs of the mode-0 and mode-1
    unfoldings and ``core`` the matching precomputed core.
    """
    if layer.kind is not LayerKind.CONV:
        raise ValueError(f"Tucker-2 needs a conv layer, got {layer.kind.value}")
    C, S, k, _ = layer.weight.shape
    _check_rank("r1", r1, min(C, S * k * k))
    _check_rank("r2", r2, min(S, C * k * k))
    W3 = _conv3(layer)
    if factors is None:
        factors = (svd(mode_n_unfold(W3, 0)), svd(mode_n_unfold(W3, 1)))
    U = factors[0].U[:, :r1]
    V = factors[1].U[:, :r2]
    if hooi_iters:
        U, V = _hooi(W3, U, V, hooi_iters)
        core = None
    if core is None:
        core = mode_n_product(mode_n_product(W3, U.T, 0), V.T, 1)
    subs = [
        LayerSpec(LayerKind.POINTWISE, U, trainable=layer.trainable),
        LayerSpec(
            LayerKind.CONV, core.reshape(r1, r2, k, k), padding=layer.padding, trainable=layer.trainable
        ),
        LayerSpec(
            LayerKind.POINTWISE,
            V.T,
            None if layer.bias is None else layer.bias.copy(),
            trainable=layer.trainable,
        ),
    ]
    return FactorizedLayer(FactorKind.TUCKER_TRIPLE, subs, (r1, r2), origin, {"hooi_iters": hooi_iters})


class Decomposer:
    """Caches the SVDs of one layer so a rank sweep decomposes it once.

    Calling the decomposer with a rank ``r`` returns the FactorizedLayer at
    that rank; for convolutions ``r2 = floor(beta * r)`` clamped to
    ``[1, S]``.
    """

    def __init__(self, layer, beta=1.0, sigma="second", origin=""):
        self.layer = layer
        self.beta = beta
        self.sigma = sigma
        self.origin = origin
        self._factors = None
        self._cached_core = None

    @property
    def factors(self):
        if self._factors is None:
            if self.layer.kind is LayerKind.CONV:
                W3 = _conv3(self.layer)
                self._factors = (svd(mode_n_unfold(W3, 0)), svd(mode_n_unfold(W3, 1)))
            else:
                self._factors = svd(self.layer.weight)
        return self._factors

    def ranks_for(self, r):
        if self.layer.kind is LayerKind.CONV:
            S = self.layer.out_channels
            return r, min(S, max(1, int(np.floor(self.beta * r))))
        return (r,)

    def _core(self, r1, r2):
        # truncated HOSVD cores are nested: the rank-(r1, r2) core is a leading block
        if self._cached_core is None or self._cached_core.shape[0] < r1 or self._cached_core.shape[1] < r2:
            fu, fv = self.factors
            W3 = _conv3(self.layer)
            self._cached_core = mode_n_product(mode_n_product(W3, fu.U[:, :r1].T, 0), fv.U[:, :r2].T, 1)
        return np.ascontiguousarray(self._cached_core[:r1, :r2])

    def __call__(self, r):
        if self.layer.kind is LayerKind.CONV:
            r1, r2 = self.ranks_for(r)
            return decompose_conv_tucker2(
                self.layer, r1, r2, factors=self.factors, origin=self.origin, core=self._core(r1, r2)
            )
        return decompose_fc(self.layer, r, sigma=self.sigma, full=self.factors, origin=self.origin)


def decompose_layer(layer, ranks, method="auto", sigma="second", origin=""):
    """Decompose with ``method`` in {auto, svd, tucker}; ``ranks`` is ``r`` or ``(r1, r2)``."""
    if method == "auto":
        method = "tucker" if layer.kind is LayerKind.CONV else "svd"
    ranks = tuple(np.atleast_1d(ranks).tolist())
    if method == "svd":
        if layer.kind is LayerKind.CONV:
            raise ValueError("svd method applies to fc and pointwise layers only")
        return decompose_fc(layer, int(ranks[0]), sigma=sigma, origin=origin)
    if method == "tucker":
        if layer.kind is not LayerKind.CONV:
            raise ValueError("tucker method applies to k×k conv layers only")
        r1, r2 = (ranks * 2)[:2]
        return decompose_conv_tucker2(layer, int(r1), int(r2), origin=origin)
    raise ValueError(f"unknown method {method!r}")


def reconstruct(f):
    """Dense weight represented by a factorized layer, in the original layout."""
    if f.kind is FactorKind.SVD_PAIR:
        a, b = f.sublayers
        return a.weight @ b.weight
    first, core, last = f.sublayers
    r1, r2, k, _ = core.weight.shape
    W3 = multilinear_product(core.weight.reshape(r1, r2, k * k), first.weight, last.weight.T)
    return W3.reshape(first.in_channels, last.out_channels, k, k)


def replace_layer(model, layer_id, new):
    """Return a copy of ``model`` with ``layer_id`` swapped for ``new``.

    ``new`` is usually a FactorizedLayer whose ``origin`` names ``layer_id``;
    passing a LayerSpec restores a dense layer. Input/output channels and the
    kernel's spatial footprint must match the node being replaced.
    """
    if layer_id not in model.layers:
        raise KeyError(f"unknown layer id {layer_id!r}")
    old = model.layers[layer_id]
    if not isinstance(old, (LayerSpec, FactorizedLayer)):
        raise ValueError(f"layer {layer_id!r} has no parameters to replace")
    if isinstance(new, FactorizedLayer) and new.origin and new.origin != layer_id:
        raise ValueError(f"factorized layer originates from {new.origin!r}, not {layer_id!r}")
    if (old.in_channels, old.out_channels) != (new.in_channels, new.out_channels):
        raise ValueError(
            f"shape mismatch replacing {layer_id!r}: "
            f"{old.in_channels}->{old.out_channels} vs {new.in_channels}->{new.out_channels}"
        )
    if old.kernel_size != new.kernel_size or _padding(old) != _padding(new):
        raise ValueError(f"spatial footprint of {layer_id!r} would change")
    layers = {name: (new if name == layer_id else node) for name, node in model.layers.items()}
    return Model(layers)


def _padding(node):
    if isinstance(node, FactorizedLayer):
        return sum(s.padding for s in node.sublayers)
    return node.padding


def param_delta(old, new):
    return param_count(new) - param_count(old)
