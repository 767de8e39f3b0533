"""Sequential models with hand-written reverse-mode gradients.

Every node is a LayerSpec, a FactorizedLayer or a parameter-free op. The
forward pass caches what each node's backward needs; the backward pass walks
the nodes in reverse, skips weight gradients for frozen (sub)layers and still
propagates the input gradient through them.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .layers import FactorizedLayer, LayerKind, LayerSpec
from .tensor import ShapeError


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2d:
    size: int = 2


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


OPS = {"relu": ReLU, "maxpool2d": MaxPool2d, "global_avg_pool": GlobalAvgPool, "flatten": Flatten}


class Model:
    """Ordered mapping of node name to node."""

    def __init__(self, layers):
        self.layers = dict(layers)

    def __repr__(self):
        body = ", ".join(f"{k}={type(v).__name__}" for k, v in self.layers.items())
        return f"Model({body})"

    def copy(self):
        return Model(
            {k: v.copy() if isinstance(v, (LayerSpec, FactorizedLayer)) else v for k, v in self.layers.items()}
        )

    def param_layers(self):
        """Yield ``(key, LayerSpec)`` for every parameterized layer and sublayer."""
        for name, node in self.layers.items():
            if isinstance(node, LayerSpec):
                yield name, node
            elif isinstance(node, FactorizedLayer):
                for i, sub in enumerate(node.sublayers):
                    yield f"{name}.{i}", sub

    def parameters(self):
        """Yield ``(param_key, array, owning LayerSpec)``."""
        for key, spec in self.param_layers():
            yield f"{key}.weight", spec.weight, spec
            if spec.bias is not None:
                yield f"{key}.bias", spec.bias, spec

    def factorized(self):
        return {k: v for k, v in self.layers.items() if isinstance(v, FactorizedLayer)}

    def num_params(self):
        return sum(a.size for _, a, _ in self.parameters())

    def trainable_weight_count(self):
        return sum(1 for _, spec in self.param_layers() if spec.trainable)

    def output_shape(self, input_shape):
        shape = tuple(input_shape)
        for node in self.layers.values():
            shape = node_output_shape(node, shape)
        return shape


def node_output_shape(node, shape):
    if isinstance(node, FactorizedLayer):
        for sub in node.sublayers:
            shape = node_output_shape(sub, shape)
        return shape
    if isinstance(node, LayerSpec):
        C = node.in_channels
        if node.kind is LayerKind.FC:
            if len(shape) != 2 or shape[1] != C:
                raise ShapeError(f"fc layer expects (N, {C}), got {shape}")
            return (shape[0], node.out_channels)
        if node.kind is LayerKind.POINTWISE and len(shape) == 2:
            if shape[1] != C:
                raise ShapeError(f"pointwise layer expects {C} channels, got {shape}")
            return (shape[0], node.out_channels)
        if len(shape) != 4 or shape[1] != C:
            raise ShapeError(f"{node.kind.value} layer expects (N, {C}, H, W), got {shape}")
        k, p = node.kernel_size, node.padding
        return (shape[0], node.out_channels, shape[2] + 2 * p - k + 1, shape[3] + 2 * p - k + 1)
    if isinstance(node, ReLU):
        return shape
    if isinstance(node, MaxPool2d):
        return shape[:2] + (shape[2] // node.size, shape[3] // node.size)
    if isinstance(node, GlobalAvgPool):
        return shape[:2]
    if isinstance(node, Flatten):
        return (shape[0], int(np.prod(shape[1:])))
    raise TypeError(f"unknown node {node!r}")


# -- layer kernels ---------------------------------------------------------


def layer_forward(spec, x):
    W, b = spec.weight, spec.bias
    if spec.kind is LayerKind.CONV:
        N, C, H, Wd = x.shape
        k, p = spec.kernel_size, spec.padding
        Ho, Wo = H + 2 * p - k + 1, Wd + 2 * p - k + 1
        cols = kernels.im2col(np.ascontiguousarray(x), k, k, p)
        Wm = W.transpose(1, 0, 2, 3).reshape(spec.out_channels, -1)
        out = cols @ Wm.T
        if b is not None:
            out += b
        y = out.reshape(N, Ho, Wo, -1).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (x.shape, cols)
    if x.ndim == 4:
        N, C, H, Wd = x.shape
        flat = x.transpose(0, 2, 3, 1).reshape(-1, C)
        out = flat @ W
        if b is not None:
            out += b
        y = out.reshape(N, H, Wd, -1).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (x.shape, flat)
    out = x @ W
    if b is not None:
        out = out + b
    return out, (x.shape, x)


def layer_backward(spec, g, cache, need_weight_grad=None):
    """Return ``(dW, db, dx)``; ``dW``/``db`` are None for frozen layers."""
    if need_weight_grad is None:
        need_weight_grad = spec.trainable
    x_shape, saved = cache
    W = spec.weight
    dW = db = None
    if spec.kind is LayerKind.CONV:
        N, C, H, Wd = x_shape
        k, p = spec.kernel_size, spec.padding
        S = spec.out_channels
        gm = g.transpose(0, 2, 3, 1).reshape(-1, S)
        Wm = W.transpose(1, 0, 2, 3).reshape(S, -1)
        if need_weight_grad:
            dW = np.ascontiguousarray((gm.T @ saved).reshape(S, C, k, k).transpose(1, 0, 2, 3))
            if spec.bias is not None:
                db = gm.sum(axis=0)
        dcols = np.ascontiguousarray(gm @ Wm)
        dx = kernels.col2im(dcols, N, C, H, Wd, k, k, p)
        return dW, db, dx
    if len(x_shape) == 4:
        N, C, H, Wd = x_shape
        gm = g.transpose(0, 2, 3, 1).reshape(-1, spec.out_channels)
        if need_weight_grad:
            dW = saved.T @ gm
            if spec.bias is not None:
                db = gm.sum(axis=0)
        dx = (gm @ W.T).reshape(N, H, Wd, C).transpose(0, 3, 1, 2)
        return dW, db, np.ascontiguousarray(dx)
    if need_weight_grad:
        dW = saved.T @ g
        if spec.bias is not None:
            db = g.sum(axis=0)
    return dW, db, g @ W.T


def _op_forward(node, x):
    if isinstance(node, ReLU):
        mask = x > 0
        return x * mask, mask
    if isinstance(node, MaxPool2d):
        s = node.size
        N, C, H, W = x.shape
        Ho, Wo = H // s, W // s
        xc = x[:, :, : Ho * s, : Wo * s].reshape(N, C, Ho, s, Wo, s).transpose(0, 1, 2, 4, 3, 5)
        win = xc.reshape(N, C, Ho, Wo, s * s)
        idx = win.argmax(axis=-1)
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)
    if isinstance(node, GlobalAvgPool):
        return x.mean(axis=(2, 3)), x.shape
    if isinstance(node, Flatten):
        return x.reshape(x.shape[0], -1), x.shape
    raise TypeError(f"unknown node {node!r}")


def _op_backward(node, g, cache):
    if isinstance(node, ReLU):
        return g * cache
    if isinstance(node, MaxPool2d):
        shape, idx = cache
        s = node.size
        N, C, H, W = shape
        Ho, Wo = idx.shape[2], idx.shape[3]
        win = np.zeros((N, C, Ho, Wo, s * s))
        np.put_along_axis(win, idx[..., None], g[..., None], axis=-1)
        block = win.reshape(N, C, Ho, Wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho * s, Wo * s)
        dx = np.zeros(shape)
        dx[:, :, : Ho * s, : Wo * s] = block
        return dx
    if isinstance(node, GlobalAvgPool):
        N, C, H, W = cache
        return np.broadcast_to(g[:, :, None, None] / (H * W), cache).copy()
    if isinstance(node, Flatten):
        return g.reshape(cache)
    raise TypeError(f"unknown node {node!r}")


# -- model passes ----------------------------------------------------------


def node_forward(node, x):
    if isinstance(node, LayerSpec):
        return layer_forward(node, x)
    if isinstance(node, FactorizedLayer):
        caches = []
        for sub in node.sublayers:
            x, c = layer_forward(sub, x)
            caches.append(c)
        return x, caches
    return _op_forward(node, x)


def forward(model, batch):
    """Run the model; returns ``(outputs, cache)``."""
    x = np.asarray(batch, dtype=np.float64)
    model.output_shape(x.shape)
    cache = []
    for node in model.layers.values():
        x, c = node_forward(node, x)
        cache.append(c)
    return x, cache


def predict(model, batch):
    return forward(model, batch)[0]


def backward(model, loss_grad, cache):
    """Gradients ``{param_key: array}`` for trainable parameters plus the input gradient."""
    if len(cache) != len(model.layers):
        raise ValueError("cache does not belong to this model")
    grads = {}
    g = loss_grad
    for (name, node), c in zip(reversed(list(model.layers.items())), reversed(cache)):
        if isinstance(node, LayerSpec):
            subs = [(name, node, c)]
        elif isinstance(node, FactorizedLayer):
            if len(c) != len(node.sublayers):
                raise ValueError(f"stale cache for {name!r}")
            subs = [(f"{name}.{i}", s, sc) for i, (s, sc) in enumerate(zip(node.sublayers, c))][::-1]
        else:
            g = _op_backward(node, g, c)
            continue
        for key, spec, sc in subs:
            dW, db, g = layer_backward(spec, g, sc)
            if dW is not None:
                grads[f"{key}.weight"] = dW
                if db is not None:
                    grads[f"{key}.bias"] = db
    return grads, g


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
