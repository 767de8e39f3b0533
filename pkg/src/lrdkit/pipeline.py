"""Whole-model operations behind the CLI commands."""

import time

import numpy as np

from .bench import Analytical, WallClock, time_model
from .decompose import decompose_conv_tucker2, decompose_fc, reconstruct, replace_layer
from .layers import LayerKind, LayerSpec, param_count
from .planner import CompressionTarget, fc_rank_for_compression, plan_model, tucker_ranks_for_compression
from .report import RANK_PLAN
from .tensor import reconstruction_error


class NoEligibleLayers(ValueError):
    pass


def eligible(layer, method):
    if not isinstance(layer, LayerSpec):
        return False
    is_conv = layer.kind is LayerKind.CONV
    if method == "auto":
        return True
    if method == "tucker":
        return is_conv
    if method == "svd":
        return not is_conv
    raise ValueError(f"unknown method {method!r}; use svd, tucker or auto")


def formula_ranks(layer, target):
    if layer.kind is LayerKind.CONV:
        return tucker_ranks_for_compression(layer.in_channels, layer.out_channels, layer.kernel_size, target)
    return (fc_rank_for_compression(layer.in_channels, layer.out_channels, target.alpha),)


def _factorize(name, layer, ranks, sigma):
    if layer.kind is LayerKind.CONV:
        r1, r2 = ranks
        return decompose_conv_tucker2(layer, r1, r2, origin=name)
    return decompose_fc(layer, ranks[0], sigma=sigma, origin=name)


def decompose_model(model, target, method="auto", plan=None, sigma="second"):
    """Replace every eligible layer; returns ``(model, layer_records, seconds)``.

    With ``plan`` (a rank-plan dict) each layer uses its optimized ranks, and
    layers the plan marks ``keep_original`` stay dense. ``seconds`` covers the
    decomposition work only, never the rank search.
    """
    plan_by_layer = {p["layer_id"]: p for p in plan["layers"]} if plan else {}
    records = []
    out = model
    seconds = 0.0
    for name, layer in model.layers.items():
        if not eligible(layer, method):
            continue
        p = plan_by_layer.get(name)
        if p is not None and p["keep_original"]:
            records.append({"layer_id": name, "kept_original": True, "params": param_count(layer)})
            continue
        ranks = tuple(p["ranks"]) if p is not None else formula_ranks(layer, target)
        t0 = time.perf_counter()
        f = _factorize(name, layer, ranks, sigma)
        seconds += time.perf_counter() - t0
        W_hat = reconstruct(f)
        W = layer.weight
        err = reconstruction_error(W, W_hat)
        out = replace_layer(out, name, f)
        records.append(
            {
                "layer_id": name,
                "kept_original": False,
                "method": f.kind.value,
                "dims": layer.dims,
                "ranks": list(f.ranks),
                "params_before": param_count(layer),
                "params_after": param_count(f),
                "compression": param_count(layer) / param_count(f),
                "reconstruction_error": err,
                "relative_error": err / float(np.sum(W * W)) if np.any(W) else 0.0,
            }
        )
    if not records:
        raise NoEligibleLayers("no eligible layers to decompose")
    return out, records, seconds


def make_backend(name, tile_width=8, flops_per_second=1e9, mode="forward", warmup=None, iters=None):
    if name == "analytical":
        return Analytical(tile_width=tile_width, flops_per_second=flops_per_second, mode=mode)
    if name == "wallclock":
        kw = {"mode": mode}
        if warmup is not None:
            kw["warmup_iters"] = warmup
        if iters is not None:
            kw["measure_iters"] = iters
        return WallClock.from_env(**kw)
    raise ValueError(f"unknown backend {name!r}; use analytical or wallclock")


def backend_dict(backend):
    if isinstance(backend, Analytical):
        return {"kind": "analytical", "tile_width": backend.tile_width,
                "flops_per_second": backend.flops_per_second, "mode": backend.mode}
    return {"kind": "wallclock", "warmup_iters": backend.warmup_iters,
            "measure_iters": backend.measure_iters, "mode": backend.mode}


def plan_ranks(model, target, input_shape, backend, step=1):
    """Rank plan dict plus per-layer curves and total search seconds."""
    plans = plan_model(model, target, input_shape, backend, step=step)
    doc = {
        "type": RANK_PLAN,
        "alpha": target.alpha,
        "beta": target.beta,
        "input_shape": list(input_shape),
        "backend": backend_dict(backend),
        "layers": [],
    }
    for p in plans:
        d = p.to_dict()
        d.pop("search_seconds")
        doc["layers"].append(d)
    return doc, {p.layer_id: p.curve for p in plans}, sum(p.search_seconds for p in plans)


def step_times(model, input_shape, timing, tile_width=8):
    """``(train_step, infer_step)`` seconds for ``model`` with the chosen timing source."""
    if timing == "analytical":
        train = time_model(model, input_shape, Analytical(tile_width=tile_width, mode="train"))
        infer = time_model(model, input_shape, Analytical(tile_width=tile_width, mode="forward"))
    else:
        train = time_model(model, input_shape, WallClock.from_env(mode="train"))
        infer = time_model(model, input_shape, WallClock.from_env(mode="forward"))
    return train, infer

