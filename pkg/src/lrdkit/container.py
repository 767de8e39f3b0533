"""Single-file model container: JSON topology header plus raw weight blobs.

Layout (all integers little-endian)::

    8 bytes   magic b"LRDKIT\\x00\\x01"
    u32       format version
    u64       header length in bytes
    ...       UTF-8 JSON header {"format_version", "nodes", "blobs", "meta"}
    per blob  u64 byte length, then float64 little-endian row-major data

Blobs appear in the order listed in ``header["blobs"]``.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .layers import FactorizedLayer, LayerSpec
from .model import OPS, MaxPool2d, Model

MAGIC = b"LRDKIT\x00\x01"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def atomic_write(path, data, mode="wb"):
    """Write via a temporary file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _spec_descriptor(spec, name, blobs):
    blobs.append((f"{name}.weight", spec.weight))
    d = {
        "kind": spec.kind.value,
        "dims": spec.dims,
        "padding": spec.padding,
        "trainable": spec.trainable,
        "weight": f"{name}.weight",
        "bias": None,
    }
    if spec.bias is not None:
        blobs.append((f"{name}.bias", spec.bias))
        d["bias"] = f"{name}.bias"
    return d


def _describe(name, node, blobs):
    if isinstance(node, LayerSpec):
        return {"name": name, "type": "layer", **_spec_descriptor(node, name, blobs)}
    if isinstance(node, FactorizedLayer):
        return {
            "name": name,
            "type": "factorized",
            "kind": node.kind.value,
            "ranks": list(node.ranks),
            "origin": node.origin,
            "meta": node.meta,
            "sublayers": [_spec_descriptor(s, f"{name}.{i}", blobs) for i, s in enumerate(node.sublayers)],
        }
    op = {v: k for k, v in OPS.items()}[type(node)]
    d = {"name": name, "type": op}
    if isinstance(node, MaxPool2d):
        d["size"] = node.size
    return d


def dumps(model, meta=None):
    blobs = []
    nodes = [_describe(name, node, blobs) for name, node in model.layers.items()]
    header = {
        "format_version": FORMAT_VERSION,
        "nodes": nodes,
        "blobs": [{"name": n, "shape": list(a.shape)} for n, a in blobs],
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(hbytes)), hbytes]
    for _, arr in blobs:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        parts.append(struct.pack("<Q", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def save_model(path, model, meta=None):
    atomic_write(path, dumps(model, meta))


def _spec_from(d, arrays):
    try:
        weight = arrays[d["weight"]]
    except KeyError as exc:
        raise ContainerError(f"missing blob {exc}") from None
    if list(weight.shape) != list(d["dims"]):
        raise ContainerError(f"blob {d['weight']} has shape {weight.shape}, topology says {d['dims']}")
    bias = arrays.get(d["bias"]) if d.get("bias") else None
    return LayerSpec(d["kind"], weight, bias, padding=d.get("padding", 0), trainable=d.get("trainable", True))


def loads(data):
    if data[:8] != MAGIC:
        raise ContainerError("not an lrdkit model container")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported container format version {version}")
    pos = 8 + 12
    header = json.loads(data[pos : pos + hlen].decode())
    pos += hlen
    arrays = {}
    for blob in header["blobs"]:
        if pos + 8 > len(data):
            raise ContainerError("truncated container")
        (n,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        shape = tuple(blob["shape"])
        if n != 8 * int(np.prod(shape)):
            raise ContainerError(f"blob {blob['name']} size {n} does not match shape {shape}")
        chunk = data[pos : pos + n]
        if len(chunk) != n:
            raise ContainerError("truncated container")
        arrays[blob["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        pos += n
    layers = {}
    for d in header["nodes"]:
        t = d["type"]
        if t == "layer":
            layers[d["name"]] = _spec_from(d, arrays)
        elif t == "factorized":
            subs = [_spec_from(s, arrays) for s in d["sublayers"]]
            layers[d["name"]] = FactorizedLayer(d["kind"], subs, tuple(d["ranks"]), d.get("origin", ""), d.get("meta", {}))
        elif t == "maxpool2d":
            layers[d["name"]] = MaxPool2d(d.get("size", 2))
        elif t in OPS:
            layers[d["name"]] = OPS[t]()
        else:
            raise ContainerError(f"unknown node type {t!r}")
    return Model(layers), header.get("meta", {})


def load_model(path):
    """Return ``(model, meta)``."""
    with open(path, "rb") as fh:
        return loads(fh.read())

