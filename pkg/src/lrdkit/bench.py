"""Step-time measurement and modelling for layers and models.

Two backends:

* :class:`WallClock` times real forward (or forward+backward) passes with a
  monotonic nanosecond clock and reports the median over ``measure_iters``
  runs after ``warmup_iters`` discarded runs.
* :class:`Analytical` is a deterministic cost model: FLOPs (2 per
  multiply-accumulate, bias adds ignored) where every channel dimension is
  first rounded up to a multiple of ``tile_width``, divided by
  ``flops_per_second``. It reproduces the step structure that odd channel
  counts cause on tiled hardware.
"""

import csv
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .layers import FactorizedLayer, LayerKind, LayerSpec
from .model import backward, forward, layer_backward, layer_forward, node_output_shape

ENV_WARMUP = "LRDKIT_BENCH_WARMUP"
ENV_ITERS = "LRDKIT_BENCH_ITERS"

_TIMED_REGION = threading.Lock()


@dataclass(frozen=True)
class Analytical:
    tile_width: int = 8
    flops_per_second: float = 1e9
    mode: str = "forward"
    noise_floor: float = 0.0

    def __post_init__(self):
        if self.tile_width < 1:
            raise ValueError("tile_width must be >= 1")
        if self.flops_per_second <= 0:
            raise ValueError("flops_per_second must be > 0")
        _check_mode(self.mode)

    def cost(self, node, input_shape):
        """Seconds for ``node``; subclasses may substitute other cost models."""
        return model_cost(node, input_shape, self)


@dataclass
class WallClock:
    warmup_iters: int = 2
    measure_iters: int = 7
    mode: str = "forward"
    seed: int = 0
    clock: object = field(default=time.perf_counter_ns, repr=False)

    def __post_init__(self):
        if self.warmup_iters < 1:
            raise ValueError("warmup_iters must be >= 1")
        if self.measure_iters < 3:
            raise ValueError("measure_iters must be >= 3 (median of at least three)")
        _check_mode(self.mode)

    @classmethod
    def from_env(cls, **kwargs):
        """Build with iteration counts overridable through the environment."""
        if ENV_WARMUP in os.environ:
            kwargs["warmup_iters"] = int(os.environ[ENV_WARMUP])
        if ENV_ITERS in os.environ:
            kwargs["measure_iters"] = int(os.environ[ENV_ITERS])
        return cls(**kwargs)


def _check_mode(mode):
    if mode not in ("forward", "train"):
        raise ValueError(f"mode must be 'forward' or 'train', got {mode!r}")


def padded(d, V):
    return -(-int(d) // V) * V


def spec_flops(spec, input_shape, V=1):
    """Padded forward FLOPs of one dense layer and its output shape."""
    out = node_output_shape(spec, tuple(input_shape))
    C, S = padded(spec.in_channels, V), padded(spec.out_channels, V)
    positions = int(np.prod(out)) // out[1]  # N * Ho * Wo, or N for 2-D
    k = spec.kernel_size
    return 2.0 * positions * C * S * k * k, out


def model_cost(model_or_node, input_shape, backend):
    """Analytical seconds for a layer, factorized layer or whole model.

    In ``train`` mode each layer costs forward + input-gradient + (only when
    trainable) weight-gradient FLOPs, each equal to the forward count.
    """
    nodes = model_or_node.layers.values() if hasattr(model_or_node, "layers") else [model_or_node]
    shape = tuple(input_shape)
    flops = 0.0
    for node in nodes:
        specs = node.sublayers if isinstance(node, FactorizedLayer) else [node]
        for spec in specs:
            if not isinstance(spec, LayerSpec):
                shape = node_output_shape(spec, shape)
                continue
            f, shape = spec_flops(spec, shape, backend.tile_width)
            if backend.mode == "train":
                f *= 3.0 if spec.trainable else 2.0
            flops += f
    return flops / backend.flops_per_second


@dataclass
class Measurement:
    median: float
    samples: list

    @property
    def mad(self):
        return float(np.median(np.abs(np.asarray(self.samples) - self.median)))


def _forward_all(specs, x):
    caches = []
    for spec in specs:
        x, c = layer_forward(spec, x)
        caches.append(c)
    return x, caches


def _backward_all(specs, g, caches):
    for spec, c in zip(reversed(specs), reversed(caches)):
        _, _, g = layer_backward(spec, g, c)
    return g


def measure(layer, input_shape, backend):
    """Wall-clock :class:`Measurement` of one layer (seconds)."""
    specs = layer.sublayers if isinstance(layer, FactorizedLayer) else [layer]
    rng = np.random.default_rng(backend.seed)
    x = rng.standard_normal(tuple(input_shape))
    out_shape = node_output_shape(layer, x.shape)
    g = rng.standard_normal(out_shape) if backend.mode == "train" else None

    def run():
        y, caches = _forward_all(specs, x)
        if g is not None:
            _backward_all(specs, g, caches)

    clock = backend.clock
    samples = []
    with _TIMED_REGION:
        for _ in range(backend.warmup_iters):
            run()
        for _ in range(backend.measure_iters):
            t0 = clock()
            run()
            t1 = clock()
            samples.append((t1 - t0) / 1e9)
    med = float(np.median(samples))
    if not np.isfinite(med) or med <= 0:
        raise RuntimeError(f"clock returned a non-positive duration ({med})")
    return Measurement(med, samples)


def time_layer(layer, input_shape, backend):
    """Step time in seconds of ``layer`` on an input of ``input_shape``."""
    if isinstance(backend, Analytical):
        return backend.cost(layer, input_shape)
    return measure(layer, input_shape, backend).median


def time_model(model, input_shape, backend):
    if isinstance(backend, Analytical):
        return backend.cost(model, input_shape)
    rng = np.random.default_rng(backend.seed)
    x = rng.standard_normal(tuple(input_shape))
    g = rng.standard_normal(model.output_shape(x.shape))

    def run():
        y, cache = forward(model, x)
        if backend.mode == "train":
            backward(model, g, cache)

    samples = []
    with _TIMED_REGION:
        for _ in range(backend.warmup_iters):
            run()
        for _ in range(backend.measure_iters):
            t0 = backend.clock()
            run()
            samples.append((backend.clock() - t0) / 1e9)
    return float(np.median(samples))


@dataclass
class TimingCurve:
    """Step times over ascending ranks; ``dt[i] = t[i + 1] - t[i]``."""

    ranks: list
    t: list
    original_time: float
    noise: float = 0.0

    def __post_init__(self):
        if list(self.ranks) != sorted(self.ranks):
            raise ValueError("ranks must be ascending")
        if len(self.ranks) != len(self.t):
            raise ValueError("one time per rank required")
        if any(not v > 0 for v in self.t):
            raise ValueError("step times must be positive")

    @property
    def dt(self):
        return [b - a for a, b in zip(self.t, self.t[1:])]

    def time_at(self, r):
        return self.t[self.ranks.index(r)]

    def rows(self):
        dt = self.dt
        for i, r in enumerate(self.ranks):
            yield r, self.t[i], dt[i] if i < len(dt) else None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "t_seconds", "dt_seconds"])
            for r, t, d in self.rows():
                w.writerow([r, repr(t), "" if d is None else repr(d)])

    @classmethod
    def from_csv(cls, path, original_time=float("nan")):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([int(r["rank"]) for r in rows], [float(r["t_seconds"]) for r in rows], original_time)

    def to_dict(self):
        return {"ranks": list(self.ranks), "t": list(self.t), "dt": self.dt,
                "original_time": self.original_time, "noise": self.noise}


def timing_curve(layer, ranks, input_shape, backend, decomposer):
    """Time ``decomposer(r)`` for each rank plus the original layer."""
    ranks = sorted(int(r) for r in ranks)
    if not ranks:
        raise ValueError("empty rank range")
    T = time_layer(layer, input_shape, backend)
    times = {}
    noise = 0.0
    for r in reversed(ranks):  # largest first, as the rank is walked down from R
        f = decomposer(r)
        if isinstance(backend, Analytical):
            times[r] = backend.cost(f, input_shape)
        else:
            m = measure(f, input_shape, backend)
            times[r] = m.median
            noise = max(noise, m.mad)
    return TimingCurve(ranks, [times[r] for r in ranks], T, noise)


def default_input_shape(layer, batch=8, spatial=16):
    if layer.kind is LayerKind.FC:
        return (batch, layer.in_channels)
    return (batch, layer.in_channels, spatial, spatial)

