"""Rank planning for a target compression ratio and benchmark-driven rank search."""

import math
import time
import warnings
from dataclasses import dataclass, field

from .bench import Analytical, TimingCurve, timing_curve
from .decompose import Decomposer
from .layers import LayerKind, LayerSpec, param_count
from .model import node_output_shape

# relative step speed-up needed for a first-difference peak to count
PEAK_THRESHOLD = 0.05


@dataclass(frozen=True)
class CompressionTarget:
    alpha: float
    beta: float = 1.0

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError(f"compression ratio alpha must be > 1, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"rank ratio beta must be > 0, got {self.beta}")


def tucker_rank_exact(C, S, k, alpha, beta=1.0):
    """Real-valued r1 whose Tucker-2 triple has ``C*S*k²/alpha`` parameters.

    Solves ``beta*k²*r² + (C + beta*S)*r = C*S*k²/alpha`` for the positive root.
    """
    b = (C + beta * S) / (beta * k * k)
    return 0.5 * (-b + math.sqrt(b * b + 4.0 * C * S / (beta * alpha)))


def _clamp_rank(value, hi, what):
    # the tolerance keeps exact integer roots from flooring one below through rounding
    r = math.floor(value + 1e-9)
    if r < 1:
        warnings.warn(f"{what} rank computed as {r}; clamped to 1", RuntimeWarning, stacklevel=3)
        r = 1
    return min(r, hi)


def tucker_ranks_for_compression(C, S, k, target):
    """``(r1, r2)`` with ``r2 = floor(beta * r1)``.

    When one rank would exceed its channel count it is capped there and the
    other rank is re-solved from the parameter budget ``C*S*k²/alpha``,
    instead of keeping the ``beta`` ratio and overshooting the compression.
    """
    budget = C * S * k * k / target.alpha
    exact = tucker_rank_exact(C, S, k, target.alpha, target.beta)
    if exact > C:
        r1 = C
        r2 = _clamp_rank((budget - C * C) / (C * k * k + S), S, "tucker r2")
    else:
        r1 = _clamp_rank(exact, C, "tucker r1")
        r2 = _clamp_rank(target.beta * r1, S, "tucker r2")
        if target.beta * r1 > S:
            r2 = S
            r1 = _clamp_rank((budget - S * S) / (S * k * k + C), C, "tucker r1")
    return r1, r2


def rmin_for_next_ratio(C, S, k, target):
    """Lower end of the search: the r1 that reaches compression ``alpha + 1``."""
    return _clamp_rank(tucker_rank_exact(C, S, k, target.alpha + 1, target.beta), C, "R_min")


def fc_rank_for_compression(C, S, alpha):
    return _clamp_rank(C * S / (alpha * (C + S)), min(C, S), "svd")


def start_ranks(layer, target):
    """``(R, R_min)`` for a layer: Tucker r1 for convs, SVD rank otherwise."""
    C, S = layer.in_channels, layer.out_channels
    if layer.kind is LayerKind.CONV:
        k = layer.kernel_size
        R = tucker_ranks_for_compression(C, S, k, target)[0]
        R_min = rmin_for_next_ratio(C, S, k, target)
    else:
        R = fc_rank_for_compression(C, S, target.alpha)
        R_min = fc_rank_for_compression(C, S, target.alpha + 1)
    return R, min(R_min, R)


@dataclass
class RankPlan:
    layer_id: str
    R: int
    R_min: int
    R_opt: int
    keep_original: bool
    original_time: float
    curve: TimingCurve
    ranks: tuple = ()
    search_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "layer_id": self.layer_id,
            "R": self.R,
            "R_min": self.R_min,
            "R_opt": self.R_opt,
            "ranks": list(self.ranks),
            "keep_original": self.keep_original,
            "original_time": self.original_time,
            "t_opt": self.curve.time_at(self.R_opt),
            "search_seconds": self.search_seconds,
            "curve": self.curve.to_dict(),
            **self.extra,
        }


def select_rank(curve, threshold=PEAK_THRESHOLD, noise_floor=0.0):
    """Pick the rank at the first significant peak of the first differences.

    ``dt[r] = t(r+1) - t(r)`` is large when dropping from ``r+1`` to ``r``
    makes the layer suddenly faster. Scanning from the top of the range
    downward, the first local maximum of ``dt`` with
    ``dt[r] >= max(threshold * t(r+1), noise_floor)`` wins; if none
    qualifies, the global argmax (ties to the larger rank) is used.
    """
    ranks, t, dt = curve.ranks, curve.t, curve.dt
    if not dt:
        return ranks[0]
    n = len(dt)
    for i in range(n - 1, -1, -1):
        left = dt[i - 1] if i > 0 else -math.inf
        right = dt[i + 1] if i < n - 1 else -math.inf
        if dt[i] >= left and dt[i] >= right and dt[i] > 0:
            if dt[i] >= max(threshold * t[i + 1], noise_floor):
                return ranks[i]
    best = max(range(n), key=lambda i: (dt[i], i))
    return ranks[best]


def optimize_rank(layer, R, R_min, input_shape, backend, beta=1.0, step=1, decomposer=None,
                  layer_id="", threshold=PEAK_THRESHOLD):
    """Search ``[R_min, R]`` for the rank whose decomposed layer is fastest to step into.

    Falls back to the original layer (``keep_original``) when the decomposed
    layer at the chosen rank is not strictly faster than the original.
    """
    if R_min > R:
        raise ValueError(f"R_min={R_min} exceeds R={R}")
    if step < 1:
        raise ValueError("step must be >= 1")
    started = time.perf_counter()
    decomposer = decomposer or Decomposer(layer, beta=beta, origin=layer_id)
    ranks = list(range(R, R_min - 1, -step))
    if ranks[-1] != R_min:
        ranks.append(R_min)
    curve = timing_curve(layer, ranks, input_shape, backend, decomposer)
    noise = backend.noise_floor if isinstance(backend, Analytical) else curve.noise
    R_opt = select_rank(curve, threshold, noise)
    keep = not curve.time_at(R_opt) < curve.original_time
    return RankPlan(
        layer_id=layer_id,
        R=R,
        R_min=R_min,
        R_opt=R_opt,
        keep_original=keep,
        original_time=curve.original_time,
        curve=curve,
        ranks=tuple(decomposer.ranks_for(R_opt)),
        search_seconds=time.perf_counter() - started,
    )


def plan_model(model, target, input_shape, backend, step=1):
    """One RankPlan per decomposable layer, each optimized independently."""
    plans = []
    shape = tuple(input_shape)
    for name, node in model.layers.items():
        if isinstance(node, LayerSpec):
            R, R_min = start_ranks(node, target)
            plans.append(
                optimize_rank(node, R, R_min, shape, backend, beta=target.beta, step=step, layer_id=name)
            )
        shape = node_output_shape(node, shape)
    return plans


def compression_ratio(original, factorized):
    return param_count(original) / param_count(factorized)

