"""Command-line interface: ``lrdkit {init,decompose,plan-ranks,train,bench-layer,report}``.

Every command accepts ``--config FILE.json``; keys are option names with
dashes replaced by underscores, and explicit flags override them. Commands
exit 0 on success and 2 on any validation failure.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .bench import Analytical, default_input_shape, timing_curve
from .container import ContainerError, atomic_write, load_model, save_model
from .data import make_dataset
from .decompose import Decomposer
from .layers import LayerKind, LayerSpec, param_count
from .pipeline import decompose_model, make_backend, plan_ranks, step_times
from .planner import CompressionTarget, select_rank, start_ranks
from .report import RunReport, format_table, render
from .train import ConfigError, TrainConfig, history_csv, train
from . import zoo

DEFAULTS = {
    "alpha": 2.0,
    "beta": 1.0,
    "method": "auto",
    "sigma": "second",
    "backend": "analytical",
    "tile_width": 8,
    "flops_per_second": 1e9,
    "step": 1,
    "batch_size": 32,
    "epochs": 10,
    "lr": 0.001,
    "momentum": 0.9,
    "weight_decay": 1e-4,
    "schedule": "fixed",
    "freeze": "none",
    "seed": 0,
    "dataset": "stripes",
    "timing": "analytical",
    "mode": "forward",
}


class UsageError(ValueError):
    pass


def _shape(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _dump_json(path, doc):
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n", mode="w")


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _input_shape(args, meta, model=None):
    if args.input_shape:
        return tuple(args.input_shape)
    sample = meta.get("input_shape")
    if not sample:
        raise UsageError("model has no recorded input shape; pass --input-shape N,C,H,W")
    return (args.batch_size,) + tuple(sample)


# -- commands --------------------------------------------------------------


def cmd_init(args):
    kwargs = {}
    for item in args.param or []:
        key, _, value = item.partition("=")
        kwargs[key] = int(value)
    kwargs.setdefault("seed", args.seed)
    model, sample = zoo.build(args.arch, **kwargs)
    save_model(args.output, model, {"input_shape": sample, "arch": args.arch})
    print(f"wrote {args.output}: {args.arch}, {model.num_params()} parameters, input {sample}")


def cmd_decompose(args):
    model, meta = load_model(args.model)
    target = CompressionTarget(args.alpha, args.beta)
    plan = _load_json(args.plan) if args.plan else None
    new, records, seconds = decompose_model(model, target, args.method, plan=plan, sigma=args.sigma)
    plan_seconds = None
    if plan is not None and args.include_plan_time:
        timing_path = args.plan + ".timing.json"
        plan_seconds = _load_json(timing_path)["search_seconds"] if os.path.exists(timing_path) else 0.0
        seconds += plan_seconds
    before, after = model.num_params(), new.num_params()
    out_meta = dict(meta, decomposed={"alpha": args.alpha, "beta": args.beta, "method": args.method,
                                      "rank_plan": bool(plan)})
    save_model(args.output, new, out_meta)
    report = RunReport(
        method=args.label or ("Rank Opt." if plan else "LRD"),
        model=meta.get("arch", os.path.basename(args.model)),
        params_before=before,
        params_after=after,
        compression=before / after,
        decomposition_seconds=seconds,
        plan_seconds=plan_seconds,
        layers=records,
    )
    if args.report:
        _dump_json(args.report, report.to_dict())
    rows = [
        [r["layer_id"], "kept" if r["kept_original"] else r["method"],
         "-" if r["kept_original"] else "x".join(map(str, r["ranks"])),
         "-" if r["kept_original"] else f"{r['compression']:.3f}",
         "-" if r["kept_original"] else f"{r['relative_error']:.3e}"]
        for r in records
    ]
    print(format_table(("layer", "method", "ranks", "compression", "rel. error"), rows), end="")
    print(f"params {before} -> {after} (compression {before / after:.3f}); decomposition {seconds:.3f}s")


def cmd_plan_ranks(args):
    model, meta = load_model(args.model)
    target = CompressionTarget(args.alpha, args.beta)
    shape = _input_shape(args, meta)
    backend = make_backend(args.backend, args.tile_width, args.flops_per_second, args.mode,
                           args.warmup, args.iters)
    doc, curves, search_seconds = plan_ranks(model, target, shape, backend, step=args.step)
    _dump_json(args.output, doc)
    _dump_json(args.output + ".timing.json", {"search_seconds": search_seconds})
    if args.curves_dir:
        os.makedirs(args.curves_dir, exist_ok=True)
        for layer_id, curve in curves.items():
            curve.to_csv(os.path.join(args.curves_dir, f"{layer_id}.csv"))
    print(render([args.output]), end="")
    kept = [p["layer_id"] for p in doc["layers"] if p["keep_original"]]
    if kept:
        print("keep original: " + ", ".join(kept))


def cmd_train(args):
    model, meta = load_model(args.model)
    config = TrainConfig(
        epochs=args.epochs, lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay,
        schedule=args.schedule, freeze_policy=args.freeze, seed=args.seed,
        batch_size=args.batch_size, timing=args.timing, tile_width=args.tile_width,
    )
    X, y = make_dataset(args.dataset, seed=args.seed)
    shape = (config.batch_size,) + X.shape[1:]
    baseline_train = baseline_infer = None
    if args.baseline:
        base_model, _ = load_model(args.baseline)
        baseline_train, baseline_infer = step_times(base_model, shape, config.timing, config.tile_width)
    t0 = time.perf_counter()
    history = train(model, (X, y), config)
    train_seconds = time.perf_counter() - t0
    _, infer_after = step_times(model, shape, config.timing, config.tile_width)
    csv_text = history_csv(history)
    if args.history:
        atomic_write(args.history, csv_text, mode="w")
    if args.checkpoint:
        save_model(args.checkpoint, model, dict(meta, trained={"epochs": config.epochs, "freeze": config.freeze_policy.value}))
    report = RunReport(
        method=args.label or f"freeze={config.freeze_policy.value}",
        model=meta.get("arch", os.path.basename(args.model)),
        batch_size=config.batch_size,
        params_after=model.num_params(),
        train_step_before=baseline_train,
        train_step_after=float(np.mean([h["step_time"] for h in history])),
        infer_step_before=baseline_infer,
        infer_step_after=infer_after,
        accuracy=history[-1]["accuracy"],
        timing=config.timing,
    )
    if args.decomp_report:
        dec = RunReport.from_dict(_load_json(args.decomp_report))
        report.params_before = dec.params_before
        report.compression = dec.compression
        report.decomposition_seconds = dec.decomposition_seconds
        report.plan_seconds = dec.plan_seconds
        report.layers = dec.layers
    doc = report.to_dict()
    doc["train_seconds"] = train_seconds
    if args.report:
        _dump_json(args.report, doc)
    for h in history:
        print(f"epoch {h['epoch']:3d}  loss {h['loss']:.4f}  acc {h['accuracy']:.4f}  "
              f"step {h['step_time']:.3e}s  lr {h['lr']:.3g}")


def _bench_layer_source(args):
    if args.model:
        model, meta = load_model(args.model)
        if args.layer not in model.layers or not isinstance(model.layers[args.layer], LayerSpec):
            raise UsageError(f"--layer must name a dense layer of {args.model}")
        return model.layers[args.layer]
    rng = np.random.default_rng(args.seed)
    if args.conv:
        C, S, k = args.conv
        return LayerSpec(LayerKind.CONV, rng.standard_normal((C, S, k, k)), padding=k // 2)
    if args.fc:
        C, S = args.fc
        return LayerSpec(LayerKind.FC, rng.standard_normal((C, S)))
    raise UsageError("choose a layer with --model/--layer, --conv C,S,k or --fc C,S")


def cmd_bench_layer(args):
    layer = _bench_layer_source(args)
    shape = tuple(args.input_shape) if args.input_shape else default_input_shape(layer, args.batch_size)
    backend = make_backend(args.backend, args.tile_width, args.flops_per_second, args.mode,
                           args.warmup, args.iters)
    if args.ranks:
        lo, _, hi = args.ranks.partition(":")
        R_min, R = int(lo), int(hi or lo)
    else:
        R, R_min = start_ranks(layer, CompressionTarget(args.alpha, args.beta))
    curve = timing_curve(layer, range(R_min, R + 1), shape, backend, Decomposer(layer, beta=args.beta))
    if args.csv:
        curve.to_csv(args.csv)
    noise = 0.0 if isinstance(backend, Analytical) else curve.noise
    r_opt = select_rank(curve, noise_floor=noise)
    print(f"original {curve.original_time:.6e}s; ranks {R_min}..{R}; "
          f"R_opt={r_opt} t={curve.time_at(r_opt):.6e}s; keep_original={not curve.time_at(r_opt) < curve.original_time}")


def cmd_report(args):
    print(render(args.files, batch_size=args.batch_size), end="")


# -- parser ----------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="lrdkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option defaults")
        return sp

    def target_opts(sp):
        sp.add_argument("--alpha", type=float, help="compression ratio (> 1)")
        sp.add_argument("--beta", type=float, help="Tucker rank ratio r2 = beta * r1")

    def backend_opts(sp):
        sp.add_argument("--backend", choices=["analytical", "wallclock"])
        sp.add_argument("--tile-width", type=int)
        sp.add_argument("--flops-per-second", type=float)
        sp.add_argument("--mode", choices=["forward", "train"])
        sp.add_argument("--warmup", type=int)
        sp.add_argument("--iters", type=int)
        sp.add_argument("--input-shape", type=_shape, help="N,C,H,W or N,C")
        sp.add_argument("--batch-size", type=int)

    sp = common(sub.add_parser("init", help="write a reference model container"))
    sp.add_argument("arch", choices=sorted(zoo.ARCHITECTURES))
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--param", action="append", help="architecture option key=int")
    sp.set_defaults(func=cmd_init)

    sp = common(sub.add_parser("decompose", help="replace eligible layers by low-rank factors"))
    sp.add_argument("model")
    sp.add_argument("-o", "--output", required=True)
    target_opts(sp)
    sp.add_argument("--method", choices=["svd", "tucker", "auto"])
    sp.add_argument("--sigma", choices=["second", "split"])
    sp.add_argument("--plan", help="rank plan from plan-ranks")
    sp.add_argument("--include-plan-time", action="store_true", default=None)
    sp.add_argument("--report")
    sp.add_argument("--label")
    sp.set_defaults(func=cmd_decompose)

    sp = common(sub.add_parser("plan-ranks", help="benchmark-driven rank search per layer"))
    sp.add_argument("model")
    sp.add_argument("-o", "--output", required=True)
    target_opts(sp)
    backend_opts(sp)
    sp.add_argument("--step", type=int)
    sp.add_argument("--curves-dir")
    sp.set_defaults(func=cmd_plan_ranks)

    sp = common(sub.add_parser("train", help="fine-tune with optional layer freezing"))
    sp.add_argument("model")
    sp.add_argument("--dataset", help="stripes|blobs|separable[:k=v,...] or dir:PATH")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--momentum", type=float)
    sp.add_argument("--weight-decay", type=float)
    sp.add_argument("--schedule", choices=["cosine", "fixed"])
    sp.add_argument("--freeze", choices=["none", "regular", "sequential"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--timing", choices=["analytical", "wallclock"])
    sp.add_argument("--tile-width", type=int)
    sp.add_argument("--baseline", help="original model container for before/after step times")
    sp.add_argument("--decomp-report", help="report written by decompose")
    sp.add_argument("--history")
    sp.add_argument("--checkpoint")
    sp.add_argument("--report")
    sp.add_argument("--label")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("bench-layer", help="time one layer, optionally over a rank range"))
    sp.add_argument("--model")
    sp.add_argument("--layer")
    sp.add_argument("--conv", type=_shape, help="C,S,k")
    sp.add_argument("--fc", type=_shape, help="C,S")
    sp.add_argument("--ranks", help="R_min:R")
    target_opts(sp)
    backend_opts(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_bench_layer)

    sp = common(sub.add_parser("report", help="tabulate run reports, rank plans and histories"))
    sp.add_argument("files", nargs="+")
    sp.add_argument("--batch-size", type=int)
    sp.set_defaults(func=cmd_report)
    return p


def _apply_defaults(args):
    config = {}
    if getattr(args, "config", None):
        config = _load_json(args.config)
        if not isinstance(config, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
    for key in vars(args):
        if getattr(args, key) is None:
            if key in config:
                setattr(args, key, config[key])
            elif key in DEFAULTS:
                setattr(args, key, DEFAULTS[key])
    if getattr(args, "include_plan_time", None) is None and hasattr(args, "include_plan_time"):
        args.include_plan_time = bool(config.get("include_plan_time", False))
    return args


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_defaults(args)
        args.func(args)
    except (ValueError, KeyError, OSError, ContainerError, ConfigError, UsageError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lrdkit {args.command}: error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
