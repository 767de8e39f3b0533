"""Run reports and speed-up tables."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

RUN_REPORT = "run_report"
RANK_PLAN = "rank_plan"


def speedup_percent(old_fps, new_fps):
    """Relative throughput change in percent: ``(new - old) / old * 100``."""
    return (new_fps - old_fps) / old_fps * 100.0


def fps(batch_size, step_time):
    if step_time is None or not step_time > 0:
        return None
    return batch_size / step_time


@dataclass
class RunReport:
    method: str = "LRD"
    model: str = ""
    batch_size: int = 32
    params_before: int | None = None
    params_after: int | None = None
    compression: float | None = None
    train_step_before: float | None = None
    train_step_after: float | None = None
    infer_step_before: float | None = None
    infer_step_after: float | None = None
    decomposition_seconds: float | None = None
    plan_seconds: float | None = None
    accuracy: float | None = None
    timing: str = ""
    layers: list = field(default_factory=list)

    def to_dict(self):
        return {"type": RUN_REPORT, **asdict(self)}

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def train_speedup(self):
        return _delta(self.batch_size, self.train_step_before, self.train_step_after)

    def infer_speedup(self):
        return _delta(self.batch_size, self.infer_step_before, self.infer_step_after)


def _delta(batch, before, after):
    old, new = fps(batch, before), fps(batch, after)
    if old is None or new is None:
        return None
    return speedup_percent(old, new)


def _num(v, fmt):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    return format(v, fmt)


def _pct(v):
    return "n/a" if v is None else f"{v:+06.2f}"


COLUMNS = ("method", "train fps", "train Δ%", "infer fps", "infer Δ%", "accuracy", "decomp s")


def summary_rows(reports):
    """Table rows: a baseline row from the first report, then one per report."""
    rows = []
    if reports:
        base = reports[0]
        rows.append(
            [
                base.model or "original",
                _num(fps(base.batch_size, base.train_step_before), ".1f"),
                _pct(0.0 if base.train_step_before else None),
                _num(fps(base.batch_size, base.infer_step_before), ".1f"),
                _pct(0.0 if base.infer_step_before else None),
                "n/a",
                "n/a",
            ]
        )
    for r in reports:
        rows.append(
            [
                r.method,
                _num(fps(r.batch_size, r.train_step_after), ".1f"),
                _pct(r.train_speedup()),
                _num(fps(r.batch_size, r.infer_step_after), ".1f"),
                _pct(r.infer_speedup()),
                _num(None if r.accuracy is None else 100.0 * r.accuracy, ".2f"),
                _num(r.decomposition_seconds, ".3f"),
            ]
        )
    return rows


def plan_rows(plan):
    rows = []
    for p in plan["layers"]:
        T, t = p["original_time"], p["t_opt"]
        rows.append(
            [
                p["layer_id"],
                str(p["R"]),
                str(p["R_min"]),
                str(p["R_opt"]),
                "yes" if p["keep_original"] else "no",
                f"{T:.6g}",
                f"{t:.6g}",
                _pct(speedup_percent(1.0 / T, 1.0 / t)),
            ]
        )
    return rows


PLAN_COLUMNS = ("layer", "R", "R_min", "R_opt", "keep original", "T (s)", "t(R_opt) (s)", "layer Δ%")


def format_table(columns, rows):
    widths = [max(len(str(c)), *(len(r[i]) for r in rows)) if rows else len(c) for i, c in enumerate(columns)]
    line = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(columns), line("-" * w for w in widths)]
    out += [line(r) for r in rows]
    return "\n".join(out) + "\n"


def history_report(path, batch_size, label=None):
    """A RunReport row built from a history CSV (last epoch's accuracy and step time)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty history")
    for col in ("epoch", "loss", "accuracy", "step_time"):
        if col not in rows[0]:
            raise ValueError(f"{path}: missing column {col!r}")
    last = rows[-1]
    return RunReport(method=label or path, batch_size=batch_size,
                     train_step_after=float(last["step_time"]), accuracy=float(last["accuracy"]))


def render(paths, batch_size=32):
    """Format every input file; run reports and histories share one table."""
    runs, sections = [], []
    for path in paths:
        if path.endswith(".csv"):
            runs.append(history_report(path, batch_size))
            continue
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed JSON ({exc})") from None
        kind = d.get("type") if isinstance(d, dict) else None
        if kind == RUN_REPORT:
            runs.append(RunReport.from_dict(d))
        elif kind == RANK_PLAN:
            sections.append(f"rank plan: {path}\n" + format_table(PLAN_COLUMNS, plan_rows(d)))
        else:
            raise ValueError(f"{path}: not a run report or rank plan")
    if runs:
        sections.insert(0, format_table(COLUMNS, summary_rows(runs)))
    return "\n".join(sections)
