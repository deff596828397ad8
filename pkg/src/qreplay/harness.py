"""Experiment orchestration: seeded sweeps, CSV output, plot data.

A run tuple is (method, holdout, sweep value, seed). Every tuple gets a
fresh model/buffer/schedule, so tuples are independent and reproducible
in isolation; rerunning a spec produces byte-identical CSVs.

Output layout under the spec's out_dir:

* ``runs/<method>_h<holdout>_<sweep>_s<seed>.csv`` — the metrics stream,
  one row per evaluation point with columns
  step, acc_0 ... acc_150 (ascending degrees), avg, target,
  memorization, mu, sigma_sq, l_g, l_m.
* ``summary.csv`` — per-tuple-group mean/std of final avg/target/
  memorization over seeds (std blank with fewer than 2 seeds).
* ``plots/`` — optional two-column series files and SVG charts.

Floats are written with repr() so parsing them back is exact. Files are
written to a temp name and renamed into place.
"""

import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import ROTATION_GRID, build_schedule, load_dataset, test_sets
from .training import METHODS, TrainConfig, run_training

SWEEP_AXES = ("none", "alpha", "memory_capacity")

_INT_KEYS = (
    "batch_size", "memory_batch_size", "risk_batch_size", "n_risk_batches",
    "memory_capacity", "steps_per_env", "train_cap", "test_cap", "eval_every",
)
_FLOAT_KEYS = ("alpha", "rho", "lr")
_STR_KEYS = ("scale_mode", "sweep", "env_order", "data_dir", "out_dir")
_LIST_KEYS = ("methods", "holdouts", "seeds", "sweep_values")

ENV_PREFIX = "QREPLAY_"


@dataclass
class ExperimentSpec:
    data_dir: str
    out_dir: str
    methods: tuple = ("pdg",)
    holdouts: tuple = (150,)
    seeds: tuple = (0,)
    sweep: str = "none"
    sweep_values: tuple = ()
    steps_per_env: int = 100
    train_cap: int = 10000
    test_cap: int = 0  # 0 = use the whole test base
    eval_every: int = 50
    env_order: str = "ascending"
    config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.holdouts = tuple(int(h) for h in self.holdouts)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.sweep_values = tuple(self.sweep_values)
        if not self.methods or not self.holdouts or not self.seeds:
            raise ValueError("need at least one method, holdout, and seed")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        for h in self.holdouts:
            if h not in ROTATION_GRID:
                raise ValueError(f"holdout {h} not on the rotation grid")
        if self.sweep not in SWEEP_AXES:
            raise ValueError(f"sweep must be one of {SWEEP_AXES}")
        if self.sweep == "none":
            if self.sweep_values:
                raise ValueError("sweep_values given without a sweep axis")
        elif not self.sweep_values:
            raise ValueError(f"sweep over {self.sweep} needs sweep_values")
        if self.sweep == "alpha":
            self.sweep_values = tuple(float(v) for v in self.sweep_values)
        elif self.sweep == "memory_capacity":
            self.sweep_values = tuple(int(v) for v in self.sweep_values)
        if self.steps_per_env <= 0 or self.eval_every <= 0:
            raise ValueError("steps_per_env and eval_every must be positive")
        if self.train_cap < 0 or self.test_cap < 0:
            raise ValueError("caps must be >= 0")


@dataclass
class RunResult:
    method: str
    holdout: int
    sweep_value: object  # None when there is no sweep
    seed: int
    final_avg: float
    final_target: float
    final_memorization: float
    csv_path: str


@dataclass
class ResultTable:
    spec: ExperimentSpec
    runs: list

    def group(self, method, holdout, sweep_value=None):
        rows = [
            r for r in self.runs
            if r.method == method and r.holdout == holdout
            and r.sweep_value == sweep_value
        ]
        if not rows:
            raise KeyError(
                f"no runs for ({method}, {holdout}, {sweep_value})"
            )
        return sorted(rows, key=lambda r: r.seed)

    def finals(self, method, holdout, sweep_value=None, metric="target"):
        attr = {
            "target": "final_target",
            "avg": "final_avg",
            "memorization": "final_memorization",
        }[metric]
        return np.array(
            [getattr(r, attr) for r in self.group(method, holdout, sweep_value)]
        )

    def group_keys(self):
        seen = []
        for r in self.runs:
            key = (r.method, r.holdout, r.sweep_value)
            if key not in seen:
                seen.append(key)
        return seen


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


RUN_CSV_COLUMNS = (
    ["step"]
    + [f"acc_{d}" for d in sorted(ROTATION_GRID)]
    + ["avg", "target", "memorization", "mu", "sigma_sq", "l_g", "l_m"]
)


def records_to_csv(records):
    lines = [",".join(RUN_CSV_COLUMNS)]
    for rec in records:
        row = [rec.step]
        row += [rec.per_rotation[d] for d in sorted(ROTATION_GRID)]
        row += [
            rec.avg_accuracy,
            rec.target_accuracy,
            rec.memorization_accuracy,
            rec.stats.mu,
            rec.stats.sigma_sq,
            rec.stats.l_g,
            rec.stats.l_m,
        ]
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def read_csv(path):
    """Parse one of our CSVs back into a dict of column -> float array."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    header = lines[0].split(",")
    cols = {h: [] for h in header}
    for ln in lines[1:]:
        for h, v in zip(header, ln.split(",")):
            cols[h].append(float(v))
    return {h: np.array(v) for h, v in cols.items()}


def _sweep_tag(axis, value):
    if value is None:
        return "base"
    if axis == "alpha":
        return f"alpha{value}"
    return f"mem{value}"


def run(spec):
    """Execute every run tuple of the spec and write runs/ + summary.csv."""
    tr_x, tr_y, te_x, te_y = load_dataset(spec.data_dir)
    if spec.train_cap:
        tr_x, tr_y = tr_x[: spec.train_cap], tr_y[: spec.train_cap]
    if spec.test_cap:
        te_x, te_y = te_x[: spec.test_cap], te_y[: spec.test_cap]
    out_dir = Path(spec.out_dir)
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    eval_sets = test_sets(ROTATION_GRID, te_x, te_y)

    sweep_values = spec.sweep_values if spec.sweep != "none" else (None,)
    results = []
    for value in sweep_values:
        for method in spec.methods:
            for holdout in spec.holdouts:
                for seed in spec.seeds:
                    overrides = {"method": method, "seed": seed}
                    if spec.sweep != "none":
                        overrides[spec.sweep] = value
                    config = spec.config.with_overrides(**overrides)
                    schedule = build_schedule(
                        ROTATION_GRID, holdout, spec.steps_per_env, seed,
                        order=spec.env_order,
                    )
                    _, _, records = run_training(
                        config, schedule, tr_x, tr_y, eval_sets,
                        eval_every=spec.eval_every,
                    )
                    name = (
                        f"{method}_h{holdout}_{_sweep_tag(spec.sweep, value)}"
                        f"_s{seed}.csv"
                    )
                    path = runs_dir / name
                    _atomic_write(path, records_to_csv(records))
                    final = records[-1]
                    results.append(
                        RunResult(
                            method, holdout, value, seed,
                            final.avg_accuracy, final.target_accuracy,
                            final.memorization_accuracy, str(path),
                        )
                    )
    table = ResultTable(spec, results)
    _atomic_write(out_dir / "summary.csv", summary_csv(table))
    return table


SUMMARY_COLUMNS = (
    "method,holdout,sweep_axis,sweep_value,n_seeds,"
    "avg_mean,avg_std,target_mean,target_std,"
    "memorization_mean,memorization_std"
)


def _mean_std(values):
    mean = float(np.mean(values))
    std = repr(float(np.std(values, ddof=1))) if len(values) >= 2 else ""
    return repr(mean), std


def summary_csv(table):
    lines = [SUMMARY_COLUMNS]
    axis = table.spec.sweep
    for method, holdout, value in table.group_keys():
        parts = [method, str(holdout), axis, "" if value is None else str(value)]
        rows = table.group(method, holdout, value)
        parts.append(str(len(rows)))
        for metric in ("avg", "target", "memorization"):
            m, s = _mean_std(table.finals(method, holdout, value, metric))
            parts += [m, s]
        lines.append(",".join(parts))
    return "\n".join(lines) + "\n"


# --- plot data emission ---


def emit_plot_data(table, axis, out_dir=None, svg=False):
    """Write per-metric series files (x = sweep value, y = mean, std) for
    a swept table; optionally a minimal SVG line chart per series.
    Returns the list of files written.
    """
    if axis == "none" or table.spec.sweep != axis:
        raise ValueError(
            f"table was swept over {table.spec.sweep!r}, not {axis!r}"
        )
    out_dir = Path(out_dir if out_dir is not None else table.spec.out_dir) / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    values = sorted(set(r.sweep_value for r in table.runs))
    for method in table.spec.methods:
        for holdout in table.spec.holdouts:
            for metric in ("target", "avg", "memorization"):
                xs, means, stds = [], [], []
                for v in values:
                    finals = table.finals(method, holdout, v, metric)
                    xs.append(v)
                    means.append(float(np.mean(finals)))
                    stds.append(
                        float(np.std(finals, ddof=1)) if len(finals) >= 2
                        else math.nan
                    )
                name = f"{method}_h{holdout}_{metric}_vs_{axis}"
                path = out_dir / f"{name}.csv"
                lines = [f"{axis},mean,std"]
                lines += [
                    f"{_fmt(x)},{_fmt(m)},{_fmt(s)}"
                    for x, m, s in zip(xs, means, stds)
                ]
                _atomic_write(path, "\n".join(lines) + "\n")
                written.append(str(path))
                if svg:
                    spath = out_dir / f"{name}.svg"
                    _atomic_write(spath, svg_line_chart(xs, means, name))
                    written.append(str(spath))
    return written


def svg_line_chart(xs, ys, title, width=480, height=320):
    """A dependency-free single-series line chart."""
    pad = 48
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    xr = (x1 - x0) or 1.0
    yr = (y1 - y0) or 1.0

    def sx(x):
        return pad + (x - x0) / xr * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / yr * (height - 2 * pad)

    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    dots = "".join(
        f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="#1f77b4"/>'
        for x, y in zip(xs, ys)
    )
    return f"""<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">
<rect width="100%" height="100%" fill="white"/>
<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>
<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>
<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>
<text x="{pad}" y="{height - pad + 16}" font-size="11">{x0:g}</text>
<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" font-size="11">{x1:g}</text>
<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="11">{y0:.3g}</text>
<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-size="11">{y1:.3g}</text>
<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>
{dots}
</svg>
"""


# --- config file / environment / CLI merging ---


def parse_config_file(path):
    """Flat `key = value` lines; blank lines and # comments ignored."""
    values = {}
    known = set(_INT_KEYS) | set(_FLOAT_KEYS) | set(_STR_KEYS) | set(_LIST_KEYS)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value.strip()
    return values


def env_overrides(environ=None):
    """Config values from QREPLAY_* environment variables (e.g.
    QREPLAY_ALPHA=0.5 sets alpha). Unknown names are ignored."""
    environ = os.environ if environ is None else environ
    known = set(_INT_KEYS) | set(_FLOAT_KEYS) | set(_STR_KEYS) | set(_LIST_KEYS)
    values = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if key in known:
                values[key] = value
    return values


def build_spec(*sources):
    """Merge raw string-valued mappings (later wins), coerce types, and
    build an ExperimentSpec. Sources are typically (config file, env
    overrides, CLI flags)."""
    merged = {}
    for src in sources:
        merged.update({k: v for k, v in src.items() if v is not None})
    if "data_dir" not in merged or "out_dir" not in merged:
        raise ValueError("data_dir and out_dir are required")

    def split(key):
        raw = merged[key]
        if isinstance(raw, (list, tuple)):
            return tuple(raw)
        return tuple(p.strip() for p in str(raw).split(",") if p.strip())

    spec_kwargs = {"data_dir": merged["data_dir"], "out_dir": merged["out_dir"]}
    if "methods" in merged:
        spec_kwargs["methods"] = split("methods")
    if "holdouts" in merged:
        spec_kwargs["holdouts"] = tuple(int(v) for v in split("holdouts"))
    if "seeds" in merged:
        spec_kwargs["seeds"] = tuple(int(v) for v in split("seeds"))
    if "sweep" in merged:
        spec_kwargs["sweep"] = str(merged["sweep"])
    if "sweep_values" in merged:
        spec_kwargs["sweep_values"] = split("sweep_values")
    for key in ("steps_per_env", "train_cap", "test_cap", "eval_every"):
        if key in merged:
            spec_kwargs[key] = int(merged[key])
    if "env_order" in merged:
        spec_kwargs["env_order"] = str(merged["env_order"])

    config_kwargs = {}
    config_fields = {f.name for f in fields(TrainConfig)}
    for key in _FLOAT_KEYS:
        if key in merged and key in config_fields:
            config_kwargs[key] = float(merged[key])
    for key in _INT_KEYS:
        if key in merged and key in config_fields:
            config_kwargs[key] = int(merged[key])
    if "scale_mode" in merged:
        config_kwargs["scale_mode"] = str(merged["scale_mode"])
    spec_kwargs["config"] = TrainConfig(**config_kwargs)
    return ExperimentSpec(**spec_kwargs)
