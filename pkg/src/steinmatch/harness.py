"""Experiment grids comparing SVGD kernels against exact Monte Carlo.

Seeding scheme: every random quantity is drawn from a 64-bit seed derived
from ``SeedSequence([master, purpose, *indices])``, where ``purpose`` is a
small integer code (model, init, bank, monte carlo, reference). Model seeds
depend only on the trial index, so every grid point and method of one trial
sees the same random model; initial particles depend on (trial, n) and are
shared by all SVGD methods.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigError, DegenerateInputError, DivergenceError
from .kernels import (
    FeatureKernel,
    Linear,
    Rbf,
    make_linear_plus_random,
    make_random_cosine_bank,
    median_bandwidth,
)
from .metrics import ksd_squared, moment_report
from .svgd import AdaGrad, Fixed, SvgdConfig, initial_particles, run_polished
from .targets import (
    GaussianTarget,
    make_random_gmm,
    make_random_nonspherical_gaussian,
    make_random_rbm,
    sample_exact,
)

logger = logging.getLogger(__name__)

EXPERIMENTS = ("gaussian_sweep", "condition_sweep", "gmm_alpha_sweep", "rbm", "ksd_decay")
METHODS = ("monte_carlo", "svgd_rbf", "svgd_linear", "svgd_linear_random", "svgd_random_feature")

_PURPOSE = {"model": 1, "init": 2, "bank": 3, "mc": 4, "reference": 5}
_MMD_BANDWIDTH_POINTS = 1000

# desk-scale defaults; --paper-scale swaps in the second column
_SCALE = {
    "gaussian_sweep": ({"d": 10}, {"d": 100}),
    "condition_sweep": ({"d": 10}, {"d": 100}),
    "gmm_alpha_sweep": ({"d": 2, "n_components": 5}, {"d": 10, "n_components": 15}),
    "rbm": ({"d": 10, "n_hidden": 4}, {"d": 100, "n_hidden": 10}),
    "ksd_decay": ({"d": 2}, {"d": 2}),
}
_DEFAULT_N = {
    "gaussian_sweep": lambda d: [max(1, d // 2), d + 1, 2 * d],
    "condition_sweep": lambda d: [max(1, d // 2), d + 1, 2 * d],
    "gmm_alpha_sweep": lambda d: [50],
    "rbm": lambda d: [20, 50],
    "ksd_decay": lambda d: [8, 16, 32, 64, 128],
}
_DEFAULT_METHODS = {
    "gaussian_sweep": ["monte_carlo", "svgd_rbf", "svgd_linear", "svgd_linear_random"],
    "condition_sweep": ["monte_carlo", "svgd_rbf", "svgd_linear", "svgd_linear_random"],
    "gmm_alpha_sweep": ["monte_carlo", "svgd_rbf", "svgd_linear", "svgd_linear_random"],
    "rbm": ["monte_carlo", "svgd_rbf", "svgd_linear", "svgd_linear_random"],
    "ksd_decay": ["svgd_random_feature"],
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    d: int
    n: tuple
    methods: tuple
    trials: int = 20
    seed: int = 0
    condition_numbers: tuple = (10.0,)
    alphas: tuple = (0.0, 0.5, 1.0, 2.0, 4.0)
    n_components: int = 5
    n_hidden: int = 4
    bandwidth: float = 1.0
    mmd_reference: int = 10_000
    rank_retries: int = 2
    svgd: SvgdConfig = field(default_factory=SvgdConfig)
    warmup_iters: int = 500
    output: str = "."

    @property
    def grid(self):
        if self.experiment == "condition_sweep":
            return tuple(float(c) for c in self.condition_numbers)
        if self.experiment == "gmm_alpha_sweep":
            return tuple(float(a) for a in self.alphas)
        return (None,)


@dataclass
class ResultRow:
    experiment: str
    method: str
    d: int
    n: int
    m: Optional[int]
    trial: int
    seed: int
    grid: Optional[float]
    mse_first: Optional[float]
    mse_second: Optional[float]
    est_avg_variance: Optional[float]
    mmd_sq: Optional[float]
    ksd_sq: Optional[float]
    residual: Optional[float]
    rank_ok: Optional[bool]
    iterations: Optional[int]
    wall_time: Optional[float]
    stop: str = ""

    def sort_key(self):
        return (
            self.experiment,
            self.method,
            -math.inf if self.grid is None else self.grid,
            self.n,
            self.trial,
        )


RESULT_FIELDS = [f.name for f in dataclasses.fields(ResultRow)]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_SVGD_KEYS = {
    "step_size": (float, 0.05),
    "max_iters": (int, 5000),
    "residual_tol": (float, 1e-7),
    "scheduler": (str, "adagrad"),
    "fudge": (float, 1e-6),
    "momentum": (float, 0.9),
    "adapt_bandwidth": (bool, True),
    "feature_rebandwidth_every": (int, 50),
    "rank_tol": (float, 1e-10),
    "warmup_iters": (int, 500),
}

_TOP_KEYS = {
    "experiment": (str, None),
    "d": (int, None),
    "n": (list, None),
    "methods": (list, None),
    "trials": (int, 20),
    "seed": (int, 0),
    "condition_numbers": (list, [10.0]),
    "alphas": (list, [0.0, 0.5, 1.0, 2.0, 4.0]),
    "n_components": (int, None),
    "n_hidden": (int, None),
    "bandwidth": (float, 1.0),
    "mmd_reference": (int, 10_000),
    "rank_retries": (int, 2),
    "svgd": (dict, {}),
    "output": (str, "."),
}


def config_help():
    """Plain-text listing of every config key and its default."""
    lines = ["Config keys (JSON object; unknown keys are rejected):"]
    lines.append(f"  experiment         one of {', '.join(EXPERIMENTS)} (required)")
    lines.append("  d                  dimension (default: 10; gmm 2; ksd_decay 2)")
    lines.append("  n                  sorted list of particle counts (default depends on experiment)")
    lines.append(f"  methods            subset of {', '.join(METHODS)}")
    for key in ("trials", "seed", "condition_numbers", "alphas", "bandwidth", "mmd_reference", "rank_retries", "output"):
        lines.append(f"  {key:<18} default {_TOP_KEYS[key][1]!r}")
    lines.append("  n_components       GMM components (default 5; 15 with --paper-scale)")
    lines.append("  n_hidden           RBM hidden units (default 4; 10 with --paper-scale)")
    lines.append("  svgd               object with keys:")
    for key, (_, default) in _SVGD_KEYS.items():
        lines.append(f"    {key:<24} default {default!r}")
    return "\n".join(lines)


def _check_type(name, value, kind):
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        if not math.isfinite(value):
            raise ConfigError(f"field '{name}': must be finite")
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind in (str, list, dict, bool) and isinstance(value, kind):
        return value
    raise ConfigError(f"field '{name}': expected {kind.__name__}, got {type(value).__name__}")


def config_from_dict(raw, *, paper_scale=False, seed=None):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_TOP_KEYS))
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    vals = {}
    for key, (kind, default) in _TOP_KEYS.items():
        if key in raw:
            vals[key] = _check_type(key, raw[key], kind)
        else:
            vals[key] = default
    exp = vals["experiment"]
    if exp is None:
        raise ConfigError("field 'experiment': required")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"field 'experiment': unknown experiment {exp!r}")
    scale = dict(_SCALE[exp][1 if paper_scale else 0])
    d = scale["d"] if paper_scale or vals["d"] is None else vals["d"]
    if d < 1:
        raise ConfigError(f"field 'd': must be positive, got {d}")
    n = vals["n"] if vals["n"] is not None else _DEFAULT_N[exp](d)
    n = [_check_type(f"n[{i}]", v, int) for i, v in enumerate(n)]
    if not n or any(v < 1 for v in n):
        raise ConfigError("field 'n': particle counts must be positive")
    if n != sorted(n):
        raise ConfigError("field 'n': particle counts must be sorted")
    methods = vals["methods"] if vals["methods"] is not None else _DEFAULT_METHODS[exp]
    for i, meth in enumerate(methods):
        if meth not in METHODS:
            raise ConfigError(f"field 'methods[{i}]': unknown method {meth!r}")
    if not methods:
        raise ConfigError("field 'methods': at least one method required")
    if vals["trials"] < 1:
        raise ConfigError(f"field 'trials': must be >= 1, got {vals['trials']}")
    conds = [_check_type(f"condition_numbers[{i}]", c, float) for i, c in enumerate(vals["condition_numbers"])]
    if any(c < 1 for c in conds):
        raise ConfigError("field 'condition_numbers': values must be >= 1")
    alphas = [_check_type(f"alphas[{i}]", a, float) for i, a in enumerate(vals["alphas"])]
    if any(a < 0 for a in alphas):
        raise ConfigError("field 'alphas': values must be >= 0")
    n_components = scale.get("n_components", 5) if paper_scale or vals["n_components"] is None else vals["n_components"]
    n_hidden = scale.get("n_hidden", 4) if paper_scale or vals["n_hidden"] is None else vals["n_hidden"]
    if n_components < 1:
        raise ConfigError("field 'n_components': must be positive")
    if not 0 <= n_hidden <= 20:
        raise ConfigError("field 'n_hidden': must lie in [0, 20] for exact enumeration")
    if vals["bandwidth"] <= 0:
        raise ConfigError("field 'bandwidth': must be positive")
    if vals["mmd_reference"] < 0:
        raise ConfigError("field 'mmd_reference': must be >= 0")
    if vals["rank_retries"] < 0:
        raise ConfigError("field 'rank_retries': must be >= 0")

    raw_svgd = vals["svgd"]
    unknown = sorted(set(raw_svgd) - set(_SVGD_KEYS))
    if unknown:
        raise ConfigError(f"unknown field(s) in 'svgd': {', '.join(unknown)}")
    sv = {}
    for key, (kind, default) in _SVGD_KEYS.items():
        sv[key] = _check_type(f"svgd.{key}", raw_svgd[key], kind) if key in raw_svgd else default
    if sv["scheduler"] not in ("adagrad", "fixed"):
        raise ConfigError("field 'svgd.scheduler': must be 'adagrad' or 'fixed'")
    for key in ("step_size", "fudge"):
        if sv[key] <= 0:
            raise ConfigError(f"field 'svgd.{key}': must be positive")
    for key in ("max_iters", "warmup_iters"):
        if sv[key] < 0:
            raise ConfigError(f"field 'svgd.{key}': must be >= 0")
    if sv["residual_tol"] < 0:
        raise ConfigError("field 'svgd.residual_tol': must be >= 0")
    if not 0 <= sv["momentum"] < 1:
        raise ConfigError("field 'svgd.momentum': must lie in [0, 1)")
    if sv["feature_rebandwidth_every"] < 1:
        raise ConfigError("field 'svgd.feature_rebandwidth_every': must be >= 1")
    scheduler = AdaGrad(sv["fudge"], sv["momentum"]) if sv["scheduler"] == "adagrad" else Fixed()
    svgd_cfg = SvgdConfig(
        step_size=sv["step_size"],
        max_iters=sv["max_iters"],
        residual_tol=sv["residual_tol"],
        scheduler=scheduler,
        seed=vals["seed"] if seed is None else seed,
        adapt_bandwidth=sv["adapt_bandwidth"],
        feature_rebandwidth_every=sv["feature_rebandwidth_every"],
        rank_tol=sv["rank_tol"],
    )
    return ExperimentConfig(
        experiment=exp,
        d=d,
        n=tuple(n),
        methods=tuple(methods),
        trials=vals["trials"],
        seed=vals["seed"] if seed is None else int(seed),
        condition_numbers=tuple(conds),
        alphas=tuple(alphas),
        n_components=n_components,
        n_hidden=n_hidden,
        bandwidth=vals["bandwidth"],
        mmd_reference=vals["mmd_reference"],
        rank_retries=vals["rank_retries"],
        svgd=svgd_cfg,
        warmup_iters=sv["warmup_iters"],
        output=vals["output"],
    )


def parse_config(path, *, paper_scale=False, seed=None) -> ExperimentConfig:
    """Read and validate one JSON experiment config.

    Raises:
        ConfigError: with line/column context for malformed JSON and the
            offending field name for schema violations.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return config_from_dict(raw, paper_scale=paper_scale, seed=seed)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def derive_seed(master, purpose, *indices):
    ss = np.random.SeedSequence([int(master) & ((1 << 64) - 1), _PURPOSE[purpose], *map(int, indices)])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def build_target(cfg: ExperimentConfig, grid_value, trial):
    seed = derive_seed(cfg.seed, "model", trial)
    if cfg.experiment in ("gaussian_sweep", "ksd_decay"):
        return GaussianTarget.standard(cfg.d), seed
    if cfg.experiment == "condition_sweep":
        return make_random_nonspherical_gaussian(cfg.d, grid_value, seed), seed
    if cfg.experiment == "gmm_alpha_sweep":
        return make_random_gmm(cfg.d, cfg.n_components, grid_value, seed), seed
    return make_random_rbm(cfg.d, cfg.n_hidden, seed), seed


def monte_carlo_method(target, n, seed):
    """Exact i.i.d. sampling baseline."""
    return sample_exact(target, n, seed)


def _safe_bandwidth(X, fallback=1.0):
    try:
        return median_bandwidth(X)
    except DegenerateInputError:
        return fallback


def _make_kernel(method, cfg, d, n, X0, bank_seed):
    if cfg.experiment == "ksd_decay":
        h = cfg.bandwidth
    else:
        h = _safe_bandwidth(X0)
    if method == "svgd_rbf":
        return Rbf(h)
    if method == "svgd_linear":
        return Linear(d)
    if method == "svgd_linear_random":
        return make_linear_plus_random(d, n, h, bank_seed)
    return FeatureKernel(make_random_cosine_bank(d, n, h, bank_seed))


def _feature_count(k):
    if isinstance(k, Rbf):
        return None
    if isinstance(k, Linear):
        return k.bank().size
    if isinstance(k, FeatureKernel):
        return k.bank.size
    return k.size


class _Reference:
    """Exact reference sample for MMD, with its self-similarity term cached."""

    def __init__(self, target, size, seed):
        self.Y = sample_exact(target, size, seed)
        self.kernel = Rbf(_safe_bandwidth(self.Y[:_MMD_BANDWIDTH_POINTS]))
        self.kyy = float(np.mean(self.kernel.matrix(self.Y, self.Y)))

    def mmd_sq(self, X):
        k = self.kernel
        return float(k.matrix(X, X).mean() - 2.0 * k.matrix(X, self.Y).mean() + self.kyy)


def _evaluate(row, X, target, ref, ksd_kernel):
    mom = moment_report(X, target)
    row.mse_first = mom.mse_first
    row.mse_second = mom.mse_second
    row.est_avg_variance = mom.est_avg_variance
    row.mmd_sq = ref.mmd_sq(X) if ref is not None else None
    row.ksd_sq = ksd_squared(target, ksd_kernel, X)


def _run_cell(cfg: ExperimentConfig, grid_index, trial):
    """All rows for one (grid point, trial)."""
    grid_value = cfg.grid[grid_index]
    target, model_seed = build_target(cfg, grid_value, trial)
    ref = None
    if cfg.mmd_reference > 0:
        ref = _Reference(target, cfg.mmd_reference, derive_seed(cfg.seed, "reference", trial, grid_index))
    rows = []
    for n in cfg.n:
        for method in cfg.methods:
            base = dict(
                experiment=cfg.experiment, method=method, d=cfg.d, trial=trial, seed=model_seed,
                grid=grid_value, mse_first=None, mse_second=None, est_avg_variance=None,
                mmd_sq=None, ksd_sq=None, residual=None, rank_ok=None, iterations=None, wall_time=None,
            )
            if method == "monte_carlo":
                start = time.perf_counter()
                X = monte_carlo_method(target, n, derive_seed(cfg.seed, "mc", trial, grid_index, n))
                row = ResultRow(n=n, m=None, stop="exact", **base)
                row.wall_time = time.perf_counter() - start
                h = cfg.bandwidth if cfg.experiment == "ksd_decay" else _safe_bandwidth(X)
                _evaluate(row, X, target, ref, Rbf(h))
                rows.append(row)
                continue
            rows.append(_run_svgd(cfg, method, target, n, trial, grid_index, ref, base))
    return rows


def _run_svgd(cfg, method, target, n, trial, grid_index, ref, base):
    d = cfg.d
    n_try = n
    svgd_cfg = cfg.svgd
    if cfg.experiment == "ksd_decay":
        svgd_cfg = dataclasses.replace(svgd_cfg, adapt_bandwidth=False)
    for attempt in range(cfg.rank_retries + 1):
        X0 = initial_particles(n_try, d, derive_seed(cfg.seed, "init", trial, n_try))
        k = _make_kernel(method, cfg, d, n_try, X0, derive_seed(cfg.seed, "bank", trial, n_try))
        row = ResultRow(n=n_try, m=_feature_count(k), **base)
        try:
            X, rep = run_polished(target, k, X0, svgd_cfg, warmup_iters=cfg.warmup_iters)
        except DivergenceError as exc:
            row.stop = "diverged"
            row.iterations = len(exc.trace)
            row.residual = exc.trace[-1] if exc.trace and math.isfinite(exc.trace[-1]) else None
            return row
        row.residual = rep.final_residual
        row.rank_ok = rep.rank_ok
        row.iterations = rep.iterations_run
        row.wall_time = rep.wall_time
        row.stop = "tol" if rep.converged else "max_iters"
        if cfg.experiment == "ksd_decay":
            ksd_kernel = Rbf(cfg.bandwidth)
        else:
            ksd_kernel = Rbf(_safe_bandwidth(X))
        _evaluate(row, X, target, ref, ksd_kernel)
        # rank failure with m <= n: rerun with more particles
        if rep.rank_ok is False and rep.rank_feasible and attempt < cfg.rank_retries:
            logger.info("rank condition failed for %s n=%d; retrying with n=%d", method, n_try, 2 * n_try)
            n_try *= 2
            continue
        return row
    return row


def resolve_threads(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("STEINMATCH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"STEINMATCH_THREADS must be an integer, got {env!r}") from None
    return 1


def run_experiment(cfg: ExperimentConfig, threads=None):
    """Run every (grid point, trial, n, method) cell; rows come back sorted."""
    cells = [(g, t) for g in range(len(cfg.grid)) for t in range(cfg.trials)]
    workers = resolve_threads(threads)
    if workers == 1:
        chunks = [_run_cell(cfg, g, t) for g, t in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda c: _run_cell(cfg, *c), cells))
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=ResultRow.sort_key)
    return rows


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g") if math.isfinite(value) else ""
    return str(value)


def _write(path, header, records):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([_fmt(v) for v in rec] for rec in records)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


def emit_csv(rows, path, *, timing=False):
    """Write result rows with a fixed header.

    ``wall_time`` is left empty unless ``timing`` is set, so the file is a
    pure function of the config.
    """
    records = []
    for row in rows:
        rec = [getattr(row, f) for f in RESULT_FIELDS]
        if not timing:
            rec[RESULT_FIELDS.index("wall_time")] = None
        records.append(rec)
    _write(path, RESULT_FIELDS, records)


_INT_FIELDS = {"d", "n", "m", "trial", "seed", "iterations"}
_STR_FIELDS = {"experiment", "method", "stop"}


def read_csv(path):
    """Parse a results file written by ``emit_csv`` back into rows."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            vals = {}
            for key, text in rec.items():
                if key in _STR_FIELDS:
                    vals[key] = text
                elif text == "":
                    vals[key] = None
                elif key == "rank_ok":
                    vals[key] = text == "true"
                elif key in _INT_FIELDS:
                    vals[key] = int(text)
                else:
                    vals[key] = float(text)
            rows.append(ResultRow(**vals))
    return rows


SUMMARY_METRICS = ("mse_first", "mse_second", "est_avg_variance", "mmd_sq", "ksd_sq", "residual")
RELATIVE_METRICS = ("mse_first", "mse_second", "mmd_sq")


def summarize(rows):
    """Median and IQR per (experiment, method, grid, n).

    ``rel_*`` columns divide a method's median by the monte_carlo median at
    the same (experiment, grid, n), when present.
    """
    groups = {}
    for row in rows:
        groups.setdefault((row.experiment, row.method, row.grid, row.n), []).append(row)
    stats = {}
    for key, members in groups.items():
        entry = {"count": len(members)}
        for metric in SUMMARY_METRICS:
            vals = np.array([getattr(r, metric) for r in members if getattr(r, metric) is not None], dtype=float)
            if vals.size:
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                entry[metric] = (float(med), float(q3 - q1))
            else:
                entry[metric] = (None, None)
        oks = [r.rank_ok for r in members if r.rank_ok is not None]
        entry["rank_ok_frac"] = (sum(oks) / len(oks)) if oks else None
        stats[key] = entry
    out = []
    for key in sorted(stats, key=lambda k: (k[0], k[1], -math.inf if k[2] is None else k[2], k[3])):
        entry = stats[key]
        mc = stats.get((key[0], "monte_carlo", key[2], key[3]))
        rel = []
        for metric in RELATIVE_METRICS:
            num = entry[metric][0]
            den = mc[metric][0] if mc else None
            rel.append(num / den if num is not None and den not in (None, 0.0) else None)
        out.append((key, entry, rel))
    return out


def summary_header():
    header = ["experiment", "method", "grid", "n", "count"]
    for metric in SUMMARY_METRICS:
        header += [f"{metric}_median", f"{metric}_iqr"]
    header += ["rank_ok_frac"] + [f"rel_{m}" for m in RELATIVE_METRICS]
    return header


def emit_summary(rows, path):
    records = []
    for key, entry, rel in summarize(rows):
        rec = [key[0], key[1], key[2], key[3], entry["count"]]
        for metric in SUMMARY_METRICS:
            rec += list(entry[metric])
        rec += [entry["rank_ok_frac"]] + rel
        records.append(rec)
    _write(path, summary_header(), records)
