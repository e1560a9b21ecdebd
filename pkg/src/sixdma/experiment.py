"""Seeded sweep harness: configuration, trial execution and CSV results."""
from __future__ import annotations

import csv
import io
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import tomli
import tomli_w

from .baselines import exhaustive_measurement
from .estimator import EstimatorConfig
from .measurement import generate_pilots, noise_power_for_snr
from .metrics import nmse
from .pipeline import (
    BASELINE_ESTIMATOR,
    PILOT_STREAM,
    realise_channels,
    run_proposed,
    stream,
)
from .scenario import ScenarioConfig, ScenarioError, config_from_dict, config_to_dict, generate_scenario

SWEEP_AXES = ("pilot", "snr")
METHODS = ("proposed", "exhaustive")
DEFAULT_SWEEP_VALUES = {"pilot": (10, 30, 50, 70, 90), "snr": (0.0, 10.0, 20.0, 30.0)}
MASK64 = (1 << 64) - 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    dictionary_size: int = 500
    sweep: str = "pilot"
    sweep_values: tuple = DEFAULT_SWEEP_VALUES["pilot"]
    # the axis that is not swept stays at these values
    pilot_length: int = 70
    snr_db: float = 30.0
    methods: tuple = METHODS
    trials: int = 20
    master_seed: int = 20240601
    output: str = "results"
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        object.__setattr__(self, "methods", tuple(self.methods))
        self.validate()

    def validate(self):
        if self.sweep not in SWEEP_AXES:
            raise ConfigError(f"sweep: must be one of {SWEEP_AXES}, got {self.sweep!r}")
        vals = self.sweep_values
        if not vals:
            raise ConfigError("sweep_values: must not be empty")
        if any(not isinstance(v, (int, float)) or isinstance(v, bool) for v in vals):
            raise ConfigError("sweep_values: entries must be numbers")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("sweep_values: must be strictly increasing")
        if self.sweep == "pilot" and any(int(v) != v or v < 1 for v in vals):
            raise ConfigError("sweep_values: pilot lengths must be positive integers")
        if self.pilot_length < 1:
            raise ConfigError("pilot_length: must be >= 1")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigError(f"methods: choose a non-empty subset of {METHODS}")
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")
        if not 0 <= self.master_seed <= MASK64:
            raise ConfigError("master_seed: must be a 64-bit unsigned integer")
        if self.dictionary_size < 1:
            raise ConfigError("dictionary_size: must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads: must be >= 1")

    def point(self, value) -> tuple[int, float]:
        """(pilot length, SNR in dB) at one sweep value."""
        if self.sweep == "pilot":
            return int(value), float(self.snr_db)
        return int(self.pilot_length), float(value)


# -- configuration I/O -------------------------------------------------------

def _key_line(text: str, key: str) -> str:
    if not text:
        return ""
    m = re.search(rf"^\s*{re.escape(key)}\s*=", text, flags=re.MULTILINE)
    return f" (line {text[:m.start()].count(chr(10)) + 1})" if m else ""


def config_from_mapping(data: dict, text: str = "") -> ExperimentConfig:
    data = dict(data)
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - top
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{key}{_key_line(text, key)}: unknown field")
    try:
        scenario = config_from_dict(data.pop("scenario", {}))
    except (ScenarioError, TypeError) as exc:
        raise ConfigError(f"scenario: {exc}") from None
    est = data.pop("estimator", {})
    est_fields = {f.name for f in fields(EstimatorConfig)}
    bad = set(est) - est_fields
    if bad:
        key = sorted(bad)[0]
        raise ConfigError(f"estimator.{key}{_key_line(text, key)}: unknown field")
    try:
        estimator = EstimatorConfig(**est)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"estimator: {exc}") from None
    try:
        return ExperimentConfig(scenario=scenario, estimator=estimator, **data)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        raise ConfigError(f"{key}{_key_line(text, key)}:{str(exc).split(':', 1)[1]}") from None
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from None
    return config_from_mapping(data, text)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def config_to_mapping(cfg: ExperimentConfig) -> dict:
    d = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name not in ("scenario", "estimator")}
    d["sweep_values"] = list(cfg.sweep_values)
    d["methods"] = list(cfg.methods)
    d["scenario"] = config_to_dict(cfg.scenario)
    d["estimator"] = asdict(cfg.estimator)
    return d


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_mapping(cfg))


def default_config(**overrides) -> ExperimentConfig:
    return replace(ExperimentConfig(), **overrides)


# -- seeds ------------------------------------------------------------------

def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def child_seed(master_seed: int, axis_index: int, trial: int) -> int:
    """64-bit trial seed: ``splitmix64(splitmix64(splitmix64(master) ^ axis) ^ trial)``.

    The seed does not depend on the sweep value, so every value of a sweep
    sees the same scenario in a given trial and adding values leaves existing
    trials untouched.
    """
    h = splitmix64(master_seed & MASK64)
    h = splitmix64(h ^ (axis_index & MASK64))
    return splitmix64(h ^ (trial & MASK64))


# -- results ----------------------------------------------------------------

@dataclass
class ResultRow:
    sweep_value: float
    method: str
    trial: int
    nmse: float
    wall_time_ms: float
    seed: int
    error: str = ""


RESULT_COLUMNS = ("sweep", "sweep_value", "method", "trial", "seed", "nmse", "error")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_results(rows: Sequence[ResultRow], sweep: str, stream_or_path) -> None:
    """RFC 4180 CSV of the deterministic result columns (no timings)."""
    def emit(fh):
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([sweep, _fmt(r.sweep_value), r.method, r.trial, r.seed, _fmt(r.nmse), r.error])
    if isinstance(stream_or_path, (str, Path)):
        with open(stream_or_path, "w", newline="") as fh:
            emit(fh)
    else:
        emit(stream_or_path)


def write_timings(rows: Sequence[ResultRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(("sweep_value", "method", "trial", "wall_time_ms"))
        for r in rows:
            w.writerow([_fmt(r.sweep_value), r.method, r.trial, f"{r.wall_time_ms:.3f}"])


def _parse_number(s: str):
    try:
        return int(s)
    except ValueError:
        return float(s)


def read_results(path) -> tuple[str, list[ResultRow]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
        rows, sweep = [], ""
        for rec in reader:
            sweep = rec["sweep"]
            rows.append(ResultRow(
                sweep_value=_parse_number(rec["sweep_value"]),
                method=rec["method"],
                trial=int(rec["trial"]),
                nmse=float(rec["nmse"]) if rec["nmse"] else float("nan"),
                wall_time_ms=float("nan"),
                seed=int(rec["seed"]),
                error=rec["error"],
            ))
    return sweep, rows


# -- running -----------------------------------------------------------------

def run_trial(cfg: ExperimentConfig, trial: int, verbose: bool = False):
    """All sweep values and methods for one trial.  Returns (rows, diagnostics)."""
    axis = SWEEP_AXES.index(cfg.sweep)
    seed = child_seed(cfg.master_seed, axis, trial)
    rows, diag = [], []
    try:
        sc = generate_scenario(cfg.scenario, seed)
        channels = realise_channels(sc, grid=True)
        truth = sc.grid_power
        K = cfg.scenario.n_users
    except Exception as exc:  # noqa: BLE001 - recorded as an error row
        msg = f"{type(exc).__name__}: {exc}"
        for v in cfg.sweep_values:
            for method in cfg.methods:
                rows.append(ResultRow(v, method, trial, float("nan"), 0.0, seed, msg))
        return rows, diag

    for value in cfg.sweep_values:
        L, snr = cfg.point(value)
        for method in cfg.methods:
            trace = [] if verbose else None
            t0 = time.perf_counter()
            try:
                sigma2 = noise_power_for_snr(sc, snr)
                X = generate_pilots(L, K, stream(seed, PILOT_STREAM))
                if method == "proposed":
                    P_hat = run_proposed(sc, X, sigma2, cfg.estimator, cfg.dictionary_size, seed,
                                         channels, trace).P_hat
                else:
                    P_hat = exhaustive_measurement(sc, X, sigma2, cfg.estimator,
                                                   stream(seed, BASELINE_ESTIMATOR), channels, trace)
                row = ResultRow(value, method, trial, nmse(truth, P_hat), 0.0, seed)
            except Exception as exc:  # noqa: BLE001
                row = ResultRow(value, method, trial, float("nan"), 0.0, seed,
                                f"{type(exc).__name__}: {exc}")
            row.wall_time_ms = 1e3 * (time.perf_counter() - t0)
            rows.append(row)
            if trace:
                diag.extend((value, method, trial, pose, sweep, f) for pose, sweep, f in trace)
    return rows, diag


def _trial_job(args):
    cfg, trial, verbose = args
    return run_trial(cfg, trial, verbose)


def run_experiment(cfg: ExperimentConfig, threads: int | None = None, verbose: bool = False,
                   diagnostics: list | None = None) -> list[ResultRow]:
    """Run every trial; rows come back sorted by (sweep index, trial, method)."""
    threads = cfg.threads if threads is None else threads
    jobs = [(cfg, t, verbose) for t in range(cfg.trials)]
    if threads <= 1 or len(jobs) == 1:
        results = [_trial_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_trial_job, jobs))
    rows = [r for rs, _ in results for r in rs]
    order = {v: i for i, v in enumerate(cfg.sweep_values)}
    rows.sort(key=lambda r: (order[r.sweep_value], r.trial, METHODS.index(r.method)))
    if diagnostics is not None:
        diag = [d for _, ds in results for d in ds]
        diag.sort(key=lambda d: (order[d[0]], d[2], METHODS.index(d[1]), d[3], d[4]))
        diagnostics.extend(diag)
    return rows


def write_diagnostics(diag: Iterable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(("sweep_value", "method", "trial", "pose", "sweep", "objective"))
        for value, method, trial, pose, sweep, f in diag:
            w.writerow([_fmt(value), method, trial, pose, sweep, repr(float(f))])


# -- summaries ----------------------------------------------------------------

@dataclass
class SummaryRow:
    sweep_value: float
    method: str
    count: int
    errors: int
    median: float
    mean: float


def summarize(rows: Sequence[ResultRow]) -> list[SummaryRow]:
    """Median and mean NMSE per (sweep value, method); error rows are counted, not averaged."""
    if not rows:
        raise ValueError("nothing to summarise")
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.sweep_value, r.method), []).append(r)
    out = []
    for (value, method), rs in groups.items():
        ok = np.array([r.nmse for r in rs if not r.error and not math.isnan(r.nmse)])
        out.append(SummaryRow(value, method, len(ok), len(rs) - len(ok),
                              float(np.median(ok)) if ok.size else float("nan"),
                              float(np.mean(ok)) if ok.size else float("nan")))
    methods = [m for m in METHODS]
    out.sort(key=lambda s: (s.sweep_value, methods.index(s.method) if s.method in methods else 99))
    return out


def write_summary(summary: Sequence[SummaryRow], sweep: str, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(("sweep", "sweep_value", "method", "trials", "errors", "median_nmse", "mean_nmse"))
        for s in summary:
            w.writerow([sweep, _fmt(s.sweep_value), s.method, s.count, s.errors,
                        _fmt(s.median), _fmt(s.mean)])


def format_summary(summary: Sequence[SummaryRow], sweep: str) -> str:
    label = {"pilot": "pilot length", "snr": "SNR [dB]"}.get(sweep, sweep or "value")
    buf = io.StringIO()
    buf.write(f"{label:>14}  {'method':<11} {'trials':>6} {'median NMSE':>12} "
              f"{'mean NMSE':>12} {'(dB)':>8}\n")
    for s in summary:
        db = 10 * math.log10(s.median) if s.median > 0 else float("nan")
        buf.write(f"{s.sweep_value!s:>14}  {s.method:<11} {s.count:>6} {s.median:>12.4e} "
                  f"{s.mean:>12.4e} {db:>8.2f}\n")
    return buf.getvalue()
