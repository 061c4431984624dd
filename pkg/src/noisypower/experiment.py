"""Experiment configuration, sweep expansion, single-run execution and the
trace / summary file formats used by the command line."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .dppca import PrivacyParams, distributed_private_pca, dp_required_iterations, split_psd
from .linalg import EigenDecomposition, sym_eig
from .matgen import SpectrumSpec, synth_psd
from .npm import (
    TRACE_COLUMNS,
    IterationTrace,
    NoiseModel,
    RunConfig,
    check_symmetric,
    gap_independent_tolerance,
    gaussian_stddev_for_budget,
    noise_tolerance,
    noisy_power_method,
    prior_noise_tolerance,
    required_iterations,
)
from .rng import ALGORITHM, RandomSource
from .streaming import gaussian_stream, round_check, streaming_pca

SCHEMA_VERSION = 1
MODES = ("npm", "dp_pca", "streaming")
NOISE_KINDS = ("none", "gaussian", "budget")
BUDGET_KINDS = ("gap_dependent", "gap_independent", "prior")
SUMMARY_METRICS = tuple(c for c in TRACE_COLUMNS if c != "iter")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _num(x: Any, name: str, kind=float, lo=None, hi=None, lo_open=False) -> Any:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(name, f"expected a number, got {x!r}")
    if kind is int:
        if isinstance(x, float) and not x.is_integer():
            raise ConfigError(name, f"expected an integer, got {x!r}")
        x = int(x)
    else:
        x = float(x)
        if not math.isfinite(x):
            raise ConfigError(name, "must be finite")
    if lo is not None and (x <= lo if lo_open else x < lo):
        raise ConfigError(name, f"must be {'>' if lo_open else '>='} {lo}, got {x}")
    if hi is not None and x > hi:
        raise ConfigError(name, f"must be <= {hi}, got {x}")
    return x


def _section(raw: Any, name: str, allowed: set[str]) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a mapping")
    extra = sorted(set(raw) - allowed)
    if extra:
        raise ConfigError(f"{name}.{extra[0]}" if name else extra[0], "unknown field")
    return raw


@dataclass(frozen=True)
class MatrixSpec:
    d: int | None = None
    alpha: float | None = None
    values: tuple[float, ...] | None = None
    file: str | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: Any) -> "MatrixSpec":
        raw = _section(raw, "matrix", {f.name for f in fields(cls)})
        given = [key for key in ("alpha", "values", "file") if raw.get(key) is not None]
        if len(given) != 1:
            raise ConfigError("matrix", "give exactly one of alpha, values or file")
        seed = _num(raw.get("seed", 0), "matrix.seed", int, lo=0)
        if "file" in given:
            if not isinstance(raw["file"], str):
                raise ConfigError("matrix.file", "expected a path")
            return cls(d=None if raw.get("d") is None else _num(raw["d"], "matrix.d", int, lo=1),
                       file=raw["file"], seed=seed)
        if "values" in given:
            vals = raw["values"]
            if not isinstance(vals, list) or not vals:
                raise ConfigError("matrix.values", "expected a non-empty list")
            vals = tuple(_num(v, f"matrix.values[{i}]", lo=0) for i, v in enumerate(vals))
            if any(b > a for a, b in zip(vals, vals[1:])):
                raise ConfigError("matrix.values", "must be non-increasing")
            d = raw.get("d")
            if d is not None and _num(d, "matrix.d", int) != len(vals):
                raise ConfigError("matrix.d", f"does not match the {len(vals)} values")
            return cls(d=len(vals), values=vals, seed=seed)
        if raw.get("d") is None:
            raise ConfigError("matrix.d", "required with alpha")
        return cls(d=_num(raw["d"], "matrix.d", int, lo=1),
                   alpha=_num(raw["alpha"], "matrix.alpha", lo=1, lo_open=True), seed=seed)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        if self.d is not None:
            out["d"] = self.d
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.values is not None:
            out["values"] = list(self.values)
        if self.file is not None:
            out["file"] = self.file
        out["seed"] = self.seed
        return out


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    stddev: float = 0.0
    fraction: float = 0.0
    budget: str = "gap_dependent"

    @classmethod
    def from_dict(cls, raw: Any) -> "NoiseSpec":
        raw = _section(raw, "noise", {f.name for f in fields(cls)})
        kind = raw.get("kind", "none")
        if kind not in NOISE_KINDS:
            raise ConfigError("noise.kind", f"must be one of {', '.join(NOISE_KINDS)}, got {kind!r}")
        budget = raw.get("budget", "gap_dependent")
        if budget not in BUDGET_KINDS:
            raise ConfigError("noise.budget", f"must be one of {', '.join(BUDGET_KINDS)}, got {budget!r}")
        return cls(
            kind=kind,
            stddev=_num(raw.get("stddev", 0.0), "noise.stddev", lo=0),
            fraction=_num(raw.get("fraction", 0.0), "noise.fraction", lo=0),
            budget=budget,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PrivacySpec:
    eps: float
    delta: float
    nodes: int = 1
    nu: float | None = None

    @classmethod
    def from_dict(cls, raw: Any) -> "PrivacySpec":
        raw = _section(raw, "privacy", {f.name for f in fields(cls)})
        for key in ("eps", "delta"):
            if key not in raw:
                raise ConfigError(f"privacy.{key}", "required")
        eps = _num(raw["eps"], "privacy.eps", lo=0, lo_open=True)
        delta = _num(raw["delta"], "privacy.delta", lo=0, lo_open=True)
        if eps >= 1:
            raise ConfigError("privacy.eps", f"must lie in (0, 1), got {eps}")
        if delta >= 1:
            raise ConfigError("privacy.delta", f"must lie in (0, 1), got {delta}")
        nu = raw.get("nu")
        return cls(eps=eps, delta=delta, nodes=_num(raw.get("nodes", 1), "privacy.nodes", int, lo=1),
                   nu=None if nu is None else _num(nu, "privacy.nu", lo=0))

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.nu is None:
            del out["nu"]
        return out


@dataclass(frozen=True)
class StreamSpec:
    n: int
    chunk_size: int = 256

    @classmethod
    def from_dict(cls, raw: Any) -> "StreamSpec":
        raw = _section(raw, "stream", {f.name for f in fields(cls)})
        if "n" not in raw:
            raise ConfigError("stream.n", "required")
        return cls(n=_num(raw["n"], "stream.n", int, lo=1),
                   chunk_size=_num(raw.get("chunk_size", 256), "stream.chunk_size", int, lo=1))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RoundSpec:
    B: float
    n_mc: int
    t_grid: tuple[float, ...] = (1.0, 2.0, 3.0)
    p: int | None = None

    @classmethod
    def from_dict(cls, raw: Any) -> "RoundSpec":
        raw = _section(raw, "round", {f.name for f in fields(cls)})
        for key in ("B", "n_mc"):
            if key not in raw:
                raise ConfigError(f"round.{key}", "required")
        grid = raw.get("t_grid", [1.0, 2.0, 3.0])
        if not isinstance(grid, list) or not grid:
            raise ConfigError("round.t_grid", "expected a non-empty list")
        grid = tuple(_num(t, f"round.t_grid[{i}]", lo=1) for i, t in enumerate(grid))
        p = raw.get("p")
        return cls(B=_num(raw["B"], "round.B", lo=0, lo_open=True),
                   n_mc=_num(raw["n_mc"], "round.n_mc", int, lo=1), t_grid=grid,
                   p=None if p is None else _num(p, "round.p", int, lo=1))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["t_grid"] = list(self.t_grid)
        if self.p is None:
            del out["p"]
        return out


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    summary: str = "summary.csv"

    @classmethod
    def from_dict(cls, raw: Any) -> "OutputSpec":
        raw = _section(raw, "output", {f.name for f in fields(cls)})
        out = cls(**{k: v for k, v in raw.items()})
        for key in ("dir", "summary"):
            if not isinstance(getattr(out, key), str) or not getattr(out, key):
                raise ConfigError(f"output.{key}", "expected a non-empty string")
        return out

    def to_dict(self) -> dict:
        return asdict(self)


_TOP_FIELDS = ("schema_version", "mode", "matrix", "k", "p", "q", "L", "epsilon", "tau", "noise",
               "privacy", "stream", "round", "seeds", "sweep", "output")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    matrix: MatrixSpec
    k: int
    p: int
    q: int
    L: int | str = "auto"
    epsilon: float = 0.1
    tau: float = 1.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    privacy: PrivacySpec | None = None
    stream: StreamSpec | None = None
    round: RoundSpec | None = None
    seeds: tuple[int, ...] = (0,)
    sweep: tuple[tuple[str, tuple[Any, ...]], ...] = ()
    output: OutputSpec = field(default_factory=OutputSpec)
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, raw: Any) -> "ExperimentConfig":
        raw = _section(raw, "", set(_TOP_FIELDS))
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
        mode = raw.get("mode")
        if mode not in MODES:
            raise ConfigError("mode", f"must be one of {', '.join(MODES)}, got {mode!r}")
        if "matrix" not in raw:
            raise ConfigError("matrix", "required")
        matrix = MatrixSpec.from_dict(raw["matrix"])
        ints = {}
        for key in ("k", "p", "q"):
            if key not in raw:
                raise ConfigError(key, "required")
            ints[key] = _num(raw[key], key, int, lo=1)
        L = raw.get("L", "auto")
        if L != "auto":
            L = _num(L, "L", int, lo=1)
        epsilon = _num(raw.get("epsilon", 0.1), "epsilon", lo=0, lo_open=True)
        if epsilon >= 1:
            raise ConfigError("epsilon", f"must lie in (0, 1), got {epsilon}")
        tau = _num(raw.get("tau", 1.0), "tau", lo=0, lo_open=True)
        noise = NoiseSpec.from_dict(raw.get("noise") or {})
        privacy = None if raw.get("privacy") is None else PrivacySpec.from_dict(raw["privacy"])
        stream = None if raw.get("stream") is None else StreamSpec.from_dict(raw["stream"])
        rnd = None if raw.get("round") is None else RoundSpec.from_dict(raw["round"])
        seeds = raw.get("seeds", [0])
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds", "expected a non-empty list")
        seeds = tuple(_num(s, f"seeds[{i}]", int, lo=0) for i, s in enumerate(seeds))
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds", "must be distinct")
        sweep = raw.get("sweep") or {}
        if not isinstance(sweep, dict):
            raise ConfigError("sweep", "expected a mapping of parameter name to value list")
        axes = []
        for name, values in sweep.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep.{name}", "expected a non-empty list")
            axes.append((str(name), tuple(values)))
        output = OutputSpec.from_dict(raw.get("output") or {})

        cfg = cls(mode=mode, matrix=matrix, L=L, epsilon=epsilon, tau=tau, noise=noise, privacy=privacy,
                  stream=stream, round=rnd, seeds=seeds, sweep=tuple(axes), output=output, **ints)
        cfg._check()
        for name, values in cfg.sweep:
            for v in values:
                try:
                    cfg.at_point({name: v})
                except ConfigError as exc:
                    if exc.field == "sweep":
                        raise
                    raise ConfigError(f"sweep.{name}", f"value {v!r} is invalid ({exc})") from None
        return cfg

    def _check(self) -> None:
        if self.k > self.q:
            raise ConfigError("k", f"must be <= q (k={self.k}, q={self.q})")
        if self.k > self.p:
            raise ConfigError("k", f"must be <= p (k={self.k}, p={self.p})")
        if self.q > self.p:
            raise ConfigError("q", f"must be <= p (q={self.q}, p={self.p})")
        if self.matrix.d is not None and self.p > self.matrix.d:
            raise ConfigError("p", f"must be <= d (p={self.p}, d={self.matrix.d})")
        if self.mode == "dp_pca" and self.privacy is None:
            raise ConfigError("privacy", "required for dp_pca")
        if self.mode == "streaming" and self.stream is None:
            raise ConfigError("stream", "required for streaming")
        if self.mode != "npm" and self.noise.kind != "none":
            raise ConfigError("noise.kind", f"must be none in {self.mode} mode")
        if self.stream is not None and self.L != "auto" and self.stream.n < self.L:
            raise ConfigError("stream.n", f"must be >= L (n={self.stream.n}, L={self.L})")

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "schema_version": self.schema_version,
            "mode": self.mode,
            "matrix": self.matrix.to_dict(),
            "k": self.k,
            "p": self.p,
            "q": self.q,
            "L": self.L,
            "epsilon": self.epsilon,
            "tau": self.tau,
            "noise": self.noise.to_dict(),
        }
        for key in ("privacy", "stream", "round"):
            section = getattr(self, key)
            if section is not None:
                out[key] = section.to_dict()
        out["seeds"] = list(self.seeds)
        out["sweep"] = {name: list(values) for name, values in self.sweep}
        out["output"] = self.output.to_dict()
        return out

    def at_point(self, point: dict[str, Any]) -> "ExperimentConfig":
        """Configuration with the sweep axes fixed to ``point``."""
        raw = self.to_dict()
        raw["sweep"] = {}
        for name, value in point.items():
            _set_path(raw, name)
            target = raw
            parts = name.split(".")
            for part in parts[:-1]:
                target = target.setdefault(part, {})
            target[parts[-1]] = value
        return ExperimentConfig.from_dict(raw)

    def points(self) -> list[dict[str, Any]]:
        names = [name for name, _ in self.sweep]
        grids = [values for _, values in self.sweep]
        return [dict(zip(names, combo)) for combo in itertools.product(*grids)]


_SWEEPABLE_TOP = {"k", "p", "q", "L", "epsilon", "tau"}
_SWEEPABLE_SECTIONS = {"matrix", "noise", "privacy", "stream", "round"}


def _set_path(raw: dict, name: str) -> None:
    parts = name.split(".")
    if len(parts) == 1 and parts[0] in _SWEEPABLE_TOP:
        return
    if len(parts) == 2 and parts[0] in _SWEEPABLE_SECTIONS:
        return
    raise ConfigError("sweep", f"{name!r} is not a sweepable parameter")


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid YAML ({exc})") from None
    return ExperimentConfig.from_dict(raw)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path} ({exc.strerror})") from None
    return parse_config(text)


# ---------------------------------------------------------------- matrices


def build_matrix(spec: MatrixSpec, base: Path | None = None) -> tuple[np.ndarray, EigenDecomposition]:
    if spec.file is not None:
        path = Path(spec.file)
        if base is not None and not path.is_absolute():
            path = base / path
        try:
            if path.suffix == ".npy":
                A = np.load(path)
            else:
                A = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError("matrix.file", f"cannot load {path} ({exc})") from None
        try:
            A = check_symmetric(A)
        except ValueError as exc:
            raise ConfigError("matrix.file", str(exc)) from None
        if spec.d is not None and A.shape[0] != spec.d:
            raise ConfigError("matrix.d", f"file holds a {A.shape[0]} x {A.shape[0]} matrix")
        try:
            truth = sym_eig(A)
        except ValueError as exc:
            raise ConfigError("matrix.file", str(exc)) from None
        return A, truth
    if spec.values is not None:
        sp = SpectrumSpec.explicit(spec.values)
    else:
        sp = SpectrumSpec.power_law(spec.d, spec.alpha)
    return synth_psd(sp, RandomSource(spec.seed).child("matrix"))


# ---------------------------------------------------------------- execution


@dataclass
class RunResult:
    trace: IterationTrace
    meta: dict


def resolve_iterations(cfg: ExperimentConfig, truth: EigenDecomposition) -> int:
    if cfg.L != "auto":
        return cfg.L
    try:
        if cfg.mode == "dp_pca":
            return dp_required_iterations(truth, cfg.k, cfg.q)
        if cfg.mode == "npm" and cfg.noise.kind == "budget" and cfg.noise.budget == "gap_independent":
            return gap_independent_tolerance(truth, cfg.k, cfg.p, cfg.epsilon, cfg.tau).iterations
        if cfg.mode == "npm" and cfg.noise.kind == "budget" and cfg.noise.budget == "prior":
            return prior_noise_tolerance(truth, cfg.k, cfg.p, cfg.epsilon, cfg.tau).iterations
        return required_iterations(truth, cfg.k, cfg.q, cfg.epsilon, cfg.tau)
    except ValueError as exc:
        raise ConfigError("L", f"auto iteration count unavailable ({exc})") from None


def budgets(cfg: ExperimentConfig, truth: EigenDecomposition) -> dict:
    out: dict[str, Any] = {}
    if truth.gap(cfg.k, cfg.q) > 0:
        out["gap_dependent"] = noise_tolerance(truth, cfg.k, cfg.q, cfg.p, cfg.epsilon, cfg.tau)
    if truth.gap(cfg.k, cfg.k) > 0:
        out["prior"] = prior_noise_tolerance(truth, cfg.k, cfg.p, cfg.epsilon, cfg.tau)
    out["gap_independent"] = gap_independent_tolerance(truth, cfg.k, cfg.p, cfg.epsilon, cfg.tau)
    return out


def _noise_model(cfg: ExperimentConfig, truth: EigenDecomposition) -> NoiseModel:
    spec = cfg.noise
    if spec.kind == "none":
        return NoiseModel.none()
    if spec.kind == "gaussian":
        return NoiseModel.gaussian(spec.stddev)
    table = budgets(cfg, truth)
    if spec.budget not in table:
        raise ConfigError("noise.budget", f"{spec.budget} budget undefined for a zero gap")
    q = cfg.q if spec.budget == "gap_dependent" else cfg.k
    return NoiseModel.gaussian(gaussian_stddev_for_budget(table[spec.budget], truth.d, cfg.p, q, spec.fraction))


def run_single(cfg: ExperimentConfig, seed: int, base: Path | None = None) -> RunResult:
    """Execute one (sweep point, seed) run of a point configuration."""
    A, truth = build_matrix(cfg.matrix, base)
    d = truth.d
    if cfg.p > d:
        raise ConfigError("p", f"must be <= d (p={cfg.p}, d={d})")
    L = resolve_iterations(cfg, truth)
    meta: dict[str, Any] = {"d": d, "L": L}
    if cfg.mode == "npm":
        table = budgets(cfg, truth)
        noise = _noise_model(cfg, truth)
        _, trace = noisy_power_method(A, RunConfig(cfg.k, cfg.p, cfg.q, L, seed), noise, truth,
                                      budget=table.get("gap_dependent"))
        meta["noise_stddev"] = noise.stddev
    elif cfg.mode == "dp_pca":
        pv = cfg.privacy
        parts = split_psd(truth, pv.nodes)
        priv = PrivacyParams(pv.eps, pv.delta)
        _, ledger, trace = distributed_private_pca(parts, cfg.k, cfg.p, L, priv, RandomSource(seed),
                                                   q=cfg.q, truth=truth, nu=pv.nu)
        meta["comm_total"] = ledger.total
    else:
        n = cfg.stream.n
        if n < L:
            raise ConfigError("stream.n", f"must be >= L (n={n}, L={L})")
        stream = gaussian_stream(truth, n, RandomSource(seed).child("stream"))
        _, trace = streaming_pca(stream, cfg.k, cfg.p, L, q=cfg.q, seed=seed, chunk_size=cfg.stream.chunk_size)
        meta["block_size"] = n // L
    meta["collapses"] = list(trace.collapses)
    return RunResult(trace, meta)


# ---------------------------------------------------------------- file formats


def format_float(x: float | None) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _format_cell(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return format_float(x)
    return str(x)


def trace_to_csv(trace: IterationTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for rec in trace.records:
        w.writerow([str(rec.iter)] + [format_float(v) for v in rec.row()[1:]])
    return buf.getvalue()


def write_trace(path: str | os.PathLike, trace: IterationTrace) -> None:
    with open(path, "w", newline="") as f:
        f.write(trace_to_csv(trace))


def read_trace(path: str | os.PathLike) -> list[dict[str, float | None]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"{path} is not a trace file")
    out = []
    for row in rows[1:]:
        out.append({c: (float(v) if v != "" else None) for c, v in zip(TRACE_COLUMNS, row)})
    return out


def point_key(point: dict[str, Any]) -> str:
    blob = json.dumps(point, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def run_name(point: dict[str, Any], seed: int) -> str:
    return f"trace_{point_key(point)}_s{seed}"


def _jsonable(x: Any) -> Any:
    if isinstance(x, float) and not math.isfinite(x):
        return format_float(x)
    return x


def worker_count() -> int:
    env = os.environ.get("NPM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError("NPM_THREADS", f"expected an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("NPM_THREADS", "must be at least 1")
        return n
    return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig, base: Path | None = None, threads: int | None = None) -> Path:
    """Run every (sweep point, seed), write traces plus sidecars, then the summary.

    Returns the summary path.  Run outputs do not depend on ``threads``.
    """
    base = Path(".") if base is None else base
    out_dir = Path(cfg.output.dir)
    if not out_dir.is_absolute():
        out_dir = base / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for point in cfg.points():
        point_cfg = cfg.at_point(point)
        for seed in cfg.seeds:
            jobs.append((point, point_cfg, seed))

    def job(item):
        point, point_cfg, seed = item
        res = run_single(point_cfg, seed, base)
        name = run_name(point, seed)
        write_trace(out_dir / f"{name}.csv", res.trace)
        meta = {
            "schema_version": SCHEMA_VERSION,
            "mode": point_cfg.mode,
            "sweep": point,
            "seed": seed,
            "trace": f"{name}.csv",
            "rng": ALGORITHM,
            "k": point_cfg.k,
            "p": point_cfg.p,
            "q": point_cfg.q,
            **{key: _jsonable(v) for key, v in res.meta.items()},
        }
        with open(out_dir / f"{name}.json", "w") as f:
            json.dump(meta, f, sort_keys=True, indent=1)
            f.write("\n")

    threads = worker_count() if threads is None else threads
    if threads <= 1 or len(jobs) <= 1:
        for item in jobs:
            job(item)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for fut in [pool.submit(job, item) for item in jobs]:
                fut.result()
    summary_path = out_dir / cfg.output.summary
    summarize_dir(out_dir, summary_path)
    return summary_path


class SummaryError(ValueError):
    pass


def _sort_value(v: Any) -> tuple:
    if isinstance(v, bool):
        return (1, str(v))
    if isinstance(v, (int, float)):
        return (0, float(v))
    return (1, str(v))


def summarize_dir(trace_dir: str | os.PathLike, out_path: str | os.PathLike | None = None) -> Path:
    """Collect final metrics of every run in ``trace_dir`` into one CSV.

    One row per run ordered by sweep point then seed; for each metric the
    run's final value plus the mean and population standard deviation over
    the seeds of its sweep point.
    """
    trace_dir = Path(trace_dir)
    if not trace_dir.is_dir():
        raise SummaryError(f"{trace_dir} is not a directory")
    metas = []
    for path in sorted(trace_dir.glob("trace_*.json")):
        with open(path) as f:
            meta = json.load(f)
        if not isinstance(meta, dict) or "trace" not in meta or "sweep" not in meta:
            raise SummaryError(f"{path.name} is not a run sidecar")
        metas.append(meta)
    if not metas:
        raise SummaryError(f"no traces in {trace_dir}")
    modes = sorted({m["mode"] for m in metas})
    if len(modes) > 1:
        raise SummaryError(f"mixed modes in {trace_dir}: {', '.join(modes)}")
    axes = list(metas[0]["sweep"])
    if any(list(m["sweep"]) != axes for m in metas):
        raise SummaryError("runs disagree on sweep axes")

    rows = []
    for meta in metas:
        records = read_trace(trace_dir / meta["trace"])
        if not records:
            raise SummaryError(f"{meta['trace']} has no rows")
        final = records[-1]
        rows.append((meta, {m: final[m] for m in SUMMARY_METRICS}))
    rows.sort(key=lambda r: (tuple(_sort_value(r[0]["sweep"][a]) for a in axes), r[0]["seed"]))

    groups: dict[str, list[dict]] = {}
    for meta, finals in rows:
        groups.setdefault(point_key(meta["sweep"]), []).append(finals)
    stats = {}
    for key, members in groups.items():
        stats[key] = {}
        for m in SUMMARY_METRICS:
            vals = [r[m] for r in members if r[m] is not None]
            if not vals:
                stats[key][m] = (None, None)
                continue
            mean = math.fsum(vals) / len(vals)
            var = math.fsum((v - mean) ** 2 for v in vals) / len(vals) if all(map(math.isfinite, vals)) else math.nan
            stats[key][m] = (mean, math.sqrt(var))

    header = axes + ["seed"]
    for m in SUMMARY_METRICS:
        header += [m, f"{m}_mean", f"{m}_std"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for meta, finals in rows:
        st = stats[point_key(meta["sweep"])]
        line = [_format_cell(meta["sweep"][a]) for a in axes] + [str(meta["seed"])]
        for m in SUMMARY_METRICS:
            line += [format_float(finals[m]), format_float(st[m][0]), format_float(st[m][1])]
        w.writerow(line)
    out_path = trace_dir / "summary.csv" if out_path is None else Path(out_path)
    with open(out_path, "w", newline="") as f:
        f.write(buf.getvalue())
    return out_path


def check_round_for(cfg: ExperimentConfig, seed: int | None = None, base: Path | None = None):
    if cfg.round is None:
        raise ConfigError("round", "required for check-round")
    _, truth = build_matrix(cfg.matrix, base)
    seed = cfg.seeds[0] if seed is None else seed
    stream = gaussian_stream(truth, cfg.round.n_mc, RandomSource(seed).child("stream"))
    p = cfg.round.p or cfg.p
    if p > truth.d:
        raise ConfigError("round.p", f"must be <= d (p={p}, d={truth.d})")
    return round_check(stream, cfg.round.B, p, cfg.round.n_mc, list(cfg.round.t_grid),
                       RandomSource(seed).child("round"))
