"""Replication study driver: many simulated datasets, two model fits each.

Each task simulates one replicate of a scenario and fits one model
variant to it. Tasks always execute in spawned worker processes with
single-threaded linear algebra pinned before the numeric libraries load,
so a study's output bytes depend only on its configuration and seed,
never on the worker count or scheduling. Finished tasks are cached as
JSON keyed by a hash of the task definition, which makes long studies
resumable and repeated aggregation free.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import asdict, dataclass, field
import multiprocessing as mp

import numpy as np

from .errors import ConfigError
from .mcmc import McmcConfig, PriorSpec, run_chain, summarize
from .simgen import SCENARIO_IDS, generate_dataset, scenario

__all__ = [
    "StudyConfig",
    "ReplicateResult",
    "StudyResult",
    "run_study",
    "format_table",
    "write_study_csv",
    "write_manifest",
]

_TASK_VERSION = 1

_BLAS_ENV = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


@dataclass(frozen=True)
class StudyConfig:
    """What to run: scenarios, replicates, variants, and chain budget."""

    scenarios: tuple[int, ...] = (1, 3, 4)
    n_reps: int = 50
    variants: tuple[str, ...] = ("naive", "full")
    n_iter: int = 20_000
    n_burn: int = 5_000
    thin: int = 1
    seed: int = 0
    fix_covariates: bool = False
    pool_coefficients: bool = False
    n_workers: int = 1
    cache_dir: str = os.path.join(".cache", "studies")

    def __post_init__(self) -> None:
        bad = [k for k in self.scenarios if k not in SCENARIO_IDS]
        if bad:
            raise ConfigError(f"unknown scenario ids {bad}")
        if self.n_reps <= 0:
            raise ConfigError("n_reps must be positive")
        if not self.variants or any(v not in ("naive", "full") for v in self.variants):
            raise ConfigError("variants must be a nonempty subset of naive/full")
        if self.n_workers <= 0:
            raise ConfigError("n_workers must be positive")
        # budget values are validated by the chain configuration
        McmcConfig(n_iter=self.n_iter, n_burn=self.n_burn, thin=self.thin)


@dataclass
class ReplicateResult:
    """One (scenario, replicate, variant) fit."""

    scenario: int
    rep: int
    variant: str
    n_obs: int
    true_ape: float
    delta_mean: float
    delta_sd: float
    delta_lo: float
    delta_hi: float
    bias: float
    covered: bool
    elapsed_seconds: float
    failed: bool = False
    error: str | None = None

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.scenario, self.rep, self.variant)


@dataclass
class StudyResult:
    """All replicate results plus the configuration that produced them."""

    config: StudyConfig
    results: list[ReplicateResult] = field(default_factory=list)

    def aggregate(self) -> dict[tuple[int, str], dict[str, float]]:
        """Per (scenario, variant): mean bias, its se, coverage, counts."""
        out: dict[tuple[int, str], dict[str, float]] = {}
        for k in self.config.scenarios:
            for v in self.config.variants:
                rows = [
                    r for r in self.results
                    if r.scenario == k and r.variant == v and not r.failed
                ]
                failed = sum(
                    1 for r in self.results
                    if r.scenario == k and r.variant == v and r.failed
                )
                cell: dict[str, float] = {"n": len(rows), "n_failed": failed}
                if rows:
                    biases = np.array([r.bias for r in rows])
                    cell["bias_mean"] = float(biases.mean())
                    cell["bias_se"] = (
                        float(biases.std(ddof=1) / np.sqrt(len(rows)))
                        if len(rows) > 1 else float("nan")
                    )
                    cell["coverage"] = float(np.mean([r.covered for r in rows]))
                    cell["ci_width"] = float(
                        np.mean([r.delta_hi - r.delta_lo for r in rows])
                    )
                out[(k, v)] = cell
        return out

    def cell(self, scenario_id: int, variant: str) -> dict[str, float]:
        return self.aggregate()[(scenario_id, variant)]


def _task_dict(config: StudyConfig, scenario_id: int, rep: int, variant: str) -> dict:
    """Everything that defines one task's result, and nothing else."""
    return {
        "version": _TASK_VERSION,
        "scenario": scenario_id,
        "rep": rep,
        "variant": variant,
        "seed": config.seed,
        "n_iter": config.n_iter,
        "n_burn": config.n_burn,
        "thin": config.thin,
        "fix_covariates": config.fix_covariates,
        "pool_coefficients": config.pool_coefficients,
    }


def _task_hash(task: dict) -> str:
    blob = json.dumps(task, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _pin_single_thread_blas() -> None:
    for name in _BLAS_ENV:
        os.environ[name] = "1"


def run_replicate_task(task: dict) -> dict:
    """Simulate one replicate, fit one variant, summarize. Worker entry."""
    start = time.perf_counter()
    try:
        spec = scenario(task["scenario"])
        truth = generate_dataset(
            spec, seed=task["seed"], rep=task["rep"],
            fix_covariates=task["fix_covariates"],
        )
        cfg = McmcConfig(
            n_iter=task["n_iter"],
            n_burn=task["n_burn"],
            thin=task["thin"],
            variant=task["variant"],
            pool_coefficients=task["pool_coefficients"],
        )
        out = run_chain(
            truth.dataset,
            cfg,
            PriorSpec(),
            seed=task["seed"],
            stream_root=("study", task["scenario"], task["rep"], task["variant"]),
        )
        s = summarize(out)
        covered = bool(s.delta_lo <= truth.ape <= s.delta_hi)
        return {
            "scenario": task["scenario"],
            "rep": task["rep"],
            "variant": task["variant"],
            "n_obs": truth.dataset.n,
            "true_ape": truth.ape,
            "delta_mean": s.delta_mean,
            "delta_sd": s.delta_sd,
            "delta_lo": s.delta_lo,
            "delta_hi": s.delta_hi,
            "bias": s.delta_mean - truth.ape,
            "covered": covered,
            "elapsed_seconds": time.perf_counter() - start,
            "failed": False,
            "error": None,
        }
    except Exception as exc:  # noqa: BLE001 - a bad replicate must not kill the study
        return {
            "scenario": task["scenario"],
            "rep": task["rep"],
            "variant": task["variant"],
            "n_obs": 0,
            "true_ape": float("nan"),
            "delta_mean": float("nan"),
            "delta_sd": float("nan"),
            "delta_lo": float("nan"),
            "delta_hi": float("nan"),
            "bias": float("nan"),
            "covered": False,
            "elapsed_seconds": time.perf_counter() - start,
            "failed": True,
            "error": f"{type(exc).__name__}: {exc}",
        }


def _atomic_write_json(path: str, payload: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
    os.replace(tmp, path)


def run_study(config: StudyConfig, progress=None) -> StudyResult:
    """Run (or resume) every task of a study and collect the results.

    Tasks found in the cache are loaded instead of recomputed. All
    remaining tasks run in spawned single-threaded worker processes, so
    results are identical for any worker count. `progress`, if given, is
    called with (done, total) after each finished task.
    """
    tasks = [
        _task_dict(config, k, rep, v)
        for k in config.scenarios
        for rep in range(config.n_reps)
        for v in config.variants
    ]
    os.makedirs(config.cache_dir, exist_ok=True)

    done: dict[str, dict] = {}
    pending: list[dict] = []
    for task in tasks:
        key = _task_hash(task)
        path = os.path.join(config.cache_dir, key + ".json")
        if os.path.exists(path):
            with open(path) as fh:
                done[key] = json.load(fh)
        else:
            pending.append(task)

    total = len(tasks)
    if progress is not None:
        progress(len(done), total)

    if pending:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(
            max_workers=config.n_workers,
            mp_context=ctx,
            initializer=_pin_single_thread_blas,
        ) as pool:
            futures = {pool.submit(run_replicate_task, t): t for t in pending}
            remaining = set(futures)
            while remaining:
                finished, remaining = wait(remaining, return_when=FIRST_COMPLETED)
                for fut in finished:
                    task = futures[fut]
                    payload = fut.result()
                    key = _task_hash(task)
                    _atomic_write_json(
                        os.path.join(config.cache_dir, key + ".json"), payload
                    )
                    done[key] = payload
                    if progress is not None:
                        progress(len(done), total)

    results = []
    for task in tasks:
        payload = done[_task_hash(task)]
        results.append(ReplicateResult(**payload))
    results.sort(key=lambda r: (r.scenario, r.rep, r.variant))
    return StudyResult(config=config, results=results)


def write_study_csv(result: StudyResult, path: str) -> None:
    """Per-replicate results with shortest-round-trip float formatting.

    Timing is deliberately left out so the file is byte-identical across
    runs and worker counts.
    """
    cols = [
        "scenario", "rep", "variant", "n_obs", "true_ape",
        "delta_mean", "delta_sd", "delta_lo", "delta_hi",
        "bias", "covered", "failed", "error",
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in result.results:
            row = []
            for c in cols:
                v = getattr(r, c)
                if isinstance(v, bool):
                    row.append(str(int(v)))
                elif isinstance(v, float):
                    row.append(repr(v))
                elif v is None:
                    row.append("")
                else:
                    row.append(str(v))
            w.writerow(row)


def write_manifest(result: StudyResult, path: str) -> None:
    """Study configuration, aggregate table, and timing. Not byte-stable."""
    agg = {
        f"{k}:{v}": cell for (k, v), cell in result.aggregate().items()
    }
    payload = {
        "config": asdict(result.config),
        "aggregate": agg,
        "n_results": len(result.results),
        "n_failed": sum(r.failed for r in result.results),
        "total_compute_seconds": float(
            sum(r.elapsed_seconds for r in result.results)
        ),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def format_table(result: StudyResult) -> str:
    """Bias and coverage per scenario and variant, bias scaled by 100."""
    agg = result.aggregate()
    lines = []
    header = (
        f"{'scenario':>8}  {'variant':>7}  {'bias x100 (se)':>18}  "
        f"{'coverage %':>10}  {'reps':>4}  {'failed':>6}"
    )
    lines.append(header)
    lines.append("-" * len(header))
    for k in result.config.scenarios:
        for v in result.config.variants:
            cell = agg[(k, v)]
            if cell["n"]:
                bias = f"{100 * cell['bias_mean']:+.1f} ({100 * cell['bias_se']:.1f})"
                cover = f"{100 * cell['coverage']:.1f}"
            else:
                bias, cover = "-", "-"
            lines.append(
                f"{k:>8}  {v:>7}  {bias:>18}  {cover:>10}  "
                f"{cell['n']:>4.0f}  {cell['n_failed']:>6.0f}"
            )
    return "\n".join(lines)
