"""Command-line front end: simulate, fit, study, and validate.

Configuration comes from an optional JSON file plus command-line flags,
with flags winning over file values. Every run that touches data is
driven by an explicit seed; there is no fallback to ambient entropy.
Exit codes: 0 success, 1 usage or configuration error, 2 malformed
input data, 3 numerical failure, 4 failed self-validation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, fields
from importlib import resources

import numpy as np

from .errors import (
    ConfigError,
    GeometryError,
    IngestError,
    NumericalError,
    ValidationError,
)
from .harness import (
    StudyConfig,
    format_table,
    run_study,
    write_manifest,
    write_study_csv,
)
from .mcmc import (
    McmcConfig,
    PriorSpec,
    RangePrior,
    geweke_validate,
    hmc_potential_and_grad,
    run_chain,
    summarize,
    write_chain_csv,
)
from .model import (
    empirical_single_cell_moments,
    moment_identities,
    read_dataset,
    standardize_covariates,
    write_dataset,
)
from .randfield import bessel_k, matern_correlation
from .simgen import SCENARIO_IDS, ScenarioSpec, generate_dataset, scenario

__all__ = ["main"]

_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Configuration plumbing
# ---------------------------------------------------------------------------

def _load_tree(path: str | None) -> dict:
    """Parse the JSON config file into a plain dict tree."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            tree = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return tree


def _merged(args: argparse.Namespace, tree: dict, key: str, default=None):
    """Resolve one setting: flag, then subcommand block, then top level."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    sub = tree.get(args.command)
    if isinstance(sub, dict) and key in sub:
        return sub[key]
    if key in tree:
        return tree[key]
    return default


def _require_seed(args: argparse.Namespace, tree: dict) -> int:
    seed = _merged(args, tree, "seed")
    if seed is None:
        raise ConfigError('a seed is required (flag --seed or config key "seed")')
    return int(seed)


def _int_list(value, what: str) -> tuple[int, ...]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v]
    try:
        return tuple(int(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be a list of integers") from exc


def _str_list(value) -> tuple[str, ...]:
    if isinstance(value, str):
        return tuple(v for v in value.split(",") if v)
    return tuple(str(v) for v in value)


_RANGE_PRIOR_KEYS = {"rho_u", "rho_v", "kappa_u", "kappa_v"}


def _priors_from_tree(tree: dict) -> PriorSpec:
    """Build the prior settings from the config file's "priors" block."""
    block = tree.get("priors", {})
    if not isinstance(block, dict):
        raise ConfigError('config key "priors" must be an object')
    known = {f.name for f in fields(PriorSpec)}
    kwargs = {}
    for key, val in block.items():
        if key not in known:
            raise ConfigError(f"unknown prior setting {key!r}")
        if key in _RANGE_PRIOR_KEYS:
            if not isinstance(val, dict):
                raise ConfigError(f'prior "{key}" must be an object with a "kind"')
            try:
                kwargs[key] = RangePrior(**val)
            except TypeError as exc:
                raise ConfigError(f'bad prior "{key}": {exc}') from exc
        else:
            kwargs[key] = float(val)
    return PriorSpec(**kwargs)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _write_json(payload: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args: argparse.Namespace, tree: dict) -> str:
    out = str(_merged(args, tree, "out", "."))
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _scenario_from_config(args: argparse.Namespace, tree: dict) -> ScenarioSpec:
    sid = _merged(args, tree, "scenario")
    truth = _merged(args, tree, "truth")
    if truth is not None:
        if sid is not None:
            raise ConfigError("give either a scenario id or a custom truth block")
        if not isinstance(truth, dict):
            raise ConfigError('config key "truth" must be an object')
        known = {f.name for f in fields(ScenarioSpec)}
        bad = set(truth) - known
        if bad:
            raise ConfigError(f"unknown truth settings: {sorted(bad)}")
        try:
            return ScenarioSpec(scenario=int(truth.get("scenario", 0)),
                                **{k: v for k, v in truth.items() if k != "scenario"})
        except TypeError as exc:
            raise ConfigError(f"incomplete truth block: {exc}") from exc
    if sid is None:
        raise ConfigError(
            f"simulate needs --scenario (one of {list(SCENARIO_IDS)}) "
            'or a config "truth" block'
        )
    return scenario(int(sid))


def cmd_simulate(args: argparse.Namespace, tree: dict) -> int:
    seed = _require_seed(args, tree)
    rep = int(_merged(args, tree, "rep", 0))
    spec = _scenario_from_config(args, tree)
    out = _out_dir(args, tree)

    truth = generate_dataset(spec, seed=seed, rep=rep)
    obs_path = os.path.join(out, "obs.csv")
    grid_path = os.path.join(out, "grid.csv")
    write_dataset(truth.dataset, obs_path, grid_path)
    _write_json(
        {
            "schema_version": _SCHEMA_VERSION,
            "seed": seed,
            "rep": rep,
            "scenario": spec.scenario,
            "spec": asdict(spec),
            "params": asdict(truth.params),
            "cov": asdict(truth.cov),
            "ape": truth.ape,
            "delta_g": truth.delta_g,
        },
        os.path.join(out, "truth.json"),
    )
    print(f"n = {truth.dataset.n}")
    print(f"average effect = {truth.ape!r}")
    print(f"wrote {obs_path}, {grid_path}, {os.path.join(out, 'truth.json')}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _mcmc_config(args: argparse.Namespace, tree: dict) -> McmcConfig:
    block = _merged(args, tree, "mcmc", {})
    if not isinstance(block, dict):
        raise ConfigError('config key "mcmc" must be an object')
    known = {f.name for f in fields(McmcConfig)}
    bad = set(block) - known
    if bad:
        raise ConfigError(f"unknown mcmc settings: {sorted(bad)}")
    kwargs = dict(block)
    for key in ("n_iter", "n_burn", "thin", "variant"):
        val = _merged(args, tree, key)
        if val is not None:
            kwargs[key] = val
    if _merged(args, tree, "pool_coefficients") is not None:
        kwargs["pool_coefficients"] = bool(_merged(args, tree, "pool_coefficients"))
    return McmcConfig(**kwargs)


def _summary_rows(summary, out, pooled: bool) -> list[tuple[str, tuple]]:
    """Order and label the summary table rows, collapsing pooled blocks."""
    rows = []
    for name in out.columns:
        if pooled and (name.startswith("beta1_") or name.startswith("delta1_")):
            continue
        label = name
        if pooled and name.startswith(("beta0_", "delta0_")):
            label = name.replace("0_", "_", 1)
        rows.append((label, summary.table[name]))
    for name in ("r_u", "r_v", "phi_diff"):
        if name in summary.table:
            rows.append((name, summary.table[name]))
    return rows


def _summary_text(summary, out, pooled: bool) -> str:
    lines = [
        f"{'parameter':12s} {'mean':>12s} {'sd':>12s} {'lo2.5':>12s} {'hi97.5':>12s}"
    ]
    for label, (mean, sd, lo, hi) in _summary_rows(summary, out, pooled):
        lines.append(f"{label:12s} {mean:12.6f} {sd:12.6f} {lo:12.6f} {hi:12.6f}")
    if summary.prob_phi_diff_neg is not None:
        lines.append(f"P(phi_diff < 0) = {summary.prob_phi_diff_neg:.4f}")
    return "\n".join(lines) + "\n"


def cmd_fit(args: argparse.Namespace, tree: dict) -> int:
    seed = _require_seed(args, tree)
    obs = _merged(args, tree, "obs")
    grid = _merged(args, tree, "grid")
    if obs is None or grid is None:
        raise ConfigError("fit needs --obs and --grid CSV paths")
    out_dir = _out_dir(args, tree)
    cfg = _mcmc_config(args, tree)
    priors = _priors_from_tree(tree)

    dataset = read_dataset(str(obs), str(grid))
    standardized = bool(_merged(args, tree, "standardize", False))
    x_moments = None
    if standardized:
        dataset, x_mean, x_sd = standardize_covariates(dataset)
        x_moments = {"mean": x_mean, "sd": x_sd}

    chain = run_chain(dataset, cfg, priors, seed=seed)
    chain_path = os.path.join(out_dir, "chain.csv")
    write_chain_csv(chain, chain_path)
    summary = summarize(chain)
    text = _summary_text(summary, chain, cfg.pool_coefficients)
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(text)
    _write_json(
        {
            "schema_version": _SCHEMA_VERSION,
            "command": "fit",
            "seed": seed,
            "obs": str(obs),
            "grid": str(grid),
            "standardize": standardized,
            "covariate_moments": x_moments,
            "config": asdict(cfg),
            "priors": asdict(priors),
            "accept": chain.accept,
            "step_size": chain.step_size,
            "n_kept": int(chain.draws.shape[0]),
            "elapsed_seconds": chain.elapsed_seconds,
        },
        os.path.join(out_dir, "manifest.json"),
    )
    print(text, end="")
    print(f"wrote {chain_path}")
    return 0


# ---------------------------------------------------------------------------
# study
# ---------------------------------------------------------------------------

def cmd_study(args: argparse.Namespace, tree: dict) -> int:
    seed = _require_seed(args, tree)
    out_dir = _out_dir(args, tree)
    kwargs = dict(seed=seed)
    if _merged(args, tree, "scenarios") is not None:
        kwargs["scenarios"] = _int_list(_merged(args, tree, "scenarios"), "scenarios")
    if _merged(args, tree, "variants") is not None:
        kwargs["variants"] = _str_list(_merged(args, tree, "variants"))
    for key in ("n_reps", "n_iter", "n_burn", "thin", "n_workers"):
        val = _merged(args, tree, key)
        if val is not None:
            kwargs[key] = int(val)
    for key in ("fix_covariates", "pool_coefficients"):
        val = _merged(args, tree, key)
        if val is not None:
            kwargs[key] = bool(val)
    cache = _merged(args, tree, "cache_dir")
    if cache is not None:
        kwargs["cache_dir"] = str(cache)
    cfg = StudyConfig(**kwargs)

    def progress(done: int, total: int) -> None:
        print(f"completed {done}/{total}", file=sys.stderr, flush=True)

    result = run_study(cfg, progress=progress)
    csv_path = os.path.join(out_dir, "study.csv")
    write_study_csv(result, csv_path)
    write_manifest(result, os.path.join(out_dir, "manifest.json"))
    table = format_table(result)
    with open(os.path.join(out_dir, "table.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)
    print(f"wrote {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def _check_matern() -> tuple[bool, str]:
    h = np.linspace(0.0, 20.0, 1000)
    gap_half = np.max(np.abs(matern_correlation(h, 1.0, 0.5) - np.exp(-h)))
    gap_three = np.max(
        np.abs(matern_correlation(h, 1.0, 1.5) - (1.0 + h) * np.exp(-h))
    )
    ok = gap_half <= 1e-12 and gap_three <= 1e-10
    return ok, f"half gap {gap_half:.2e}, three-halves gap {gap_three:.2e}"


def _check_bessel() -> tuple[bool, str]:
    text = (
        resources.files("prefcausal.data")
        .joinpath("bessel_kv_reference.json")
        .read_text()
    )
    entries = json.loads(text)["entries"]
    worst = 0.0
    for entry in entries:
        got = bessel_k(entry["nu"], entry["x"])
        want = float(entry["kv"])
        worst = max(worst, abs(got - want) / abs(want))
    return worst <= 1e-10, f"worst relative error {worst:.2e} on {len(entries)} entries"


def _check_hmc_gradient() -> tuple[bool, str]:
    rng = np.random.default_rng(17)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        g = 25
        counts = rng.poisson(3.0, g).astype(float)
        area = 0.04
        m = rng.normal(3.0, 0.5, g)
        tau2_psi = float(np.exp(rng.normal(np.log(0.1), 0.2)))
        l = m + rng.normal(0.0, 0.4, g)
        _, grad = hmc_potential_and_grad(l, counts, area, m, tau2_psi)
        for j in range(g):
            e = np.zeros(g)
            e[j] = h
            up, _ = hmc_potential_and_grad(l + e, counts, area, m, tau2_psi)
            dn, _ = hmc_potential_and_grad(l - e, counts, area, m, tau2_psi)
            fd = (up - dn) / (2.0 * h)
            worst = max(worst, abs(fd - grad[j]) / max(1.0, abs(grad[j])))
    return worst <= 1e-6, f"max relative gradient error {worst:.2e} over 100 states"


def _check_geweke_clean(rounds: int) -> tuple[bool, str]:
    res = geweke_validate(n_rounds=rounds)
    z = res.max_abs_z
    return z < 4.0, f"max |z| = {z:.2f} over {len(res.stat_names)} statistics"


def _check_geweke_corrupted(rounds: int) -> tuple[bool, str]:
    res = geweke_validate(n_rounds=rounds, corrupt="alpha")
    z = res.max_abs_z
    return z > 4.0, f"corrupted intercept draw flagged at max |z| = {z:.2f}"


def _check_moments(sims: int) -> tuple[bool, str]:
    truth = generate_dataset(scenario(3), seed=0, rep=0)
    closed = moment_identities(truth.params, truth.cov)
    mc = empirical_single_cell_moments(
        truth.params, truth.cov, sims, np.random.default_rng(2024)
    )
    worst = 0.0
    for key, want in closed.items():
        est, se = mc[key]
        worst = max(worst, abs(est - want) / se)
    return worst <= 3.0, f"worst moment deviation {worst:.2f} standard errors"


def cmd_validate(args: argparse.Namespace, tree: dict) -> int:
    rounds = int(_merged(args, tree, "rounds", 10_000))
    sims = int(_merged(args, tree, "sims", 50_000))
    suites = [
        ("matern_closed_forms", _check_matern),
        ("bessel_reference", _check_bessel),
        ("hmc_gradient", _check_hmc_gradient),
        ("geweke_clean", lambda: _check_geweke_clean(rounds)),
        ("geweke_corrupted", lambda: _check_geweke_corrupted(rounds)),
        ("moment_identities", lambda: _check_moments(sims)),
    ]
    n_failed = 0
    for name, check in suites:
        start = time.perf_counter()
        ok, detail = check()
        took = time.perf_counter() - start
        mark = "ok  " if ok else "FAIL"
        print(f"{mark} {name}: {detail} ({took:.1f}s)", flush=True)
        n_failed += 0 if ok else 1
    if n_failed:
        raise ValidationError(f"{n_failed} of {len(suites)} validation suites failed")
    print(f"all {len(suites)} validation suites passed")
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefcausal",
        description=(
            "Spatial causal inference under outcome-dependent sampling: "
            "simulate datasets, fit the joint or outcome-only model, run "
            "replication studies, and self-validate the numerics."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, help="random seed (required)")
        p.add_argument("--out", help="output directory (default .)")

    p_sim = sub.add_parser("simulate", help="generate one synthetic dataset")
    common(p_sim)
    p_sim.add_argument("--scenario", type=int, help=f"one of {list(SCENARIO_IDS)}")
    p_sim.add_argument("--rep", type=int, help="replicate index (default 0)")

    p_fit = sub.add_parser("fit", help="run one MCMC chain on a dataset")
    common(p_fit)
    p_fit.add_argument("--obs", help="observations CSV")
    p_fit.add_argument("--grid", help="grid covariates CSV")
    p_fit.add_argument("--variant", choices=("full", "naive"))
    p_fit.add_argument("--n-iter", dest="n_iter", type=int)
    p_fit.add_argument("--n-burn", dest="n_burn", type=int)
    p_fit.add_argument("--thin", type=int)
    p_fit.add_argument(
        "--pool-coefficients", dest="pool_coefficients",
        action="store_true", default=None,
        help="share slope vectors between the policy arms",
    )
    p_fit.add_argument(
        "--standardize", action="store_true", default=None,
        help="z-score covariates jointly over observations and grid",
    )

    p_study = sub.add_parser("study", help="run a replication study")
    common(p_study)
    p_study.add_argument("--scenarios", help="comma-separated scenario ids")
    p_study.add_argument("--variants", help="comma-separated model variants")
    p_study.add_argument("--n-reps", dest="n_reps", type=int)
    p_study.add_argument("--n-iter", dest="n_iter", type=int)
    p_study.add_argument("--n-burn", dest="n_burn", type=int)
    p_study.add_argument("--thin", type=int)
    p_study.add_argument("--n-workers", dest="n_workers", type=int)
    p_study.add_argument("--cache-dir", dest="cache_dir")
    p_study.add_argument(
        "--fix-covariates", dest="fix_covariates",
        action="store_true", default=None,
        help="share one covariate surface across replicates",
    )
    p_study.add_argument(
        "--pool-coefficients", dest="pool_coefficients",
        action="store_true", default=None,
    )

    p_val = sub.add_parser("validate", help="run the numerical self-tests")
    p_val.add_argument("--config", help="JSON config file; flags override it")
    p_val.add_argument(
        "--rounds", type=int,
        help="joint-distribution test rounds (default 10000; fewer rounds "
        "weaken both the clean and the corrupted check)",
    )
    p_val.add_argument("--sims", type=int, help="moment-check simulations")

    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "study": cmd_study,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if not exc.code else 1
    try:
        tree = _load_tree(args.config)
        return _COMMANDS[args.command](args, tree)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IngestError, GeometryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
