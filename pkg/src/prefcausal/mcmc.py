"""Markov chain Monte Carlo for the joint outcome / point-process model.

The sampler sweeps, in a fixed order, over

  * exact conjugate updates for every location parameter, variance, and
    latent field (fields are drawn by a decoupled prior-sample-plus-update
    rule that needs one Cholesky of a G x G matrix and no explicit matrix
    inverse),
  * Hamiltonian updates with dual-averaging step-size tuning for the two
    log-intensity vectors, whose Poisson term breaks conjugacy,
  * log-scale random-walk Metropolis updates with Robbins-Monro proposal
    tuning for the correlation range and smoothness parameters, and
  * imputation of each observation's unobserved potential outcome.

Every update block owns a named random stream derived from (seed, path),
so results are reproducible regardless of scheduling, and the "naive"
variant (outcome model only, no intensity feedback) is draw-for-draw
identical to the joint variant with the feedback coefficients pinned to
zero on all shared blocks.

`geweke_validate` checks the whole transition kernel against the prior
by comparing forward-simulated parameter moments with moments from a
chain that alternates one sweep with a fresh data draw; a deliberately
mis-scaled intercept draw (`corrupt="alpha"`) is available to confirm
the check has the power to catch such bugs.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from scipy.special import gammaln

from .errors import ConfigError, NumericalError, ValidationError
from .geometry import GridGeometry, build_grid, Domain, pairwise_distances
from .model import (
    CausalSummary,
    CovParams,
    Dataset,
    LatentState,
    ModelParams,
    average_effect,
    local_effects,
    outcome_mean,
    propensity,
)
from .randfield import cholesky_with_jitter, derive_stream, matern_correlation
from .simgen import sample_point_process

__all__ = [
    "RangePrior",
    "PriorSpec",
    "McmcConfig",
    "ChainOutput",
    "GibbsModel",
    "CorrState",
    "DistanceIndex",
    "matheron_draw",
    "hmc_potential_and_grad",
    "leapfrog",
    "run_chain",
    "summarize",
    "write_chain_csv",
    "chain_columns",
    "GewekeResult",
    "geweke_validate",
    "toy_validation_problem",
]

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RangePrior:
    """Prior for a positive covariance parameter (range or smoothness).

    Kinds: "uniform" on (lo, hi), "lognormal" with log-scale mean and sd,
    or "fixed" at a constant (no update block is run for a fixed value).
    """

    kind: str
    lo: float = 0.0
    hi: float = 0.5
    mean_log: float = 0.0
    sd_log: float = 1.0
    value: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "lognormal", "fixed"):
            raise ConfigError(f"unknown prior kind {self.kind!r}")
        if self.kind == "uniform" and not 0.0 <= self.lo < self.hi:
            raise ConfigError("uniform prior needs 0 <= lo < hi")
        if self.kind == "lognormal" and self.sd_log <= 0.0:
            raise ConfigError("lognormal prior needs sd_log > 0")
        if self.kind == "fixed" and self.value <= 0.0:
            raise ConfigError("fixed prior value must be positive")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "RangePrior":
        return cls(kind="uniform", lo=lo, hi=hi)

    @classmethod
    def lognormal(cls, mean_log: float, sd_log: float) -> "RangePrior":
        return cls(kind="lognormal", mean_log=mean_log, sd_log=sd_log)

    @classmethod
    def fixed(cls, value: float) -> "RangePrior":
        return cls(kind="fixed", value=value)

    @property
    def is_fixed(self) -> bool:
        return self.kind == "fixed"

    def log_density(self, x: float) -> float:
        if self.kind == "uniform":
            return -math.log(self.hi - self.lo) if self.lo < x < self.hi else -math.inf
        if self.kind == "lognormal":
            if x <= 0.0:
                return -math.inf
            z = (math.log(x) - self.mean_log) / self.sd_log
            return (
                -0.5 * (_LOG_2PI + z * z)
                - math.log(self.sd_log)
                - math.log(x)
            )
        return 0.0

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "uniform":
            return float(rng.uniform(self.lo, self.hi))
        if self.kind == "lognormal":
            return float(np.exp(rng.normal(self.mean_log, self.sd_log)))
        return self.value

    def initial(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.lo + self.hi)
        if self.kind == "lognormal":
            return float(np.exp(self.mean_log))
        return self.value


def _norm_lpdf(x: float, m: float, var: float) -> float:
    return -0.5 * (_LOG_2PI + math.log(var) + (x - m) ** 2 / var)


def _invgamma_lpdf(x: float, shape: float, rate: float) -> float:
    if x <= 0.0:
        return -math.inf
    return (
        shape * math.log(rate)
        - float(gammaln(shape))
        - (shape + 1.0) * math.log(x)
        - rate / x
    )


def _invgamma_draw(shape: float, rate: float, rng: np.random.Generator) -> float:
    return float(1.0 / rng.gamma(shape, 1.0 / rate))


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters for every model parameter.

    Location parameters get independent normal priors N(m_*, c2_*), the
    variances get inverse-gamma (shape, rate) priors, and the correlation
    range / smoothness parameters get `RangePrior`s. The defaults are the
    weakly informative settings used for real-scale fits.
    """

    m_alpha: float = 0.0
    c2_alpha: float = 100.0
    m_beta: float = 0.0
    c2_beta: float = 100.0
    m_eta: float = 0.0
    c2_eta: float = 100.0
    m_delta: float = 0.0
    c2_delta: float = 100.0
    m_phi: float = 0.0
    c2_phi: float = 100.0
    m_gamma: float = 0.0
    c2_gamma: float = 100.0
    a_y: float = 0.1
    b_y: float = 0.1
    a_psi: float = 0.1
    b_psi: float = 0.1
    a_u: float = 0.1
    b_u: float = 0.1
    a_v: float = 0.1
    b_v: float = 0.1
    rho_u: RangePrior = field(default_factory=lambda: RangePrior.uniform(0.0, 0.5))
    rho_v: RangePrior = field(default_factory=lambda: RangePrior.uniform(0.0, 0.5))
    kappa_u: RangePrior = field(default_factory=lambda: RangePrior.fixed(0.5))
    kappa_v: RangePrior = field(default_factory=lambda: RangePrior.fixed(0.5))

    def log_density(self, params: ModelParams, cov: CovParams) -> float:
        """Total prior log density at (params, cov)."""
        total = 0.0
        total += _norm_lpdf(params.alpha0, self.m_alpha, self.c2_alpha)
        total += _norm_lpdf(params.alpha1, self.m_alpha, self.c2_alpha)
        for vec in (params.beta0, params.beta1):
            for v in vec:
                total += _norm_lpdf(float(v), self.m_beta, self.c2_beta)
        total += _norm_lpdf(params.eta0, self.m_eta, self.c2_eta)
        total += _norm_lpdf(params.eta1, self.m_eta, self.c2_eta)
        for vec in (params.delta0, params.delta1):
            for v in vec:
                total += _norm_lpdf(float(v), self.m_delta, self.c2_delta)
        total += _norm_lpdf(params.phi0, self.m_phi, self.c2_phi)
        total += _norm_lpdf(params.phi1, self.m_phi, self.c2_phi)
        total += _norm_lpdf(params.gamma_u, self.m_gamma, self.c2_gamma)
        total += _norm_lpdf(params.gamma_v, self.m_gamma, self.c2_gamma)
        total += _invgamma_lpdf(params.tau2_0, self.a_y, self.b_y)
        total += _invgamma_lpdf(params.tau2_1, self.a_y, self.b_y)
        total += _invgamma_lpdf(cov.sigma2_u0, self.a_u, self.b_u)
        total += _invgamma_lpdf(cov.sigma2_u1, self.a_u, self.b_u)
        total += _invgamma_lpdf(cov.sigma2_v0, self.a_v, self.b_v)
        total += _invgamma_lpdf(cov.sigma2_v1, self.a_v, self.b_v)
        total += _invgamma_lpdf(cov.tau2_psi0, self.a_psi, self.b_psi)
        total += _invgamma_lpdf(cov.tau2_psi1, self.a_psi, self.b_psi)
        total += self.rho_u.log_density(cov.rho_u)
        total += self.rho_v.log_density(cov.rho_v)
        total += self.kappa_u.log_density(cov.kappa_u)
        total += self.kappa_v.log_density(cov.kappa_v)
        return total

    def sample(
        self, rng: np.random.Generator, p: int
    ) -> tuple[ModelParams, CovParams]:
        """Draw (params, cov) from the prior; the draw order is fixed."""
        def norm(m: float, c2: float, size=None):
            return rng.normal(m, math.sqrt(c2), size=size)

        params = ModelParams(
            alpha0=float(norm(self.m_alpha, self.c2_alpha)),
            alpha1=float(norm(self.m_alpha, self.c2_alpha)),
            beta0=norm(self.m_beta, self.c2_beta, size=p),
            beta1=norm(self.m_beta, self.c2_beta, size=p),
            eta0=float(norm(self.m_eta, self.c2_eta)),
            eta1=float(norm(self.m_eta, self.c2_eta)),
            delta0=norm(self.m_delta, self.c2_delta, size=p),
            delta1=norm(self.m_delta, self.c2_delta, size=p),
            phi0=float(norm(self.m_phi, self.c2_phi)),
            phi1=float(norm(self.m_phi, self.c2_phi)),
            gamma_u=float(norm(self.m_gamma, self.c2_gamma)),
            gamma_v=float(norm(self.m_gamma, self.c2_gamma)),
            tau2_0=_invgamma_draw(self.a_y, self.b_y, rng),
            tau2_1=_invgamma_draw(self.a_y, self.b_y, rng),
        )
        cov = CovParams(
            rho_u=self.rho_u.sample(rng),
            rho_v=self.rho_v.sample(rng),
            kappa_u=self.kappa_u.sample(rng),
            kappa_v=self.kappa_v.sample(rng),
            sigma2_u0=_invgamma_draw(self.a_u, self.b_u, rng),
            sigma2_u1=_invgamma_draw(self.a_u, self.b_u, rng),
            sigma2_v0=_invgamma_draw(self.a_v, self.b_v, rng),
            sigma2_v1=_invgamma_draw(self.a_v, self.b_v, rng),
            tau2_psi0=_invgamma_draw(self.a_psi, self.b_psi, rng),
            tau2_psi1=_invgamma_draw(self.a_psi, self.b_psi, rng),
        )
        return params, cov


# ---------------------------------------------------------------------------
# Configuration and output containers
# ---------------------------------------------------------------------------

@dataclass
class McmcConfig:
    """Chain length, model variant, and tuning knobs.

    variant "full" fits the joint outcome / point-process model; "naive"
    fits the outcome model alone, ignoring where the points came from.
    `fix_phi_zero` keeps the feedback coefficients at zero inside the full
    variant (used to verify the naive reduction). `corrupt` deliberately
    mis-scales one update and exists only so the prior-consistency check
    can demonstrate it would catch such a bug.
    """

    n_iter: int = 20_000
    n_burn: int = 5_000
    thin: int = 1
    variant: str = "full"
    pool_coefficients: bool = False
    fix_phi_zero: bool = False
    hmc_steps: int = 10
    hmc_eps0: float = 0.1
    hmc_target: float = 0.75
    mh_prop_sd: float = 0.3
    mh_target: float = 0.44
    jitter: float = 1e-10
    store_propensity: bool = True
    corrupt: str | None = None

    def __post_init__(self) -> None:
        if self.variant not in ("full", "naive"):
            raise ConfigError(f"variant must be 'full' or 'naive', got {self.variant!r}")
        if self.n_iter <= 0 or not 0 <= self.n_burn < self.n_iter:
            raise ConfigError("need n_iter > 0 and 0 <= n_burn < n_iter")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if min(self.hmc_steps, self.hmc_eps0, self.mh_prop_sd, self.jitter) <= 0:
            raise ConfigError("tuning constants must be positive")
        if not 0.0 < self.hmc_target < 1.0 or not 0.0 < self.mh_target < 1.0:
            raise ConfigError("acceptance targets must lie in (0, 1)")
        if self.corrupt not in (None, "alpha"):
            raise ConfigError(f"unknown corrupt switch {self.corrupt!r}")

    @property
    def full(self) -> bool:
        return self.variant == "full"


def chain_columns(variant: str, p: int) -> list[str]:
    """Recorded column names, in their fixed order."""
    cols = ["delta", "alpha0", "alpha1"]
    cols += [f"beta0_{j + 1}" for j in range(p)]
    cols += [f"beta1_{j + 1}" for j in range(p)]
    cols += ["tau2_0", "tau2_1", "gamma_u", "sigma2_u0", "sigma2_u1", "rho_u", "kappa_u"]
    if variant == "full":
        cols += ["eta0", "eta1"]
        cols += [f"delta0_{j + 1}" for j in range(p)]
        cols += [f"delta1_{j + 1}" for j in range(p)]
        cols += [
            "phi0", "phi1", "gamma_v", "sigma2_v0", "sigma2_v1",
            "tau2_psi0", "tau2_psi1", "rho_v", "kappa_v",
        ]
    return cols


@dataclass
class ChainOutput:
    """Post-burn-in draws plus acceptance and tuning diagnostics."""

    columns: list[str]
    draws: np.ndarray
    delta_g_mean: np.ndarray
    propensity_mean: np.ndarray | None
    accept: dict[str, float]
    step_size: dict[str, float]
    variant: str
    n_iter: int
    n_burn: int
    thin: int
    elapsed_seconds: float = 0.0

    def draw(self, name: str) -> np.ndarray:
        return self.draws[:, self.columns.index(name)]


def _col_summary(d: np.ndarray) -> tuple[float, float, float, float]:
    lo, hi = np.quantile(d, [0.025, 0.975])
    sd = float(d.std(ddof=1)) if d.size > 1 else 0.0
    return float(d.mean()), sd, float(lo), float(hi)


def summarize(out: ChainOutput) -> CausalSummary:
    """Posterior means, sds, and central 95% intervals per chain column.

    Also summarizes three derived per-draw quantities: the implied
    correlation `r_u` between the two arms' outcome fields (and `r_v`
    for the intensity fields when stored), computed from the coregional
    weight and the component variances draw by draw, and the contrast
    `phi_diff` = phi1 - phi0 together with its below-zero posterior
    mass.
    """
    if out.draws.shape[0] == 0:
        raise ConfigError("cannot summarize an empty chain")

    def field_corr(tag: str) -> np.ndarray:
        g = out.draw(f"gamma_{tag}")
        s0 = out.draw(f"sigma2_{tag}0")
        s1 = out.draw(f"sigma2_{tag}1")
        return g * np.sqrt(s0) / np.sqrt(s1 + g * g * s0)

    table = {name: _col_summary(out.draw(name)) for name in out.columns}
    if "gamma_u" in out.columns:
        table["r_u"] = _col_summary(field_corr("u"))
    if "gamma_v" in out.columns:
        table["r_v"] = _col_summary(field_corr("v"))
    prob_neg = None
    if "phi0" in out.columns:
        phi_diff = out.draw("phi1") - out.draw("phi0")
        table["phi_diff"] = _col_summary(phi_diff)
        prob_neg = float(np.mean(phi_diff < 0.0))

    mean, sd, lo, hi = table["delta"]
    return CausalSummary(
        delta_mean=mean,
        delta_sd=sd,
        delta_lo=lo,
        delta_hi=hi,
        delta_g_mean=out.delta_g_mean,
        propensity_mean=out.propensity_mean,
        table=table,
        prob_phi_diff_neg=prob_neg,
    )


def write_chain_csv(out: ChainOutput, path: str) -> None:
    """Write the recorded draws with shortest-round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter"] + out.columns)
        for i in range(out.draws.shape[0]):
            it = out.n_burn + i * out.thin
            w.writerow([str(it)] + [repr(float(v)) for v in out.draws[i]])


# ---------------------------------------------------------------------------
# Correlation-matrix state
# ---------------------------------------------------------------------------

class DistanceIndex:
    """Distance matrix compressed to its unique values.

    Lattice centroids share few distinct distances, so correlation
    matrices are rebuilt by evaluating the correlation function on the
    unique values and scattering them back.
    """

    def __init__(self, dists: np.ndarray) -> None:
        d = np.asarray(dists, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValidationError(f"distance matrix must be square, got {d.shape}")
        self.n = d.shape[0]
        self.unique, self.inverse = np.unique(d, return_inverse=True)

    def correlation(self, rho: float, kappa: float) -> np.ndarray:
        vals = matern_correlation(self.unique, rho, kappa)
        return vals[self.inverse].reshape(self.n, self.n)


class CorrState:
    """Cholesky factor and quadratic forms for one correlation matrix."""

    def __init__(
        self, index: DistanceIndex, rho: float, kappa: float, jitter: float
    ) -> None:
        self.rho = rho
        self.kappa = kappa
        corr = index.correlation(rho, kappa)
        self.lower, self.jitter = cholesky_with_jitter(corr, jitter)
        corr[np.diag_indices_from(corr)] += self.jitter
        self.corr_j = corr
        self.log_det = 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def quad(self, w: np.ndarray) -> float:
        """w' (R + jitter I)^{-1} w via one triangular solve."""
        half = sla.solve_triangular(self.lower, w, lower=True, check_finite=False)
        return float(half @ half)

    def field_logpdf(self, w: np.ndarray, sigma2: float) -> float:
        """Log density of w under N(0, sigma2 * (R + jitter I))."""
        g = w.size
        return -0.5 * (
            g * (_LOG_2PI + math.log(sigma2)) + self.log_det + self.quad(w) / sigma2
        )


def matheron_draw(
    b: np.ndarray,
    d: np.ndarray,
    corr_state: CorrState,
    sigma2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Exact draw from N(C^{-1} b, C^{-1}) with C = diag(d) + (sigma2 R)^{-1}.

    Uses the decoupled form: draw a prior field and residual noise, then
    shift by a smoothed misfit. Handles zero entries in d (cells with no
    likelihood information). One Cholesky of a G x G matrix per call.

    Args:
        b: (G,) linear term of the conditional.
        d: (G,) nonnegative diagonal likelihood precision.
        corr_state: prior correlation factor (jittered).
        sigma2: prior field variance.
        rng: stream; consumes exactly 2 G standard normals.
    """
    g = b.size
    sq = np.sqrt(d)
    z = rng.standard_normal(g)
    prior = math.sqrt(sigma2) * (corr_state.lower @ z)
    e = rng.standard_normal(g)
    t = np.where(d > 0.0, b / np.where(d > 0.0, sq, 1.0), 0.0)
    m = sigma2 * (sq[:, None] * corr_state.corr_j * sq[None, :])
    m[np.diag_indices_from(m)] += 1.0
    lm = np.linalg.cholesky(m)
    w = sla.cho_solve((lm, True), t - sq * prior - e, check_finite=False)
    return prior + sigma2 * (corr_state.corr_j @ (sq * w))


# ---------------------------------------------------------------------------
# Full conditionals
# ---------------------------------------------------------------------------

class GibbsModel:
    """Precomputed data quantities plus every closed-form full conditional.

    All conditionals are expressed through the complete outcome vectors
    (observed outcomes plus current counterfactual imputations), so each
    arm's regression blocks see all n observations.
    """

    def __init__(self, dataset: Dataset, priors: PriorSpec, config: McmcConfig):
        self.dataset = dataset
        self.priors = priors
        self.config = config
        self.full = config.full
        self.n = dataset.n
        self.p = dataset.p
        self.ga = dataset.grid.n_active
        self.area = dataset.grid.cell_area
        self.a = dataset.a
        self.y = dataset.y
        self.x = dataset.x
        self.cell = dataset.cell
        self.counts = dataset.counts.astype(float)
        self.h_tot = self.counts.sum(axis=0)
        self.xg = dataset.active_x
        self.xs_xx = self.x.T @ self.x
        self.xg_xx = self.xg.T @ self.xg

    # -- helpers ---------------------------------------------------------

    def y_complete(self, arm: int, latent: LatentState) -> np.ndarray:
        return np.where(self.a == arm, self.y, latent.y_miss)

    def _cells_sum(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.cell, weights=values, minlength=self.ga)

    def _intensity_mean(
        self, arm: int, params: ModelParams, latent: LatentState,
        *, drop: str | None = None,
    ) -> np.ndarray:
        """Mean part of log lambda_a, optionally with one component removed."""
        u = latent.u(arm, params.gamma_u)
        v = latent.v(arm, params.gamma_v)
        out = np.zeros(self.ga)
        if drop != "eta":
            out = out + params.eta(arm)
        if drop != "delta":
            out = out + self.xg @ params.delta(arm)
        if drop != "v":
            out = out + v
        if drop != "phi_u":
            out = out + params.phi(arm) * u
        return out

    # -- conditionals ----------------------------------------------------

    def cond_impute(
        self, params: ModelParams, latent: LatentState
    ) -> tuple[np.ndarray, np.ndarray]:
        """Counterfactual outcome of each observation: N(mean, var) per row."""
        means = np.empty(self.n)
        variances = np.empty(self.n)
        for arm in (0, 1):
            sel = self.a != arm  # rows whose counterfactual is this arm
            u = latent.u(arm, params.gamma_u)
            means[sel] = outcome_mean(params, arm, self.x[sel], u[self.cell[sel]])
            variances[sel] = params.tau2(arm)
        return means, variances

    def cond_alpha(
        self, arm: int, params: ModelParams, latent: LatentState
    ) -> tuple[float, float]:
        u = latent.u(arm, params.gamma_u)
        resid = self.y_complete(arm, latent) - self.x @ params.beta(arm) - u[self.cell]
        c = self.n / params.tau2(arm) + 1.0 / self.priors.c2_alpha
        b = resid.sum() / params.tau2(arm) + self.priors.m_alpha / self.priors.c2_alpha
        return b / c, 1.0 / c

    def cond_beta(
        self, arm: int | None, params: ModelParams, latent: LatentState
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per-arm regression coefficients; arm None pools both arms.

        Pooling constrains the two arms' vectors to be equal while each
        arm keeps its own prior factor, so the pooled conditional carries
        one prior copy per arm.
        """
        arms = (0, 1) if arm is None else (arm,)
        c = len(arms) * np.eye(self.p) / self.priors.c2_beta
        b = np.full(self.p, len(arms) * self.priors.m_beta / self.priors.c2_beta)
        for a_ in arms:
            u = latent.u(a_, params.gamma_u)
            resid = self.y_complete(a_, latent) - params.alpha(a_) - u[self.cell]
            c = c + self.xs_xx / params.tau2(a_)
            b = b + self.x.T @ resid / params.tau2(a_)
        cov = np.linalg.inv(c)
        return cov @ b, cov

    def cond_eta(
        self, arm: int, params: ModelParams, cov: CovParams, latent: LatentState
    ) -> tuple[float, float]:
        m = self._intensity_mean(arm, params, latent, drop="eta")
        resid = latent.log_lambda(arm) - m
        t2 = 1.0 / cov.tau2_psi(arm)
        c = self.ga * t2 + 1.0 / self.priors.c2_eta
        b = resid.sum() * t2 + self.priors.m_eta / self.priors.c2_eta
        return b / c, 1.0 / c

    def cond_delta(
        self,
        arm: int | None,
        params: ModelParams,
        cov: CovParams,
        latent: LatentState,
    ) -> tuple[np.ndarray, np.ndarray]:
        arms = (0, 1) if arm is None else (arm,)
        c = len(arms) * np.eye(self.p) / self.priors.c2_delta
        b = np.full(self.p, len(arms) * self.priors.m_delta / self.priors.c2_delta)
        for a_ in arms:
            m = self._intensity_mean(a_, params, latent, drop="delta")
            resid = latent.log_lambda(a_) - m
            t2 = 1.0 / cov.tau2_psi(a_)
            c = c + self.xg_xx * t2
            b = b + self.xg.T @ resid * t2
        covar = np.linalg.inv(c)
        return covar @ b, covar

    def cond_phi(
        self, arm: int, params: ModelParams, cov: CovParams, latent: LatentState
    ) -> tuple[float, float]:
        u = latent.u(arm, params.gamma_u)
        m = self._intensity_mean(arm, params, latent, drop="phi_u")
        resid = latent.log_lambda(arm) - m
        t2 = 1.0 / cov.tau2_psi(arm)
        c = (u @ u) * t2 + 1.0 / self.priors.c2_phi
        b = (u @ resid) * t2 + self.priors.m_phi / self.priors.c2_phi
        return b / c, 1.0 / c

    def cond_gamma_u(
        self, params: ModelParams, cov: CovParams, latent: LatentState
    ) -> tuple[float, float]:
        """Cross-field loading of the treated outcome surface on the control one.

        Both likelihood pieces that see gamma_u contribute: the arm-1
        outcome regression and, in the joint variant, the arm-1 intensity
        regression through the feedback term.
        """
        u0c = latent.u0_tilde[self.cell]
        resid = (
            self.y_complete(1, latent)
            - params.alpha1
            - self.x @ params.beta1
            - latent.u1_tilde[self.cell]
        )
        c = (u0c @ u0c) / params.tau2_1 + 1.0 / self.priors.c2_gamma
        b = (u0c @ resid) / params.tau2_1 + self.priors.m_gamma / self.priors.c2_gamma
        if self.full:
            v1 = latent.v(1, params.gamma_v)
            m1 = params.eta1 + self.xg @ params.delta1 + v1
            r = latent.log_lambda1 - m1 - params.phi1 * latent.u1_tilde
            t2 = 1.0 / cov.tau2_psi1
            c = c + params.phi1**2 * (latent.u0_tilde @ latent.u0_tilde) * t2
            b = b + params.phi1 * (latent.u0_tilde @ r) * t2
        return b / c, 1.0 / c

    def cond_gamma_v(
        self, params: ModelParams, cov: CovParams, latent: LatentState
    ) -> tuple[float, float]:
        u1 = latent.u(1, params.gamma_u)
        m = (
            params.eta1
            + self.xg @ params.delta1
            + latent.v1_tilde
            + params.phi1 * u1
        )
        resid = latent.log_lambda1 - m
        t2 = 1.0 / cov.tau2_psi1
        c = (latent.v0_tilde @ latent.v0_tilde) * t2 + 1.0 / self.priors.c2_gamma
        b = (latent.v0_tilde @ resid) * t2 + self.priors.m_gamma / self.priors.c2_gamma
        return b / c, 1.0 / c

    def cond_field(
        self,
        tag: str,
        arm: int,
        params: ModelParams,
        cov: CovParams,
        latent: LatentState,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Likelihood form (b, d) of a latent field's conditional.

        The conditional is N(C^{-1} b, C^{-1}) with
        C = diag(d) + (sigma2 R)^{-1}.
        """
        if tag == "u":
            if arm == 0:
                r0 = (
                    self.y_complete(0, latent)
                    - params.alpha0
                    - self.x @ params.beta0
                )
                r1 = (
                    self.y_complete(1, latent)
                    - params.alpha1
                    - self.x @ params.beta1
                    - latent.u1_tilde[self.cell]
                )
                b = (
                    self._cells_sum(r0) / params.tau2_0
                    + params.gamma_u * self._cells_sum(r1) / params.tau2_1
                )
                d = self.h_tot / params.tau2_0 + params.gamma_u**2 * self.h_tot / params.tau2_1
                if self.full:
                    v0 = latent.v(0, params.gamma_v)
                    v1 = latent.v(1, params.gamma_v)
                    m0 = params.eta0 + self.xg @ params.delta0 + v0
                    m1 = params.eta1 + self.xg @ params.delta1 + v1
                    b = b + params.phi0 * (latent.log_lambda0 - m0) / cov.tau2_psi0
                    b = b + (
                        params.phi1
                        * params.gamma_u
                        * (latent.log_lambda1 - m1 - params.phi1 * latent.u1_tilde)
                        / cov.tau2_psi1
                    )
                    d = d + params.phi0**2 / cov.tau2_psi0
                    d = d + params.phi1**2 * params.gamma_u**2 / cov.tau2_psi1
                return b, d
            r1 = (
                self.y_complete(1, latent)
                - params.alpha1
                - self.x @ params.beta1
                - params.gamma_u * latent.u0_tilde[self.cell]
            )
            b = self._cells_sum(r1) / params.tau2_1
            d = self.h_tot / params.tau2_1
            if self.full:
                v1 = latent.v(1, params.gamma_v)
                m1 = params.eta1 + self.xg @ params.delta1 + v1
                b = b + (
                    params.phi1
                    * (
                        latent.log_lambda1
                        - m1
                        - params.phi1 * params.gamma_u * latent.u0_tilde
                    )
                    / cov.tau2_psi1
                )
                d = d + params.phi1**2 / cov.tau2_psi1
            return b, d
        if tag == "v":
            u0 = latent.u(0, params.gamma_u)
            u1 = latent.u(1, params.gamma_u)
            if arm == 0:
                m0 = params.eta0 + self.xg @ params.delta0 + params.phi0 * u0
                m1 = (
                    params.eta1
                    + self.xg @ params.delta1
                    + latent.v1_tilde
                    + params.phi1 * u1
                )
                b = (latent.log_lambda0 - m0) / cov.tau2_psi0
                b = b + params.gamma_v * (latent.log_lambda1 - m1) / cov.tau2_psi1
                d = np.full(
                    self.ga, 1.0 / cov.tau2_psi0 + params.gamma_v**2 / cov.tau2_psi1
                )
                return b, d
            m1 = (
                params.eta1
                + self.xg @ params.delta1
                + params.gamma_v * latent.v0_tilde
                + params.phi1 * u1
            )
            b = (latent.log_lambda1 - m1) / cov.tau2_psi1
            return b, np.full(self.ga, 1.0 / cov.tau2_psi1)
        raise ValidationError(f"unknown field tag {tag!r}")

    def cond_tau2(
        self, arm: int, params: ModelParams, latent: LatentState
    ) -> tuple[float, float]:
        u = latent.u(arm, params.gamma_u)
        resid = (
            self.y_complete(arm, latent)
            - params.alpha(arm)
            - self.x @ params.beta(arm)
            - u[self.cell]
        )
        return self.n / 2.0 + self.priors.a_y, float(resid @ resid) / 2.0 + self.priors.b_y

    def cond_tau2_psi(
        self, arm: int, params: ModelParams, latent: LatentState
    ) -> tuple[float, float]:
        m = self._intensity_mean(arm, params, latent)
        resid = latent.log_lambda(arm) - m
        return (
            self.ga / 2.0 + self.priors.a_psi,
            float(resid @ resid) / 2.0 + self.priors.b_psi,
        )

    def cond_sigma2(
        self, tag: str, arm: int, latent: LatentState, corr: CorrState
    ) -> tuple[float, float]:
        w = getattr(latent, f"{tag}{arm}_tilde")
        a0, b0 = (self.priors.a_u, self.priors.b_u) if tag == "u" else (
            self.priors.a_v, self.priors.b_v
        )
        return self.ga / 2.0 + a0, corr.quad(w) / 2.0 + b0


# ---------------------------------------------------------------------------
# Hamiltonian updates for the log-intensity vectors
# ---------------------------------------------------------------------------

def hmc_potential_and_grad(
    l: np.ndarray,
    counts: np.ndarray,
    area: float,
    m: np.ndarray,
    tau2_psi: float,
) -> tuple[float, np.ndarray]:
    """Negative log conditional of one log-intensity vector, plus gradient.

    The conditional combines the Poisson count likelihood (cell area times
    exp of the log intensity) with a Gaussian pull toward the structural
    mean m with nugget variance tau2_psi. Constant terms are dropped.
    """
    mu = area * np.exp(l)
    resid = l - m
    pot = -(counts @ l - mu.sum()) + 0.5 * float(resid @ resid) / tau2_psi
    grad = -counts + mu + resid / tau2_psi
    return float(pot), grad


def leapfrog(
    l: np.ndarray,
    p: np.ndarray,
    eps: float,
    n_steps: int,
    counts: np.ndarray,
    area: float,
    m: np.ndarray,
    tau2_psi: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Leapfrog integrator with mass matrix I / tau2_psi.

    Returns the final position and momentum. Running it again from
    (l', -p') traverses the same path backwards.
    """
    l = l.copy()
    p = p.copy()
    _, grad = hmc_potential_and_grad(l, counts, area, m, tau2_psi)
    p = p - 0.5 * eps * grad
    for step in range(n_steps):
        l = l + eps * tau2_psi * p
        _, grad = hmc_potential_and_grad(l, counts, area, m, tau2_psi)
        p = p - (eps if step < n_steps - 1 else 0.5 * eps) * grad
    return l, p


@dataclass
class _DualAverage:
    """Step-size adaptation driven toward a target acceptance rate."""

    mu: float
    log_eps: float
    log_eps_bar: float
    target: float
    h_bar: float = 0.0
    t: int = 0
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75

    @classmethod
    def start(cls, eps0: float, target: float) -> "_DualAverage":
        return cls(
            mu=math.log(10.0 * eps0),
            log_eps=math.log(eps0),
            log_eps_bar=math.log(eps0),
            target=target,
        )

    def update(self, accept_prob: float) -> None:
        self.t += 1
        self.h_bar += (self.target - accept_prob - self.h_bar) / (self.t + self.t0)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar

    def step_size(self, warm: bool) -> float:
        return math.exp(self.log_eps if warm else self.log_eps_bar)


@dataclass
class _MhAdapt:
    """Robbins-Monro scaling of a log-walk proposal sd."""

    log_sd: float
    target: float
    t: int = 0

    def update(self, accept_prob: float) -> None:
        self.t += 1
        self.log_sd += (accept_prob - self.target) * self.t ** (-0.6)
        self.log_sd = min(max(self.log_sd, math.log(1e-3)), math.log(10.0))

    @property
    def sd(self) -> float:
        return math.exp(self.log_sd)


def _hmc_block(
    latent_l: np.ndarray,
    counts: np.ndarray,
    area: float,
    m: np.ndarray,
    tau2_psi: float,
    eps: float,
    n_steps: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """One Hamiltonian proposal; returns the next state and accept prob.

    Consumes exactly G standard normals plus one uniform from rng.
    """
    g = latent_l.size
    p0 = rng.standard_normal(g) / math.sqrt(tau2_psi)
    log_u = math.log1p(-rng.uniform())
    pot0, _ = hmc_potential_and_grad(latent_l, counts, area, m, tau2_psi)
    h0 = pot0 + 0.5 * tau2_psi * float(p0 @ p0)
    with np.errstate(over="ignore", invalid="ignore"):
        l1, p1 = leapfrog(latent_l, p0, eps, n_steps, counts, area, m, tau2_psi)
        pot1, _ = hmc_potential_and_grad(l1, counts, area, m, tau2_psi)
        h1 = pot1 + 0.5 * tau2_psi * float(p1 @ p1)
    log_ratio = h0 - h1
    if not np.isfinite(log_ratio):
        return latent_l, 0.0
    accept_prob = math.exp(min(0.0, log_ratio))
    if log_u < log_ratio:
        return l1, accept_prob
    return latent_l, accept_prob


# ---------------------------------------------------------------------------
# Chain state and sweep
# ---------------------------------------------------------------------------

_BLOCK_NAMES = (
    "impute", "alpha", "beta", "u_field", "tau2", "gamma_u",
    "hmc_l", "eta", "delta", "phi", "v_field", "gamma_v",
    "tau2_psi", "sigma2_v", "sigma2_u",
    "rho_u", "kappa_u", "rho_v", "kappa_v",
)


@dataclass
class _ChainState:
    params: ModelParams
    cov: CovParams
    latent: LatentState
    corr_u: CorrState
    corr_v: CorrState


def _draw_mean_var(mean: float, var: float, rng: np.random.Generator, scale: float = 1.0) -> float:
    return float(mean + scale * math.sqrt(var) * rng.standard_normal())


def _draw_mvn(mean: np.ndarray, covar: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    lower = np.linalg.cholesky(covar)
    return mean + lower @ rng.standard_normal(mean.size)


def _mh_corr_block(
    which: str,
    state: _ChainState,
    gm: GibbsModel,
    dist_index: DistanceIndex,
    prior: RangePrior,
    adapt: _MhAdapt,
    rng: np.random.Generator,
    warm: bool,
) -> float:
    """Log-scale random-walk update of one correlation parameter.

    `which` is "rho_u", "kappa_u", "rho_v", or "kappa_v". The target is
    the two matching latent fields' Gaussian log densities plus the prior,
    with the log-scale Jacobian folded in. Consumes one normal and one
    uniform whatever happens.
    """
    z = float(rng.standard_normal())
    log_u = math.log1p(-rng.uniform())
    tag = which[-1]
    corr_cur = state.corr_u if tag == "u" else state.corr_v
    param = which[: -2]
    cur = getattr(state.cov, which)
    prop = cur * math.exp(adapt.sd * z)
    if prior.log_density(prop) == -math.inf:
        if warm:
            adapt.update(0.0)
        return 0.0
    rho = prop if param == "rho" else (state.cov.rho_u if tag == "u" else state.cov.rho_v)
    kappa = prop if param == "kappa" else (
        state.cov.kappa_u if tag == "u" else state.cov.kappa_v
    )
    try:
        corr_prop = CorrState(dist_index, rho, kappa, gm.config.jitter)
    except (NumericalError, ValidationError):
        if warm:
            adapt.update(0.0)
        return 0.0
    if tag == "u":
        fields = (state.latent.u0_tilde, state.latent.u1_tilde)
        variances = (state.cov.sigma2_u0, state.cov.sigma2_u1)
    else:
        fields = (state.latent.v0_tilde, state.latent.v1_tilde)
        variances = (state.cov.sigma2_v0, state.cov.sigma2_v1)
    diff = prior.log_density(prop) - prior.log_density(cur)
    diff += math.log(prop) - math.log(cur)
    for w, s2 in zip(fields, variances):
        diff += corr_prop.field_logpdf(w, s2) - corr_cur.field_logpdf(w, s2)
    accept_prob = math.exp(min(0.0, diff)) if np.isfinite(diff) else 0.0
    if np.isfinite(diff) and log_u < diff:
        setattr(state.cov, which, prop)
        if tag == "u":
            state.corr_u = corr_prop
        else:
            state.corr_v = corr_prop
    if warm:
        adapt.update(accept_prob)
    return accept_prob


def _sweep(
    gm: GibbsModel,
    state: _ChainState,
    streams: dict[str, np.random.Generator],
    dist_index: DistanceIndex,
    tune: dict[str, object],
    warm: bool,
) -> dict[str, float]:
    """One full update sweep over every block, in fixed order.

    Returns the acceptance probabilities of the Metropolis-style blocks.
    """
    cfg = gm.config
    params, latent = state.params, state.latent
    priors = gm.priors
    accepts: dict[str, float] = {}

    # 1. impute counterfactual outcomes
    mean, var = gm.cond_impute(params, latent)
    latent.y_miss = mean + np.sqrt(var) * streams["impute"].standard_normal(gm.n)

    # 2. intercepts
    alpha_scale = math.sqrt(2.0) if cfg.corrupt == "alpha" else 1.0
    for arm in (0, 1):
        m_a, v_a = gm.cond_alpha(arm, params, latent)
        value = _draw_mean_var(m_a, v_a, streams["alpha"], scale=alpha_scale)
        if arm == 0:
            params.alpha0 = value
        else:
            params.alpha1 = value

    # 3. outcome regression coefficients
    if cfg.pool_coefficients:
        m_b, c_b = gm.cond_beta(None, params, latent)
        drawn = _draw_mvn(m_b, c_b, streams["beta"])
        params.beta0 = drawn.copy()
        params.beta1 = drawn.copy()
    else:
        for arm in (0, 1):
            m_b, c_b = gm.cond_beta(arm, params, latent)
            drawn = _draw_mvn(m_b, c_b, streams["beta"])
            if arm == 0:
                params.beta0 = drawn
            else:
                params.beta1 = drawn

    # 4. outcome spatial fields
    for arm in (0, 1):
        b, d = gm.cond_field("u", arm, params, state.cov, latent)
        w = matheron_draw(b, d, state.corr_u, state.cov.sigma2_u(arm), streams["u_field"])
        if arm == 0:
            latent.u0_tilde = w
        else:
            latent.u1_tilde = w

    # 5. outcome noise variances
    for arm in (0, 1):
        shape, rate = gm.cond_tau2(arm, params, latent)
        value = _invgamma_draw(shape, rate, streams["tau2"])
        if arm == 0:
            params.tau2_0 = value
        else:
            params.tau2_1 = value

    # 6. outcome-field cross loading
    m_g, v_g = gm.cond_gamma_u(params, state.cov, latent)
    params.gamma_u = _draw_mean_var(m_g, v_g, streams["gamma_u"])

    if cfg.full:
        # 7. log intensities
        for arm in (0, 1):
            da: _DualAverage = tune[f"hmc_l{arm}"]
            m_l = gm._intensity_mean(arm, params, latent)
            l_new, acc = _hmc_block(
                latent.log_lambda(arm),
                gm.counts[arm],
                gm.area,
                m_l,
                state.cov.tau2_psi(arm),
                da.step_size(warm),
                cfg.hmc_steps,
                streams["hmc_l"],
            )
            if arm == 0:
                latent.log_lambda0 = l_new
            else:
                latent.log_lambda1 = l_new
            if warm:
                da.update(acc)
            accepts[f"hmc_l{arm}"] = acc

        # 8. intensity intercepts
        for arm in (0, 1):
            m_e, v_e = gm.cond_eta(arm, params, state.cov, latent)
            value = _draw_mean_var(m_e, v_e, streams["eta"])
            if arm == 0:
                params.eta0 = value
            else:
                params.eta1 = value

        # 9. intensity regression coefficients
        if cfg.pool_coefficients:
            m_d, c_d = gm.cond_delta(None, params, state.cov, latent)
            drawn = _draw_mvn(m_d, c_d, streams["delta"])
            params.delta0 = drawn.copy()
            params.delta1 = drawn.copy()
        else:
            for arm in (0, 1):
                m_d, c_d = gm.cond_delta(arm, params, state.cov, latent)
                drawn = _draw_mvn(m_d, c_d, streams["delta"])
                if arm == 0:
                    params.delta0 = drawn
                else:
                    params.delta1 = drawn

        # 10. feedback coefficients
        if not cfg.fix_phi_zero:
            for arm in (0, 1):
                m_p, v_p = gm.cond_phi(arm, params, state.cov, latent)
                value = _draw_mean_var(m_p, v_p, streams["phi"])
                if arm == 0:
                    params.phi0 = value
                else:
                    params.phi1 = value

        # 11. intensity spatial fields
        for arm in (0, 1):
            b, d = gm.cond_field("v", arm, params, state.cov, latent)
            w = matheron_draw(
                b, d, state.corr_v, state.cov.sigma2_v(arm), streams["v_field"]
            )
            if arm == 0:
                latent.v0_tilde = w
            else:
                latent.v1_tilde = w

        # 12. intensity-field cross loading
        m_gv, v_gv = gm.cond_gamma_v(params, state.cov, latent)
        params.gamma_v = _draw_mean_var(m_gv, v_gv, streams["gamma_v"])

        # 13. intensity nugget variances
        for arm in (0, 1):
            shape, rate = gm.cond_tau2_psi(arm, params, latent)
            value = _invgamma_draw(shape, rate, streams["tau2_psi"])
            if arm == 0:
                state.cov.tau2_psi0 = value
            else:
                state.cov.tau2_psi1 = value

        # 14. intensity field variances
        for arm in (0, 1):
            shape, rate = gm.cond_sigma2("v", arm, latent, state.corr_v)
            value = _invgamma_draw(shape, rate, streams["sigma2_v"])
            if arm == 0:
                state.cov.sigma2_v0 = value
            else:
                state.cov.sigma2_v1 = value

    # 15. outcome field variances
    for arm in (0, 1):
        shape, rate = gm.cond_sigma2("u", arm, latent, state.corr_u)
        value = _invgamma_draw(shape, rate, streams["sigma2_u"])
        if arm == 0:
            state.cov.sigma2_u0 = value
        else:
            state.cov.sigma2_u1 = value

    # 16. correlation parameters
    if not priors.rho_u.is_fixed:
        accepts["rho_u"] = _mh_corr_block(
            "rho_u", state, gm, dist_index, priors.rho_u,
            tune["rho_u"], streams["rho_u"], warm,
        )
    if not priors.kappa_u.is_fixed:
        accepts["kappa_u"] = _mh_corr_block(
            "kappa_u", state, gm, dist_index, priors.kappa_u,
            tune["kappa_u"], streams["kappa_u"], warm,
        )
    if cfg.full:
        if not priors.rho_v.is_fixed:
            accepts["rho_v"] = _mh_corr_block(
                "rho_v", state, gm, dist_index, priors.rho_v,
                tune["rho_v"], streams["rho_v"], warm,
            )
        if not priors.kappa_v.is_fixed:
            accepts["kappa_v"] = _mh_corr_block(
                "kappa_v", state, gm, dist_index, priors.kappa_v,
                tune["kappa_v"], streams["kappa_v"], warm,
            )
    return accepts


# ---------------------------------------------------------------------------
# Initialization and the main driver
# ---------------------------------------------------------------------------

def _initial_state(gm: GibbsModel, dist_index: DistanceIndex) -> _ChainState:
    """Deterministic starting state from per-arm least squares.

    Outcome intercepts, slopes, and noise variances come from observed-arm
    regressions; log intensities start at smoothed empirical log rates and
    seed the intensity-side regressions the same way. Fields, loadings,
    and feedback coefficients start at zero.
    """
    ds = gm.dataset
    p = gm.p
    priors = gm.priors
    alpha = [0.0, 0.0]
    beta = [np.zeros(p), np.zeros(p)]
    tau2 = [1.0, 1.0]
    for arm in (0, 1):
        sel = ds.a == arm
        m = int(sel.sum())
        if m >= p + 2:
            design = np.column_stack([np.ones(m), ds.x[sel]])
            coef, *_ = np.linalg.lstsq(design, ds.y[sel], rcond=None)
            alpha[arm] = float(coef[0])
            beta[arm] = coef[1:]
            resid = ds.y[sel] - design @ coef
            tau2[arm] = max(float(resid @ resid) / max(m - p - 1, 1), 1e-3)
        elif m > 0:
            alpha[arm] = float(ds.y[sel].mean())

    eta = [0.0, 0.0]
    delta = [np.zeros(p), np.zeros(p)]
    tau2_psi = [0.1, 0.1]
    l_init = []
    design_g = np.column_stack([np.ones(gm.ga), gm.xg])
    for arm in (0, 1):
        l_arm = np.log((gm.counts[arm] + 0.5) / gm.area)
        l_init.append(l_arm)
        coef, *_ = np.linalg.lstsq(design_g, l_arm, rcond=None)
        eta[arm] = float(coef[0])
        delta[arm] = coef[1:]
        resid = l_arm - design_g @ coef
        tau2_psi[arm] = max(float(resid @ resid) / max(gm.ga - p - 1, 1), 0.05)

    params = ModelParams(
        alpha0=alpha[0], alpha1=alpha[1],
        beta0=beta[0], beta1=beta[1],
        eta0=eta[0], eta1=eta[1],
        delta0=delta[0], delta1=delta[1],
        phi0=0.0, phi1=0.0,
        tau2_0=tau2[0], tau2_1=tau2[1],
        gamma_u=0.0, gamma_v=0.0,
    )
    cov = CovParams(
        rho_u=priors.rho_u.initial(),
        rho_v=priors.rho_v.initial(),
        kappa_u=priors.kappa_u.initial(),
        kappa_v=priors.kappa_v.initial(),
        sigma2_u0=1.0, sigma2_u1=1.0,
        sigma2_v0=1.0, sigma2_v1=1.0,
        tau2_psi0=tau2_psi[0], tau2_psi1=tau2_psi[1],
    )
    zero = np.zeros(gm.ga)
    latent = LatentState(
        u0_tilde=zero.copy(), u1_tilde=zero.copy(),
        v0_tilde=zero.copy(), v1_tilde=zero.copy(),
        log_lambda0=l_init[0], log_lambda1=l_init[1],
        y_miss=np.zeros(gm.n),
    )
    corr_u = CorrState(dist_index, cov.rho_u, cov.kappa_u, gm.config.jitter)
    corr_v = CorrState(dist_index, cov.rho_v, cov.kappa_v, gm.config.jitter)
    return _ChainState(params, cov, latent, corr_u, corr_v)


def _fresh_tuning(config: McmcConfig) -> dict[str, object]:
    tune: dict[str, object] = {}
    for arm in (0, 1):
        tune[f"hmc_l{arm}"] = _DualAverage.start(config.hmc_eps0, config.hmc_target)
    for name in ("rho_u", "kappa_u", "rho_v", "kappa_v"):
        tune[name] = _MhAdapt(math.log(config.mh_prop_sd), config.mh_target)
    return tune


def _record_row(
    delta_val: float, params: ModelParams, cov: CovParams, full: bool
) -> list[float]:
    row = [delta_val, params.alpha0, params.alpha1]
    row += [float(v) for v in params.beta0]
    row += [float(v) for v in params.beta1]
    row += [
        params.tau2_0, params.tau2_1, params.gamma_u,
        cov.sigma2_u0, cov.sigma2_u1, cov.rho_u, cov.kappa_u,
    ]
    if full:
        row += [params.eta0, params.eta1]
        row += [float(v) for v in params.delta0]
        row += [float(v) for v in params.delta1]
        row += [
            params.phi0, params.phi1, params.gamma_v,
            cov.sigma2_v0, cov.sigma2_v1,
            cov.tau2_psi0, cov.tau2_psi1, cov.rho_v, cov.kappa_v,
        ]
    return row


def run_chain(
    dataset: Dataset,
    config: McmcConfig | None = None,
    priors: PriorSpec | None = None,
    seed: int = 0,
    stream_root: tuple = ("chain",),
) -> ChainOutput:
    """Run one chain on a dataset and return recorded draws.

    Each update block consumes its own stream derived from
    (seed, *stream_root, "block", name), so identical inputs give
    identical output on any schedule.
    """
    config = config or McmcConfig()
    priors = priors or PriorSpec()
    gm = GibbsModel(dataset, priors, config)
    dist_index = DistanceIndex(pairwise_distances(dataset.grid.active_centroids))
    state = _initial_state(gm, dist_index)
    streams = {
        name: derive_stream(seed, *stream_root, "block", name)
        for name in _BLOCK_NAMES
    }
    tune = _fresh_tuning(config)

    cols = chain_columns(config.variant, gm.p)
    n_kept = (config.n_iter - config.n_burn + config.thin - 1) // config.thin
    draws = np.empty((n_kept, len(cols)))
    delta_g_sum = np.zeros(gm.ga)
    prop_sum = np.zeros(gm.ga) if config.full and config.store_propensity else None
    accept_sums: dict[str, float] = {}
    accept_n: dict[str, int] = {}

    start = time.perf_counter()
    kept = 0
    for it in range(config.n_iter):
        warm = it < config.n_burn
        accepts = _sweep(gm, state, streams, dist_index, tune, warm)
        for key, val in accepts.items():
            accept_sums[key] = accept_sums.get(key, 0.0) + val
            accept_n[key] = accept_n.get(key, 0) + 1
        if it >= config.n_burn and (it - config.n_burn) % config.thin == 0:
            params, cov, latent = state.params, state.cov, state.latent
            u0 = latent.u(0, params.gamma_u)
            u1 = latent.u(1, params.gamma_u)
            delta_g = local_effects(params, gm.xg, u0, u1)
            delta_g_sum += delta_g
            if prop_sum is not None:
                v0 = latent.v(0, params.gamma_v)
                v1 = latent.v(1, params.gamma_v)
                prop_sum += propensity(params, gm.xg, u0, u1, v0, v1)
            draws[kept] = _record_row(average_effect(delta_g), params, cov, config.full)
            kept += 1
    elapsed = time.perf_counter() - start

    accept = {k: accept_sums[k] / accept_n[k] for k in sorted(accept_sums)}
    step_size = {
        f"hmc_l{arm}": tune[f"hmc_l{arm}"].step_size(warm=False) for arm in (0, 1)
    }
    for name in ("rho_u", "kappa_u", "rho_v", "kappa_v"):
        step_size[name] = tune[name].sd
    return ChainOutput(
        columns=cols,
        draws=draws,
        delta_g_mean=delta_g_sum / kept,
        propensity_mean=None if prop_sum is None else prop_sum / kept,
        accept=accept,
        step_size=step_size,
        variant=config.variant,
        n_iter=config.n_iter,
        n_burn=config.n_burn,
        thin=config.thin,
        elapsed_seconds=elapsed,
    )


# ---------------------------------------------------------------------------
# Prior-consistency validation of the transition kernel
# ---------------------------------------------------------------------------

_GEWEKE_STATS = (
    "alpha0", "alpha1", "beta0_1", "beta1_1", "eta0", "eta1",
    "delta0_1", "delta1_1", "phi0", "phi1", "gamma_u", "gamma_v",
    "tau2_0", "tau2_1",
    "alpha0_sq", "alpha1_sq", "phi0_sq", "phi1_sq", "gamma_u_sq", "gamma_v_sq",
)


def _geweke_stat_vector(params: ModelParams) -> np.ndarray:
    return np.array([
        params.alpha0, params.alpha1,
        float(params.beta0[0]), float(params.beta1[0]),
        params.eta0, params.eta1,
        float(params.delta0[0]), float(params.delta1[0]),
        params.phi0, params.phi1,
        params.gamma_u, params.gamma_v,
        params.tau2_0, params.tau2_1,
        params.alpha0 ** 2, params.alpha1 ** 2,
        params.phi0 ** 2, params.phi1 ** 2,
        params.gamma_u ** 2, params.gamma_v ** 2,
    ])


def toy_validation_problem() -> tuple[GridGeometry, np.ndarray, PriorSpec, McmcConfig]:
    """Small fixed problem for kernel validation: 2 x 2 unit-square grid.

    Priors are deliberately tight so forward draws keep expected counts
    small and every update block still gets exercised.
    """
    grid = build_grid(Domain(0.0, 1.0, 0.0, 1.0), 2, 2)
    grid_x = np.array([[-0.5], [0.0], [0.25], [0.5]])
    priors = PriorSpec(
        c2_alpha=1.0, c2_beta=1.0,
        c2_eta=0.25, c2_delta=0.25, c2_phi=0.25, c2_gamma=0.25,
        a_y=5.0, b_y=8.0,
        a_psi=5.0, b_psi=0.8,
        a_u=5.0, b_u=2.0,
        a_v=5.0, b_v=2.0,
        rho_u=RangePrior.uniform(0.05, 0.5),
        rho_v=RangePrior.uniform(0.05, 0.5),
        kappa_u=RangePrior.fixed(0.5),
        kappa_v=RangePrior.fixed(0.5),
    )
    config = McmcConfig(
        n_iter=1, n_burn=0, variant="full",
        hmc_eps0=0.3, mh_prop_sd=0.4, store_propensity=False,
    )
    return grid, grid_x, priors, config


@dataclass
class GewekeResult:
    """Comparison of forward prior moments with sweep-chain moments."""

    stat_names: tuple[str, ...]
    mean_forward: np.ndarray
    se_forward: np.ndarray
    mean_chain: np.ndarray
    se_chain: np.ndarray
    z: np.ndarray
    n_rounds: int
    corrupt: str | None
    elapsed_seconds: float

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))


def _batch_se(x: np.ndarray, n_batches: int = 50) -> np.ndarray:
    """Batch-means standard error of column means of an autocorrelated chain."""
    n = x.shape[0]
    size = max(n // n_batches, 1)
    used = size * min(n_batches, n)
    bm = x[:used].reshape(-1, size, x.shape[1]).mean(axis=1)
    return bm.std(axis=0, ddof=1) / math.sqrt(bm.shape[0])


def _forward_fields(
    cov: CovParams,
    corr_u: CorrState,
    corr_v: CorrState,
    ga: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    out = []
    for corr, s2 in (
        (corr_u, cov.sigma2_u0), (corr_u, cov.sigma2_u1),
        (corr_v, cov.sigma2_v0), (corr_v, cov.sigma2_v1),
    ):
        out.append(math.sqrt(s2) * (corr.lower @ rng.standard_normal(ga)))
    return out[0], out[1], out[2], out[3]


def _draw_toy_data(
    grid: GridGeometry,
    grid_x: np.ndarray,
    params: ModelParams,
    latent: LatentState,
    rng_counts: np.random.Generator,
    rng_loc: np.random.Generator,
    rng_y: np.random.Generator,
) -> Dataset:
    """Fresh data draw given the current parameters and latent surfaces."""
    log_lam = np.vstack([latent.log_lambda0, latent.log_lambda1])
    s, a, cell = sample_point_process(grid, log_lam, rng_counts, rng_loc)
    xg = grid_x[grid.active_cells]
    x = xg[cell]
    y = np.empty(s.shape[0])
    for arm in (0, 1):
        sel = a == arm
        u = latent.u(arm, params.gamma_u)
        mean = outcome_mean(params, arm, x[sel], u[cell[sel]])
        y[sel] = mean + math.sqrt(params.tau2(arm)) * rng_y.standard_normal(
            int(sel.sum())
        )
    return Dataset(grid=grid, s=s, a=a, y=y, x=x, grid_x=grid_x)


def geweke_validate(
    n_rounds: int = 10_000,
    seed: int = 20_240_801,
    corrupt: str | None = None,
) -> GewekeResult:
    """Check the sweep kernel against the prior on the toy problem.

    Forward side: parameters drawn straight from the prior. Chain side:
    alternate one full sweep (no adaptation, so the kernel is fixed) with
    a fresh data draw given the current state. If every update block is
    correct the two sides sample the same distribution and all z-scores
    stay small; `corrupt="alpha"` mis-scales one update to confirm the
    check can fail.
    """
    start = time.perf_counter()
    grid, grid_x, priors, config = toy_validation_problem()
    config = replace(config, corrupt=corrupt)
    p = grid_x.shape[1]
    ga = grid.n_active
    n_stats = len(_GEWEKE_STATS)

    rng_fwd = derive_stream(seed, "geweke", "mc")
    stats_fwd = np.empty((n_rounds, n_stats))
    for i in range(n_rounds):
        params_i, _ = priors.sample(rng_fwd, p)
        stats_fwd[i] = _geweke_stat_vector(params_i)

    dist_index = DistanceIndex(pairwise_distances(grid.active_centroids))
    rng_init = derive_stream(seed, "geweke", "sc", "init")
    params, cov = priors.sample(rng_init, p)
    corr_u = CorrState(dist_index, cov.rho_u, cov.kappa_u, config.jitter)
    corr_v = CorrState(dist_index, cov.rho_v, cov.kappa_v, config.jitter)
    u0t, u1t, v0t, v1t = _forward_fields(cov, corr_u, corr_v, ga, rng_init)
    xg = grid_x[grid.active_cells]
    latent = LatentState(
        u0_tilde=u0t, u1_tilde=u1t, v0_tilde=v0t, v1_tilde=v1t,
        log_lambda0=np.zeros(ga), log_lambda1=np.zeros(ga),
        y_miss=np.zeros(0),
    )
    for arm in (0, 1):
        u = latent.u(arm, params.gamma_u)
        v = latent.v(arm, params.gamma_v)
        m = params.eta(arm) + xg @ params.delta(arm) + v + params.phi(arm) * u
        psi = math.sqrt(cov.tau2_psi(arm)) * rng_init.standard_normal(ga)
        if arm == 0:
            latent.log_lambda0 = m + psi
        else:
            latent.log_lambda1 = m + psi

    streams = {
        name: derive_stream(seed, "geweke", "sc", "block", name)
        for name in _BLOCK_NAMES
    }
    rng_counts = derive_stream(seed, "geweke", "sc", "data", "counts")
    rng_loc = derive_stream(seed, "geweke", "sc", "data", "locations")
    rng_y = derive_stream(seed, "geweke", "sc", "data", "outcomes")
    dataset = _draw_toy_data(grid, grid_x, params, latent, rng_counts, rng_loc, rng_y)
    latent.y_miss = np.zeros(dataset.n)
    tune = _fresh_tuning(config)

    stats_chain = np.empty((n_rounds, n_stats))
    for i in range(n_rounds):
        gm = GibbsModel(dataset, priors, config)
        state = _ChainState(params, cov, latent, corr_u, corr_v)
        _sweep(gm, state, streams, dist_index, tune, warm=False)
        corr_u, corr_v = state.corr_u, state.corr_v
        stats_chain[i] = _geweke_stat_vector(params)
        dataset = _draw_toy_data(
            grid, grid_x, params, latent, rng_counts, rng_loc, rng_y
        )
        latent.y_miss = np.zeros(dataset.n)

    mean_fwd = stats_fwd.mean(axis=0)
    se_fwd = stats_fwd.std(axis=0, ddof=1) / math.sqrt(n_rounds)
    mean_chain = stats_chain.mean(axis=0)
    se_chain = _batch_se(stats_chain)
    z = (mean_fwd - mean_chain) / np.sqrt(se_fwd**2 + se_chain**2)
    return GewekeResult(
        stat_names=_GEWEKE_STATS,
        mean_forward=mean_fwd,
        se_forward=se_fwd,
        mean_chain=mean_chain,
        se_chain=se_chain,
        z=z,
        n_rounds=n_rounds,
        corrupt=corrupt,
        elapsed_seconds=time.perf_counter() - start,
    )
