"""Joint outcome / point-process model: state containers and densities.

The model couples, per policy arm a in {0, 1}:

  * potential outcomes   Y_a(s) = alpha_a + x(s)' beta_a + U_a(s) + eps,
    eps ~ N(0, tau2_a);
  * cell counts          N_{a,g} ~ Poisson(|D_g| * lambda_{a,g}) with
    log lambda_{a,g} = eta_a + X_g' delta_a + V_{a,g} + phi_a U_{a,g} + psi_{a,g},
    psi_{a,g} ~ N(0, tau2_psi_a).

U and V are pairs of stationary Matern Gaussian fields sharing structure
across arms: U_0 = U0~, U_1 = U1~ + gamma_u U0~ (V analogous with gamma_v).
The sampler carries the log intensities L_a = log lambda_{a,g} as latent
vectors; the nugget psi is implied as L minus its mean part and never stored.

Cell-level causal quantities:

  * local effect     D_g = alpha_1 - alpha_0 + X_g'(beta_1 - beta_0) + U_{1,g} - U_{0,g}
  * average effect   mean of D_g over active cells
  * propensity       expit(difference of the two log-intensity mean parts)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg as sla
from scipy.special import expit, gammaln

from .errors import IngestError
from .geometry import Domain, GridGeometry, build_grid, pairwise_distances
from .randfield import MaternParams, cholesky_with_jitter, matern_correlation

if TYPE_CHECKING:  # pragma: no cover - import for type checkers only
    from .mcmc import PriorSpec

__all__ = [
    "ModelParams",
    "CovParams",
    "LatentState",
    "Dataset",
    "CausalSummary",
    "outcome_mean",
    "log_intensity_mean",
    "local_effects",
    "average_effect",
    "propensity",
    "log_joint_terms",
    "log_joint",
    "sampling_bias",
    "moment_identities",
    "write_dataset",
    "read_dataset",
    "standardize_covariates",
]


@dataclass
class ModelParams:
    """Mean-structure parameters (theta_M)."""

    alpha0: float
    alpha1: float
    beta0: np.ndarray
    beta1: np.ndarray
    eta0: float
    eta1: float
    delta0: np.ndarray
    delta1: np.ndarray
    phi0: float
    phi1: float
    tau2_0: float
    tau2_1: float
    gamma_u: float
    gamma_v: float

    def __post_init__(self) -> None:
        self.beta0 = np.atleast_1d(np.asarray(self.beta0, dtype=float))
        self.beta1 = np.atleast_1d(np.asarray(self.beta1, dtype=float))
        self.delta0 = np.atleast_1d(np.asarray(self.delta0, dtype=float))
        self.delta1 = np.atleast_1d(np.asarray(self.delta1, dtype=float))
        p = self.beta0.shape[0]
        for name in ("beta1", "delta0", "delta1"):
            if getattr(self, name).shape != (p,):
                raise ValueError(f"{name} must have shape ({p},)")

    @property
    def p(self) -> int:
        return self.beta0.shape[0]

    def alpha(self, arm: int) -> float:
        return self.alpha1 if arm else self.alpha0

    def beta(self, arm: int) -> np.ndarray:
        return self.beta1 if arm else self.beta0

    def eta(self, arm: int) -> float:
        return self.eta1 if arm else self.eta0

    def delta(self, arm: int) -> np.ndarray:
        return self.delta1 if arm else self.delta0

    def phi(self, arm: int) -> float:
        return self.phi1 if arm else self.phi0

    def tau2(self, arm: int) -> float:
        return self.tau2_1 if arm else self.tau2_0

    def copy(self) -> "ModelParams":
        return replace(
            self,
            beta0=self.beta0.copy(),
            beta1=self.beta1.copy(),
            delta0=self.delta0.copy(),
            delta1=self.delta1.copy(),
        )


@dataclass
class CovParams:
    """Covariance parameters (theta_C) of the four latent fields and nuggets."""

    rho_u: float
    rho_v: float
    kappa_u: float
    kappa_v: float
    sigma2_u0: float
    sigma2_u1: float
    sigma2_v0: float
    sigma2_v1: float
    tau2_psi0: float
    tau2_psi1: float

    def sigma2_u(self, arm: int) -> float:
        return self.sigma2_u1 if arm else self.sigma2_u0

    def sigma2_v(self, arm: int) -> float:
        return self.sigma2_v1 if arm else self.sigma2_v0

    def tau2_psi(self, arm: int) -> float:
        return self.tau2_psi1 if arm else self.tau2_psi0

    def matern_u(self) -> MaternParams:
        return MaternParams(rho=self.rho_u, kappa=self.kappa_u)

    def matern_v(self) -> MaternParams:
        return MaternParams(rho=self.rho_v, kappa=self.kappa_v)

    def copy(self) -> "CovParams":
        return replace(self)


@dataclass
class LatentState:
    """Latent fields, log intensities, and imputed counterfactual outcomes.

    Field vectors live on active cells (compact indexing). y_miss[i] is the
    current imputation of observation i's unobserved potential outcome.
    """

    u0_tilde: np.ndarray
    u1_tilde: np.ndarray
    v0_tilde: np.ndarray
    v1_tilde: np.ndarray
    log_lambda0: np.ndarray
    log_lambda1: np.ndarray
    y_miss: np.ndarray

    def u(self, arm: int, gamma_u: float) -> np.ndarray:
        """Composed outcome field U_a."""
        return self.u1_tilde + gamma_u * self.u0_tilde if arm else self.u0_tilde

    def v(self, arm: int, gamma_v: float) -> np.ndarray:
        """Composed intensity field V_a."""
        return self.v1_tilde + gamma_v * self.v0_tilde if arm else self.v0_tilde

    def log_lambda(self, arm: int) -> np.ndarray:
        return self.log_lambda1 if arm else self.log_lambda0

    def copy(self) -> "LatentState":
        return LatentState(
            u0_tilde=self.u0_tilde.copy(),
            u1_tilde=self.u1_tilde.copy(),
            v0_tilde=self.v0_tilde.copy(),
            v1_tilde=self.v1_tilde.copy(),
            log_lambda0=self.log_lambda0.copy(),
            log_lambda1=self.log_lambda1.copy(),
            y_miss=self.y_miss.copy(),
        )


@dataclass
class Dataset:
    """Observations plus the grid they live on.

    Attributes:
        grid: Grid geometry (may carry a mask).
        s: (n, 2) observation locations.
        a: (n,) arm labels in {0, 1}.
        y: (n,) observed outcomes.
        x: (n, p) observation covariates.
        grid_x: (G, p) full-grid cell covariates (masked rows retained for
            round-trip serialization; the model only reads active rows).
    """

    grid: GridGeometry
    s: np.ndarray
    a: np.ndarray
    y: np.ndarray
    x: np.ndarray
    grid_x: np.ndarray

    def __post_init__(self) -> None:
        self.s = np.asarray(self.s, dtype=float).reshape(-1, 2)
        self.a = np.asarray(self.a, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        self.x = np.asarray(self.x, dtype=float)
        self.grid_x = np.asarray(self.grid_x, dtype=float)
        n = self.s.shape[0]
        if self.x.ndim == 1:
            self.x = self.x.reshape(n, -1)
        if self.a.shape != (n,) or self.y.shape != (n,):
            raise IngestError("observation columns have inconsistent lengths")
        if self.x.shape[0] != n:
            raise IngestError("covariate rows do not match the observation count")
        if not np.isin(self.a, (0, 1)).all():
            raise IngestError("arm labels must be 0 or 1")
        if self.grid_x.shape != (self.grid.G, self.x.shape[1]):
            raise IngestError(
                f"grid covariates must have shape ({self.grid.G}, {self.x.shape[1]}), "
                f"got {self.grid_x.shape}"
            )
        if not (np.isfinite(self.s).all() and np.isfinite(self.y).all()
                and np.isfinite(self.x).all()):
            raise IngestError("observations contain non-finite values")
        if not np.isfinite(self.grid_x[self.grid.active]).all():
            raise IngestError("active grid covariates contain non-finite values")

    @property
    def n(self) -> int:
        return self.s.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @cached_property
    def cell(self) -> np.ndarray:
        """(n,) compact active-cell index of each observation."""
        out = self.grid.locate_active(self.s) if self.n else np.empty(0, dtype=np.int64)
        out.setflags(write=False)
        return out

    @cached_property
    def counts(self) -> np.ndarray:
        """(2, n_active) per-arm observation counts on active cells."""
        ga = self.grid.n_active
        out = np.zeros((2, ga), dtype=np.int64)
        for arm in (0, 1):
            sel = self.a == arm
            out[arm] = np.bincount(self.cell[sel], minlength=ga)
        out.setflags(write=False)
        return out

    @property
    def active_x(self) -> np.ndarray:
        """(n_active, p) covariates of active cells."""
        return self.grid_x[self.grid.active_cells]

    def n_arm(self, arm: int) -> int:
        return int((self.a == arm).sum())


@dataclass
class CausalSummary:
    """Posterior summary of the causal quantities from one chain.

    `table` maps each scalar chain column, plus the derived per-draw
    quantities `r_u`, `r_v`, and `phi_diff` where available, to its
    (mean, sd, lower, upper) posterior summary. `prob_phi_diff_neg` is
    the posterior mass of phi_1 - phi_0 below zero, None when the fit
    carries no intensity block. Cellwise effects and propensities are
    summarized by their posterior means only.
    """

    delta_mean: float
    delta_sd: float
    delta_lo: float
    delta_hi: float
    delta_g_mean: np.ndarray
    propensity_mean: np.ndarray | None
    table: dict[str, tuple[float, float, float, float]] = field(
        default_factory=dict
    )
    prob_phi_diff_neg: float | None = None


def outcome_mean(
    params: ModelParams, arm: int, x: np.ndarray, u_at: np.ndarray
) -> np.ndarray:
    """Outcome mean alpha_a + x beta_a + U_a per row of x.

    Args:
        params: Model parameters.
        arm: Policy arm, 0 or 1.
        x: (m, p) covariates.
        u_at: (m,) composed outcome-field values at the same rows.
    """
    return params.alpha(arm) + x @ params.beta(arm) + u_at


def log_intensity_mean(
    params: ModelParams,
    arm: int,
    grid_x: np.ndarray,
    v: np.ndarray,
    u: np.ndarray,
) -> np.ndarray:
    """Mean part of the log intensity: eta_a + X delta_a + V_a + phi_a U_a.

    The nugget psi is excluded; this is the mean of the latent log intensity.
    """
    return params.eta(arm) + grid_x @ params.delta(arm) + v + params.phi(arm) * u


def local_effects(
    params: ModelParams, grid_x: np.ndarray, u0: np.ndarray, u1: np.ndarray
) -> np.ndarray:
    """Cell-level policy effect D_g on active cells."""
    return (
        params.alpha1
        - params.alpha0
        + grid_x @ (params.beta1 - params.beta0)
        + u1
        - u0
    )


def average_effect(delta_g: np.ndarray) -> float:
    """Average policy effect: unweighted mean over active cells."""
    return float(np.mean(delta_g))


def propensity(
    params: ModelParams,
    grid_x: np.ndarray,
    u0: np.ndarray,
    u1: np.ndarray,
    v0: np.ndarray,
    v1: np.ndarray,
) -> np.ndarray:
    """Per-cell probability that a point at g came from arm 1.

    Superposing the two Poisson processes gives
    expit(mean log intensity of arm 1 minus that of arm 0).
    """
    m1 = log_intensity_mean(params, 1, grid_x, v1, u1)
    m0 = log_intensity_mean(params, 0, grid_x, v0, u0)
    return expit(m1 - m0)


def _norm_logpdf_sum(resid: np.ndarray, var: float) -> float:
    """Sum of N(0, var) log densities over resid."""
    m = resid.size
    return float(-0.5 * (m * np.log(2.0 * np.pi * var) + resid @ resid / var))


def log_joint_terms(
    dataset: Dataset,
    params: ModelParams,
    cov: CovParams,
    latent: LatentState,
    priors: "PriorSpec",
) -> dict[str, float]:
    """Named additive terms of the joint log density.

    Includes both arms' complete outcome vectors (observed plus imputed),
    the cell-count likelihood, the nugget terms for the log intensities,
    the four field priors, and all parameter priors. Returns -inf terms if a
    variance parameter is nonpositive.
    """
    terms: dict[str, float] = {}
    for name in ("tau2_0", "tau2_1"):
        if getattr(params, name) <= 0.0:
            return {"invalid": -np.inf}
    for name in (
        "sigma2_u0", "sigma2_u1", "sigma2_v0", "sigma2_v1", "tau2_psi0", "tau2_psi1",
    ):
        if getattr(cov, name) <= 0.0:
            return {"invalid": -np.inf}

    cell = dataset.cell
    area = dataset.grid.cell_area
    xg = dataset.active_x
    y_full = {
        0: np.where(dataset.a == 0, dataset.y, latent.y_miss),
        1: np.where(dataset.a == 1, dataset.y, latent.y_miss),
    }
    for arm in (0, 1):
        u = latent.u(arm, params.gamma_u)
        mean = outcome_mean(params, arm, dataset.x, u[cell])
        terms[f"outcome{arm}"] = _norm_logpdf_sum(y_full[arm] - mean, params.tau2(arm))

        ll = latent.log_lambda(arm)
        counts = dataset.counts[arm].astype(float)
        mu = area * np.exp(ll)
        terms[f"counts{arm}"] = float(
            np.sum(counts * (np.log(area) + ll) - mu - gammaln(counts + 1.0))
        )

        v = latent.v(arm, params.gamma_v)
        m = log_intensity_mean(params, arm, xg, v, u)
        terms[f"psi{arm}"] = _norm_logpdf_sum(ll - m, cov.tau2_psi(arm))

    dists = pairwise_distances(dataset.grid.active_centroids)
    for tag, mat in (("u", cov.matern_u()), ("v", cov.matern_v())):
        corr = matern_correlation(dists, mat.rho, mat.kappa)
        lower, _ = cholesky_with_jitter(corr, 1e-10)
        logdet_r = 2.0 * float(np.sum(np.log(np.diag(lower))))
        for arm in (0, 1):
            w = getattr(latent, f"{tag}{arm}_tilde")
            s2 = cov.sigma2_u(arm) if tag == "u" else cov.sigma2_v(arm)
            half = sla.solve_triangular(lower, w, lower=True, check_finite=False)
            quad = float(half @ half) / s2
            g = w.size
            terms[f"prior_{tag}{arm}_tilde"] = -0.5 * (
                g * np.log(2.0 * np.pi * s2) + logdet_r + quad
            )

    terms["prior_params"] = priors.log_density(params, cov)
    return terms


def log_joint(
    dataset: Dataset,
    params: ModelParams,
    cov: CovParams,
    latent: LatentState,
    priors: "PriorSpec",
) -> float:
    """Joint log density of data, latent state, and parameters under the priors."""
    return float(sum(log_joint_terms(dataset, params, cov, latent, priors).values()))


def sampling_bias(params: ModelParams, cov: CovParams, grid_x: np.ndarray) -> float:
    """First-order bias of the naive group-mean contrast under preferential sampling.

    Three additive pieces: the intercept contrast, the contrast of
    intensity-weighted covariate means xbar_a' beta_a with weights
    proportional to exp(X_g' delta_a) over the grid, and the field
    feedback phi_1 Var(U_1) - phi_0 Var(U_0).
    """
    xg = np.asarray(grid_x, dtype=float)
    xbar = {}
    for arm in (0, 1):
        w = np.exp(xg @ params.delta(arm))
        xbar[arm] = (xg * w[:, None]).sum(axis=0) / w.sum()
    var_u0 = cov.sigma2_u0
    var_u1 = cov.sigma2_u1 + params.gamma_u**2 * cov.sigma2_u0
    return float(
        (params.alpha1 - params.alpha0)
        + (xbar[1] @ params.beta1 - xbar[0] @ params.beta0)
        + (params.phi1 * var_u1 - params.phi0 * var_u0)
    )


def moment_identities(params: ModelParams, cov: CovParams) -> dict[str, float]:
    """Single-cell moments linking outcomes and mean log intensities.

    L_a here is the mean part of the log intensity (nugget excluded), with
    the covariate contribution held fixed. The identities underpin the
    identification argument for phi and the shared-field parameters.
    """
    var_u1 = cov.sigma2_u1 + params.gamma_u**2 * cov.sigma2_u0
    return {
        "cov_y0_l0": params.phi0 * cov.sigma2_u0,
        "cov_y0_y1": params.gamma_u * cov.sigma2_u0,
        "var_l0": cov.sigma2_v0 + params.phi0**2 * cov.sigma2_u0,
        "cov_l0_l1": params.gamma_v * cov.sigma2_v0
        + params.gamma_u * params.phi0 * params.phi1 * cov.sigma2_u0,
        "var_l1": cov.sigma2_v1
        + params.gamma_v**2 * cov.sigma2_v0
        + params.phi1**2 * var_u1,
    }


def empirical_single_cell_moments(
    params: ModelParams,
    cov: CovParams,
    n_sims: int,
    rng: np.random.Generator,
) -> dict[str, tuple[float, float]]:
    """Monte Carlo counterpart of moment_identities with standard errors.

    Simulates the single-cell generative model n_sims times (covariate
    contribution held fixed, nugget excluded from the mean log
    intensity) and returns each moment as (estimate, standard error).
    The standard error is the asymptotic one for an empirical second
    moment: sd of the centered cross products over sqrt(n).
    """
    u0 = rng.normal(scale=np.sqrt(cov.sigma2_u0), size=n_sims)
    u1 = rng.normal(scale=np.sqrt(cov.sigma2_u1), size=n_sims)
    u1 = u1 + params.gamma_u * u0
    v0 = rng.normal(scale=np.sqrt(cov.sigma2_v0), size=n_sims)
    v1 = rng.normal(scale=np.sqrt(cov.sigma2_v1), size=n_sims)
    v1 = v1 + params.gamma_v * v0
    y0 = params.alpha0 + u0 + rng.normal(scale=np.sqrt(params.tau2_0), size=n_sims)
    y1 = params.alpha1 + u1 + rng.normal(scale=np.sqrt(params.tau2_1), size=n_sims)
    l0 = params.eta0 + v0 + params.phi0 * u0
    l1 = params.eta1 + v1 + params.phi1 * u1

    def cov_se(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
        prod = (a - a.mean()) * (b - b.mean())
        n = prod.size
        est = prod.sum() / (n - 1)
        return float(est), float(prod.std(ddof=1) / np.sqrt(n))

    return {
        "cov_y0_l0": cov_se(y0, l0),
        "cov_y0_y1": cov_se(y0, y1),
        "var_l0": cov_se(l0, l0),
        "cov_l0_l1": cov_se(l0, l1),
        "var_l1": cov_se(l1, l1),
    }


# ---------------------------------------------------------------------------
# Serialization: observation CSV, grid CSV
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    """Shortest round-trip decimal form; integers stay integral-looking."""
    return repr(float(v))


def write_dataset(dataset: Dataset, obs_path: str, grid_path: str) -> None:
    """Write the observation and grid CSV files.

    The numeric formatting is shortest-round-trip, so read_dataset followed
    by write_dataset reproduces both files byte for byte.
    """
    p = dataset.p
    with open(obs_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s_x", "s_y", "a", "y"] + [f"x_{j + 1}" for j in range(p)])
        for i in range(dataset.n):
            row = [
                _fmt(dataset.s[i, 0]),
                _fmt(dataset.s[i, 1]),
                str(int(dataset.a[i])),
                _fmt(dataset.y[i]),
            ] + [_fmt(v) for v in dataset.x[i]]
            w.writerow(row)
    grid = dataset.grid
    with open(grid_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["g", "c_x", "c_y"] + [f"x_{j + 1}" for j in range(p)] + ["mask"])
        cents = grid.centroids
        for g in range(grid.G):
            row = [str(g), _fmt(cents[g, 0]), _fmt(cents[g, 1])]
            row += [_fmt(v) for v in dataset.grid_x[g]]
            row.append("1" if grid.active[g] else "0")
            w.writerow(row)


def _read_rows(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestError(f"{path}: empty file")
    return rows[0], rows[1:]


def read_dataset(obs_path: str, grid_path: str) -> Dataset:
    """Read a dataset from its observation and grid CSV files.

    The grid geometry (domain, nx, ny) is reconstructed from the centroid
    lattice in the grid file and validated against the row-major cell ids.
    """
    header, rows = _read_rows(grid_path)
    if len(header) < 4 or header[:3] != ["g", "c_x", "c_y"] or header[-1] != "mask":
        raise IngestError(f"{grid_path}: expected header g,c_x,c_y,x_1..x_p,mask")
    p = len(header) - 4
    expected_x = [f"x_{j + 1}" for j in range(p)]
    if header[3:-1] != expected_x:
        raise IngestError(f"{grid_path}: covariate columns must be x_1..x_{p}")
    try:
        g_ids = np.array([int(r[0]) for r in rows])
        cents = np.array([[float(r[1]), float(r[2])] for r in rows])
        grid_x = np.array([[float(v) for v in r[3:-1]] for r in rows])
        mask = np.array([int(r[-1]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise IngestError(f"{grid_path}: malformed row ({exc})") from exc
    if not np.array_equal(g_ids, np.arange(len(rows))):
        raise IngestError(f"{grid_path}: cell ids must be 0..G-1 in order")
    if not np.isin(mask, (0, 1)).all():
        raise IngestError(f"{grid_path}: mask entries must be 0 or 1")

    xs = np.unique(cents[:, 0])
    ys = np.unique(cents[:, 1])
    nx, ny = xs.size, ys.size
    if nx * ny != len(rows):
        raise IngestError(f"{grid_path}: centroids do not form a full lattice")
    if nx > 1 and not np.allclose(np.diff(xs), xs[1] - xs[0], rtol=1e-9, atol=1e-12):
        raise IngestError(f"{grid_path}: centroid x spacing is not uniform")
    if ny > 1 and not np.allclose(np.diff(ys), ys[1] - ys[0], rtol=1e-9, atol=1e-12):
        raise IngestError(f"{grid_path}: centroid y spacing is not uniform")
    # Cell width is the centroid spacing; a one-cell axis borrows the other
    # axis's spacing (square cells) and falls back to a unit cell.
    wx = xs[1] - xs[0] if nx > 1 else (ys[1] - ys[0] if ny > 1 else 1.0)
    wy = ys[1] - ys[0] if ny > 1 else wx
    domain = Domain(
        x_min=float(xs[0] - wx / 2.0),
        x_max=float(xs[-1] + wx / 2.0),
        y_min=float(ys[0] - wy / 2.0),
        y_max=float(ys[-1] + wy / 2.0),
    )
    grid = build_grid(domain, nx, ny, active=mask.astype(bool))
    expect = grid.centroids
    if not np.allclose(expect, cents, rtol=1e-9, atol=1e-12):
        raise IngestError(f"{grid_path}: centroids are not row-major with x fastest")

    header, rows = _read_rows(obs_path)
    if header != ["s_x", "s_y", "a", "y"] + expected_x:
        raise IngestError(f"{obs_path}: expected header s_x,s_y,a,y,x_1..x_{p}")
    try:
        s = np.array([[float(r[0]), float(r[1])] for r in rows]).reshape(-1, 2)
        a = np.array([int(r[2]) for r in rows], dtype=np.int64)
        y = np.array([float(r[3]) for r in rows])
        x = np.array([[float(v) for v in r[4:]] for r in rows]).reshape(-1, p)
    except (ValueError, IndexError) as exc:
        raise IngestError(f"{obs_path}: malformed row ({exc})") from exc
    ds = Dataset(grid=grid, s=s, a=a, y=y, x=x, grid_x=grid_x)
    try:
        ds.cell  # force location validation at ingest time
    except Exception as exc:
        raise IngestError(f"{obs_path}: {exc}") from exc
    return ds


def standardize_covariates(dataset: Dataset) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Z-score covariates using the joint site and active-grid sample.

    Returns the transformed dataset plus the (mean, sd) vectors used.
    """
    joint = np.vstack([dataset.x, dataset.active_x])
    mean = joint.mean(axis=0)
    sd = joint.std(axis=0, ddof=0)
    if np.any(sd <= 0.0):
        raise IngestError("constant covariate column cannot be standardized")
    grid_x = dataset.grid_x.copy()
    act = dataset.grid.active
    grid_x[act] = (grid_x[act] - mean) / sd
    new = Dataset(
        grid=dataset.grid,
        s=dataset.s.copy(),
        a=dataset.a.copy(),
        y=dataset.y.copy(),
        x=(dataset.x - mean) / sd,
        grid_x=grid_x,
    )
    return new, mean, sd
