"""Scenario menu and synthetic data generation for the simulation study.

Each scenario draws a dataset from the joint outcome / point-process model
on a 20 x 20 unit-square grid: two Matern-correlated covariate surfaces,
cross-arm-linked U and V fields, log-Gaussian-Cox cell counts with the
outcome field fed back into the intensity (strength phi per arm), uniform
point locations within cells, and Gaussian outcomes at the sampled points.

The intensity intercepts are calibrated per realization so the average
per-cell expected count equals `lambda_star`, making the expected total
point count 2 * G * lambda_star regardless of how strongly the realized
fields concentrate the intensity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import Domain, GridGeometry, build_grid, pairwise_distances
from .model import (
    CovParams,
    Dataset,
    ModelParams,
    average_effect,
    local_effects,
    outcome_mean,
)
from .randfield import (
    MaternParams,
    build_covariance,
    derive_stream,
    lmc_compose,
    sample_mvn,
)

__all__ = [
    "ScenarioSpec",
    "SimTruth",
    "scenario",
    "generate_covariates",
    "sample_point_process",
    "generate_dataset",
    "SCENARIO_IDS",
]

SCENARIO_IDS = (1, 2, 3, 4, 5, 6, 7, 8)


@dataclass(frozen=True)
class ScenarioSpec:
    """Design constants for one simulation scenario.

    `phi` is the base feedback strength; arm 0 uses phi and arm 1 uses
    1.5 * phi. `nonstationary_v` warps the V fields' coordinates to
    (x, y^2) before computing correlations, and `rectified_intensity`
    feeds max(U, 0) (recentred) into the intensity instead of U itself.
    """

    scenario: int
    phi: float
    rho: float = 0.1
    lambda_star: float = 5.0
    nonstationary_v: bool = False
    rectified_intensity: bool = False
    nx: int = 20
    ny: int = 20
    alpha0: float = 2.0
    alpha1: float = 4.0
    beta0: tuple[float, float] = (1.0, 1.0)
    beta1: tuple[float, float] = (-1.0, -1.0)
    delta_star0: tuple[float, float] = (1.0, 1.0)
    delta_star1: tuple[float, float] = (-1.0, -1.0)
    gamma_u: float = -0.5
    gamma_v: float = 0.5
    sigma2_field: float = 1.0
    kappa: float = 0.5
    tau2: float = 0.1
    tau2_psi: float = 0.1
    covariate_sigma2: float = 0.5
    covariate_rho: float = 0.05

    @property
    def phi0(self) -> float:
        return self.phi

    @property
    def phi1(self) -> float:
        return 1.5 * self.phi

    def true_cov_params(self) -> CovParams:
        return CovParams(
            rho_u=self.rho,
            rho_v=self.rho,
            kappa_u=self.kappa,
            kappa_v=self.kappa,
            sigma2_u0=self.sigma2_field,
            sigma2_u1=self.sigma2_field,
            sigma2_v0=self.sigma2_field,
            sigma2_v1=self.sigma2_field,
            tau2_psi0=self.tau2_psi,
            tau2_psi1=self.tau2_psi,
        )


def scenario(k: int) -> ScenarioSpec:
    """Scenario k of the eight-point study menu.

    1 is the no-feedback control; 2-4 increase the feedback strength;
    5 doubles the field range; 6 doubles the sampling rate; 7 makes the
    V fields nonstationary; 8 makes the intensity feedback non-Gaussian.
    """
    menu = {
        1: dict(phi=0.0),
        2: dict(phi=1.0 / 3.0),
        3: dict(phi=2.0 / 3.0),
        4: dict(phi=1.0),
        5: dict(phi=2.0 / 3.0, rho=0.2),
        6: dict(phi=2.0 / 3.0, lambda_star=10.0),
        7: dict(phi=2.0 / 3.0, nonstationary_v=True),
        8: dict(phi=2.0 / 3.0, rectified_intensity=True),
    }
    if k not in menu:
        raise ConfigError(f"scenario must be one of {SCENARIO_IDS}, got {k}")
    return ScenarioSpec(scenario=k, **menu[k])


@dataclass
class SimTruth:
    """One realized dataset plus everything the generator knew about it."""

    spec: ScenarioSpec
    params: ModelParams
    cov: CovParams
    u0: np.ndarray
    u1: np.ndarray
    v0: np.ndarray
    v1: np.ndarray
    log_lambda0: np.ndarray
    log_lambda1: np.ndarray
    delta_g: np.ndarray
    ape: float
    dataset: Dataset


def generate_covariates(
    grid: GridGeometry,
    rng: np.random.Generator,
    sigma2: float = 0.5,
    rho: float = 0.05,
    p: int = 2,
) -> np.ndarray:
    """Independent Matern(1/2) Gaussian covariate surfaces on active cells.

    Returns a full-grid (G, p) array; masked rows are NaN.
    """
    dists = pairwise_distances(grid.active_centroids)
    fac = build_covariance(dists, sigma2, MaternParams(rho=rho, kappa=0.5))
    out = np.full((grid.G, p), np.nan)
    for j in range(p):
        out[grid.active_cells, j] = sample_mvn(
            np.zeros(grid.n_active), fac, rng
        )
    return out


def sample_point_process(
    grid: GridGeometry,
    log_lambda: np.ndarray,
    rng_counts: np.random.Generator,
    rng_locations: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw both arms' point patterns on the grid.

    Args:
        grid: Grid geometry.
        log_lambda: (2, n_active) per-arm log intensities; the expected
            count in a cell is cell_area * exp(log_lambda).
        rng_counts: Stream for the Poisson counts.
        rng_locations: Stream for the within-cell uniform locations.

    Returns:
        (s, a, cell): locations (n, 2), arm labels (n,), compact cell
        indices (n,), ordered by arm then cell.
    """
    log_lambda = np.asarray(log_lambda, dtype=float)
    if log_lambda.shape != (2, grid.n_active):
        raise ConfigError(
            f"log_lambda must have shape (2, {grid.n_active}), got {log_lambda.shape}"
        )
    area = grid.cell_area
    s_parts, a_parts, cell_parts = [], [], []
    half = np.array([grid.cell_width, grid.cell_height]) / 2.0
    size = np.array([grid.cell_width, grid.cell_height])
    for arm in (0, 1):
        counts = rng_counts.poisson(area * np.exp(log_lambda[arm]))
        cell = np.repeat(np.arange(grid.n_active), counts)
        m = cell.size
        lows = grid.active_centroids[cell] - half
        pts = lows + rng_locations.uniform(size=(m, 2)) * size
        s_parts.append(pts)
        a_parts.append(np.full(m, arm, dtype=np.int64))
        cell_parts.append(cell)
    return (
        np.concatenate(s_parts, axis=0),
        np.concatenate(a_parts),
        np.concatenate(cell_parts),
    )


def _rectified_feedback(u: np.ndarray, var_u: float) -> np.ndarray:
    """Centred positive part of the field: max(u, 0) - E[max(U, 0)]."""
    return np.maximum(u, 0.0) - np.sqrt(var_u / (2.0 * np.pi))


def generate_dataset(
    spec: ScenarioSpec,
    seed: int,
    rep: int = 0,
    fix_covariates: bool = False,
) -> SimTruth:
    """Generate one replicate dataset under the scenario's truth.

    Separate named streams drive covariates, fields, nuggets, counts,
    locations, and outcomes, so replicate `rep` of a given seed is the
    same dataset no matter where or in what order it is generated. With
    `fix_covariates` the covariate surfaces come from a replicate-
    independent stream and are therefore shared across replicates.
    """
    grid = build_grid(Domain(0.0, 1.0, 0.0, 1.0), spec.nx, spec.ny)
    ga = grid.n_active

    if fix_covariates:
        rng_x = derive_stream(seed, "covariates")
    else:
        rng_x = derive_stream(seed, "replicate", rep, "data", "covariates")
    grid_x = generate_covariates(
        grid, rng_x, spec.covariate_sigma2, spec.covariate_rho
    )
    xg = grid_x[grid.active_cells]

    rng_fields = derive_stream(seed, "replicate", rep, "data", "fields")
    dists = pairwise_distances(grid.active_centroids)
    mat = MaternParams(rho=spec.rho, kappa=spec.kappa)
    fac_u = build_covariance(dists, spec.sigma2_field, mat)
    zero = np.zeros(ga)
    u0t = sample_mvn(zero, fac_u, rng_fields)
    u1t = sample_mvn(zero, fac_u, rng_fields)
    if spec.nonstationary_v:
        warped = grid.active_centroids.copy()
        warped[:, 1] = warped[:, 1] ** 2
        v_dists = pairwise_distances(warped)
    else:
        v_dists = dists
    fac_v = build_covariance(v_dists, spec.sigma2_field, mat)
    v0t = sample_mvn(zero, fac_v, rng_fields)
    v1t = sample_mvn(zero, fac_v, rng_fields)
    u0, u1 = u0t, lmc_compose(u0t, u1t, spec.gamma_u)
    v0, v1 = v0t, lmc_compose(v0t, v1t, spec.gamma_v)

    rng_psi = derive_stream(seed, "replicate", rep, "data", "nugget")
    psi = rng_psi.normal(0.0, np.sqrt(spec.tau2_psi), size=(2, ga))

    beta = {0: np.asarray(spec.beta0), 1: np.asarray(spec.beta1)}
    delta_star = {0: np.asarray(spec.delta_star0), 1: np.asarray(spec.delta_star1)}
    phi = {0: spec.phi0, 1: spec.phi1}
    u_arm = {0: u0, 1: u1}
    var_u = {
        0: spec.sigma2_field,
        1: spec.sigma2_field * (1.0 + spec.gamma_u**2),
    }
    area = grid.cell_area
    eta = {}
    log_lambda = {}
    for arm in (0, 1):
        if spec.rectified_intensity:
            feed = _rectified_feedback(u_arm[arm], var_u[arm])
        else:
            feed = u_arm[arm]
        delta_arm = delta_star[arm] + phi[arm] * beta[arm]
        rest = xg @ delta_arm + (v0 if arm == 0 else v1) + phi[arm] * feed + psi[arm]
        # Calibrate the intercept so the cell-average expected count is
        # lambda_star for this realization.
        eta[arm] = float(np.log(spec.lambda_star) - np.log(np.mean(area * np.exp(rest))))
        log_lambda[arm] = eta[arm] + rest

    rng_counts = derive_stream(seed, "replicate", rep, "data", "counts")
    rng_loc = derive_stream(seed, "replicate", rep, "data", "locations")
    s, a, cell = sample_point_process(
        grid, np.vstack([log_lambda[0], log_lambda[1]]), rng_counts, rng_loc
    )

    params = ModelParams(
        alpha0=spec.alpha0,
        alpha1=spec.alpha1,
        beta0=beta[0],
        beta1=beta[1],
        eta0=eta[0],
        eta1=eta[1],
        delta0=delta_star[0] + phi[0] * beta[0],
        delta1=delta_star[1] + phi[1] * beta[1],
        phi0=phi[0],
        phi1=phi[1],
        tau2_0=spec.tau2,
        tau2_1=spec.tau2,
        gamma_u=spec.gamma_u,
        gamma_v=spec.gamma_v,
    )

    rng_y = derive_stream(seed, "replicate", rep, "data", "outcomes")
    x = xg[cell]
    y = np.empty(s.shape[0])
    for arm in (0, 1):
        sel = a == arm
        mean = outcome_mean(params, arm, x[sel], u_arm[arm][cell[sel]])
        y[sel] = mean + rng_y.normal(0.0, np.sqrt(spec.tau2), size=int(sel.sum()))

    dataset = Dataset(grid=grid, s=s, a=a, y=y, x=x, grid_x=grid_x)
    delta_g = local_effects(params, xg, u0, u1)
    return SimTruth(
        spec=spec,
        params=params,
        cov=spec.true_cov_params(),
        u0=u0,
        u1=u1,
        v0=v0,
        v1=v1,
        log_lambda0=log_lambda[0],
        log_lambda1=log_lambda[1],
        delta_g=delta_g,
        ape=average_effect(delta_g),
        dataset=dataset,
    )
