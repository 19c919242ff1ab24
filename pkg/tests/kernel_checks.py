"""Shared machinery for validating full conditionals against the joint.

For every update family the sampler draws from, the log density ratio of
the family's conditional between two states that differ only in that
component must equal the log joint difference between the same two
states. The conditional densities here are computed with scipy, entirely
independently of the sampler's own draw code.
"""

import numpy as np
from scipy import stats

from prefcausal.mcmc import CorrState, DistanceIndex, GibbsModel, McmcConfig, PriorSpec
from prefcausal.geometry import pairwise_distances
from prefcausal.model import (
    CovParams,
    Dataset,
    LatentState,
    ModelParams,
    log_intensity_mean,
    log_joint,
)
from prefcausal.simgen import ScenarioSpec, generate_dataset

# every (family, arm) combination the sweep updates
FAMILIES = (
    ("impute", None),
    ("alpha", 0), ("alpha", 1),
    ("beta", 0), ("beta", 1),
    ("eta", 0), ("eta", 1),
    ("delta", 0), ("delta", 1),
    ("phi", 0), ("phi", 1),
    ("gamma_u", None), ("gamma_v", None),
    ("u_tilde", 0), ("u_tilde", 1),
    ("v_tilde", 0), ("v_tilde", 1),
    ("sigma2_u", 0), ("sigma2_u", 1),
    ("sigma2_v", 0), ("sigma2_v", 1),
    ("tau2", 0), ("tau2", 1),
    ("tau2_psi", 0), ("tau2_psi", 1),
)

FAMILY_NAMES = tuple(sorted({f for f, _ in FAMILIES}))


def small_dataset(seed: int = 42) -> Dataset:
    """A 4 x 4 grid replicate, large enough to exercise every term."""
    spec = ScenarioSpec(scenario=3, phi=2.0 / 3.0, nx=4, ny=4)
    return generate_dataset(spec, seed=seed, rep=0).dataset


def random_state(
    ds: Dataset, rng: np.random.Generator
) -> tuple[ModelParams, CovParams, LatentState]:
    """A dispersed but valid state around the data scale."""
    p, ga, n = ds.p, ds.grid.n_active, ds.n
    params = ModelParams(
        alpha0=rng.normal(2.0, 0.5),
        alpha1=rng.normal(4.0, 0.5),
        beta0=rng.normal(0.0, 0.7, p),
        beta1=rng.normal(0.0, 0.7, p),
        eta0=rng.normal(2.5, 0.4),
        eta1=rng.normal(2.5, 0.4),
        delta0=rng.normal(0.0, 0.5, p),
        delta1=rng.normal(0.0, 0.5, p),
        phi0=rng.normal(0.5, 0.3),
        phi1=rng.normal(0.7, 0.3),
        tau2_0=float(np.exp(rng.normal(np.log(0.1), 0.3))),
        tau2_1=float(np.exp(rng.normal(np.log(0.1), 0.3))),
        gamma_u=rng.normal(-0.4, 0.3),
        gamma_v=rng.normal(0.4, 0.3),
    )
    cov = CovParams(
        rho_u=rng.uniform(0.08, 0.35),
        rho_v=rng.uniform(0.08, 0.35),
        kappa_u=rng.uniform(0.4, 1.6),
        kappa_v=rng.uniform(0.4, 1.6),
        sigma2_u0=float(np.exp(rng.normal(0.0, 0.3))),
        sigma2_u1=float(np.exp(rng.normal(0.0, 0.3))),
        sigma2_v0=float(np.exp(rng.normal(0.0, 0.3))),
        sigma2_v1=float(np.exp(rng.normal(0.0, 0.3))),
        tau2_psi0=float(np.exp(rng.normal(np.log(0.12), 0.3))),
        tau2_psi1=float(np.exp(rng.normal(np.log(0.12), 0.3))),
    )
    latent = LatentState(
        u0_tilde=rng.normal(0.0, 0.6, ga),
        u1_tilde=rng.normal(0.0, 0.6, ga),
        v0_tilde=rng.normal(0.0, 0.6, ga),
        v1_tilde=rng.normal(0.0, 0.6, ga),
        log_lambda0=np.zeros(ga),
        log_lambda1=np.zeros(ga),
        y_miss=rng.normal(2.0, 1.0, n),
    )
    xg = ds.active_x
    for arm in (0, 1):
        m = log_intensity_mean(
            params, arm, xg,
            latent.v(arm, params.gamma_v),
            latent.u(arm, params.gamma_u),
        )
        ll = m + rng.normal(0.0, 0.3, ga)
        if arm == 0:
            latent.log_lambda0 = ll
        else:
            latent.log_lambda1 = ll
    return params, cov, latent


def _field_logpdf_diff(b, d, corr: CorrState, sigma2, w_old, w_new) -> float:
    """Conditional log density difference for a latent field.

    The conditional is N(C^{-1} b, C^{-1}) with C = diag(d) + (sigma2 R)^{-1};
    C is built densely here as an independent reference.
    """
    prec = np.diag(d) + np.linalg.inv(sigma2 * corr.corr_j)
    mu = np.linalg.solve(prec, b)
    q_new = (w_new - mu) @ prec @ (w_new - mu)
    q_old = (w_old - mu) @ prec @ (w_old - mu)
    return -0.5 * float(q_new - q_old)


def ratio_identity_gap(
    family: str,
    arm: int | None,
    ds: Dataset,
    seed: int,
    priors: PriorSpec | None = None,
) -> float:
    """|conditional log ratio minus joint log difference| for one pair."""
    rng = np.random.default_rng(seed)
    priors = priors or PriorSpec()
    config = McmcConfig(n_iter=1, n_burn=0, variant="full")
    gm = GibbsModel(ds, priors, config)
    dist_index = DistanceIndex(pairwise_distances(ds.grid.active_centroids))
    params, cov, latent = random_state(ds, rng)

    lj0 = log_joint(ds, params, cov, latent, priors)

    if family == "impute":
        means, variances = gm.cond_impute(params, latent)
        old = latent.y_miss.copy()
        new = old + 0.3 * rng.standard_normal(ds.n)
        diff = float(
            stats.norm.logpdf(new, means, np.sqrt(variances)).sum()
            - stats.norm.logpdf(old, means, np.sqrt(variances)).sum()
        )
        latent.y_miss = new
    elif family == "alpha":
        m, v = gm.cond_alpha(arm, params, latent)
        old = params.alpha(arm)
        new = old + 0.3 * rng.standard_normal()
        diff = float(stats.norm.logpdf(new, m, np.sqrt(v)) - stats.norm.logpdf(old, m, np.sqrt(v)))
        setattr(params, f"alpha{arm}", new)
    elif family == "beta":
        m, c = gm.cond_beta(arm, params, latent)
        old = params.beta(arm).copy()
        new = old + 0.3 * rng.standard_normal(ds.p)
        diff = float(
            stats.multivariate_normal.logpdf(new, m, c)
            - stats.multivariate_normal.logpdf(old, m, c)
        )
        setattr(params, f"beta{arm}", new)
    elif family == "eta":
        m, v = gm.cond_eta(arm, params, cov, latent)
        old = params.eta(arm)
        new = old + 0.3 * rng.standard_normal()
        diff = float(stats.norm.logpdf(new, m, np.sqrt(v)) - stats.norm.logpdf(old, m, np.sqrt(v)))
        setattr(params, f"eta{arm}", new)
    elif family == "delta":
        m, c = gm.cond_delta(arm, params, cov, latent)
        old = params.delta(arm).copy()
        new = old + 0.3 * rng.standard_normal(ds.p)
        diff = float(
            stats.multivariate_normal.logpdf(new, m, c)
            - stats.multivariate_normal.logpdf(old, m, c)
        )
        setattr(params, f"delta{arm}", new)
    elif family == "phi":
        m, v = gm.cond_phi(arm, params, cov, latent)
        old = params.phi(arm)
        new = old + 0.3 * rng.standard_normal()
        diff = float(stats.norm.logpdf(new, m, np.sqrt(v)) - stats.norm.logpdf(old, m, np.sqrt(v)))
        setattr(params, f"phi{arm}", new)
    elif family == "gamma_u":
        m, v = gm.cond_gamma_u(params, cov, latent)
        old = params.gamma_u
        new = old + 0.3 * rng.standard_normal()
        diff = float(stats.norm.logpdf(new, m, np.sqrt(v)) - stats.norm.logpdf(old, m, np.sqrt(v)))
        params.gamma_u = new
    elif family == "gamma_v":
        m, v = gm.cond_gamma_v(params, cov, latent)
        old = params.gamma_v
        new = old + 0.3 * rng.standard_normal()
        diff = float(stats.norm.logpdf(new, m, np.sqrt(v)) - stats.norm.logpdf(old, m, np.sqrt(v)))
        params.gamma_v = new
    elif family in ("u_tilde", "v_tilde"):
        tag = family[0]
        mat = cov.matern_u() if tag == "u" else cov.matern_v()
        corr = CorrState(dist_index, mat.rho, mat.kappa, config.jitter)
        b, d = gm.cond_field(tag, arm, params, cov, latent)
        s2 = cov.sigma2_u(arm) if tag == "u" else cov.sigma2_v(arm)
        attr = f"{tag}{arm}_tilde"
        old = getattr(latent, attr).copy()
        new = old + 0.25 * rng.standard_normal(ds.grid.n_active)
        diff = _field_logpdf_diff(b, d, corr, s2, old, new)
        setattr(latent, attr, new)
    elif family in ("sigma2_u", "sigma2_v"):
        tag = family[-1]
        mat = cov.matern_u() if tag == "u" else cov.matern_v()
        corr = CorrState(dist_index, mat.rho, mat.kappa, config.jitter)
        shape, rate = gm.cond_sigma2(tag, arm, latent, corr)
        attr = f"sigma2_{tag}{arm}"
        old = getattr(cov, attr)
        new = old * float(np.exp(0.3 * rng.standard_normal()))
        diff = float(
            stats.invgamma.logpdf(new, shape, scale=rate)
            - stats.invgamma.logpdf(old, shape, scale=rate)
        )
        setattr(cov, attr, new)
    elif family == "tau2":
        shape, rate = gm.cond_tau2(arm, params, latent)
        old = params.tau2(arm)
        new = old * float(np.exp(0.3 * rng.standard_normal()))
        diff = float(
            stats.invgamma.logpdf(new, shape, scale=rate)
            - stats.invgamma.logpdf(old, shape, scale=rate)
        )
        setattr(params, f"tau2_{arm}", new)
    elif family == "tau2_psi":
        shape, rate = gm.cond_tau2_psi(arm, params, latent)
        old = cov.tau2_psi(arm)
        new = old * float(np.exp(0.3 * rng.standard_normal()))
        diff = float(
            stats.invgamma.logpdf(new, shape, scale=rate)
            - stats.invgamma.logpdf(old, shape, scale=rate)
        )
        setattr(cov, f"tau2_psi{arm}", new)
    else:
        raise ValueError(f"unknown family {family!r}")

    lj1 = log_joint(ds, params, cov, latent, priors)
    return abs((lj1 - lj0) - diff)


def max_ratio_gap_per_family(ds: Dataset, n_pairs: int, seed0: int = 0) -> dict[str, float]:
    """Worst ratio-identity gap for each family over n_pairs random pairs."""
    worst: dict[str, float] = {name: 0.0 for name in FAMILY_NAMES}
    counter = seed0
    for k in range(n_pairs):
        for family, arm in FAMILIES:
            gap = ratio_identity_gap(family, arm, ds, seed=counter)
            worst[family] = max(worst[family], gap)
            counter += 1
    return worst
