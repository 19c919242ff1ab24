"""Stationary Gaussian random field utilities.

Covers the Matern correlation family (modified Bessel K under the hood), a
jitter-laddered Cholesky covariance factorization, multivariate normal
sampling, the two-field coregionalization (shared-component) construction,
and named reproducible random streams.

All randomness flows through numpy Generators built by derive_stream(); no
routine draws from hidden global state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.special import gammaln, kv, kve

from .errors import NumericalError, ValidationError

__all__ = [
    "KAPPA_MAX",
    "JITTER_LADDER",
    "MaternParams",
    "LmcSpec",
    "CovarianceFactor",
    "bessel_k",
    "matern_correlation",
    "build_covariance",
    "sample_mvn",
    "lmc_compose",
    "lmc_cross_moments",
    "derive_stream",
]

# Upper bound on the Matern smoothness accepted anywhere in the package.
KAPPA_MAX = 10.0

# Escalating diagonal jitter (on the unit-variance correlation scale) tried
# before a factorization is declared failed.
JITTER_LADDER = (1e-10, 1e-8, 1e-6)


def bessel_k(nu: float, x: np.ndarray | float) -> np.ndarray | float:
    """Modified Bessel function of the second kind K_nu(x).

    Args:
        nu: Order, must be positive and finite.
        x: Argument(s), must be strictly positive.

    Returns:
        K_nu(x), matching the shape of x.
    """
    if not np.isfinite(nu) or nu <= 0.0:
        raise ValidationError(f"order must be positive and finite, got {nu}")
    arr = np.asarray(x, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr <= 0.0)):
        raise ValidationError("argument must be strictly positive and finite")
    out = kv(nu, arr)
    return float(out) if np.isscalar(x) else out


def matern_correlation(h: np.ndarray | float, rho: float, kappa: float) -> np.ndarray | float:
    """Matern correlation R(h) = 2^(1-kappa)/Gamma(kappa) (h/rho)^kappa K_kappa(h/rho).

    R(0) = 1 by continuity. kappa = 1/2 reduces to exp(-h/rho) and
    kappa = 3/2 to (1 + h/rho) exp(-h/rho).

    Args:
        h: Distance(s), nonnegative.
        rho: Range parameter, positive.
        kappa: Smoothness, in (0, KAPPA_MAX].

    Returns:
        Correlation value(s) in (0, 1], matching the shape of h.
    """
    if not np.isfinite(rho) or rho <= 0.0:
        raise ValidationError(f"range must be positive and finite, got {rho}")
    if not np.isfinite(kappa) or kappa <= 0.0 or kappa > KAPPA_MAX:
        raise ValidationError(f"smoothness must lie in (0, {KAPPA_MAX}], got {kappa}")
    arr = np.asarray(h, dtype=float)
    if arr.size and (np.any(arr < 0.0) or not np.all(np.isfinite(arr))):
        raise ValidationError("distances must be nonnegative and finite")
    r = arr / rho
    out = np.ones_like(r)
    pos = r > 0.0
    if np.any(pos):
        rp = r[pos]
        coef = np.exp((1.0 - kappa) * np.log(2.0) - gammaln(kappa))
        # kve = e^x K_kappa(x) keeps the product finite far beyond where
        # K_kappa itself underflows; the exp(-r) factor restores the scale.
        out[pos] = coef * rp**kappa * kve(kappa, rp) * np.exp(-rp)
    return float(out) if np.isscalar(h) else out


@dataclass(frozen=True)
class MaternParams:
    """Range and smoothness of a Matern correlation."""

    rho: float
    kappa: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.rho) or self.rho <= 0.0:
            raise ValidationError(f"range must be positive, got {self.rho}")
        if not np.isfinite(self.kappa) or self.kappa <= 0.0 or self.kappa > KAPPA_MAX:
            raise ValidationError(f"smoothness must lie in (0, {KAPPA_MAX}], got {self.kappa}")


@dataclass(frozen=True)
class LmcSpec:
    """Shared-component construction for a pair of fields.

    The arm-0 field is w0 = w0_tilde and the arm-1 field is
    w1 = w1_tilde + gamma * w0_tilde, with independent zero-mean latent
    fields of variance sigma2_0 and sigma2_1.
    """

    sigma2_0: float
    sigma2_1: float
    gamma: float

    def __post_init__(self) -> None:
        if self.sigma2_0 <= 0.0 or self.sigma2_1 <= 0.0:
            raise ValidationError("component variances must be positive")


@dataclass(frozen=True)
class CovarianceFactor:
    """Cholesky factorization of sigma2 * (R + jitter * I).

    The jitter is applied on the unit-variance correlation scale and recorded;
    `lower` is the Cholesky factor of R + jitter * I, so the covariance factor
    is sqrt(sigma2) * lower.
    """

    lower: np.ndarray
    variance: float
    jitter: float

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def factor(self) -> np.ndarray:
        """L such that L @ L.T reproduces the (jittered) covariance."""
        return np.sqrt(self.variance) * self.lower

    @property
    def log_det(self) -> float:
        """Log determinant of the (jittered) covariance matrix."""
        return self.dim * np.log(self.variance) + 2.0 * float(
            np.sum(np.log(np.diag(self.lower)))
        )

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve (sigma2 (R + jitter I)) x = b."""
        return sla.cho_solve((self.lower, True), b, check_finite=False) / self.variance

    def quad_form(self, b: np.ndarray) -> float:
        """Compute b^T (sigma2 (R + jitter I))^{-1} b."""
        half = sla.solve_triangular(self.lower, b, lower=True, check_finite=False)
        return float(half @ half) / self.variance

    def matrix(self) -> np.ndarray:
        """Reconstruct sigma2 * (R + jitter * I)."""
        return self.variance * (self.lower @ self.lower.T)


def cholesky_with_jitter(corr: np.ndarray, jitter: float) -> tuple[np.ndarray, float]:
    """Cholesky of corr + j*I, escalating j through the jitter ladder.

    Returns:
        (lower factor, jitter actually used).

    Raises:
        NumericalError: If the factorization fails at every ladder rung.
    """
    ladder = [jitter] + [j for j in JITTER_LADDER if j > jitter]
    for j in ladder:
        try:
            lower = sla.cholesky(
                corr + j * np.eye(corr.shape[0]), lower=True, check_finite=False
            )
            return lower, j
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"covariance factorization failed with jitter up to {ladder[-1]:g}"
    )


def build_covariance(
    dists: np.ndarray,
    variance: float,
    params: MaternParams,
    jitter: float = JITTER_LADDER[0],
) -> CovarianceFactor:
    """Factor the Matern covariance sigma2 * R(dists) with diagonal jitter.

    Args:
        dists: (G, G) symmetric distance matrix with a zero diagonal.
        variance: Marginal variance sigma2 > 0.
        params: Matern range and smoothness.
        jitter: Starting rung of the jitter ladder.

    Raises:
        NumericalError: If the factorization fails at every jitter rung.
    """
    if variance <= 0.0 or not np.isfinite(variance):
        raise ValidationError(f"variance must be positive, got {variance}")
    d = np.asarray(dists, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValidationError(f"distance matrix must be square, got {d.shape}")
    corr = matern_correlation(d, params.rho, params.kappa)
    lower, used = cholesky_with_jitter(corr, jitter)
    return CovarianceFactor(lower=lower, variance=variance, jitter=used)


def sample_mvn(
    mean: np.ndarray,
    factor: CovarianceFactor,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Draw from N(mean, factor-covariance).

    Args:
        mean: (G,) mean vector.
        factor: Covariance factorization.
        rng: Source of randomness.
        size: If given, number of draws; result is (size, G).

    Returns:
        (G,) draw, or (size, G) when size is given.
    """
    mu = np.asarray(mean, dtype=float)
    if mu.shape != (factor.dim,):
        raise ValidationError(f"mean must have shape ({factor.dim},), got {mu.shape}")
    scale = np.sqrt(factor.variance)
    if size is None:
        z = rng.standard_normal(factor.dim)
        return mu + scale * (factor.lower @ z)
    z = rng.standard_normal((factor.dim, size))
    return mu[None, :] + scale * (factor.lower @ z).T


def lmc_compose(
    w0_tilde: np.ndarray, w1_tilde: np.ndarray, gamma: float
) -> np.ndarray:
    """Composed arm-1 field w1 = w1_tilde + gamma * w0_tilde (arm 0 is w0_tilde)."""
    w0 = np.asarray(w0_tilde, dtype=float)
    w1 = np.asarray(w1_tilde, dtype=float)
    if w0.shape != w1.shape:
        raise ValidationError("latent fields must share a shape")
    return w1 + gamma * w0


def lmc_cross_moments(spec: LmcSpec) -> dict[str, float]:
    """Marginal and cross moments of the composed field pair at one location.

    Returns:
        Dict with var0 = sigma2_0, var1 = sigma2_1 + gamma^2 sigma2_0,
        cov = gamma * sigma2_0, and corr = cov / sqrt(var0 * var1).
    """
    var0 = spec.sigma2_0
    var1 = spec.sigma2_1 + spec.gamma**2 * spec.sigma2_0
    cov = spec.gamma * spec.sigma2_0
    return {
        "var0": var0,
        "var1": var1,
        "cov": cov,
        "corr": cov / np.sqrt(var0 * var1),
    }


def _name_key(part: str | int) -> tuple[int, ...]:
    """Stable 128-bit key words for one path element."""
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValidationError(f"stream path integers must be nonnegative, got {part}")
        return (int(part),)
    digest = hashlib.blake2b(str(part).encode("utf-8"), digest_size=16).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def derive_stream(seed: int, *path: str | int) -> np.random.Generator:
    """Build a named random stream from a root seed and a path of names.

    Streams with distinct (seed, path) pairs are statistically independent;
    identical pairs reproduce the same sequence on any platform or worker
    layout. Integers name indexed substreams (replicates, chains), strings
    name components ("data", "chain/full", "block/alpha", ...).
    """
    key: list[int] = []
    for part in path:
        key.extend(_name_key(part))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))
