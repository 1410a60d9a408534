"""Prior families: NIG base measure, jump/score laws, shrinkage and spatial loadings.

Three loading priors are supported downstream: iid gamma scores (used by the
closed-form moment studies), a multiplicative-gamma shrinkage cascade whose
depth factors get generalized-inverse-Gaussian full conditionals, and a
conditional autoregressive prior on log-loadings columns for spatially indexed
groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy import linalg, stats
from scipy.special import betaln, gammaln

from .measures import Atom

__all__ = [
    "NigBase",
    "nig_posterior",
    "sample_atom",
    "sample_jumps",
    "sample_scores",
    "log_jump_prior",
    "log_score_prior",
    "MgpHyper",
    "mgp_expected_loadings",
    "sample_mgp_lambda",
    "draw_mgp_hyper",
    "loadings_from_hyper",
    "update_depth_factors",
    "sample_gig",
    "CarPrior",
]


# ---------------------------------------------------------------------------
# Normal-inverse-gamma base measure


@dataclass(frozen=True)
class NigBase:
    """Conjugate base measure for Gaussian atoms.

    ``sigma2 ~ InvGamma(a, b)`` and ``mu | sigma2 ~ N(mu0, sigma2 / lambda0)``.
    """

    mu0: float
    lambda0: float
    a: float
    b: float

    def __post_init__(self) -> None:
        if not all(map(math.isfinite, (self.mu0, self.lambda0, self.a, self.b))):
            raise ValueError("base-measure parameters must be finite")
        if min(self.lambda0, self.a, self.b) <= 0.0:
            raise ValueError("lambda0, a, b must be strictly positive")


def nig_posterior(base: NigBase, y) -> NigBase:
    """Posterior base-measure parameters given observations ``y``.

    Empty ``y`` returns ``base`` unchanged, so unoccupied atoms fall back to
    prior draws through the same code path.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n == 0:
        return base
    ybar = float(y.mean())
    lam_n = base.lambda0 + n
    mu_n = (base.lambda0 * base.mu0 + n * ybar) / lam_n
    ss = float(np.sum((y - ybar) ** 2))
    b_n = base.b + 0.5 * ss + 0.5 * base.lambda0 * n * (ybar - base.mu0) ** 2 / lam_n
    return NigBase(mu0=mu_n, lambda0=lam_n, a=base.a + 0.5 * n, b=b_n)


def sample_atom(base: NigBase, rng: np.random.Generator) -> Atom:
    """One draw from the (possibly posterior-updated) base measure."""
    sigma2 = base.b / rng.standard_gamma(base.a)
    mu = base.mu0 + math.sqrt(sigma2 / base.lambda0) * rng.standard_normal()
    return Atom(mu=float(mu), sigma2=float(sigma2))


# ---------------------------------------------------------------------------
# Jump and score priors for the truncated compound measure


def sample_jumps(phi: float, n_atoms: int, rng: np.random.Generator) -> np.ndarray:
    """iid Beta(phi / K, phi) jumps, K = ``n_atoms``."""
    _check_phi(phi)
    return rng.beta(phi / n_atoms, phi, size=n_atoms)


def sample_scores(phi: float, n_factors: int, n_atoms: int, rng: np.random.Generator) -> np.ndarray:
    """iid Gamma(phi, 1) score matrix of shape (H, K)."""
    _check_phi(phi)
    return rng.gamma(phi, 1.0, size=(n_factors, n_atoms))


def log_jump_prior(jumps: np.ndarray, phi: float) -> float:
    """Exact log density of iid Beta(phi/K, phi) jumps (normalized)."""
    _check_phi(phi)
    j = np.asarray(jumps, dtype=float)
    if np.any(j <= 0.0) or np.any(j >= 1.0):
        raise ValueError("jumps must lie strictly inside (0, 1)")
    k = j.size
    a = phi / k
    return float(
        np.sum((a - 1.0) * np.log(j) + (phi - 1.0) * np.log1p(-j)) - k * betaln(a, phi)
    )


def log_score_prior(scores: np.ndarray, phi: float) -> float:
    """Exact log density of iid Gamma(phi, 1) scores (normalized)."""
    _check_phi(phi)
    m = np.asarray(scores, dtype=float)
    if np.any(m <= 0.0):
        raise ValueError("scores must be strictly positive")
    return float(np.sum((phi - 1.0) * np.log(m) - m) - m.size * gammaln(phi))


def _check_phi(phi: float) -> None:
    if not (math.isfinite(phi) and phi > 0.0):
        raise ValueError(f"concentration phi must be finite and > 0, got {phi}")


# ---------------------------------------------------------------------------
# Multiplicative-gamma shrinkage prior on loadings


@dataclass(frozen=True)
class MgpHyper:
    """Hyperparameters and latent state of the shrinkage cascade.

    ``theta`` holds the depth factors (first ~ Gamma(a1, 1), rest ~ Gamma(a2, 1));
    cumulative products give the column precisions ``tau``.  ``local`` stores the
    per-entry precision factors implied by the current loadings — a derived
    quantity, kept so the full loading decomposition is always reconstructible.
    """

    a1: float
    a2: float
    nu: float
    theta: np.ndarray
    local: np.ndarray | None = None

    def __post_init__(self) -> None:
        if min(self.a1, self.a2, self.nu) <= 0.0:
            raise ValueError("a1, a2, nu must be strictly positive")
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1 or np.any(theta <= 0.0) or not np.all(np.isfinite(theta)):
            raise ValueError("depth factors must be a 1-d positive array")
        object.__setattr__(self, "theta", theta)

    @property
    def n_factors(self) -> int:
        return self.theta.size

    @cached_property
    def tau(self) -> np.ndarray:
        """Column precisions: cumulative products of the depth factors."""
        return np.cumprod(self.theta)


def mgp_expected_loadings(a1: float, a2: float, nu: float, n_factors: int) -> np.ndarray:
    """Prior mean of each loadings column under the shrinkage cascade.

    ``E[lambda_jh] = nu/(nu-2) * (a1-1)^{-1} * (a2-1)^{-(h-1)}``; requires
    a1 > 1, a2 > 1, nu > 2 for the mean to exist.
    """
    if a1 <= 1.0 or a2 <= 1.0 or nu <= 2.0:
        raise ValueError("loading means require a1 > 1, a2 > 1, nu > 2")
    h = np.arange(n_factors)
    return (nu / (nu - 2.0)) / (a1 - 1.0) * (a2 - 1.0) ** (-h.astype(float))


def draw_mgp_hyper(
    a1: float, a2: float, nu: float, n_groups: int, n_factors: int, rng: np.random.Generator
) -> MgpHyper:
    """Fresh prior draw of depth factors and local precision factors."""
    theta = np.empty(n_factors)
    theta[0] = rng.gamma(a1, 1.0)
    if n_factors > 1:
        theta[1:] = rng.gamma(a2, 1.0, size=n_factors - 1)
    local = rng.gamma(nu / 2.0, 2.0 / nu, size=(n_groups, n_factors))
    return MgpHyper(a1=a1, a2=a2, nu=nu, theta=theta, local=local)


def loadings_from_hyper(hyper: MgpHyper) -> np.ndarray:
    """Loadings implied by the cascade state: ``1 / (local * tau)``."""
    if hyper.local is None:
        raise ValueError("hyper state carries no local precision factors")
    return 1.0 / (hyper.local * hyper.tau)


def sample_mgp_lambda(
    a1: float, a2: float, nu: float, n_groups: int, n_factors: int, rng: np.random.Generator
) -> np.ndarray:
    """One prior draw of the (g, H) loadings matrix under the shrinkage cascade.

    Every randomness request goes through ``rng.gamma``, so a deterministic
    stub returning 1 for each gamma draw yields a loadings matrix of ones.
    """
    return loadings_from_hyper(draw_mgp_hyper(a1, a2, nu, n_groups, n_factors, rng))


def sample_gig(p: float, a: float, b: float, rng: np.random.Generator) -> float:
    """Draw from the generalized inverse Gaussian density ∝ x^{p-1} e^{-(a x + b/x)}.

    Requires a > 0; b > 0 in general, while b = 0 with p > 0 degenerates to a
    Gamma(p, rate a) draw.
    """
    if a <= 0.0:
        raise ValueError("gig rate a must be > 0")
    if b <= 0.0:
        if b == 0.0 and p > 0.0:
            return float(rng.gamma(p, 1.0 / a))
        raise ValueError("gig inverse-rate b must be > 0 (or 0 with p > 0)")
    scale = math.sqrt(b / a)
    omega = 2.0 * math.sqrt(a * b)
    return float(stats.geninvgauss.rvs(p, omega, scale=scale, random_state=rng))


def update_depth_factors(
    loadings: np.ndarray, hyper: MgpHyper, rng: np.random.Generator
) -> MgpHyper:
    """Gibbs sweep over the depth factors given the loadings matrix.

    Conditioned on the loadings (with the local precision factors integrated
    into them), the full conditional of depth factor ``l`` is generalized
    inverse Gaussian:

        p(theta_l | rest) ∝ theta_l^{p_l - 1} exp(-theta_l - C_l / theta_l),

    with ``p_l = a_prior - (nu/2) * g * (H - l)`` (zero-based ``l``) and
    ``C_l = (nu/2) * sum_{h >= l} (sum_j 1/lambda_jh) / (tau_h / theta_l)``.
    The sweep is sequential; each update sees the freshest neighbours.
    Returns a new hyper state with local factors refreshed to match.
    """
    lam = np.asarray(loadings, dtype=float)
    if lam.ndim != 2 or lam.shape[1] != hyper.n_factors:
        raise ValueError("loadings shape incompatible with hyper state")
    if np.any(lam <= 0.0):
        raise ValueError("loadings must be strictly positive")
    g, H = lam.shape
    half_nu = hyper.nu / 2.0
    inv_col_sums = (1.0 / lam).sum(axis=0)  # sum_j 1/lambda_jh per column

    theta = hyper.theta.copy()
    for ell in range(H):
        tau = np.cumprod(theta)
        a_prior = hyper.a1 if ell == 0 else hyper.a2
        p_ell = a_prior - half_nu * g * (H - ell)
        # tau_h without theta_ell, for all columns h >= ell.
        tau_wo = tau[ell:] / theta[ell]
        c_ell = half_nu * float(np.sum(inv_col_sums[ell:] / tau_wo))
        theta[ell] = sample_gig(p_ell, 1.0, c_ell, rng)

    tau = np.cumprod(theta)
    local = 1.0 / (lam * tau)
    return replace(hyper, theta=theta, local=local)


# ---------------------------------------------------------------------------
# Conditional autoregressive prior on log-loadings columns


class CarPrior:
    """Gaussian CAR prior for one log-loadings column over spatially indexed groups.

    The column ``x`` (length g) is N(mu, (tau * (F - rho * W))^{-1}) with ``W``
    a symmetric 0/1 adjacency matrix, ``F`` its diagonal of row sums.  The
    precision matrix is Cholesky-factored once at construction; failure to
    factor reports an invalid spatial configuration.
    """

    def __init__(self, adjacency, mu, tau: float = 2.5, rho: float = 0.95):
        W = np.asarray(adjacency, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("adjacency must be a square matrix")
        if not np.array_equal(W, W.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(W) != 0.0):
            raise ValueError("adjacency must have a zero diagonal (no self-loops)")
        if not np.all(np.isin(W, (0.0, 1.0))):
            raise ValueError("adjacency entries must be 0 or 1")
        if not (tau > 0.0):
            raise ValueError("precision scale tau must be > 0")
        if not (0.0 < rho < 1.0):
            raise ValueError("dependence rho must lie strictly inside (0, 1)")
        g = W.shape[0]
        mu = np.broadcast_to(np.asarray(mu, dtype=float), (g,)).copy()
        precision = tau * (np.diag(W.sum(axis=1)) - rho * W)
        try:
            chol = linalg.cholesky(precision, lower=True)
        except linalg.LinAlgError as err:
            raise ValueError(
                "CAR precision matrix is not positive definite; "
                "check adjacency connectivity and rho"
            ) from err

        self.adjacency = W
        self.adjacency.flags.writeable = False
        self.tau = float(tau)
        self.rho = float(rho)
        self.mu = mu
        self.mu.flags.writeable = False
        self.precision = precision
        self.precision.flags.writeable = False
        self._chol = chol
        # 0.5 log det(P) - (g/2) log(2 pi), cached: the density is evaluated
        # every iteration but the precision never changes.
        self._log_norm = float(np.sum(np.log(np.diag(chol))) - 0.5 * g * math.log(2.0 * math.pi))

    @property
    def n_groups(self) -> int:
        return self.adjacency.shape[0]

    def log_density(self, x) -> tuple[float, np.ndarray]:
        """Log density and gradient at a column ``x`` (length g)."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_groups,):
            raise ValueError(f"column has shape {x.shape}, expected ({self.n_groups},)")
        delta = x - self.mu
        pd = self.precision @ delta
        value = self._log_norm - 0.5 * float(delta @ pd)
        return value, -pd

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One column draw: mu + L^{-T} z with P = L L^T."""
        z = rng.standard_normal(self.n_groups)
        return self.mu + linalg.solve_triangular(self._chol, z, lower=True, trans="T")
