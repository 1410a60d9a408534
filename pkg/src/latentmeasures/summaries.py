"""Posterior summaries on aligned draws: mean measures, scores, residuals, fit metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.integrate import trapezoid
from scipy.special import logsumexp, ndtr

from .align import NormalizedMeasure
from .measures import DensityGrid, _as_readonly

__all__ = [
    "PosteriorSummary",
    "aligned_means",
    "convex_scores",
    "importance_scores",
    "residual_densities",
    "group_density_decomposition",
    "discretize_density",
    "waic",
    "kl_to_truth",
    "cluster_loadings",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PosteriorSummary:
    """Aligned posterior means and the convex decomposition built from them.

    ``factor_densities`` holds the H unnormalized mean measure densities on
    ``grid``; ``masses`` are their total masses, so row h of
    ``factor_densities / masses[:, None]`` is the normalized mean factor.
    ``scores`` rows are convex combinations (sum to one) and
    ``importance`` columns sum to the number of groups.
    """

    grid: np.ndarray
    factor_densities: np.ndarray
    masses: np.ndarray
    lambda_prime: np.ndarray
    scores: np.ndarray
    importance: np.ndarray
    n_draws: int
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        grid = _as_readonly(np.asarray(self.grid, dtype=float))
        dens = _as_readonly(np.asarray(self.factor_densities, dtype=float))
        masses = _as_readonly(np.asarray(self.masses, dtype=float))
        lam = _as_readonly(np.asarray(self.lambda_prime, dtype=float))
        s = _as_readonly(np.asarray(self.scores, dtype=float))
        imp = _as_readonly(np.asarray(self.importance, dtype=float))
        h = masses.size
        g = lam.shape[0]
        if dens.shape != (h, grid.size):
            raise ValueError("factor_densities shape must be (n_factors, n_grid)")
        if lam.shape != (g, h) or s.shape != (g, h) or imp.shape != (h,):
            raise ValueError("inconsistent summary dimensions")
        if np.any(masses <= 0.0):
            raise ValueError("factor masses must be positive")
        if np.any(lam < 0.0):
            raise ValueError("lambda_prime must be nonnegative")
        row_sums = s.sum(axis=1)
        if not np.allclose(row_sums, 1.0, rtol=0.0, atol=1e-10):
            raise ValueError("score rows must sum to one")
        if abs(math.fsum(imp) - g) > 1e-8:
            raise ValueError("importance scores must sum to the group count")
        for name, arr in (("grid", grid), ("factor_densities", dens),
                          ("masses", masses), ("lambda_prime", lam)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "factor_densities", dens)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "lambda_prime", lam)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "importance", imp)

    @property
    def n_factors(self) -> int:
        return self.masses.size

    @property
    def n_groups(self) -> int:
        return self.lambda_prime.shape[0]

    def normalized_factors(self) -> np.ndarray:
        return self.factor_densities / self.masses[:, None]


def aligned_means(chain, transforms, permutations, grid: np.ndarray) -> PosteriorSummary:
    """Average the aligned transformed draws into one posterior summary.

    Per draw: measure weights (P Q M) diag(J) and loadings Λ Q^{-1} with
    columns permuted to template order; all draws are then averaged.  An
    ill-conditioned transform (condition number above 1e10) is warned about,
    a singular one raises.
    """
    grid = np.asarray(grid, dtype=float)
    d_total = chain.n_draws
    if d_total == 0:
        raise ValueError("cannot summarize an empty chain")
    if len(transforms) != d_total or len(permutations) != d_total:
        raise ValueError("need one transform and one permutation per draw")
    h = permutations[0].size
    g = chain.loadings.shape[1]

    dens_sum = np.zeros((h, grid.size))
    mass_sum = np.zeros(h)
    lam_sum = np.zeros((g, h))
    clamped = 0
    worst_weight = 0.0
    for d in range(d_total):
        corm = chain.corm_at(d)
        q = transforms[d].matrix if hasattr(transforms[d], "matrix") else transforms[d]
        perm = permutations[d].perm
        if perm.size != h or corm.n_factors != h:
            raise ValueError(f"factor dimension drift at draw {d}")
        cond = np.linalg.cond(q)
        if not np.isfinite(cond):
            raise ValueError(f"singular transform at draw {d}")
        if cond > 1e10:
            logger.warning("transform at draw %d is ill-conditioned (cond=%.3g)", d, cond)
        weights = ((q @ corm.scores) * corm.jumps)[perm]
        neg = weights < 0.0
        if np.any(neg):
            worst_weight = min(worst_weight, float(weights.min()))
            clamped += int(neg.sum())
            weights = np.maximum(weights, 0.0)
        z = (grid[None, :] - corm.atom_means[:, None]) ** 2 / corm.atom_vars[:, None]
        kernels = np.exp(-0.5 * (z + np.log(corm.atom_vars)[:, None] + math.log(2.0 * math.pi)))
        dens_sum += weights @ kernels
        mass_sum += weights.sum(axis=1)
        lam_prime = np.linalg.solve(q.T, chain.loadings[d].T).T  # Λ Q^{-1}
        lam_sum += lam_prime[:, perm]
    if clamped:
        # Round-off-sized negatives are routine for feasible solves; anything
        # bigger traces back to draws whose transform failed.
        level = logging.WARNING if worst_weight < -1e-6 else logging.DEBUG
        logger.log(level, "clamped %d negative transformed weights (worst %.3g)",
                   clamped, worst_weight)

    lam_mean = lam_sum / d_total
    neg_lam = lam_mean < 0.0
    if np.any(neg_lam):
        worst_lam = float(lam_mean.min())
        level = logging.WARNING if worst_lam < -1e-6 else logging.DEBUG
        logger.log(level, "clamped %d negative aligned loadings (worst %.3g)",
                   int(neg_lam.sum()), worst_lam)
        lam_mean = np.maximum(lam_mean, 0.0)

    masses = mass_sum / d_total
    s = convex_scores(lam_mean, masses)
    imp = importance_scores(s)
    return PosteriorSummary(
        grid=grid,
        factor_densities=dens_sum / d_total,
        masses=masses,
        lambda_prime=lam_mean,
        scores=s,
        importance=imp,
        n_draws=d_total,
    )


def convex_scores(lambda_prime: np.ndarray, masses: np.ndarray) -> np.ndarray:
    """Row-normalized mass-weighted loadings: s[j, h] ∝ λ'[j, h] · mass[h]."""
    lam = np.asarray(lambda_prime, dtype=float)
    m = np.asarray(masses, dtype=float)
    raw = lam * m[None, :]
    totals = raw.sum(axis=1)
    if np.any(totals <= 0.0):
        raise ValueError("every group needs positive total weighted loading")
    return raw / totals[:, None]


def importance_scores(scores: np.ndarray) -> np.ndarray:
    """Column sums of the convex scores; they total the number of groups."""
    return np.asarray(scores, dtype=float).sum(axis=0)


def group_density_decomposition(
    summary: PosteriorSummary,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(normalized factors, group densities, cross-group mean density).

    Group j's density is the convex mixture Σ_h s[j, h] · p'_h; the mean is
    the unweighted average of the group densities.
    """
    factors = summary.normalized_factors()
    groups = summary.scores @ factors
    pbar = groups.mean(axis=0)
    return factors, groups, pbar


def residual_densities(summary: PosteriorSummary) -> DensityGrid:
    """Signed deviations ε_h of each normalized factor from the mean density.

    Adding s[j, :] @ residuals back onto the mean density reconstructs group
    j's density exactly (score rows sum to one).
    """
    factors, _, pbar = group_density_decomposition(summary)
    resid = factors - pbar[None, :]
    names = tuple(f"residual_{h}" for h in range(summary.n_factors))
    return DensityGrid(points=summary.grid, values=resid, names=names)


def discretize_density(measure: NormalizedMeasure, edges: np.ndarray) -> np.ndarray:
    """Bin masses of the mixture over [edges[i], edges[i+1]) via Gaussian CDFs."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0.0):
        raise ValueError("edges must be strictly increasing with at least two entries")
    sd = np.sqrt(measure.variances)
    z = (edges[None, :] - measure.means[:, None]) / sd[:, None]
    cdf = ndtr(z)
    return measure.weights @ (cdf[:, 1:] - cdf[:, :-1])


def waic(chain, data) -> tuple[float, float, float]:
    """(WAIC, lppd, effective parameters) from pointwise posterior log densities.

    Uses the matrix of per-draw, per-observation log likelihoods under the
    normalized group mixtures; the penalty is the summed sample variance
    (ddof=1), so a single-draw chain raises.
    """
    d_total = chain.n_draws
    if d_total < 2:
        raise ValueError("WAIC needs at least two draws for the variance penalty")
    y = data.flat
    gidx = data.group_index
    n = y.size
    ll = np.empty((d_total, n))
    for d in range(d_total):
        corm = chain.corm_at(d)
        w = (chain.loadings[d] @ corm.scores) * corm.jumps
        totals = w.sum(axis=1)
        if np.any(totals <= 0.0):
            raise ValueError(f"nonpositive group mass at draw {d}")
        log_p = np.log(w / totals[:, None])  # (g, K)
        z = (y[:, None] - corm.atom_means[None, :]) ** 2 / corm.atom_vars[None, :]
        log_kern = -0.5 * (z + np.log(corm.atom_vars)[None, :] + math.log(2.0 * math.pi))
        ll[d] = logsumexp(log_p[gidx] + log_kern, axis=1)
    lppd = float(np.sum(logsumexp(ll, axis=0) - math.log(d_total)))
    p_waic = float(np.sum(np.var(ll, axis=0, ddof=1)))
    return -2.0 * (lppd - p_waic), lppd, p_waic


def kl_to_truth(estimate: np.ndarray, truth: np.ndarray, grid: np.ndarray) -> tuple[float, bool]:
    """Trapezoid KL(truth ‖ estimate) on the grid, with a clamping flag.

    Estimate values below 1e-300 where the truth is positive are clamped up
    to keep the integrand finite; the returned flag records whether that
    happened.
    """
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if est.shape != grid.shape or tru.shape != grid.shape:
        raise ValueError("estimate, truth, grid must share one shape")
    if np.any(tru < 0.0) or np.any(est < 0.0):
        raise ValueError("densities must be nonnegative")
    pos = tru > 0.0
    clamped = bool(np.any(est[pos] < 1e-300))
    safe = np.maximum(est, 1e-300)
    integrand = np.zeros_like(tru)
    integrand[pos] = tru[pos] * (np.log(tru[pos]) - np.log(safe[pos]))
    return max(float(trapezoid(integrand, grid)), 0.0), clamped


def cluster_loadings(
    lambda_prime: np.ndarray, n_clusters: int = 4
) -> tuple[np.ndarray, np.ndarray]:
    """Complete-linkage Euclidean clustering of groups by aligned loadings.

    Returns 0-based labels (relabeled in order of first appearance, so the
    output is deterministic) and the per-cluster mean loading rows.
    """
    lam = np.asarray(lambda_prime, dtype=float)
    if lam.ndim != 2:
        raise ValueError("lambda_prime must be 2-d")
    g = lam.shape[0]
    if n_clusters < 1:
        raise ValueError("need at least one cluster")
    n_clusters = min(n_clusters, g)
    if g == 1:
        return np.zeros(1, dtype=np.int64), lam.copy()
    z = linkage(lam, method="complete", metric="euclidean")
    raw = fcluster(z, t=n_clusters, criterion="maxclust")
    labels = np.empty(g, dtype=np.int64)
    seen: dict[int, int] = {}
    for i, r in enumerate(raw):
        labels[i] = seen.setdefault(int(r), len(seen))
    k = len(seen)
    means = np.vstack([lam[labels == c].mean(axis=0) for c in range(k)])
    return labels, means
