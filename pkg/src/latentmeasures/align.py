"""Resolving label switching: templates, measure dissimilarities, optimal matching.

Each post-processed draw carries H transformed latent measures; their order is
arbitrary. Draws are matched to the template — the transformed measures of
the highest-log-joint draw — by minimizing summed pairwise dissimilarity over
permutations, which an exact linear-assignment solve settles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .measures import _as_readonly

logger = logging.getLogger(__name__)

__all__ = [
    "NormalizedMeasure",
    "Template",
    "PermutationMatrix",
    "transformed_measures",
    "select_template",
    "l2_dissimilarity",
    "ls_wasserstein_dissimilarity",
    "align_draw",
    "align_chain",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NormalizedMeasure:
    """A unit-mass atomic measure over Gaussian kernels.

    Built from unnormalized atom weights; construction divides by the total
    mass and rejects nonpositive totals.  Entries may carry tiny negative
    round-off (from post-processing transforms); the total must be positive.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        if not (w.shape == mu.shape == v.shape) or w.ndim != 1 or w.size == 0:
            raise ValueError("weights, means, variances must share a nonempty 1-d shape")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(v))):
            raise ValueError("measure components must be finite")
        if np.any(v <= 0.0):
            raise ValueError("kernel variances must be strictly positive")
        total = math.fsum(w)
        if not total > 0.0:
            raise ValueError(f"total mass must be positive, got {total!r}")
        object.__setattr__(self, "weights", _as_readonly(w / total))
        object.__setattr__(self, "means", _as_readonly(mu))
        object.__setattr__(self, "variances", _as_readonly(v))

    @property
    def n_atoms(self) -> int:
        return self.weights.size

    def density(self, grid: np.ndarray) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        z = (grid[None, :] - self.means[:, None]) ** 2 / self.variances[:, None]
        kernels = np.exp(-0.5 * (z + np.log(self.variances)[:, None] + _LOG_2PI))
        return self.weights @ kernels


@dataclass(frozen=True)
class Template:
    """The H reference measures every draw is aligned against."""

    measures: tuple[NormalizedMeasure, ...]
    draw_index: int

    def __post_init__(self) -> None:
        if not self.measures:
            raise ValueError("template needs at least one measure")
        object.__setattr__(self, "measures", tuple(self.measures))

    @property
    def n_factors(self) -> int:
        return len(self.measures)


@dataclass(frozen=True)
class PermutationMatrix:
    """Row h of the matrix selects source component perm[h]."""

    perm: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.perm, dtype=np.int64)
        if p.ndim != 1 or sorted(p.tolist()) != list(range(p.size)):
            raise ValueError(f"not a permutation of 0..{p.size - 1}: {p!r}")
        object.__setattr__(self, "perm", _as_readonly(p, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.perm.size

    @cached_property
    def matrix(self) -> np.ndarray:
        m = np.zeros((self.size, self.size))
        m[np.arange(self.size), self.perm] = 1.0
        return _as_readonly(m)


def transformed_measures(corm, transform: np.ndarray) -> list[NormalizedMeasure]:
    """Normalized latent measures after applying a transform to the scores.

    Row h of (transform @ scores) * jumps gives measure h's atom weights.
    Negative weights are clamped to zero before normalization; a feasible
    constrained solve only leaves round-off-sized ones, so anything beyond
    the solver tolerance is logged (it marks a failed draw).
    """
    q = np.asarray(transform, dtype=float)
    w = (q @ corm.scores) * corm.jumps
    worst = float(w.min(initial=0.0))
    if worst < -1e-6:
        logger.debug("clamping transformed weight %.3g (failed solve)", worst)
    w = np.maximum(w, 0.0)
    return [
        NormalizedMeasure(weights=row, means=corm.atom_means, variances=corm.atom_vars)
        for row in w
    ]


def select_template(chain, transforms) -> Template:
    """Template = transformed measures of the highest-log-joint draw.

    Ties resolve to the lowest draw index (argmax takes the first maximum).
    """
    if chain.n_draws == 0:
        raise ValueError("cannot build a template from an empty chain")
    if len(transforms) != chain.n_draws:
        raise ValueError("one transform per draw required")
    idx = int(np.argmax(chain.log_joint))
    q = transforms[idx].matrix if hasattr(transforms[idx], "matrix") else transforms[idx]
    measures = transformed_measures(chain.corm_at(idx), q)
    return Template(measures=tuple(measures), draw_index=idx)


def _cross_inner(a: NormalizedMeasure, b: NormalizedMeasure) -> float:
    """L2 inner product of the two mixture densities, in closed form."""
    v = a.variances[:, None] + b.variances[None, :]
    z = (a.means[:, None] - b.means[None, :]) ** 2 / v
    kernel = np.exp(-0.5 * (z + np.log(v) + _LOG_2PI))
    return float(a.weights @ kernel @ b.weights)


def l2_dissimilarity(a: NormalizedMeasure, b: NormalizedMeasure) -> float:
    """L2 distance between the normalized mixture densities."""
    d2 = _cross_inner(a, a) - 2.0 * _cross_inner(a, b) + _cross_inner(b, b)
    return math.sqrt(max(d2, 0.0))


def ls_wasserstein_dissimilarity(a: NormalizedMeasure, b: NormalizedMeasure) -> float:
    """Optimal-transport cost between the atomic weight vectors.

    Ground cost between kernels: squared mean difference plus squared
    standard-deviation difference.  Solved exactly as a small LP; the value
    returned is the squared dissimilarity (the transport cost itself).
    """
    wa = _transport_weights(a)
    wb = _transport_weights(b)
    sa = np.sqrt(a.variances)
    sb = np.sqrt(b.variances)
    cost = (a.means[:, None] - b.means[None, :]) ** 2 + (sa[:, None] - sb[None, :]) ** 2

    na, nb = wa.size, wb.size
    # Marginal equality constraints; the final column constraint is redundant
    # (both marginals sum to 1) and dropped for full row rank.
    rows = []
    rhs = []
    for i in range(na):
        r = np.zeros((na, nb))
        r[i, :] = 1.0
        rows.append(r.ravel())
        rhs.append(wa[i])
    for j in range(nb - 1):
        r = np.zeros((na, nb))
        r[:, j] = 1.0
        rows.append(r.ravel())
        rhs.append(wb[j])
    res = linprog(
        cost.ravel(),
        A_eq=np.array(rows),
        b_eq=np.array(rhs),
        bounds=(0.0, None),
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _transport_weights(m: NormalizedMeasure) -> np.ndarray:
    w = np.asarray(m.weights, dtype=float).copy()
    neg = w < 0.0
    if np.any(w[neg] < -1e-9):
        raise ValueError("transport weights must be nonnegative")
    w[neg] = 0.0
    return w / w.sum()


_METRICS = {"l2": l2_dissimilarity, "lsw": ls_wasserstein_dissimilarity}


def align_draw(measures, template: Template, metric: str = "l2") -> PermutationMatrix:
    """Cost-minimizing matching of a draw's measures to the template slots.

    ``perm[h] = k`` matches template slot h with draw component k; the exact
    assignment solve coincides with the equal-weight transport optimum.
    """
    try:
        dis = _METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(_METRICS)}") from None
    measures = list(measures)
    if len(measures) != template.n_factors:
        raise ValueError("draw and template must hold the same number of measures")
    cost = np.array([[dis(t, m) for m in measures] for t in template.measures])
    _, cols = linear_sum_assignment(cost)
    return PermutationMatrix(perm=cols)


def align_chain(chain, transforms, metric: str = "l2") -> tuple[Template, list[PermutationMatrix]]:
    """Template selection plus per-draw alignment for a whole chain."""
    template = select_template(chain, transforms)
    perms = []
    for d in range(chain.n_draws):
        q = transforms[d].matrix if hasattr(transforms[d], "matrix") else transforms[d]
        measures = transformed_measures(chain.corm_at(d), q)
        perms.append(align_draw(measures, template, metric=metric))
    return template, perms
