"""Atomic-measure primitives: Gaussian atoms, weighted mixtures, L2 geometry.

Everything downstream (the sampler, the post-processing geometry, the
alignment metrics) manipulates discrete measures of the form
``sum_k w_k * delta_{(mu_k, sigma2_k)}`` whose atoms index Gaussian kernels.
This module owns that representation plus the closed-form L2 inner products
between Gaussian mixtures, which make dissimilarities and the interpolation
loss cheap and exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Atom",
    "TruncatedCoRM",
    "DensityGrid",
    "gaussian_l2_inner",
    "atom_inner_matrix",
    "mixture_density",
    "evaluate_on_grid",
    "group_weights",
    "gram_matrix",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _as_readonly(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Atom:
    """A Gaussian kernel location: mean ``mu`` and variance ``sigma2``.

    Immutable; ``sigma2`` must be strictly positive and both fields finite.
    """

    mu: float
    sigma2: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma2)):
            raise ValueError(f"atom parameters must be finite, got {self!r}")
        if self.sigma2 <= 0.0:
            raise ValueError(f"atom variance must be > 0, got {self.sigma2}")

    def logpdf(self, y) -> np.ndarray:
        """Log N(y | mu, sigma2), vectorized over ``y``."""
        y = np.asarray(y, dtype=float)
        return -0.5 * (_LOG_2PI + math.log(self.sigma2) + (y - self.mu) ** 2 / self.sigma2)

    def pdf(self, y) -> np.ndarray:
        return np.exp(self.logpdf(y))


@dataclass(frozen=True)
class TruncatedCoRM:
    """A finite family of compound random measures on shared atoms.

    Latent measure ``h`` is ``sum_k scores[h, k] * jumps[k] * delta_atoms[k]``:
    one shared set of ``K`` atoms and jumps, one positive score matrix of shape
    ``(H, K)`` tilting the jumps differently per latent measure.

    Arrays are copied and frozen at construction; instances are safe to share.
    """

    atoms: tuple[Atom, ...]
    jumps: np.ndarray
    scores: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "atoms", tuple(self.atoms))
        jumps = _as_readonly(self.jumps)
        scores = _as_readonly(self.scores)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "scores", scores)
        if jumps.ndim != 1 or scores.ndim != 2:
            raise ValueError("jumps must be 1-d and scores 2-d")
        if len(self.atoms) != jumps.shape[0] or scores.shape[1] != jumps.shape[0]:
            raise ValueError(
                f"inconsistent sizes: {len(self.atoms)} atoms, jumps {jumps.shape}, "
                f"scores {scores.shape}"
            )
        if not np.all(np.isfinite(jumps)) or not np.all(np.isfinite(scores)):
            raise ValueError("jumps and scores must be finite")
        if np.any(jumps <= 0.0) or np.any(scores <= 0.0):
            raise ValueError("jumps and scores must be strictly positive")

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_factors(self) -> int:
        return self.scores.shape[0]

    @cached_property
    def atom_means(self) -> np.ndarray:
        return _as_readonly([a.mu for a in self.atoms])

    @cached_property
    def atom_vars(self) -> np.ndarray:
        return _as_readonly([a.sigma2 for a in self.atoms])

    def factor_weights(self) -> np.ndarray:
        """Per-factor atom masses ``scores * jumps``, shape (H, K)."""
        return self.scores * self.jumps


def gaussian_l2_inner(a: Atom, b: Atom) -> float:
    """L2 inner product of two Gaussian densities.

    ``int N(y|mu_a, s_a) N(y|mu_b, s_b) dy = N(mu_a | mu_b, s_a + s_b)``,
    always strictly positive.
    """
    v = a.sigma2 + b.sigma2
    z = (a.mu - b.mu) ** 2 / v
    return math.exp(-0.5 * (z + math.log(v) + _LOG_2PI))


def atom_inner_matrix(atoms) -> np.ndarray:
    """Matrix of pairwise Gaussian L2 inner products.

    Parameters
    ----------
    atoms : sequence of Atom
        The ``K`` kernels.

    Returns
    -------
    ndarray of shape (K, K)
        Symmetric positive semidefinite; entry (k, l) is
        ``gaussian_l2_inner(atoms[k], atoms[l])``.
    """
    atoms = tuple(atoms)
    if not atoms:
        raise ValueError("need at least one atom")
    mus = np.array([a.mu for a in atoms])
    s2s = np.array([a.sigma2 for a in atoms])
    v = s2s[:, None] + s2s[None, :]
    z = (mus[:, None] - mus[None, :]) ** 2 / v
    out = np.exp(-0.5 * (z + np.log(v) + _LOG_2PI))
    # Exact symmetry despite floating-point evaluation order.
    return 0.5 * (out + out.T)


def _check_weights(weights, n_atoms: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n_atoms,):
        raise ValueError(f"weights shape {w.shape} does not match {n_atoms} atoms")
    if not np.all(np.isfinite(w)) or np.any(w < 0.0):
        raise ValueError("weights must be finite and nonnegative")
    if not np.any(w > 0.0):
        raise ValueError("at least one weight must be positive")
    return w


def mixture_density(weights, atoms, y) -> np.ndarray:
    """Gaussian-mixture density at ``y`` with the weights taken as given.

    Linear in the weights: atom masses are not renormalized, so the result
    integrates to the total mass rather than to one.  Callers wanting a
    probability density pass weights that sum to one.
    """
    atoms = tuple(atoms)
    w = _check_weights(weights, len(atoms))
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("evaluation points must be finite")
    out = np.zeros_like(y, dtype=float)
    for wk, atom in zip(w, atoms):
        if wk > 0.0:
            out += wk * atom.pdf(y)
    return out


def evaluate_on_grid(weights, atoms, grid) -> np.ndarray:
    """Evaluate the mixture on a strictly increasing grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a nonempty 1-d array")
    if grid.size > 1 and not np.all(np.diff(grid) > 0.0):
        raise ValueError("grid points must be strictly increasing")
    return mixture_density(weights, atoms, grid)


def group_weights(loadings: np.ndarray, corm: TruncatedCoRM) -> tuple[np.ndarray, np.ndarray]:
    """Per-group atom weights and total masses.

    Group ``j`` mixes the latent measures with loadings row ``j``; its atom
    ``k`` then carries weight ``(loadings @ scores)[j, k] * jumps[k]``.

    Returns
    -------
    weights : ndarray of shape (g, K)
        Strictly positive atom weights per group.
    totals : ndarray of shape (g,)
        Row sums of ``weights`` (normalizing constants), accumulated with
        compensated summation so equal inputs give bit-equal totals.
    """
    lam = np.asarray(loadings, dtype=float)
    if lam.ndim != 2 or lam.shape[1] != corm.n_factors:
        raise ValueError(
            f"loadings shape {lam.shape} incompatible with {corm.n_factors} factors"
        )
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0.0):
        raise ValueError("loadings must be finite and strictly positive")
    weights = (lam @ corm.scores) * corm.jumps
    totals = np.array([math.fsum(row) for row in weights])
    return weights, totals


def gram_matrix(corm: TruncatedCoRM, transform: np.ndarray | None = None) -> np.ndarray:
    """L2 Gram matrix of the (optionally transformed) latent measures.

    With ``B = (transform @ scores) * jumps`` and ``A`` the atom inner-product
    matrix, returns ``G = B A B^T`` — entry (h, l) is the L2 inner product of
    transformed latent measures h and l. Symmetrized exactly.
    """
    B = corm.factor_weights() if transform is None else (np.asarray(transform, dtype=float) @ corm.scores) * corm.jumps
    A = atom_inner_matrix(corm.atoms)
    G = B @ A @ B.T
    return 0.5 * (G + G.T)


@dataclass(frozen=True)
class DensityGrid:
    """One shared evaluation grid plus any number of density rows.

    ``points`` is strictly increasing of length n; ``values`` has shape
    (m, n), one row per density.
    """

    points: np.ndarray
    values: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        points = _as_readonly(self.points)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        values = _as_readonly(values)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)
        if points.ndim != 1 or points.size < 2:
            raise ValueError("grid needs at least two points")
        if not np.all(np.isfinite(points)) or not np.all(np.isfinite(values)):
            raise ValueError("grid points and density values must be finite")
        if not np.all(np.diff(points) > 0.0):
            raise ValueError("grid points must be strictly increasing")
        if values.shape[1] != points.size:
            raise ValueError(
                f"values shape {values.shape} incompatible with {points.size} grid points"
            )
        names = tuple(self.names)
        if names and len(names) != values.shape[0]:
            raise ValueError("one name per density row required")
        if not names:
            names = tuple(f"density_{i}" for i in range(values.shape[0]))
        object.__setattr__(self, "names", names)

    @classmethod
    def for_data(cls, data, n_points: int = 500) -> np.ndarray:
        """Default evaluation grid: data range padded by three standard deviations.

        Returns just the grid points; callers attach density rows later.
        """
        y = np.concatenate([np.asarray(a, dtype=float).ravel() for a in _iter_arrays(data)])
        if y.size < 2:
            raise ValueError("need at least two observations to build a grid")
        sd = float(np.std(y))
        if sd == 0.0:
            sd = 1.0
        return np.linspace(y.min() - 3.0 * sd, y.max() + 3.0 * sd, n_points)

    def write_csv(self, path) -> None:
        """Write ``y`` plus one column per density, 17-significant-digit floats."""
        from .io import fmt_float  # local import: io depends on this module

        lines = [",".join(["y", *self.names])]
        for i, y in enumerate(self.points):
            row = [fmt_float(y)] + [fmt_float(v) for v in self.values[:, i]]
            lines.append(",".join(row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _iter_arrays(data):
    """Accept a flat array, a list of per-group arrays, or a GroupedData."""
    groups = getattr(data, "groups", None)
    if groups is not None:
        return list(groups)
    if isinstance(data, np.ndarray) and data.ndim == 1:
        return [data]
    return list(data)
