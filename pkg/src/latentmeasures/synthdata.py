"""Synthetic benchmark datasets: exchangeable Dirichlet-weight groups and a spatial lattice."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import NormalizedMeasure
from .gibbs import GroupedData

__all__ = [
    "SyntheticSpec",
    "SyntheticData",
    "generate_dirichlet_mix",
    "generate_spatial_lattice",
    "rook_adjacency",
    "lattice_sites",
    "lattice_weights",
]

_SCENARIOS = ("dirichlet-mix", "spatial-lattice")


@dataclass(frozen=True)
class SyntheticSpec:
    """Which benchmark to generate and at what size."""

    scenario: str
    size: int  # groups for the mixture scenario, lattice width parameter otherwise
    n_per_group: int = 25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scenario not in _SCENARIOS:
            raise ValueError(f"scenario must be one of {_SCENARIOS}, got {self.scenario!r}")
        if self.size < 1 or self.n_per_group < 1:
            raise ValueError("sizes must be positive")


@dataclass(frozen=True)
class SyntheticData:
    """Generated observations with their generating densities.

    ``adjacency`` and ``coords`` are populated only for the lattice scenario.
    """

    data: GroupedData
    true_measures: tuple[NormalizedMeasure, ...]
    adjacency: np.ndarray | None = None
    coords: np.ndarray | None = None

    @property
    def n_groups(self) -> int:
        return self.data.n_groups


def _sample_mixture_groups(
    weights: np.ndarray,
    means: np.ndarray,
    sds: np.ndarray,
    n_per_group: int,
    rng: np.random.Generator,
) -> GroupedData:
    # One component draw + one normal draw per observation, group by group, so
    # the byte stream of outputs is a pure function of (weights order, seed).
    groups = []
    for w in weights:
        comps = rng.choice(means.size, size=n_per_group, p=w)
        y = means[comps] + sds[comps] * rng.standard_normal(n_per_group)
        groups.append(y)
    return GroupedData(groups=tuple(groups))


def generate_dirichlet_mix(
    n_groups: int = 100, n_per_group: int = 25, rng: np.random.Generator | None = None
) -> SyntheticData:
    """Groups mixing N(-2, 2), N(0, 2), N(2, 2) with Dirichlet(1,1,1) weights.

    Group means concentrate near 2(w3 - w1); variances are 2 (not standard
    deviations).
    """
    if n_groups < 1 or n_per_group < 1:
        raise ValueError("n_groups and n_per_group must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    means = np.array([-2.0, 0.0, 2.0])
    variances = np.array([2.0, 2.0, 2.0])
    weights = rng.dirichlet(np.ones(3), size=n_groups)
    data = _sample_mixture_groups(weights, means, np.sqrt(variances), n_per_group, rng)
    truths = tuple(
        NormalizedMeasure(weights=w, means=means, variances=variances) for w in weights
    )
    return SyntheticData(data=data, true_measures=truths)


def lattice_sites(q: int) -> np.ndarray:
    """Integer coordinates of the (q+1)² grid sites, x-major order."""
    if q < 1:
        raise ValueError("q must be at least 1")
    side = q + 1
    xs, ys = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()])


def rook_adjacency(q: int) -> np.ndarray:
    """Symmetric 0/1 rook-neighbour matrix for the (q+1)² lattice.

    Interior sites have degree 4, edges 3, corners 2.
    """
    side = q + 1
    n = side * side
    w = np.zeros((n, n))
    for i in range(side):
        for j in range(side):
            s = i * side + j
            if i + 1 < side:
                t = (i + 1) * side + j
                w[s, t] = w[t, s] = 1.0
            if j + 1 < side:
                t = i * side + (j + 1)
                w[s, t] = w[t, s] = 1.0
    return w


def lattice_weights(q: int) -> np.ndarray:
    """Mixture weights at every lattice site.

    Site (x, y) carries tilted weights (e^{w1}, e^{w2}, 1)/(1 + e^{w1} + e^{w2})
    with w1 = 3(x - x̄) + 3(y - ȳ) and w2 = -w1, so the diagonal sweeps from an
    almost-pure third component at one corner to an almost-pure second at the
    opposite corner, with the uniform (1/3, 1/3, 1/3) at the center.
    """
    coords = lattice_sites(q)
    center = q / 2.0
    w1 = 3.0 * (coords[:, 0] - center) + 3.0 * (coords[:, 1] - center)
    tilt = np.column_stack([np.exp(w1), np.exp(-w1), np.ones_like(w1)])
    return tilt / tilt.sum(axis=1, keepdims=True)


def generate_spatial_lattice(
    q: int = 4, n_per_group: int = 25, rng: np.random.Generator | None = None
) -> SyntheticData:
    """Lattice sites mixing N(-5, 1), N(0, 1), N(5, 1) with spatially tilted weights."""
    rng = np.random.default_rng(0) if rng is None else rng
    means = np.array([-5.0, 0.0, 5.0])
    variances = np.ones(3)
    weights = lattice_weights(q)
    data = _sample_mixture_groups(weights, means, np.sqrt(variances), n_per_group, rng)
    truths = tuple(
        NormalizedMeasure(weights=w, means=means, variances=variances) for w in weights
    )
    return SyntheticData(
        data=data,
        true_measures=truths,
        adjacency=rook_adjacency(q),
        coords=lattice_sites(q),
    )
