"""Blocked Gibbs sampler for grouped Gaussian mixtures driven by shared latent measures.

Model state per iteration: K Gaussian atoms with jumps J_k and an (H, K)
positive score matrix defining H latent measures; a (g, H) positive loadings
matrix mixing them into per-group measures; per-observation cluster
indicators; and one positive auxiliary variable per group linearizing the
normalization of each group's measure.

The update cycle is: atoms (conjugate), jumps (logit random-walk MH), scores
(HMC on the log scale), loadings (HMC on the log scale, then shrinkage
hyperparameters when active), cluster indicators (exact categorical), and
auxiliary variables (gamma).  Under the shrinkage prior the number of latent
measures adapts during a fixed initial window.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gammaln

from .hmc import DualAveraging, hmc_step
from .measures import Atom, TruncatedCoRM
from .priors import (
    CarPrior,
    MgpHyper,
    NigBase,
    draw_mgp_hyper,
    loadings_from_hyper,
    log_jump_prior,
    log_score_prior,
    sample_jumps,
    sample_scores,
    update_depth_factors,
)

__all__ = [
    "GroupedData",
    "MgpSettings",
    "CarSettings",
    "ChainSettings",
    "GibbsState",
    "ChainRecord",
    "run_chain",
    "update_atoms",
    "update_jumps",
    "update_scores_hmc",
    "update_loadings_hmc",
    "update_clusters",
    "update_aux",
    "adapt_truncation",
    "log_joint",
]

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Data container


@dataclass(frozen=True)
class GroupedData:
    """Ragged grouped observations: ``groups[j]`` holds group j's values.

    Every group must be nonempty and all values finite.
    """

    groups: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        arrs = []
        for j, grp in enumerate(self.groups):
            a = np.asarray(grp, dtype=float).ravel()
            if a.size == 0:
                raise ValueError(f"group {j} is empty")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"group {j} contains non-finite values")
            a = a.copy()
            a.flags.writeable = False
            arrs.append(a)
        if not arrs:
            raise ValueError("need at least one group")
        object.__setattr__(self, "groups", tuple(arrs))

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @cached_property
    def group_sizes(self) -> np.ndarray:
        return np.array([g.size for g in self.groups])

    @cached_property
    def flat(self) -> np.ndarray:
        return np.concatenate(self.groups)

    @cached_property
    def group_index(self) -> np.ndarray:
        """Group label of each entry of ``flat``."""
        return np.repeat(np.arange(self.n_groups), self.group_sizes)

    @property
    def n_obs(self) -> int:
        return int(self.group_sizes.sum())

    @cached_property
    def mean(self) -> float:
        return float(self.flat.mean())


# ---------------------------------------------------------------------------
# Settings


@dataclass(frozen=True)
class MgpSettings:
    """Shrinkage-cascade loadings prior with truncation adaptation."""

    a1: float = 2.5
    a2: float = 3.0
    nu: float = 6.0
    h_init: int = 20
    adapt_window: int = 1000
    adapt_every: int = 50
    adapt_eps: float = 0.05

    def __post_init__(self) -> None:
        if min(self.a1, self.a2, self.nu) <= 0.0 or self.h_init < 1:
            raise ValueError("invalid shrinkage-prior settings")
        if self.adapt_window < 0 or self.adapt_every < 1 or not 0.0 < self.adapt_eps < 1.0:
            raise ValueError("invalid adaptation settings")


@dataclass(frozen=True)
class CarSettings:
    """Spatially smoothed loadings prior: one CAR field per log-loadings column."""

    adjacency: np.ndarray
    n_factors: int
    tau: float = 2.5
    rho: float = 0.95

    def __post_init__(self) -> None:
        if self.n_factors < 1:
            raise ValueError("n_factors must be >= 1")
        W = np.asarray(self.adjacency, dtype=float)
        object.__setattr__(self, "adjacency", W)

    def build_prior(self) -> CarPrior:
        # Column mean log(1/H): a priori each group mixes factors evenly.
        mu = np.full(self.adjacency.shape[0], -math.log(self.n_factors))
        return CarPrior(self.adjacency, mu=mu, tau=self.tau, rho=self.rho)


@dataclass(frozen=True)
class ChainSettings:
    """Everything one chain run needs besides the data and the RNG."""

    prior: MgpSettings | CarSettings
    n_atoms: int = 20
    phi: float = 1.0
    base: NigBase | None = None  # None: mu0 = data mean, lambda0 = 0.01, a = b = 2
    iterations: int = 11000
    burnin: int = 5000
    thin: int = 1
    n_leapfrog: int = 10
    hmc_step0: float = 0.1
    hmc_target: float = 0.75
    jump_target: float = 0.44
    temper: float = 1.0

    def __post_init__(self) -> None:
        if self.n_atoms < 1 or self.iterations < 0 or self.burnin < 0 or self.thin < 1:
            raise ValueError("counts must be positive (iterations/burnin nonnegative)")
        if self.phi <= 0.0:
            raise ValueError("phi must be > 0")
        if self.temper not in (0.0, 1.0):
            raise ValueError("temper must be 0 (prior chain) or 1 (posterior chain)")
        if self.n_leapfrog < 1 or self.hmc_step0 <= 0.0:
            raise ValueError("invalid HMC settings")
        if self.discard >= self.iterations and self.iterations > 0:
            # Permitted: yields an empty chain record rather than an error.
            logger.warning("no iterations remain after burn-in; chain record will be empty")

    @property
    def adaptive(self) -> bool:
        return isinstance(self.prior, MgpSettings) and self.prior.adapt_window > 0

    @property
    def discard(self) -> int:
        """Total discarded prefix: adaptation window (when active) plus burn-in."""
        extra = self.prior.adapt_window if self.adaptive else 0
        return self.burnin + extra

    def resolve_base(self, data: GroupedData) -> NigBase:
        if self.base is not None:
            return self.base
        return NigBase(mu0=data.mean, lambda0=0.01, a=2.0, b=2.0)


# ---------------------------------------------------------------------------
# Mutable chain state


@dataclass
class GibbsState:
    """Current values of every sampled block, plus cached cluster counts."""

    atom_means: np.ndarray  # (K,)
    atom_vars: np.ndarray  # (K,)
    jumps: np.ndarray  # (K,), in (0, 1)
    scores: np.ndarray  # (H, K)
    loadings: np.ndarray  # (g, H)
    clusters: np.ndarray  # (N,) ints in [0, K)
    aux: np.ndarray  # (g,)
    counts: np.ndarray  # (g, K) cluster occupancy, kept in sync with clusters
    mgp: MgpHyper | None = None
    iteration: int = 0

    @property
    def n_atoms(self) -> int:
        return self.jumps.size

    @property
    def n_factors(self) -> int:
        return self.scores.shape[0]

    @property
    def n_groups(self) -> int:
        return self.loadings.shape[0]

    def group_atom_weights(self) -> np.ndarray:
        """(g, K) unnormalized atom weights (loadings @ scores) * jumps."""
        return (self.loadings @ self.scores) * self.jumps

    def totals(self) -> np.ndarray:
        """Per-group normalizing masses, compensated summation."""
        w = self.group_atom_weights()
        return np.array([math.fsum(row) for row in w])

    def corm(self) -> TruncatedCoRM:
        atoms = tuple(
            Atom(float(m), float(v)) for m, v in zip(self.atom_means, self.atom_vars)
        )
        return TruncatedCoRM(atoms=atoms, jumps=self.jumps.copy(), scores=self.scores.copy())

    def validate(self, data: GroupedData) -> None:
        """Cheap structural invariants; raises on corruption."""
        g, H = self.loadings.shape
        K = self.n_atoms
        ok = (
            self.atom_means.shape == (K,)
            and self.atom_vars.shape == (K,)
            and self.scores.shape == (H, K)
            and self.clusters.shape == (data.n_obs,)
            and self.aux.shape == (g,)
            and self.counts.shape == (g, K)
            and g == data.n_groups
        )
        if not ok:
            raise ValueError("state dimensions are inconsistent")
        if np.any(self.atom_vars <= 0) or np.any(self.aux <= 0):
            raise ValueError("positivity violated in atom variances or aux variables")
        if np.any((self.jumps <= 0) | (self.jumps >= 1)):
            raise ValueError("jumps left (0, 1)")
        if np.any(self.scores <= 0) or np.any(self.loadings <= 0):
            raise ValueError("positivity violated in scores or loadings")
        if np.any((self.clusters < 0) | (self.clusters >= K)):
            raise ValueError("cluster indicator out of range")


def _recount(state: GibbsState, data: GroupedData) -> None:
    K = state.n_atoms
    flatidx = data.group_index * K + state.clusters
    state.counts = np.bincount(flatidx, minlength=data.n_groups * K).reshape(
        data.n_groups, K
    ).astype(float)


# ---------------------------------------------------------------------------
# Update steps


def update_atoms(
    state: GibbsState, data: GroupedData, base: NigBase, rng: np.random.Generator,
    temper: float = 1.0,
) -> None:
    """Conjugate refresh of every atom; unoccupied atoms fall back to the base."""
    K = state.n_atoms
    if temper == 0.0:
        n = np.zeros(K)
        s1 = np.zeros(K)
        s2 = np.zeros(K)
    else:
        y = data.flat
        n = np.bincount(state.clusters, minlength=K).astype(float)
        s1 = np.bincount(state.clusters, weights=y, minlength=K)
        s2 = np.bincount(state.clusters, weights=y * y, minlength=K)
    ybar = s1 / np.maximum(n, 1.0)
    lam_n = base.lambda0 + n
    mu_n = (base.lambda0 * base.mu0 + s1) / lam_n
    a_n = base.a + 0.5 * n
    # Within-cluster sum of squares; clip tiny negative round-off.
    ss = np.maximum(s2 - n * ybar * ybar, 0.0)
    b_n = base.b + 0.5 * ss + 0.5 * base.lambda0 * n * (ybar - base.mu0) ** 2 / lam_n

    state.atom_vars = b_n / rng.standard_gamma(a_n)
    state.atom_means = mu_n + np.sqrt(state.atom_vars / lam_n) * rng.standard_normal(K)


def _jump_log_kernel(x: np.ndarray, q: np.ndarray, b: np.ndarray, phi: float, K: int) -> np.ndarray:
    """Log target for logit-jumps: (q + phi/K) log J + phi log(1-J) - b J."""
    log_j = -np.logaddexp(0.0, -x)
    log_1mj = -np.logaddexp(0.0, x)
    return (q + phi / K) * log_j + phi * log_1mj - b * np.exp(log_j)


def update_jumps(
    state: GibbsState,
    phi: float,
    rng: np.random.Generator,
    log_steps: np.ndarray | None = None,
    temper: float = 1.0,
) -> np.ndarray:
    """Independent logit-scale random-walk MH updates of all jumps.

    Returns the per-jump acceptance probabilities (for step adaptation).
    The conditionals factorize over atoms, so all K proposals are evaluated
    in one vectorized pass.
    """
    K = state.n_atoms
    if log_steps is None:
        log_steps = np.zeros(K)
    q = temper * state.counts.sum(axis=0)
    lam_scores = state.loadings @ state.scores  # (g, K)
    b = temper * (state.aux @ lam_scores)

    x = np.log(state.jumps) - np.log1p(-state.jumps)
    x_new = x + np.exp(log_steps) * rng.standard_normal(K)
    log_ratio = _jump_log_kernel(x_new, q, b, phi, K) - _jump_log_kernel(x, q, b, phi, K)
    accept = np.log(rng.uniform(size=K)) < log_ratio
    x = np.where(accept, x_new, x)
    # expit via the stable log form used in the kernel
    state.jumps = np.exp(-np.logaddexp(0.0, -x))
    return np.exp(np.minimum(log_ratio, 0.0))


def _score_target(loadings, jumps, counts, aux, phi, temper):
    """Log density and gradient of log-scores given everything else."""
    lam_t_u = temper * (loadings.T @ aux)  # (H,)

    def logp_and_grad(x: np.ndarray):
        # Overflow along an exploding trajectory is routine; the integrator
        # rejects non-finite states, so numpy warnings are suppressed.
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            m = np.exp(x)
            W = loadings @ m  # (g, K)
            ll = temper * (
                float(np.sum(counts * np.log(W))) - float(lam_t_u @ (m @ jumps))
            )
            prior = float(np.sum(phi * x - m))
            grad = (
                temper * (loadings.T @ (counts / W)) - np.outer(lam_t_u, jumps)
            ) * m + (phi - m)
        return ll + prior, grad

    return logp_and_grad


def update_scores_hmc(
    state: GibbsState,
    phi: float,
    rng: np.random.Generator,
    step: float = 0.1,
    n_leapfrog: int = 10,
    temper: float = 1.0,
) -> tuple[bool, float]:
    """One HMC trajectory on the log score matrix; returns (accepted, accept prob)."""
    target = _score_target(state.loadings, state.jumps, state.counts, state.aux, phi, temper)
    x0 = np.log(state.scores)
    x1, accepted, prob = hmc_step(x0, target, step, n_leapfrog, rng)
    if accepted:
        state.scores = np.exp(x1)
    return accepted, prob


def _loadings_target(scores, jumps, counts, aux, prior, mgp: MgpHyper | None, temper):
    """Log density and gradient of log-loadings given everything else."""
    mj = scores @ jumps  # (H,)

    if mgp is not None:
        half_nu = mgp.nu / 2.0
        scale_h = half_nu / mgp.tau  # (H,) inverse-gamma scale per column

        def prior_and_grad(z, lam):
            # Inverse-gamma on loadings given column precisions, log-scale
            # Jacobian folded in: const - (nu/2) z - scale_h e^{-z}.
            val = float(np.sum(-half_nu * z - scale_h / lam))
            grad = -half_nu + scale_h / lam
            return val, grad

    else:  # CAR field per column, defined directly on the log scale

        def prior_and_grad(z, lam):
            val = 0.0
            grad = np.empty_like(z)
            for h in range(z.shape[1]):
                v, gcol = prior.log_density(z[:, h])
                val += v
                grad[:, h] = gcol
            return val, grad

    def logp_and_grad(z: np.ndarray):
        # As with the scores: exploding trajectories go non-finite and get
        # rejected, so the intermediate overflow warnings carry no signal.
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            lam = np.exp(z)
            W = lam @ scores  # (g, K)
            ll = temper * (
                float(np.sum(counts * np.log(W))) - float(aux @ (lam @ mj))
            )
            pv, pg = prior_and_grad(z, lam)
            grad_lam = temper * ((counts / W) @ scores.T - np.outer(aux, mj))
        return ll + pv, lam * grad_lam + pg

    return logp_and_grad


def update_loadings_hmc(
    state: GibbsState,
    prior: CarPrior | None,
    rng: np.random.Generator,
    step: float = 0.1,
    n_leapfrog: int = 10,
    temper: float = 1.0,
) -> tuple[bool, float]:
    """One HMC trajectory on the log loadings matrix; returns (accepted, accept prob).

    Pass a ``CarPrior`` for the spatial prior, or None to use the shrinkage
    cascade carried in ``state.mgp``.  Under the cascade, the depth factors
    are refreshed from their full conditionals afterwards.
    """
    if prior is None and state.mgp is None:
        raise ValueError("no loadings prior: provide a CarPrior or set state.mgp")
    target = _loadings_target(
        state.scores, state.jumps, state.counts, state.aux, prior, state.mgp, temper
    )
    z0 = np.log(state.loadings)
    z1, accepted, prob = hmc_step(z0, target, step, n_leapfrog, rng)
    if accepted:
        state.loadings = np.exp(z1)
    if state.mgp is not None:
        state.mgp = update_depth_factors(state.loadings, state.mgp, rng)
    return accepted, prob


def update_clusters(
    state: GibbsState, data: GroupedData, rng: np.random.Generator, temper: float = 1.0
) -> None:
    """Exact categorical refresh of every cluster indicator.

    Probabilities ∝ kernel(y | atom_k) * group_weight_k, evaluated in log
    space; sampling uses the Gumbel-argmax form of the categorical.
    """
    w = state.group_atom_weights()
    if np.any(w <= 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("group atom weights must be finite and positive")
    log_w = np.log(w)[data.group_index]  # (N, K)
    y = data.flat[:, None]
    lp = log_w
    if temper != 0.0:
        loglik = -0.5 * (
            _LOG_2PI
            + np.log(state.atom_vars)
            + (y - state.atom_means) ** 2 / state.atom_vars
        )
        lp = lp + temper * loglik
    row_max = lp.max(axis=1)
    bad = ~np.isfinite(row_max)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"cluster probabilities vanished for observation {i} "
            f"(group {int(data.group_index[i])}, y={data.flat[i]!r})"
        )
    gumbel = -np.log(rng.standard_exponential(lp.shape))
    state.clusters = np.argmax(lp + gumbel, axis=1)
    _recount(state, data)


def update_aux(state: GibbsState, data: GroupedData, rng: np.random.Generator) -> None:
    """Gamma refresh of the per-group auxiliary variables: shape n_j, rate T_j."""
    totals = state.totals()
    if np.any(totals <= 0.0) or not np.all(np.isfinite(totals)):
        j = int(np.flatnonzero((totals <= 0.0) | ~np.isfinite(totals))[0])
        raise ValueError(f"state corruption: total mass of group {j} is {totals[j]!r}")
    state.aux = rng.gamma(shape=data.group_sizes, scale=1.0 / totals)


def adapt_truncation(
    state: GibbsState, settings: MgpSettings, phi: float, rng: np.random.Generator
) -> None:
    """Resize the latent dimension by the normalized-column-mass rule.

    A column is empty when its normalized mass sum_j lambda_jh / sum_k
    lambda_jk falls below eps times the average normalized column mass.
    Empty columns are dropped (with the matching score rows); when none are
    empty one fresh prior-drawn column/row pair is appended.  Surviving
    columns keep their precision values; depth factors are re-derived from
    the surviving cumulative products.
    """
    lam = state.loadings
    H = lam.shape[1]
    norm_mass = (lam / lam.sum(axis=1, keepdims=True)).sum(axis=0)
    mass_bar = norm_mass.mean()
    empty = norm_mass < settings.adapt_eps * mass_bar
    mgp = state.mgp
    assert mgp is not None, "truncation adaptation requires the shrinkage prior"

    if np.any(empty):
        keep = ~empty
        if not np.any(keep):
            keep[np.argmax(norm_mass)] = True
            logger.warning("all columns flagged empty; keeping the heaviest one")
        tau_keep = mgp.tau[keep]
        theta_new = np.empty(tau_keep.size)
        theta_new[0] = tau_keep[0]
        theta_new[1:] = tau_keep[1:] / tau_keep[:-1]
        state.loadings = lam[:, keep]
        state.scores = state.scores[keep, :]
        state.mgp = MgpHyper(
            a1=mgp.a1, a2=mgp.a2, nu=mgp.nu, theta=theta_new,
            local=1.0 / (state.loadings * np.cumprod(theta_new)),
        )
    else:
        theta_app = rng.gamma(mgp.a2 if H > 0 else mgp.a1, 1.0)
        theta_new = np.append(mgp.theta, theta_app)
        tau_new = mgp.tau[-1] * theta_app
        local_col = rng.gamma(mgp.nu / 2.0, 2.0 / mgp.nu, size=lam.shape[0])
        new_col = 1.0 / (local_col * tau_new)
        state.loadings = np.column_stack([lam, new_col])
        new_row = rng.gamma(phi, 1.0, size=state.n_atoms)
        state.scores = np.vstack([state.scores, new_row])
        state.mgp = MgpHyper(
            a1=mgp.a1, a2=mgp.a2, nu=mgp.nu, theta=theta_new,
            local=1.0 / (state.loadings * np.cumprod(theta_new)),
        )


# ---------------------------------------------------------------------------
# Joint density


def log_joint(
    state: GibbsState,
    data: GroupedData,
    base: NigBase,
    phi: float,
    car: CarPrior | None = None,
    temper: float = 1.0,
) -> float:
    """Log joint density of data, indicators, auxiliaries and all parameters.

    The loadings prior contribution comes from ``state.mgp`` when present,
    otherwise from ``car``.  The augmented-data block (likelihood, indicator
    weights, auxiliary terms) is scaled by ``temper``; priors are not.
    Evaluated in the natural (positive) parameterization throughout.
    """
    total = 0.0
    if temper != 0.0:
        w = state.group_atom_weights()
        totals = state.totals()
        mu_c = state.atom_means[state.clusters]
        var_c = state.atom_vars[state.clusters]
        loglik = float(
            np.sum(-0.5 * (_LOG_2PI + np.log(var_c) + (data.flat - mu_c) ** 2 / var_c))
        )
        alloc = float(np.sum(state.counts * np.log(w)))
        n_j = data.group_sizes
        aux_terms = float(
            np.sum((n_j - 1.0) * np.log(state.aux) - state.aux * totals - gammaln(n_j))
        )
        total += temper * (loglik + alloc + aux_terms)

    # Atom prior: sigma2 ~ InvGamma(a, b), mu | sigma2 ~ N(mu0, sigma2/lambda0).
    v = state.atom_vars
    total += float(
        np.sum(
            base.a * math.log(base.b)
            - gammaln(base.a)
            - (base.a + 1.0) * np.log(v)
            - base.b / v
        )
    )
    total += float(
        np.sum(
            -0.5 * (_LOG_2PI + np.log(v / base.lambda0))
            - 0.5 * base.lambda0 * (state.atom_means - base.mu0) ** 2 / v
        )
    )
    total += log_jump_prior(state.jumps, phi)
    total += log_score_prior(state.scores, phi)

    lam = state.loadings
    if state.mgp is not None:
        mgp = state.mgp
        half_nu = mgp.nu / 2.0
        scale_h = half_nu / mgp.tau
        total += float(
            np.sum(
                half_nu * np.log(scale_h)
                - gammaln(half_nu)
                - (half_nu + 1.0) * np.log(lam)
                - scale_h / lam
            )
        )
        th = mgp.theta
        total += float(
            (mgp.a1 - 1.0) * math.log(th[0]) - th[0] - gammaln(mgp.a1)
            + np.sum((mgp.a2 - 1.0) * np.log(th[1:]) - th[1:])
            - (th.size - 1) * gammaln(mgp.a2)
        )
    elif car is not None:
        z = np.log(lam)
        for h in range(lam.shape[1]):
            total += car.log_density(z[:, h])[0]
        total -= float(np.sum(z))  # Jacobian: density stated in the natural scale
    else:
        raise ValueError("no loadings prior available for the joint density")
    return total


# ---------------------------------------------------------------------------
# Chain record and driver


@dataclass
class ChainRecord:
    """Thinned post-burn-in draws plus diagnostics."""

    atom_means: np.ndarray  # (D, K)
    atom_vars: np.ndarray  # (D, K)
    jumps: np.ndarray  # (D, K)
    scores: np.ndarray  # (D, H, K)
    loadings: np.ndarray  # (D, g, H)
    log_joint: np.ndarray  # (D,)
    stats: dict

    @property
    def n_draws(self) -> int:
        return self.log_joint.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atom_means.shape[1]

    @property
    def n_factors(self) -> int:
        return self.scores.shape[1]

    @property
    def n_groups(self) -> int:
        return self.loadings.shape[1]

    def corm_at(self, d: int) -> TruncatedCoRM:
        atoms = tuple(
            Atom(float(m), float(v))
            for m, v in zip(self.atom_means[d], self.atom_vars[d])
        )
        return TruncatedCoRM(atoms=atoms, jumps=self.jumps[d], scores=self.scores[d])


def _init_state(
    data: GroupedData, settings: ChainSettings, base: NigBase, car: CarPrior | None,
    rng: np.random.Generator,
) -> GibbsState:
    K = settings.n_atoms
    g = data.n_groups
    sigma2 = base.b / rng.standard_gamma(base.a, size=K)
    mu = base.mu0 + np.sqrt(sigma2 / base.lambda0) * rng.standard_normal(K)
    jumps = sample_jumps(settings.phi, K, rng)
    mgp = None
    if isinstance(settings.prior, MgpSettings):
        p = settings.prior
        H = p.h_init
        mgp = draw_mgp_hyper(p.a1, p.a2, p.nu, g, H, rng)
        loadings = loadings_from_hyper(mgp)
    else:
        H = settings.prior.n_factors
        assert car is not None
        loadings = np.exp(np.column_stack([car.sample(rng) for _ in range(H)]))
    scores = sample_scores(settings.phi, H, K, rng)
    state = GibbsState(
        atom_means=mu,
        atom_vars=sigma2,
        jumps=jumps,
        scores=scores,
        loadings=loadings,
        clusters=np.zeros(data.n_obs, dtype=np.int64),
        aux=np.ones(g),
        counts=np.zeros((g, K)),
        mgp=mgp,
    )
    update_clusters(state, data, rng, temper=settings.temper)
    update_aux(state, data, rng)
    return state


def run_chain(
    data: GroupedData, settings: ChainSettings, rng: np.random.Generator
) -> ChainRecord:
    """Run one chain and record thinned post-burn-in draws.

    Bit-reproducible for a fixed seed: the update order and every RNG
    consumption point are deterministic.
    """
    base = settings.resolve_base(data)
    car = settings.prior.build_prior() if isinstance(settings.prior, CarSettings) else None
    state = _init_state(data, settings, base, car, rng)

    jump_steps = np.zeros(state.n_atoms)  # log step sizes, one per jump
    da_scores = DualAveraging(step0=settings.hmc_step0, target=settings.hmc_target)
    da_loadings = DualAveraging(step0=settings.hmc_step0, target=settings.hmc_target)
    discard = settings.discard

    kept: dict[str, list] = {k: [] for k in ("am", "av", "j", "m", "lam", "lj")}
    jump_probs_sum = 0.0
    jump_probs_n = 0
    hmc_probs = {"scores": [], "loadings": []}
    kept_h: int | None = None

    for it in range(1, settings.iterations + 1):
        state.iteration = it
        adapting = it <= discard
        try:
            update_atoms(state, data, base, rng, temper=settings.temper)

            probs = update_jumps(
                state, settings.phi, rng, log_steps=jump_steps, temper=settings.temper
            )
            if adapting:
                rate = it ** (-0.6)
                jump_steps += rate * (probs - settings.jump_target)
                np.clip(jump_steps, -8.0, 4.0, out=jump_steps)
            else:
                jump_probs_sum += float(probs.mean())
                jump_probs_n += 1

            _, prob = update_scores_hmc(
                state, settings.phi, rng,
                step=da_scores.step, n_leapfrog=settings.n_leapfrog,
                temper=settings.temper,
            )
            da_scores.update(prob)
            hmc_probs["scores"].append(prob)

            _, prob = update_loadings_hmc(
                state, car, rng,
                step=da_loadings.step, n_leapfrog=settings.n_leapfrog,
                temper=settings.temper,
            )
            da_loadings.update(prob)
            hmc_probs["loadings"].append(prob)

            update_clusters(state, data, rng, temper=settings.temper)
            update_aux(state, data, rng)

            if (
                settings.adaptive
                and it <= settings.prior.adapt_window
                and it % settings.prior.adapt_every == 0
            ):
                adapt_truncation(state, settings.prior, settings.phi, rng)
        except Exception as err:
            raise RuntimeError(
                f"chain aborted at iteration {it}: {err} "
                f"(g={state.n_groups}, H={state.n_factors}, K={state.n_atoms})"
            ) from err

        if it == discard:
            da_scores.freeze()
            da_loadings.freeze()

        if it > discard and (it - discard) % settings.thin == 0:
            if kept_h is None:
                kept_h = state.n_factors
            elif kept_h != state.n_factors:
                raise RuntimeError("latent dimension changed after the adaptation window")
            kept["am"].append(state.atom_means.copy())
            kept["av"].append(state.atom_vars.copy())
            kept["j"].append(state.jumps.copy())
            kept["m"].append(state.scores.copy())
            kept["lam"].append(state.loadings.copy())
            kept["lj"].append(
                log_joint(state, data, base, settings.phi, car=car, temper=settings.temper)
            )

    D = len(kept["lj"])
    H = kept_h if kept_h is not None else state.n_factors
    K = settings.n_atoms
    g = data.n_groups

    def stack(key, shape):
        return np.stack(kept[key]) if D else np.empty((0, *shape))

    stats = {
        "final_n_factors": state.n_factors,
        "hmc_step_scores": da_scores.step,
        "hmc_step_loadings": da_loadings.step,
        "accept_scores": float(np.mean(hmc_probs["scores"][discard:]) if settings.iterations > discard else np.nan),
        "accept_loadings": float(np.mean(hmc_probs["loadings"][discard:]) if settings.iterations > discard else np.nan),
        "accept_jumps": jump_probs_sum / jump_probs_n if jump_probs_n else float("nan"),
    }
    return ChainRecord(
        atom_means=stack("am", (K,)),
        atom_vars=stack("av", (K,)),
        jumps=stack("j", (K,)),
        scores=stack("m", (H, K)),
        loadings=stack("lam", (g, H)),
        log_joint=np.array(kept["lj"]),
        stats=stats,
    )
