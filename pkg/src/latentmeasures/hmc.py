"""A small Hamiltonian Monte Carlo kernel with dual-averaging step-size tuning.

Shared by the score-matrix and loadings-matrix block updates: both work on
log-scale parameter arrays with an identity mass matrix and a fixed leapfrog
trajectory length.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["DualAveraging", "hmc_step"]

logger = logging.getLogger(__name__)


@dataclass
class DualAveraging:
    """Step-size adaptation driven toward a target acceptance probability.

    The running ``log_step`` responds to each reported acceptance; the
    kappa-weighted average ``log_step_bar`` is what ``freeze`` locks in for
    the post-adaptation phase.
    """

    step0: float = 0.1
    target: float = 0.75
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    frozen: bool = False
    _mu: float = field(init=False)
    _log_step: float = field(init=False)
    _log_step_bar: float = field(init=False)
    _h_bar: float = field(init=False, default=0.0)
    _t: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        if self.step0 <= 0.0:
            raise ValueError("initial step size must be > 0")
        if not 0.0 < self.target < 1.0:
            raise ValueError("target acceptance must lie in (0, 1)")
        self._mu = math.log(10.0 * self.step0)
        self._log_step = math.log(self.step0)
        self._log_step_bar = math.log(self.step0)

    @property
    def step(self) -> float:
        return math.exp(self._log_step_bar if self.frozen else self._log_step)

    def update(self, accept_prob: float) -> None:
        """Feed one acceptance probability; no-op once frozen."""
        if self.frozen:
            return
        self._t += 1
        t = self._t
        self._h_bar += (self.target - accept_prob - self._h_bar) / (t + self.t0)
        self._log_step = self._mu - math.sqrt(t) / self.gamma * self._h_bar
        w = t ** (-self.kappa)
        self._log_step_bar = w * self._log_step + (1.0 - w) * self._log_step_bar

    def freeze(self) -> None:
        self.frozen = True


def hmc_step(
    position: np.ndarray,
    logp_and_grad,
    step: float,
    n_leapfrog: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, bool, float]:
    """One HMC transition with identity mass and fixed trajectory length.

    Parameters
    ----------
    position : ndarray
        Current state (any shape); not modified.
    logp_and_grad : callable
        Maps a position array to ``(log density, gradient array)``.
    step, n_leapfrog : leapfrog step size and number of steps.
    rng : numpy Generator.

    Returns
    -------
    (new_position, accepted, accept_prob)
        ``new_position`` is the input array itself when rejected.  A
        non-finite energy or gradient anywhere along the trajectory rejects
        the move with ``accept_prob = 0``.
    """
    logp0, grad = logp_and_grad(position)
    if not (np.isfinite(logp0) and np.all(np.isfinite(grad))):
        logger.warning("HMC: non-finite log density or gradient at the current state")
        return position, False, 0.0

    momentum = rng.standard_normal(position.shape)
    energy0 = -logp0 + 0.5 * float(np.sum(momentum**2))

    q = position.copy()
    p = momentum + 0.5 * step * grad
    for i in range(n_leapfrog):
        q = q + step * p
        logp, grad = logp_and_grad(q)
        if not (np.isfinite(logp) and np.all(np.isfinite(grad))):
            # Routine while the step size is still adapting.
            logger.debug("HMC: trajectory left the finite region; move rejected")
            return position, False, 0.0
        # Full momentum step except after the final position update.
        p = p + (step if i < n_leapfrog - 1 else 0.5 * step) * grad

    energy1 = -logp + 0.5 * float(np.sum(p**2))
    log_accept = energy0 - energy1
    accept_prob = 1.0 if log_accept >= 0.0 else math.exp(log_accept)
    if math.log(rng.uniform()) < log_accept:
        return q, True, accept_prob
    return position, False, accept_prob
