"""Determinant-one post-processing: separating latent measures by minimizing overlap.

The latent measures a chain recovers are identified only up to an invertible
mixing.  This module searches the special linear group SL(H) for a transform
Q that minimizes the summed squared L2 inner products between the transformed
latent mixed densities, subject to elementwise positivity of the transformed
loadings and scores.  The search runs a dissipative momentum scheme whose
retraction is the matrix exponential on the traceless Lie algebra, wrapped in
an augmented Lagrangian outer loop for the inequality constraints.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .measures import TruncatedCoRM, atom_inner_matrix

__all__ = [
    "SlPoint",
    "RattleConfig",
    "AlmState",
    "TransformResult",
    "project_sl",
    "sl_expm",
    "interp_loss",
    "augmented_loss",
    "rattle_minimize",
    "alm_solve",
    "transform_chain",
]

logger = logging.getLogger(__name__)

DET_TOL = 1e-6


def _as_matrix(q) -> np.ndarray:
    m = q.matrix if isinstance(q, SlPoint) else np.asarray(q, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    return m


@dataclass(frozen=True)
class SlPoint:
    """A point on SL(H): square matrix with determinant 1 (tolerance 1e-6)."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("SL point must be a square matrix")
        if not np.all(np.isfinite(m)):
            raise ValueError("SL point must be finite")
        with np.errstate(over="ignore", invalid="ignore"):
            det = float(np.linalg.det(m))
        if abs(det - 1.0) > DET_TOL:
            raise ValueError(f"determinant {det!r} is not 1 within {DET_TOL}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class RattleConfig:
    """Inner-loop parameters: step size, momentum decay, iteration cap."""

    stepsize: float = 1e-6
    tau: float = 0.9
    max_iters: int = 5000

    def __post_init__(self) -> None:
        if self.stepsize <= 0.0:
            raise ValueError("stepsize must be > 0")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("momentum tau must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class AlmState:
    """Penalty weight, multipliers and thresholds of the outer loop.

    Multipliers cover the loadings constraints (g, H) then the score
    constraints (H, K); ``gamma`` exposes them as one flat vector of length
    g*H + H*K.
    """

    rho: float
    gamma_load: np.ndarray
    gamma_score: np.ndarray
    eps: float
    eps_star: float

    def __post_init__(self) -> None:
        self.gamma_load = np.asarray(self.gamma_load, dtype=float)
        self.gamma_score = np.asarray(self.gamma_score, dtype=float)
        if self.rho <= 0.0:
            raise ValueError("penalty rho must be > 0")
        if np.any(self.gamma_load < 0.0) or np.any(self.gamma_score < 0.0):
            raise ValueError("multipliers must be nonnegative")
        if not (self.eps >= self.eps_star > 0.0):
            raise ValueError("thresholds must satisfy eps >= eps_star > 0")

    @classmethod
    def initial(
        cls, n_groups: int, n_factors: int, n_atoms: int,
        rho: float = 10.0, gamma0: float = 10.0, eps: float = 1e-2, eps_star: float = 1e-6,
    ) -> "AlmState":
        return cls(
            rho=rho,
            gamma_load=np.full((n_groups, n_factors), gamma0),
            gamma_score=np.full((n_factors, n_atoms), gamma0),
            eps=eps,
            eps_star=eps_star,
        )

    @property
    def gamma(self) -> np.ndarray:
        return np.concatenate([self.gamma_load.ravel(), self.gamma_score.ravel()])


@dataclass(frozen=True)
class TransformResult:
    """Outcome of one draw's constrained separation solve."""

    matrix: np.ndarray  # the chosen Q
    loss: float
    loss_identity: float
    max_violation: float
    success: bool
    converged: bool
    outer_iters: int
    inner_iters: int
    max_det_err: float
    settings: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Lie-algebra projection and exponential


def project_sl(x: np.ndarray, orthogonal: bool = False) -> np.ndarray:
    """Map a square matrix into the traceless algebra.

    Default form: transpose of the off-diagonal part plus the generator sum
    over the H-1 adjacent diagonal generators E_l = diag(..., +1_l, -1_{l+1},
    ...), whose l-th term has weight tr(X E_l) = X_ll - X_{l+1,l+1}.  With
    ``orthogonal=True`` the orthogonal trace removal X - (tr X / H) I is used
    instead.  Either way the output trace is exactly zero: the last diagonal
    entry is set to the negated compensated sum of the others.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError("projection input must be square")
    if not np.all(np.isfinite(x)):
        raise ValueError("projection input must be finite")
    h = x.shape[0]
    if orthogonal:
        out = x - (np.trace(x) / h) * np.eye(h)
        diag = np.diag(out).copy()
    else:
        out = x.T.copy()
        np.fill_diagonal(out, 0.0)
        d = np.diag(x)
        t = d[:-1] - d[1:]
        diag = np.zeros(h)
        diag[:-1] += t
        diag[1:] -= t
    if h > 1:
        diag[-1] = -math.fsum(diag[:-1])
    else:
        diag[-1] = 0.0
    np.fill_diagonal(out, diag)
    return out


# Taylor truncation orders and the largest norm each keeps at machine
# precision (theta^(n+1)/(n+1)! <= 1e-16, valid for any submultiplicative
# norm); above the last one the argument is halved until it fits.
_TAYLOR_ORDERS = ((8.4e-6, 2), (2.2e-4, 3), (6.4e-3, 5), (3.8e-2, 7), (0.11, 9), (0.43, 13))
_EYE_CACHE: dict[int, np.ndarray] = {}


def _eye(h: int) -> np.ndarray:
    m = _EYE_CACHE.get(h)
    if m is None:
        m = np.eye(h)
        m.flags.writeable = False
        _EYE_CACHE[h] = m
    return m


def _expm_traceless(a: np.ndarray) -> np.ndarray:
    """exp(a) for a traceless matrix, by scaling-and-squaring Taylor.

    The momentum steps the descent takes are tiny, so a short Horner series
    beats the general-purpose routine; ``sl_expm`` keeps the library
    implementation as the reference route.  Raises OverflowError for
    non-finite input or output, ValueError when a squared result cannot be
    verified to sit on the unit-determinant manifold.
    """
    norm = math.sqrt(float(np.vdot(a, a)))  # Frobenius, submultiplicative
    if not math.isfinite(norm):
        raise OverflowError("matrix exponential input is not finite")
    eye = _eye(a.shape[0])
    if norm <= 2.2e-4:
        # Hot path: quadratic/cubic truncation already at machine precision.
        aa = a @ a
        if norm <= 8.4e-6:
            return eye + a + 0.5 * aa
        return eye + a + 0.5 * aa + (aa @ a) / 6.0
    squarings = 0
    order = _TAYLOR_ORDERS[-1][1]
    if norm > _TAYLOR_ORDERS[-1][0]:
        squarings = int(math.ceil(math.log2(norm / _TAYLOR_ORDERS[-1][0])))
        a = a * (0.5**squarings)
    else:
        for theta, n in _TAYLOR_ORDERS:
            if norm <= theta:
                order = n
                break
    m = eye + a / order
    for k in range(order - 1, 0, -1):
        m = eye + (a / k) @ m
    if squarings:
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(squarings):
                m = m @ m
            if not np.all(np.isfinite(m)):
                raise OverflowError("matrix exponential overflowed")
            det = float(np.linalg.det(m))
        if not abs(det - 1.0) <= DET_TOL:
            raise ValueError("matrix exponential left the unit-determinant manifold")
    return m


def _project_grad(grad: np.ndarray, orthogonal: bool) -> np.ndarray:
    """project_sl(grad.T) without input validation, for the descent loop.

    The loop checks gradient finiteness itself, and transposing twice
    cancels: the off-diagonal part of the projected transpose is just the
    gradient's own off-diagonal part.
    """
    h = grad.shape[0]
    if orthogonal:
        out = grad.T - (np.trace(grad) / h) * _eye(h)
        diag = np.diag(out).copy()
    else:
        out = grad.copy()
        d = np.diag(grad)
        t = d[:-1] - d[1:]
        diag = np.zeros(h)
        diag[:-1] += t
        diag[1:] -= t
    if h > 1:
        diag[-1] = -math.fsum(diag[:-1])
    else:
        diag[-1] = 0.0
    np.fill_diagonal(out, diag)
    return out


def sl_expm(a: np.ndarray) -> SlPoint:
    """Matrix exponential of a (traceless) algebra element, landing on SL(H)."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix exponential input must be finite")
    with np.errstate(over="ignore", invalid="ignore"):
        m = linalg.expm(a)
    if not np.all(np.isfinite(m)):
        raise OverflowError("matrix exponential overflowed")
    return SlPoint(m)


# ---------------------------------------------------------------------------
# Objectives


def _loss_core(qm, scores, scores_t, jumps, a_inner):
    """Shared separation loss/gradient kernel; also hands back Q @ scores."""
    qs = qm @ scores
    b = qs * jumps
    ba = b @ a_inner
    gram = ba @ b.T
    gram = 0.5 * (gram + gram.T)
    off = gram.copy()
    np.fill_diagonal(off, 0.0)
    loss = 0.5 * float(np.sum(off * gram))
    grad = ((2.0 * off) @ ba * jumps) @ scores_t
    return loss, grad, qs


def _interp_objective(corm: TruncatedCoRM, a_inner: np.ndarray):
    """Bind the separation loss to one draw for repeated evaluation."""
    scores = corm.scores
    scores_t = scores.T
    jumps = corm.jumps

    def objective(qm: np.ndarray) -> tuple[float, np.ndarray]:
        loss, grad, _ = _loss_core(qm, scores, scores_t, jumps, a_inner)
        return loss, grad

    return objective


def _augmented_objective(
    corm: TruncatedCoRM,
    loadings: np.ndarray,
    alm: AlmState,
    penalty: str,
    a_inner: np.ndarray,
):
    """Bind the penalized loss to one draw and one multiplier state.

    Everything that is constant between evaluations (transposes, the
    gamma/rho shifts) is hoisted out of the closure body; the inner loop
    calls this thousands of times per outer round.
    """
    scores = corm.scores
    scores_t = scores.T
    jumps = corm.jumps
    rho = alm.rho
    gamma_load = alm.gamma_load
    gamma_score = alm.gamma_score
    shift_load = gamma_load / rho
    shift_score = gamma_score / rho
    squared = penalty == "squared_hinge"
    if not squared and penalty != "linear":
        raise ValueError(f"unknown penalty form {penalty!r}")

    def objective(qm: np.ndarray) -> tuple[float, np.ndarray]:
        loss, grad, qs = _loss_core(qm, scores, scores_t, jumps, a_inner)
        q_inv = np.linalg.inv(qm)
        if not np.all(np.isfinite(q_inv)):
            raise ValueError("singular transform in augmented loss")
        lam_qinv = loadings @ q_inv
        # Constraints (feasible when <= 0): c_load = -lam_qinv, c_score = -qs.
        if squared:
            m_load = np.maximum(0.0, shift_load - lam_qinv)
            m_score = np.maximum(0.0, shift_score - qs)
            pen = 0.5 * rho * (float(np.sum(m_load * m_load)) + float(np.sum(m_score * m_score)))
            v_load = rho * m_load
            v_score = rho * m_score
        else:
            act_load = gamma_load * -lam_qinv
            act_score = gamma_score * -qs
            pen = 0.5 * (
                float(np.sum(np.maximum(0.0, act_load)))
                + float(np.sum(np.maximum(0.0, act_score)))
            )
            v_load = 0.5 * gamma_load * (act_load > 0.0)
            v_score = 0.5 * gamma_score * (act_score > 0.0)
        # d/dQ sum v*c  with d(Q^{-1}) = -Q^{-1} dQ Q^{-1}.
        pen_grad = lam_qinv.T @ v_load @ q_inv.T - v_score @ scores_t
        return loss + pen, grad + pen_grad

    return objective


def interp_loss(q, corm: TruncatedCoRM, _atom_inner: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Separation objective and its Euclidean gradient in Q.

    With B = (Q @ scores) * jumps and A the atom inner-product matrix, the
    loss is the sum of squared off-diagonal entries of G = B A B^T over
    unordered pairs; the gradient is 2 S B A diag(J) M^T with S the
    zero-diagonal copy of G.  ``_atom_inner`` lets repeated solves reuse the
    precomputed A.
    """
    qm = _as_matrix(q)
    a = atom_inner_matrix(corm.atoms) if _atom_inner is None else _atom_inner
    return _interp_objective(corm, a)(qm)


def _constraints(qm: np.ndarray, corm: TruncatedCoRM, loadings: np.ndarray):
    """Inequality constraints (feasible when <= 0) and reusable factors."""
    q_inv = np.linalg.inv(qm)
    lam_qinv = loadings @ q_inv
    q_scores = qm @ corm.scores
    return -lam_qinv, -q_scores, q_inv, lam_qinv


def augmented_loss(
    q,
    corm: TruncatedCoRM,
    loadings: np.ndarray,
    alm: AlmState,
    penalty: str = "squared_hinge",
    _atom_inner: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Separation objective plus the multiplier penalty, with gradient.

    ``penalty="squared_hinge"`` uses (rho/2) * sum max{0, gamma/rho + c}^2;
    ``penalty="linear"`` keeps the raw hinge (rho/2) * sum max{0,
    (gamma/rho) * c} for comparison.  Constraint differentials account for
    d(Q^{-1}) = -Q^{-1} dQ Q^{-1}.
    """
    qm = _as_matrix(q)
    lam = np.asarray(loadings, dtype=float)
    a = atom_inner_matrix(corm.atoms) if _atom_inner is None else _atom_inner
    return _augmented_objective(corm, lam, alm, penalty, a)(qm)


# ---------------------------------------------------------------------------
# Inner minimizer


def rattle_minimize(
    objective,
    q0,
    cfg: RattleConfig,
    eps: float,
    orthogonal_projection: bool = False,
) -> tuple[np.ndarray, dict]:
    """Momentum descent on SL(H) with exponential retraction.

    Per iteration: half-kick the algebra momentum with the projected
    transposed gradient at Q, retract Q along exp(chi * P) with
    chi = cosh(log tau), then half-kick again with the gradient at the new
    point.  Stops when the Frobenius displacement drops to ``eps``.  On hitting
    the iteration cap, the best-objective iterate is returned with
    ``converged=False``.
    """
    q = _as_matrix(q0).copy()
    h = q.shape[0]
    chi = math.cosh(math.log(cfg.tau))
    p = np.zeros((h, h))
    s = cfg.stepsize
    tau = cfg.tau

    val, grad = objective(q)
    best_val, best_q = val, q
    max_det_err = abs(float(np.linalg.det(q)) - 1.0)
    converged = False
    iters = 0

    for iters in range(1, cfg.max_iters + 1):
        p = tau * (p - s * _project_grad(grad, orthogonal_projection))
        try:
            # Retraction can overflow (or numerically lose rank) when a
            # degenerate draw produces an enormous gradient; keep the best
            # iterate instead of crashing the whole chain.
            q_new = q @ _expm_traceless(chi * p)
            val, grad_new = objective(q_new)
        except (ValueError, OverflowError) as exc:
            logger.debug("manifold step failed (%s); stopping early", exc)
            break
        p = tau * (p - s * _project_grad(grad_new, orthogonal_projection))

        if not (math.isfinite(val) and np.all(np.isfinite(grad_new))):
            logger.warning("non-finite objective during manifold descent; stopping early")
            break
        max_det_err = max(max_det_err, abs(float(np.linalg.det(q_new)) - 1.0))
        if val < best_val:
            best_val, best_q = val, q_new
        displacement = float(np.linalg.norm(q_new - q))
        q = q_new
        grad = grad_new
        if displacement <= eps:
            converged = True
            break

    # The returned objective value is already known: the last evaluation when
    # the loop converged, otherwise the best seen.
    out, out_val = (q, val) if converged else (best_q, best_val)
    return out, {
        "converged": converged,
        "iterations": iters,
        "value": float(out_val),
        "max_det_err": max_det_err,
    }


# ---------------------------------------------------------------------------
# Outer loop


def _max_violation(c_load: np.ndarray, c_score: np.ndarray) -> float:
    return max(0.0, float(c_load.max(initial=-np.inf)), float(c_score.max(initial=-np.inf)))


def alm_solve(
    corm: TruncatedCoRM,
    loadings: np.ndarray,
    cfg: RattleConfig | None = None,
    alm0: AlmState | None = None,
    *,
    penalty: str = "squared_hinge",
    orthogonal_projection: bool = False,
    rho_factor: float = 1.0 / 0.9,
    outer_cap: int = 200,
    q0: np.ndarray | None = None,
) -> TransformResult:
    """Constrained separation solve for one draw.

    Alternates the manifold descent on the augmented objective with
    multiplier updates gamma <- max(0, gamma + rho * c), scaling the penalty
    weight by ``rho_factor`` and shrinking the inner threshold by 0.9 toward
    its target each round.  The default grows the penalty weight, which lets
    multipliers of comfortably satisfied constraints decay to zero; a factor
    below 1 decays the weight instead, and then small-margin constraints
    keep a diverging gamma/rho ratio that drags the transform off the data
    (kept available for comparison).  Success requires a converged outer
    loop, constraint violation at most 1e-6, and a final loss no worse than
    at the identity.
    """
    cfg = cfg or RattleConfig()
    if penalty not in ("squared_hinge", "linear"):
        raise ValueError(f"unknown penalty form {penalty!r}")
    lam = np.asarray(loadings, dtype=float)
    g, h = lam.shape
    k = corm.n_atoms
    if corm.n_factors != h:
        raise ValueError("loadings and latent measures disagree on the factor count")
    # Work on a copy: the outer loop mutates multipliers and thresholds, and
    # callers reuse one initial state across many draws.
    if alm0 is None:
        alm = AlmState.initial(g, h, k)
    else:
        alm = AlmState(
            rho=alm0.rho,
            gamma_load=alm0.gamma_load.copy(),
            gamma_score=alm0.gamma_score.copy(),
            eps=alm0.eps,
            eps_star=alm0.eps_star,
        )

    inner_total = 0
    max_det_err = 0.0
    a_inner = atom_inner_matrix(corm.atoms)  # constant across the whole solve
    interp_objective = _interp_objective(corm, a_inner)

    if q0 is None:
        # Cold start: minimize without the penalty first and enter the
        # constrained rounds from that solution.
        q, info = rattle_minimize(
            interp_objective, np.eye(h), cfg, alm.eps_star,
            orthogonal_projection=orthogonal_projection,
        )
        inner_total += info["iterations"]
        max_det_err = max(max_det_err, info["max_det_err"])
    else:
        # Warm start: the previous draw's transform replaces the unconstrained
        # solution as the entry point (consecutive draws are correlated).
        q = _as_matrix(q0).copy()

    loss_identity = interp_objective(np.eye(h))[0]
    converged_outer = False
    outer = 0
    for outer in range(1, outer_cap + 1):
        q_new, info = rattle_minimize(
            _augmented_objective(corm, lam, alm, penalty, a_inner),
            q, cfg, alm.eps,
            orthogonal_projection=orthogonal_projection,
        )
        inner_total += info["iterations"]
        max_det_err = max(max_det_err, info["max_det_err"])

        c_load, c_score, _, _ = _constraints(q_new, corm, lam)
        alm.gamma_load = np.maximum(0.0, alm.gamma_load + alm.rho * c_load)
        alm.gamma_score = np.maximum(0.0, alm.gamma_score + alm.rho * c_score)

        at_target = alm.eps <= alm.eps_star * (1.0 + 1e-12)
        moved = float(np.linalg.norm(q_new - q))
        q = q_new
        alm.rho *= rho_factor
        alm.eps = max(alm.eps_star, 0.9 * alm.eps)
        if at_target and info["converged"] and moved <= alm.eps_star:
            converged_outer = True
            break

    # Candidate acceptance: the solved transform must be feasible, at least
    # as separating as the neutral transform, and usable downstream (finite,
    # positive factor masses).  Otherwise keep the identity, which is
    # feasible whenever the draw itself has positive loadings and scores;
    # on a well-mixed chain the latent measures are often already separated
    # and the neutral transform is the honest answer.
    identity_fallback = False
    final_loss = interp_objective(q)[0]
    c_load, c_score, _, _ = _constraints(q, corm, lam)
    violation = _max_violation(c_load, c_score)
    masses = ((q @ corm.scores) * corm.jumps).sum(axis=1)
    solved_ok = (
        bool(np.all(np.isfinite(q)))
        and violation <= 1e-6
        and final_loss <= loss_identity
        and bool(np.all(masses > 0.0))
    )
    if not solved_ok:
        viol_identity = max(0.0, -float(lam.min()), -float(corm.scores.min()))
        if viol_identity <= 1e-6:
            if not np.all(np.isfinite(q)) or not np.all(masses > 0.0):
                logger.warning(
                    "discarding unusable transform (nonpositive factor mass); keeping identity"
                )
            else:
                logger.debug("solved transform no better than identity; keeping identity")
            q = np.eye(h)
            final_loss = loss_identity
            violation = viol_identity
            identity_fallback = True
        else:
            logger.warning("transform infeasible and identity infeasible too; flagging failure")
    success = converged_outer and violation <= 1e-6 and final_loss <= loss_identity
    return TransformResult(
        matrix=q,
        loss=final_loss,
        loss_identity=loss_identity,
        max_violation=violation,
        success=success,
        converged=converged_outer,
        outer_iters=outer,
        inner_iters=inner_total,
        max_det_err=max_det_err,
        settings={
            "stepsize": cfg.stepsize,
            "tau": cfg.tau,
            "max_iters": cfg.max_iters,
            "rho0": float(alm0.rho) if alm0 is not None else 10.0,
            "gamma0": float(alm0.gamma_load.flat[0]) if alm0 is not None and alm0.gamma_load.size else 10.0,
            "eps0": float(alm0.eps) if alm0 is not None else 1e-2,
            "eps_star": alm.eps_star,
            "penalty": penalty,
            "rho_factor": rho_factor,
            "outer_cap": outer_cap,
            "identity_fallback": identity_fallback,
        },
    )


def _solve_range(args) -> list[TransformResult]:
    (atom_means, atom_vars, jumps, scores, loadings, cfg, alm0, penalty,
     orthogonal_projection, rho_factor, outer_cap) = args
    from .measures import Atom  # local import keeps the worker payload light

    results = []
    q_prev = None
    for d in range(jumps.shape[0]):
        atoms = tuple(Atom(float(m), float(v)) for m, v in zip(atom_means[d], atom_vars[d]))
        corm = TruncatedCoRM(atoms=atoms, jumps=jumps[d], scores=scores[d])
        res = alm_solve(
            corm, loadings[d], cfg, alm0,
            penalty=penalty,
            orthogonal_projection=orthogonal_projection,
            rho_factor=rho_factor,
            outer_cap=outer_cap,
            q0=q_prev,
        )
        results.append(res)
        # A discarded transform is no basis for the next warm start; fall back
        # to a cold start for the following draw.
        q_prev = None if res.settings.get("identity_fallback") else res.matrix
    return results


def transform_chain(
    chain,
    cfg: RattleConfig | None = None,
    alm0: AlmState | None = None,
    *,
    penalty: str = "squared_hinge",
    orthogonal_projection: bool = False,
    rho_factor: float = 1.0 / 0.9,
    outer_cap: int = 200,
    threads: int = 1,
) -> list[TransformResult]:
    """Solve the separation problem for every draw of a chain.

    Each draw starts from a fresh copy of ``alm0``.  Sequential execution
    warm-starts each draw's transform from the previous solution.  With
    ``threads > 1`` the draws are split into that many contiguous blocks
    solved in separate processes (each block warm-starts internally), so
    results are deterministic for a fixed thread count.
    """
    cfg = cfg or RattleConfig()
    d = chain.n_draws
    if d == 0:
        return []
    payload = (
        chain.atom_means, chain.atom_vars, chain.jumps, chain.scores, chain.loadings,
        cfg, alm0, penalty, orthogonal_projection, rho_factor, outer_cap,
    )
    if threads <= 1 or d == 1:
        return _solve_range(payload)

    blocks = np.array_split(np.arange(d), min(threads, d))
    tasks = []
    for idx in blocks:
        lo, hi = int(idx[0]), int(idx[-1]) + 1
        tasks.append((
            chain.atom_means[lo:hi], chain.atom_vars[lo:hi], chain.jumps[lo:hi],
            chain.scores[lo:hi], chain.loadings[lo:hi],
            cfg, alm0, penalty, orthogonal_projection, rho_factor, outer_cap,
        ))
    out: list[TransformResult] = []
    with ProcessPoolExecutor(max_workers=len(tasks)) as pool:
        for block in pool.map(_solve_range, tasks):
            out.extend(block)
    return out
