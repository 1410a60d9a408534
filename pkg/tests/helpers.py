"""Independent reference implementations ("oracles") used by the test suite.

Every function here recomputes its answer from first principles — dense
quadrature, central finite differences, exhaustive enumeration, Bessel-function
moment identities, an alternative MH sampler — and deliberately avoids calling
the package's own numerics, so that a disagreement always localizes the bug to
exactly one side.  Oracles trade speed for transparency: they are meant to be
obviously correct, not fast.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import kv

# numpy renamed trapz; support both spellings.
_trapz = getattr(np, "trapezoid", None) or np.trapz


# ---------------------------------------------------------------------------
# Gaussian mixtures by dense quadrature
# ---------------------------------------------------------------------------

def gauss_pdf(y, mean, var):
    """Normal density written out long-hand (no scipy.stats on purpose)."""
    y = np.asarray(y, dtype=float)
    return np.exp(-0.5 * (y - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def mixture_pdf(y, weights, means, variances):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    for w, m, v in zip(weights, means, variances):
        out += w * gauss_pdf(y, m, v)
    return out


def quad_grid(means, variances, pad=10.0, n=400_001):
    """Integration grid wide enough that mixture tails are ~1e-22."""
    means = np.asarray(means, dtype=float)
    sds = np.sqrt(np.asarray(variances, dtype=float))
    lo = float(np.min(means - pad * sds))
    hi = float(np.max(means + pad * sds))
    return np.linspace(lo, hi, n)


def quad_inner(wa, ma, va, wb, mb, vb, pad=10.0, n=400_001):
    """∫ f·g dy for two Gaussian mixtures, by trapezoid rule on a dense grid."""
    grid = quad_grid(np.concatenate([ma, mb]), np.concatenate([va, vb]), pad, n)
    fa = mixture_pdf(grid, wa, ma, va)
    fb = mixture_pdf(grid, wb, mb, vb)
    return float(_trapz(fa * fb, grid))


def quad_l2_distance(wa, ma, va, wb, mb, vb, pad=10.0, n=400_001):
    """√∫ (f−g)² dy by the same dense trapezoid rule."""
    grid = quad_grid(np.concatenate([ma, mb]), np.concatenate([va, vb]), pad, n)
    diff = mixture_pdf(grid, wa, ma, va) - mixture_pdf(grid, wb, mb, vb)
    return math.sqrt(max(0.0, float(_trapz(diff * diff, grid))))


def gaussian_kl(m1, v1, m2, v2):
    """Closed-form KL(N(m1,v1) ‖ N(m2,v2))."""
    return 0.5 * (math.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0)


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def fd_gradient(fun, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        step = np.zeros_like(flat)
        step[i] = h
        up = fun((flat + step).reshape(x.shape))
        dn = fun((flat - step).reshape(x.shape))
        grad[i] = (up - dn) / (2.0 * h)
    return grad.reshape(x.shape)


def rel_err(approx, exact):
    """Norm-relative error, guarded for near-zero references."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    scale = max(float(np.max(np.abs(exact))), 1e-10)
    return float(np.max(np.abs(approx - exact))) / scale


# ---------------------------------------------------------------------------
# Exhaustive combinatorial oracles
# ---------------------------------------------------------------------------

def assignment_bruteforce(cost):
    """Minimum-cost perfect matching by trying all H! permutations."""
    cost = np.asarray(cost, dtype=float)
    h = cost.shape[0]
    rows = np.arange(h)
    best_val = math.inf
    best_perm = None
    for perm in itertools.permutations(range(h)):
        val = float(cost[rows, list(perm)].sum())
        if val < best_val:
            best_val = val
            best_perm = perm
    return best_val, best_perm


def transport_bruteforce(supply, demand, cost):
    """Exact optimal-transport cost by enumerating basic feasible solutions.

    Every vertex of the transportation polytope is supported on a spanning
    tree of the bipartite supply/demand graph, so enumerating all
    (m+n−1)-edge spanning trees and solving the (unique) tree flow visits
    every candidate optimum.  Exponential in m·n — callers keep m·n ≤ 16.
    """
    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    assert m * n <= 16, "enumeration oracle is for tiny instances only"
    assert abs(supply.sum() - demand.sum()) < 1e-12

    cells = [(i, j) for i in range(m) for j in range(n)]
    n_nodes = m + n
    best = math.inf
    for edges in itertools.combinations(cells, n_nodes - 1):
        # spanning-tree check via union-find
        parent = list(range(n_nodes))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        acyclic = True
        for i, j in edges:
            ra, rb = find(i), find(m + j)
            if ra == rb:
                acyclic = False
                break
            parent[ra] = rb
        if not acyclic or len({find(k) for k in range(n_nodes)}) != 1:
            continue

        # peel leaves: a leaf's single edge must carry its whole balance
        balance = np.concatenate([supply, demand])
        incident = {k: [] for k in range(n_nodes)}
        for e, (i, j) in enumerate(edges):
            incident[i].append(e)
            incident[m + j].append(e)
        alive = set(range(len(edges)))
        flows = {}
        degree = {k: len(v) for k, v in incident.items()}
        leaves = [k for k, d in degree.items() if d == 1]
        while leaves:
            node = leaves.pop()
            edge = next((e for e in incident[node] if e in alive), None)
            if edge is None:
                continue
            i, j = edges[edge]
            other = m + j if node == i else i
            flows[edge] = balance[node]
            balance[other] -= balance[node]
            balance[node] = 0.0
            alive.discard(edge)
            degree[node] -= 1
            degree[other] -= 1
            if degree[other] == 1:
                leaves.append(other)
        if any(f < -1e-10 for f in flows.values()):
            continue
        total = sum(f * cost[edges[e][0], edges[e][1]] for e, f in flows.items())
        best = min(best, total)
    return best


# ---------------------------------------------------------------------------
# Generalized-inverse-Gaussian cross-checks
# ---------------------------------------------------------------------------

def gig_moment(p, a, b, order=1):
    """E[X^order] for the density ∝ x^{p−1} e^{−(a·x + b/x)}.

    In the standard two-rate GIG form (α/2, β/2 exponent) this density has
    α = 2a, β = 2b, giving moments
    (b/a)^{order/2} · K_{p+order}(2√(ab)) / K_p(2√(ab)).
    """
    omega = 2.0 * math.sqrt(a * b)
    return (b / a) ** (order / 2.0) * kv(p + order, omega) / kv(p, omega)


def gig_mh_sample(p, a, b, n, rng, burn=3000, thin=4, scale=0.8):
    """Random-walk Metropolis on log X targeting density ∝ x^{p−1} e^{−(ax+b/x)}.

    The log-scale target is p·z − a·e^z − b·e^{−z} (the x^{p−1} density
    transported through x = e^z picks up the Jacobian e^z).  Slow but
    entirely independent of scipy's geninvgauss machinery.
    """

    def logpi(z):
        return p * z - a * math.exp(z) - b * math.exp(-z)

    z = 0.5 * math.log(b / a)  # near the mode for p ≈ 0
    lp = logpi(z)
    out = np.empty(n)
    kept = 0
    total = burn + n * thin
    steps = rng.normal(0.0, scale, size=total)
    unif = rng.random(total)
    for t in range(total):
        cand = z + steps[t]
        lc = logpi(cand)
        if math.log(unif[t]) < lc - lp:
            z, lp = cand, lc
        if t >= burn and (t - burn) % thin == 0 and kept < n:
            out[kept] = math.exp(z)
            kept += 1
    return out


# ---------------------------------------------------------------------------
# Traceless projection by literal generator sums
# ---------------------------------------------------------------------------

def project_generator_sum(x):
    """Tangent projection built exactly as the sum it is defined to be:
    transpose the off-diagonal part, then add tr(X·E_ℓ)·E_ℓ over the H−1
    diagonal generators E_ℓ = diag(0, …, +1_ℓ, −1_{ℓ+1}, …, 0)."""
    x = np.asarray(x, dtype=float)
    h = x.shape[0]
    out = x.T.copy()
    np.fill_diagonal(out, 0.0)
    for ell in range(h - 1):
        gen = np.zeros((h, h))
        gen[ell, ell] = 1.0
        gen[ell + 1, ell + 1] = -1.0
        out += np.trace(x @ gen) * gen
    return out


# ---------------------------------------------------------------------------
# Direct-formula references
# ---------------------------------------------------------------------------

def waic_reference(loglik):
    """Two-pass WAIC: lppd via logsumexp by hand, penalty via sample
    variances (ddof=1), score −2(lppd − p)."""
    loglik = np.asarray(loglik, dtype=float)
    n_draws = loglik.shape[0]
    lppd = 0.0
    for col in loglik.T:
        mx = float(col.max())
        lppd += mx + math.log(float(np.exp(col - mx).mean()))
    penalty = float(loglik.var(axis=0, ddof=1).sum())
    return -2.0 * (lppd - penalty), lppd, penalty


def nig_posterior_reference(mu0, lam0, a0, b0, y):
    """Normal–inverse-gamma conjugate update in sufficient-statistic form."""
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        return mu0, lam0, a0, b0
    ybar = float(y.mean())
    lam_n = lam0 + n
    mu_n = (lam0 * mu0 + n * ybar) / lam_n
    a_n = a0 + 0.5 * n
    ss = float(((y - ybar) ** 2).sum())
    b_n = b0 + 0.5 * ss + 0.5 * lam0 * n * (ybar - mu0) ** 2 / lam_n
    return mu_n, lam_n, a_n, b_n


def car_precision_reference(adjacency, tau, rho):
    """τ·(diag(neighbor counts) − ρ·W) assembled entry by entry."""
    w = np.asarray(adjacency, dtype=float)
    return tau * (np.diag(w.sum(axis=1)) - rho * w)
