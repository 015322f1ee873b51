"""Entropic optimal transport: Sinkhorn distances, plans, and barycenters.

Everything operates on histograms (nonnegative vectors summing to one) over a
shared ground space with cost matrix ``C``.  The regularized cost is

    value(pi) = <pi, C> + epsilon * <pi, log pi>,    0 * log 0 := 0,

minimized over couplings ``pi`` with prescribed marginals.  Scaling vectors
are kept in log space throughout; the fixed Gibbs factor ``exp(-C/epsilon)``
is precomputed once and reductions are stabilized log-sum-exps, so zero-mass
coordinates pin cleanly to ``-inf`` instead of producing NaNs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceWarning, NumericalCollapse

_NEG_INF = -np.inf


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver knobs: regularization, stopping, and unrolling depth.

    ``unroll_iters`` is the fixed number of barycenter fixed-point steps used
    when the barycenter must be a finite differentiable computation (training);
    ``max_iter``/``tol`` govern convergence-based stopping everywhere else.
    """

    epsilon: float = 0.1
    max_iter: int = 1000
    tol: float = 1e-9
    unroll_iters: int = 50

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.unroll_iters < 1:
            raise ValueError("unroll_iters must be >= 1")


@dataclass
class TransportPlan:
    """Optimal coupling plus the two pieces of its objective value."""

    plan: np.ndarray
    cost_value: float
    entropy_value: float
    converged: bool
    iterations: int


def log_kernel_apply(kernel: np.ndarray, logx: np.ndarray) -> np.ndarray:
    """Stabilized ``log(kernel @ exp(logx))`` along the first axis of ``logx``.

    ``kernel`` is the elementwise-exponentiated Gibbs factor (entries in
    (0, 1] after the zero-diagonal shift), so the only stabilization needed
    is shifting ``logx`` by its per-column max.  Columns that are entirely
    ``-inf`` map to ``-inf``.
    """
    shift = np.max(logx, axis=0, keepdims=True)
    # all -inf columns: exp(-inf - -inf) would give NaN; shift 0 keeps them 0
    shift = np.where(np.isfinite(shift), shift, 0.0)
    out = kernel @ np.exp(logx - shift)
    with np.errstate(divide="ignore"):
        return np.log(out) + shift


def _check_histogram(h: np.ndarray, name: str) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    if np.any(h < 0) or not np.all(np.isfinite(h)):
        raise ValueError(f"{name} must be nonnegative and finite")
    if abs(h.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1 (got {h.sum()!r})")
    return h


def _cost_entries(C) -> np.ndarray:
    entries = getattr(C, "entries", C)
    return np.asarray(entries, dtype=np.float64)


def _plan_value(plan: np.ndarray, C: np.ndarray, epsilon: float):
    cost = float(np.sum(plan * C))
    pos = plan > 0
    entropy = float(np.sum(plan[pos] * np.log(plan[pos])))
    return cost + epsilon * entropy, cost, entropy


def sinkhorn_distance(mu, nu, C, cfg: SinkhornConfig):
    """Entropic transport cost between two histograms, with the plan.

    Alternates the log-domain scaling updates
    ``log u <- log mu - log(K v)``, ``log v <- log nu - log(K^T u)`` with
    ``K = exp(-C/epsilon)``, stopping once the L1 error of the row marginal
    drops below ``cfg.tol`` (the column marginal is exact right after a
    ``v`` update) or ``cfg.max_iter`` is hit, in which case the best iterate
    is returned under a :class:`NonConvergenceWarning`.

    Returns ``(value, TransportPlan)`` where ``value`` includes the
    ``epsilon * <pi, log pi>`` term.
    """
    mu = _check_histogram(mu, "mu")
    nu = _check_histogram(nu, "nu")
    C = _cost_entries(C)
    n = mu.shape[0]
    if C.shape != (n, n):
        raise ValueError("cost matrix shape does not match histograms")

    gibbs = np.exp(-C / cfg.epsilon)
    with np.errstate(divide="ignore"):
        log_mu = np.log(mu)
        log_nu = np.log(nu)

    log_v = np.where(nu > 0, 0.0, _NEG_INF)
    err = np.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        log_u = log_mu - log_kernel_apply(gibbs, log_v)
        log_v = log_nu - log_kernel_apply(gibbs.T, log_u)
        if np.any(np.isnan(log_u)) or np.any(np.isnan(log_v)):
            raise NumericalCollapse(f"scaling vectors became NaN at iteration {it}")
        # row marginal of the current plan; column marginal is exact here
        log_row = log_u + log_kernel_apply(gibbs, log_v)
        err = float(np.abs(np.exp(log_row) - mu).sum())
        if err < cfg.tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"Sinkhorn stopped at max_iter={cfg.max_iter} with marginal error {err:.3e}",
            NonConvergenceWarning,
        )

    log_plan = (-C / cfg.epsilon) + log_u[:, None] + log_v[None, :]
    plan = np.exp(log_plan)
    if not np.all(np.isfinite(plan)):
        raise NumericalCollapse("transport plan contains non-finite entries")
    value, cost, entropy = _plan_value(plan, C, cfg.epsilon)
    return value, TransportPlan(plan, cost, entropy, converged, it)


def barycenter_steps(log_topics: np.ndarray, weights: np.ndarray, gibbs: np.ndarray,
                     n_steps: int) -> np.ndarray:
    """Run ``n_steps`` scaling iterations and return the unnormalized log barycenter.

    One step, per topic k (all in log space):

        log u_k = log t_k - log(K v_k)
        log b   = sum_k weights_k * log(K^T u_k)
        log v_k = log b - log(K^T u_k)

    starting from ``log v_k = 0``.
    """
    n, k = log_topics.shape
    log_v = np.zeros((n, k))
    log_b = np.full(n, _NEG_INF)
    for _ in range(n_steps):
        log_ku = log_kernel_apply(gibbs, log_v)
        log_u = log_topics - log_ku
        log_ktu = log_kernel_apply(gibbs.T, log_u)
        log_b = _weighted_log_combine(log_ktu, weights)
        log_v = _pinned_difference(log_b[:, None], log_ktu)
    return log_b


def _weighted_log_combine(log_ktu: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # zero-weight topics must contribute exactly 0 even where log_ktu is -inf
    contrib = log_ktu * weights[None, :]
    contrib = np.where(weights[None, :] == 0.0, 0.0, contrib)
    return contrib.sum(axis=1)


def _pinned_difference(log_a, log_b):
    """``log_a - log_b`` with coordinates that lost all mass pinned to -inf.

    Where both operands are ``-inf`` (possible when the Gibbs factor
    underflows to exact zeros) the scaling carries no mass, so the result is
    pinned instead of propagating NaN.
    """
    with np.errstate(invalid="ignore"):
        out = log_a - log_b
    return np.where(np.isnan(out), _NEG_INF, out)


def sinkhorn_barycenter(topics, weights, C, cfg: SinkhornConfig,
                        until_convergence: bool = False) -> np.ndarray:
    """Weighted entropic barycenter of the topic columns.

    By default runs exactly ``cfg.unroll_iters`` fixed-point steps (the same
    finite computation the training loss differentiates through).  With
    ``until_convergence=True`` it instead iterates until the barycenter moves
    less than ``cfg.tol`` in L1 or ``cfg.max_iter`` is reached.  The output is
    renormalized onto the simplex.
    """
    topics = np.asarray(topics, dtype=np.float64)
    if topics.ndim == 1:
        topics = topics[:, None]
    weights = np.asarray(weights, dtype=np.float64)
    _check_histogram(weights, "weights")
    if weights.shape[0] != topics.shape[1]:
        raise ValueError("weights length must match number of topic columns")
    for j in range(topics.shape[1]):
        _check_histogram(topics[:, j], f"topic {j}")
    C = _cost_entries(C)

    gibbs = np.exp(-C / cfg.epsilon)
    with np.errstate(divide="ignore"):
        log_topics = np.log(topics)

    if not until_convergence:
        log_b = barycenter_steps(log_topics, weights, gibbs, cfg.unroll_iters)
    else:
        n, k = topics.shape
        log_v = np.zeros((n, k))
        log_b = np.full(n, _NEG_INF)
        prev = None
        for _ in range(cfg.max_iter):
            log_ku = log_kernel_apply(gibbs, log_v)
            log_u = log_topics - log_ku
            log_ktu = log_kernel_apply(gibbs.T, log_u)
            log_b = _weighted_log_combine(log_ktu, weights)
            log_v = _pinned_difference(log_b[:, None], log_ktu)
            b = _normalize_log(log_b)
            if prev is not None and np.abs(b - prev).sum() < cfg.tol:
                break
            prev = b

    if np.any(np.isnan(log_b)):
        raise NumericalCollapse("barycenter became NaN")
    return _normalize_log(log_b)


def _normalize_log(log_b: np.ndarray) -> np.ndarray:
    finite = log_b[np.isfinite(log_b)]
    if finite.size == 0:
        raise NumericalCollapse("barycenter lost all mass")
    shift = finite.max()
    b = np.exp(log_b - shift)
    return b / b.sum()
