import numpy as np
import pytest

from otindex.errors import NonConvergenceWarning
from otindex.transport import (SinkhornConfig, sinkhorn_barycenter,
                               sinkhorn_distance)

from conftest import line_cost, random_cost, random_simplex


def entropic_value(plan, C, epsilon):
    pos = plan > 0
    return float(np.sum(plan * C) + epsilon * np.sum(plan[pos] * np.log(plan[pos])))


def grid_oracle_n2(mu, nu, C, epsilon, points=400001):
    """Exact minimization over the one-parameter family of 2x2 couplings."""
    lo = max(0.0, mu[0] + nu[0] - 1.0)
    hi = min(mu[0], nu[0])
    t = np.linspace(lo, hi, points)
    plans = np.stack([t, mu[0] - t, nu[0] - t, 1.0 - mu[0] - nu[0] + t])
    costs = np.array([C[0, 0], C[0, 1], C[1, 0], C[1, 1]])[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(plans > 0, plans * np.log(plans), 0.0)
    return float(((plans * costs).sum(axis=0) + epsilon * ent.sum(axis=0)).min())


def barycenter_objective_grid(topics, weights, C, epsilon, step=1e-3,
                              iters=400):
    """Grid search over the 2-simplex for the weighted-barycenter objective.

    Evaluates sum_k weights_k * S(topic_k, b) for every grid point b by a
    vectorized plain-domain Sinkhorn (independent of the log-domain module
    code) and returns the minimizing histogram.
    """
    ticks = np.arange(0.0, 1.0 + step / 2, step)
    a, b = np.meshgrid(ticks, ticks)
    mask = a + b <= 1.0 + 1e-12
    b0, b1 = a[mask], b[mask]
    b2 = np.clip(1.0 - b0 - b1, 0.0, None)
    cand = np.stack([b0, b1, b2])  # (3, P)
    K = np.exp(-C / epsilon)
    total = np.zeros(cand.shape[1])
    for k in range(topics.shape[1]):
        t_k = topics[:, k][:, None]
        u = np.ones_like(cand) / cand.shape[0]
        v = np.ones_like(cand) / cand.shape[0]
        for _ in range(iters):
            u = t_k / (K @ v)
            v = cand / (K.T @ u)
        # plan entries pi_ij = u_i K_ij v_j, accumulated cost and entropy
        cost = ((C * K) @ v * u).sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            lu = np.where(u > 0, np.log(u), 0.0)
            lv = np.where(v > 0, np.log(v), 0.0)
        logK = -C / epsilon
        ent = ((logK * K) @ v * u).sum(axis=0) + \
            ((K @ v) * u * lu).sum(axis=0) + ((K.T @ u) * v * lv).sum(axis=0)
        total += weights[k] * (cost + epsilon * ent)
    return cand[:, int(np.argmin(total))]


class TestSinkhornDistance:
    def test_single_point(self):
        cfg = SinkhornConfig(epsilon=0.1)
        value, plan = sinkhorn_distance([1.0], [1.0], [[0.0]], cfg)
        assert value == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(plan.plan, [[1.0]])

    def test_point_masses_force_plan(self):
        cfg = SinkhornConfig(epsilon=0.1)
        value, plan = sinkhorn_distance([1.0, 0.0], [0.0, 1.0],
                                        [[0.0, 1.0], [1.0, 0.0]], cfg)
        assert value == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(plan.plan, [[0.0, 1.0], [0.0, 0.0]], atol=1e-12)

    def test_matches_grid_oracle_n2(self):
        C = np.array([[0.0, 1.0], [1.0, 0.0]])
        cfg = SinkhornConfig(epsilon=0.1, max_iter=50000, tol=1e-13)
        value, _ = sinkhorn_distance([0.5, 0.5], [0.5, 0.5], C, cfg)
        oracle = grid_oracle_n2(np.array([0.5, 0.5]), np.array([0.5, 0.5]), C, 0.1)
        assert value == pytest.approx(oracle, abs=1e-6)

    def test_marginal_feasibility_random(self, rng):
        cfg = SinkhornConfig(epsilon=0.1, max_iter=20000, tol=1e-9)
        for _ in range(25):
            n = int(rng.integers(2, 17))
            mu = random_simplex(rng, n)
            nu = random_simplex(rng, n)
            C = random_cost(rng, n)
            _, plan = sinkhorn_distance(mu, nu, C, cfg)
            assert plan.converged
            assert np.abs(plan.plan.sum(axis=1) - mu).sum() < 1e-6
            assert np.abs(plan.plan.sum(axis=0) - nu).sum() < 1e-6

    def test_zero_mass_rows_pinned(self, rng):
        cfg = SinkhornConfig(epsilon=0.1, max_iter=20000)
        mu = random_simplex(rng, 6, zeros=2)
        nu = random_simplex(rng, 6, zeros=1)
        C = random_cost(rng, 6)
        _, plan = sinkhorn_distance(mu, nu, C, cfg)
        assert np.all(plan.plan[mu == 0, :] == 0)
        assert np.all(plan.plan[:, nu == 0] == 0)

    def test_symmetry_in_arguments(self, rng):
        cfg = SinkhornConfig(epsilon=0.2, max_iter=20000, tol=1e-12)
        mu = random_simplex(rng, 5)
        nu = random_simplex(rng, 5)
        C = random_cost(rng, 5)
        v1, _ = sinkhorn_distance(mu, nu, C, cfg)
        v2, _ = sinkhorn_distance(nu, mu, C.T, cfg)
        assert v1 == pytest.approx(v2, abs=1e-9)

    def test_marginal_error_monotone(self, rng):
        mu = random_simplex(rng, 8)
        nu = random_simplex(rng, 8)
        C = random_cost(rng, 8)
        epsilon = 0.1
        gibbs = np.exp(-C / epsilon)
        errs = []
        v = np.ones(8)
        for _ in range(60):
            u = mu / (gibbs @ v)
            v = nu / (gibbs.T @ u)
            plan = u[:, None] * gibbs * v[None, :]
            errs.append(np.abs(plan.sum(axis=1) - mu).sum())
        diffs = np.diff(np.array(errs[1:]))
        assert np.all(diffs <= 1e-12)

    def test_nonconvergence_warns_and_returns(self, rng):
        cfg = SinkhornConfig(epsilon=0.01, max_iter=2, tol=1e-14)
        mu = random_simplex(rng, 6)
        nu = random_simplex(rng, 6)
        C = random_cost(rng, 6)
        with pytest.warns(NonConvergenceWarning):
            value, plan = sinkhorn_distance(mu, nu, C, cfg)
        assert not plan.converged
        assert np.isfinite(value)

    def test_permutation_equivariance(self, rng):
        cfg = SinkhornConfig(epsilon=0.1, max_iter=20000, tol=1e-12)
        n = 6
        mu = random_simplex(rng, n)
        nu = random_simplex(rng, n)
        C = random_cost(rng, n)
        perm = rng.permutation(n)
        v1, p1 = sinkhorn_distance(mu, nu, C, cfg)
        v2, p2 = sinkhorn_distance(mu[perm], nu[perm], C[np.ix_(perm, perm)], cfg)
        assert v1 == pytest.approx(v2, abs=1e-9)
        np.testing.assert_allclose(p2.plan, p1.plan[np.ix_(perm, perm)], atol=1e-9)


class TestBarycenter:
    # geometry with all off-diagonal costs >= 2: at epsilon <= 0.1 the kernel
    # is diagonal to ~1e-9, so degenerate cases return their input exactly
    SEPARATED = line_cost(4, spacing=1.5)

    def test_single_topic_returns_topic(self, rng):
        cfg = SinkhornConfig(epsilon=0.1, unroll_iters=50)
        t = random_simplex(rng, 4)
        b = sinkhorn_barycenter(t, [1.0], self.SEPARATED, cfg)
        assert np.abs(b - t).sum() < 1e-6

    def test_identical_topics_return_topic(self, rng):
        cfg = SinkhornConfig(epsilon=0.1, unroll_iters=50)
        t = random_simplex(rng, 4)
        topics = np.stack([t, t, t], axis=1)
        b = sinkhorn_barycenter(topics, [0.2, 0.5, 0.3], self.SEPARATED, cfg)
        assert np.abs(b - t).sum() < 1e-6

    def test_matches_simplex_grid_oracle(self, rng):
        epsilon = 0.1
        C = random_cost(rng, 3, scale=1.0)
        topics = np.stack([random_simplex(rng, 3), random_simplex(rng, 3)], axis=1)
        weights = np.array([0.5, 0.5])
        cfg = SinkhornConfig(epsilon=epsilon, max_iter=5000, tol=1e-12)
        b = sinkhorn_barycenter(topics, weights, C, cfg, until_convergence=True)
        oracle = barycenter_objective_grid(topics, weights, C, epsilon)
        assert np.abs(b - oracle).sum() < 2e-3

    def test_weight_continuity(self, rng):
        cfg = SinkhornConfig(epsilon=0.1, max_iter=5000, tol=1e-12)
        delta = 1e-4
        for _ in range(5):
            n = int(rng.integers(3, 7))
            C = random_cost(rng, n)
            topics = np.stack([random_simplex(rng, n) for _ in range(3)], axis=1)
            w = rng.dirichlet(np.ones(3))
            w2 = w.copy()
            w2[0] += delta / 2
            w2[1] -= delta / 2
            if w2[1] <= 0:
                continue
            w2 = w2 / w2.sum()
            b1 = sinkhorn_barycenter(topics, w, C, cfg, until_convergence=True)
            b2 = sinkhorn_barycenter(topics, w2, C, cfg, until_convergence=True)
            shift = np.abs(w - w2).sum()
            assert np.abs(b1 - b2).sum() <= 10 * shift

    def test_permutation_equivariance(self, rng):
        cfg = SinkhornConfig(epsilon=0.1, unroll_iters=60)
        n = 5
        C = random_cost(rng, n)
        topics = np.stack([random_simplex(rng, n) for _ in range(2)], axis=1)
        w = np.array([0.3, 0.7])
        perm = rng.permutation(n)
        b1 = sinkhorn_barycenter(topics, w, C, cfg)
        b2 = sinkhorn_barycenter(topics[perm], w, C[np.ix_(perm, perm)], cfg)
        np.testing.assert_allclose(b2, b1[perm], atol=1e-9)

    def test_output_on_simplex(self, rng):
        cfg = SinkhornConfig(epsilon=0.3, unroll_iters=30)
        n = 8
        C = random_cost(rng, n)
        topics = np.stack([random_simplex(rng, n, zeros=3) for _ in range(4)],
                          axis=1)
        w = rng.dirichlet(np.ones(4))
        b = sinkhorn_barycenter(topics, w, C, cfg)
        assert b.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(b >= 0)
