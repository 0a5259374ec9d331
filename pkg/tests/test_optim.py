"""Likelihood losses, projections and projected gradient descent."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from ctxbid.environment import ContextDist, EnvironmentConfig, draw_rounds
from ctxbid.errors import ConvergenceError, NumericalError
from ctxbid.logconcave import fit_logconcave
from ctxbid.noise import NoiseModel, noise_constants
from ctxbid.optim import (
    EPS_F,
    Batch,
    L1Ball,
    LambdaSet,
    LossEvaluation,
    loss_binary_known,
    loss_binary_partial,
    loss_full_info,
    minimize,
    minimize_full_info,
    project_l1,
    project_lambda,
    residual_fit,
)


def _normal_cdf(z):
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _fd_grad(f, x, h=1e-6):
    return np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(x.size)])


def _rel_err(g, fd):
    return np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)


def _synthetic(n, d=3, sigma=0.5, W=1.0, seed=0, alpha0=None):
    alpha0 = np.array([0.3, -0.2, 0.1][:d]) if alpha0 is None else np.asarray(alpha0)
    cfg = EnvironmentConfig(d, alpha0, W, NoiseModel.gaussian(sigma), seed=seed)
    r = draw_rounds(cfg, 0, n)
    b = np.random.default_rng(seed + 1).uniform(0, 1, n)
    return cfg, Batch(r.X, b, b >= r.m, r.m)


class TestLossExamples:
    def test_binary_known_single_round(self):
        batch = Batch(np.array([[1.0]]), [0.5], [True])
        ev = loss_binary_known(batch, NoiseModel.gaussian(1.0), np.zeros(1))
        assert ev.value == pytest.approx(-math.log(_normal_cdf(0.5)), abs=1e-12)
        assert ev.value == pytest.approx(0.36895, abs=1e-5)

    def test_binary_partial_single_round(self):
        batch = Batch(np.array([[1.0]]), [1.0], [True])
        ev = loss_binary_partial(batch, NoiseModel.gaussian(1.0), np.zeros(1), 1.0)
        assert ev.value == pytest.approx(-math.log(_normal_cdf(1.0)), abs=1e-12)
        assert ev.value == pytest.approx(0.17275, abs=1e-5)
        assert ev.gradient.shape == (2,)

    def test_empty_batches(self):
        e = Batch.empty(3)
        for ev in (loss_binary_known(e, NoiseModel.gaussian(1.0), np.zeros(3)),
                   loss_binary_partial(e, NoiseModel.gaussian(1.0), np.zeros(3), 1.0),
                   loss_full_info(e, np.zeros(3))):
            assert ev.value == 0.0
            assert not np.any(ev.gradient)
        assert loss_binary_partial(e, NoiseModel.gaussian(1.0), np.zeros(3), 1.0).gradient.shape == (4,)

    def test_partial_wins_monotone(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 2)) / 3
        base = NoiseModel.gaussian(1.0)
        mu = np.array([0.1, -0.2])
        vals = [loss_binary_partial(Batch(X, np.full(50, b), np.ones(50, bool)), base, mu, 1.5).value
                for b in np.linspace(0, 1, 11)]
        assert np.all(np.diff(vals) < 0)

    def test_full_info_win_past_last_knot_floors(self):
        """A win far right gives log F = 0; a loss there is floored at eps_F."""
        fit = fit_logconcave(np.array([-1.0, 0.0, 1.0]))
        X = np.zeros((1, 1))
        win = loss_full_info(Batch(X, [5.0], [True], [0.0]), np.zeros(1), fit=fit)
        lose = loss_full_info(Batch(X, [5.0], [False], [0.0]), np.zeros(1), fit=fit)
        assert win.value == 0.0
        assert lose.value == pytest.approx(-math.log(EPS_F))
        assert np.isfinite(lose.value) and not np.any(lose.gradient)

    def test_full_info_close_to_known(self):
        cfg, batch = _synthetic(20000, seed=3)
        known = loss_binary_known(batch, cfg.noise, cfg.alpha0).value
        full = loss_full_info(batch, cfg.alpha0).value
        assert abs(known - full) <= 0.05

    def test_nan_raises(self):
        batch = Batch(np.array([[1.0]]), [np.nan], [True])
        with pytest.raises(NumericalError):
            loss_binary_known(batch, NoiseModel.gaussian(1.0), np.zeros(1))


class TestGradients:
    def test_binary_known(self):
        rng = np.random.default_rng(1)
        cfg, batch = _synthetic(400, seed=1)
        for _ in range(20):
            a = project_l1(rng.normal(size=3), 1.0)
            ev = loss_binary_known(batch, cfg.noise, a)
            fd = _fd_grad(lambda v: loss_binary_known(batch, cfg.noise, v).value, a)
            assert _rel_err(ev.gradient, fd) <= 1e-5

    def test_binary_partial(self):
        rng = np.random.default_rng(2)
        cfg, batch = _synthetic(400, seed=2)
        lset = LambdaSet(2.5)
        base = NoiseModel.gaussian(1.0)
        for _ in range(20):
            th = lset.project_stacked(np.append(rng.normal(size=3), rng.uniform(0.5, 2.5)))
            ev = loss_binary_partial(batch, base, th[:-1], th[-1])
            fd = _fd_grad(lambda v: loss_binary_partial(batch, base, v[:-1], v[-1]).value, th)
            assert _rel_err(ev.gradient, fd) <= 1e-5

    def test_full_info_frozen(self):
        rng = np.random.default_rng(3)
        cfg, batch = _synthetic(400, seed=3)
        fit = residual_fit(batch, cfg.alpha0)
        for _ in range(20):
            a = project_l1(cfg.alpha0 + 0.05 * rng.normal(size=3), 1.0)
            ev = loss_full_info(batch, a, fit=fit)
            fd = _fd_grad(lambda v: loss_full_info(batch, v, fit=fit).value, a)
            assert _rel_err(ev.gradient, fd) <= 1e-5


class TestStatistics:
    def test_score_identity(self):
        """At the true parameter the score has mean zero."""
        cfg, batch = _synthetic(100_000, seed=4)
        g = loss_binary_known(batch, cfg.noise, cfg.alpha0).gradient
        assert np.abs(g).max() <= 5 / math.sqrt(1e5)
        eps = batch.b - batch.X @ cfg.alpha0
        eta = np.where(batch.win, cfg.noise.dlogcdf(eps), cfg.noise.dlogsf(eps))
        assert abs(eta.mean()) <= 5 / math.sqrt(1e5)

    def test_gradient_concentration(self):
        W = 1.0
        cfg, batch = _synthetic(5000, d=3, seed=5)
        h_W = noise_constants(NoiseModel.gaussian(0.5, window=W)).h_W
        g = loss_binary_known(batch, cfg.noise, cfg.alpha0).gradient
        assert np.abs(g).max() <= 3 * h_W * math.sqrt(math.log(6) / 5000)

    def test_convexity_probe(self):
        rng = np.random.default_rng(6)
        cfg, batch = _synthetic(300, seed=6)
        base = NoiseModel.gaussian(1.0)
        lset = LambdaSet(2.5)
        fit = residual_fit(batch, cfg.alpha0)
        W_full = 0.3
        losses = {
            "known": (lambda a: loss_binary_known(batch, cfg.noise, a).value,
                      lambda: project_l1(rng.normal(size=3), 1.0)),
            "partial": (lambda t: loss_binary_partial(batch, base, t[:-1], t[-1]).value,
                        lambda: lset.project_stacked(np.append(rng.normal(size=3), rng.uniform(0, 3)))),
            "full": (lambda a: loss_full_info(batch, a, fit=fit).value,
                     lambda: project_l1(rng.normal(size=3), W_full)),
        }
        for name, (f, draw) in losses.items():
            for _ in range(500):
                p, q, lam = draw(), draw(), rng.uniform()
                assert f(lam * p + (1 - lam) * q) <= lam * f(p) + (1 - lam) * f(q) + 1e-8, name


class TestProjectL1:
    @pytest.mark.parametrize("v,expected", [((3, 0), (1, 0)), ((2, 1), (1, 0)), ((0.2, -0.1), (0.2, -0.1))])
    def test_examples(self, v, expected):
        np.testing.assert_allclose(project_l1(np.array(v, float), 1.0), expected, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(v=st.lists(st.floats(-10, 10), min_size=1, max_size=8), W=st.floats(0.05, 5.0))
    def test_optimality(self, v, W):
        v = np.array(v)
        p = project_l1(v, W)
        assert np.abs(p).sum() <= W + 1e-10
        # variational inequality against the vertices of the ball
        for q in np.vstack([W * np.eye(v.size), -W * np.eye(v.size)]):
            assert (v - p) @ (q - p) <= 1e-9 * (1 + np.abs(v).sum())

    def test_ball_object(self):
        ball = L1Ball(2.0, 3)
        p = ball.project(np.array([4.0, -4.0, 1.0]))
        assert ball.contains(p)


class TestProjectLambda:
    def test_feasible_unchanged(self):
        lset = LambdaSet(1.0)
        mu, rho = project_lambda(np.array([0.2, -0.1]), 0.5, lset)
        np.testing.assert_array_equal(mu, [0.2, -0.1])
        assert rho == 0.5

    def test_box_clamp(self):
        W = 1.5
        mu, rho = project_lambda(np.zeros(1), 2 * W, LambdaSet(W))
        np.testing.assert_array_equal(mu, [0.0])
        assert rho == W

    def test_grid_oracle_d1(self):
        W = 1.0
        lset = LambdaSet(W)
        rho_g, frac = np.meshgrid(np.linspace(lset.rho_min, W, 2001), np.linspace(-1, 1, 2001))
        pts = np.column_stack([(W * rho_g * frac).ravel(), rho_g.ravel()])
        rng = np.random.default_rng(0)
        for _ in range(30):
            v = rng.uniform(-3, 3, 2)
            mu, rho = project_lambda(v[:1], v[1], lset)
            best = pts[np.argmin(((pts - v) ** 2).sum(axis=1))]
            assert np.linalg.norm(np.append(mu, rho) - best) <= 1e-3

    @pytest.mark.parametrize("d", [2, 3])
    def test_profile_oracle(self, d):
        """For fixed rho the nearest mu is an L1-ball projection; minimize the profile over rho."""
        W = 1.2
        lset = LambdaSet(W)
        rng = np.random.default_rng(d)

        def profile(r, v):
            return np.sum((project_l1(v[:-1], W * r) - v[:-1]) ** 2) + (r - v[-1]) ** 2

        for _ in range(30):
            v = rng.normal(size=d + 1) * 2
            mu, rho = project_lambda(v[:-1], v[-1], lset)
            res = optimize.minimize_scalar(profile, bounds=(lset.rho_min, W), args=(v,), method="bounded",
                                           options={"xatol": 1e-12})
            ref = np.append(project_l1(v[:-1], W * res.x), res.x)
            assert lset.contains(mu, rho)
            assert np.linalg.norm(np.append(mu, rho) - ref) <= 1e-3
            assert profile(rho, v) <= res.fun + 1e-12

    def test_dykstra_matches_exact(self):
        lset = LambdaSet(2.0)
        rng = np.random.default_rng(9)
        for _ in range(30):
            v = rng.normal(size=4) * 3
            a = np.append(*project_lambda(v[:-1], v[-1], lset))
            b = np.append(*project_lambda(v[:-1], v[-1], lset, method="dykstra"))
            assert np.linalg.norm(a - b) <= 1e-8

    def test_dykstra_budget(self):
        with pytest.raises(ConvergenceError):
            project_lambda(np.array([5.0, -3.0]), -2.0, LambdaSet(1.0), method="dykstra", max_sweeps=1)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            project_lambda(np.array([5.0]), 0.1, LambdaSet(1.0), method="admm")


def _quadratic(c):
    return lambda a: LossEvaluation(float((a - c) @ (a - c)), 2 * (a - c))


class TestMinimize:
    @pytest.mark.parametrize("accelerated", [True, False])
    def test_interior_optimum(self, accelerated):
        c = np.array([0.2, -0.3, 0.1])
        res = minimize(_quadratic(c), lambda v: project_l1(v, 1.0), np.zeros(3), tol=1e-10,
                       accelerated=accelerated)
        np.testing.assert_allclose(res.x, c, atol=1e-10)

    @pytest.mark.parametrize("accelerated", [True, False])
    def test_exterior_optimum(self, accelerated):
        c = np.array([2.0, 1.0, -0.5])
        res = minimize(_quadratic(c), lambda v: project_l1(v, 1.0), np.zeros(3), tol=1e-10,
                       accelerated=accelerated)
        np.testing.assert_allclose(res.x, project_l1(c, 1.0), atol=1e-9)

    def test_budget(self):
        A = np.diag([1.0, 1e-4])
        loss = lambda a: LossEvaluation(0.5 * float(a @ A @ a), A @ a)  # noqa: E731
        with pytest.raises(ConvergenceError):
            minimize(loss, lambda v: v, np.ones(2), tol=1e-14, max_iters=3)
        res = minimize(loss, lambda v: v, np.ones(2), tol=1e-14, max_iters=3, raise_on_budget=False)
        assert not res.converged

    def test_consistency_and_descent(self):
        cfg, batch = _synthetic(20000, seed=10)
        res = minimize(lambda a: loss_binary_known(batch, cfg.noise, a), lambda v: project_l1(v, cfg.W),
                       np.zeros(3))
        assert res.converged
        assert np.linalg.norm(res.x - cfg.alpha0) <= 0.1
        assert np.all(np.diff(res.history) <= 1e-12)

    def test_full_info_alternating(self):
        cfg, batch = _synthetic(5000, seed=11)
        res, fit = minimize_full_info(batch, cfg.W, np.zeros(3))
        assert res.converged
        assert np.linalg.norm(res.x - cfg.alpha0) <= 0.1
        np.testing.assert_array_equal(fit.knots, np.unique(batch.m - batch.X @ res.x))

    def test_strong_convexity_witness(self):
        """Augmented regressors (x, -b) with bids >= Delta are well conditioned."""
        cfg = EnvironmentConfig(3, [0.3, -0.2, 0.1], 1.0, NoiseModel.gaussian(0.5),
                                context=ContextDist("unit_ball"), seed=12)
        r = draw_rounds(cfg, 0, 20000)
        b = np.maximum(0.01, np.random.default_rng(13).uniform(0, 1, 20000))
        Xt = np.column_stack([r.X, -b])
        assert np.linalg.eigvalsh(Xt.T @ Xt / Xt.shape[0]).min() > 0.01
