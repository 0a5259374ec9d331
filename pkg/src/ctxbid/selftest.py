"""Quick invariant checks runnable without the test suite (``ctxbid selftest``)."""

from __future__ import annotations

import numpy as np

from .environment import EnvironmentConfig, ValueFn, expected_utility
from .logconcave import EmpiricalCdf, fit_logconcave, knot_sandwich_check
from .noise import NoiseModel
from .optim import Batch, LambdaSet, loss_binary_known, loss_binary_partial, project_l1, project_lambda
from .policies import clairvoyant_bid


def _fd_rel_err(fun, x, h=1e-6):
    g = fun(x).gradient
    fd = np.array([(fun(x + h * e).value - fun(x - h * e).value) / (2 * h) for e in np.eye(x.size)])
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))


def _checks(rng):
    W = 0.5
    models = [NoiseModel.gaussian(0.5), NoiseModel.logistic(0.3), NoiseModel.laplace(0.4),
              NoiseModel.uniform(1.0 + W + 0.5, window=W)]
    x = rng.uniform(-W, 1 + W, 200)
    worst = max(float(np.abs(m.phi_inverse(m.phi(x)) - x).max()) for m in models)
    yield "phi roundtrip", worst <= 1e-9, f"max error {worst:.2e}"

    v = rng.normal(size=6) * 2
    p = project_l1(v, 1.0)
    yield "L1 projection feasible", np.abs(p).sum() <= 1.0 + 1e-10, f"||p||_1 = {np.abs(p).sum():.12f}"

    lset = LambdaSet(2.0)
    mu, rho = project_lambda(rng.normal(size=3) * 3, -1.0, lset)
    yield "Lambda projection feasible", lset.contains(mu, rho), f"rho = {rho:.4g}"

    X = rng.normal(size=(300, 3)) / 3
    b = rng.uniform(0, 1, 300)
    batch = Batch(X, b, rng.random(300) < 0.5)
    g = NoiseModel.gaussian(1.0)
    e1 = _fd_rel_err(lambda a: loss_binary_known(batch, g, a), rng.normal(size=3) * 0.2)
    e2 = _fd_rel_err(lambda t: loss_binary_partial(batch, g, t[:-1], t[-1]),
                     np.append(rng.normal(size=3) * 0.2, 1.5))
    yield "loss gradients", max(e1, e2) <= 1e-5, f"relative errors {e1:.1e}, {e2:.1e}"

    cfg = EnvironmentConfig(2, [0.2, -0.1], 1.0, NoiseModel.gaussian(0.5), value=ValueFn("constant", 0.8))
    xc = np.array([0.3, 0.4])
    grid = np.arange(0, 0.8 + 1e-12, 1e-4)
    u = expected_utility(cfg, grid, np.tile(xc, (grid.size, 1)))
    b_star = clairvoyant_bid(cfg, xc)
    yield "clairvoyant bid vs grid", abs(b_star - grid[np.argmax(u)]) <= 1e-3, f"b* = {b_star:.5f}"

    z = rng.normal(size=1000)
    fit = fit_logconcave(z)
    viol = knot_sandwich_check(fit, EmpiricalCdf(z))
    yield "log-concave sandwich", viol <= 1e-4, f"violation {viol:.1e}, mass {fit.normalization:.9f}"


def run_selftest(verbose: bool = True, seed: int = 0) -> bool:
    ok_all = True
    for name, ok, detail in _checks(np.random.default_rng(seed)):
        ok_all &= bool(ok)
        if verbose or not ok:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok_all
