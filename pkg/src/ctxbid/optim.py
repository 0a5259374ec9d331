"""Likelihood losses, feasible-set projections and projected gradient descent."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError, NumericalError
from .logconcave import LogConcaveFit, fit_logconcave
from .noise import NoiseModel

EPS_F = 1e-12
_LOG_EPS_F = float(np.log(EPS_F))


@dataclass(frozen=True)
class LossEvaluation:
    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class Batch:
    """Observations of one episode as arrays.

    ``m`` holds competing bids and is only present under full information.
    """

    X: np.ndarray
    b: np.ndarray
    win: np.ndarray
    m: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).ravel())
        object.__setattr__(self, "win", np.asarray(self.win, dtype=bool).ravel())
        if self.m is not None:
            object.__setattr__(self, "m", np.asarray(self.m, dtype=float).ravel())

    @classmethod
    def empty(cls, d: int) -> "Batch":
        return cls(np.zeros((0, d)), np.zeros(0), np.zeros(0, dtype=bool), np.zeros(0))

    def __len__(self) -> int:
        return self.b.size


def _binary_terms(dist, eps, win):
    """Floored log-likelihood terms and their derivatives in ``eps``."""
    lc = np.where(win, dist.logcdf(eps), dist.logsf(eps))
    floored = lc < _LOG_EPS_F
    ll = np.where(floored, _LOG_EPS_F, lc)
    dll = np.where(win, dist.dlogcdf(eps), dist.dlogsf(eps))
    dll = np.where(floored, 0.0, dll)
    return ll, dll


def _finish(ll, weighted_regressors, n):
    value = float(-ll.sum() / n)
    grad = -weighted_regressors.sum(axis=0) / n
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite likelihood after probability flooring")
    return LossEvaluation(value, grad)


def loss_binary_known(batch: Batch, model, alpha) -> LossEvaluation:
    """Negated mean log-likelihood of win/loss outcomes for known noise.

    ``model`` is any object with ``logcdf``, ``logsf``, ``dlogcdf`` and
    ``dlogsf`` (a :class:`NoiseModel` or a frozen :class:`LogConcaveFit`).
    """
    alpha = np.asarray(alpha, dtype=float)
    n = len(batch)
    if n == 0:
        return LossEvaluation(0.0, np.zeros_like(alpha))
    eps = batch.b - batch.X @ alpha
    ll, dll = _binary_terms(model, eps, batch.win)
    # d eps / d alpha = -x
    return _finish(ll, -dll[:, None] * batch.X, n)


def loss_binary_partial(batch: Batch, base: NoiseModel, mu, rho: float) -> LossEvaluation:
    """Loss in the scaled parametrization ``eps = rho * b - mu . x``.

    The gradient is over the stacked vector ``(mu, rho)``.
    """
    mu = np.asarray(mu, dtype=float)
    n = len(batch)
    if n == 0:
        return LossEvaluation(0.0, np.zeros(mu.size + 1))
    eps = rho * batch.b - batch.X @ mu
    ll, dll = _binary_terms(base, eps, batch.win)
    reg = np.column_stack([-batch.X, batch.b])
    return _finish(ll, dll[:, None] * reg, n)


def residual_fit(batch: Batch, alpha, fit_provider=fit_logconcave) -> LogConcaveFit:
    """Log-concave fit of the residuals ``m - alpha . x``."""
    return fit_provider(batch.m - batch.X @ np.asarray(alpha, dtype=float))


def loss_full_info(
    batch: Batch,
    alpha,
    fit_provider: Callable = fit_logconcave,
    fit: LogConcaveFit | None = None,
) -> LossEvaluation:
    """Binary-outcome loss with the noise CDF replaced by a log-concave fit.

    Unless ``fit`` is given, it is refit from the residuals at ``alpha``. The
    gradient treats the fit as fixed.
    """
    alpha = np.asarray(alpha, dtype=float)
    if len(batch) == 0:
        return LossEvaluation(0.0, np.zeros_like(alpha))
    if fit is None:
        fit = residual_fit(batch, alpha, fit_provider)
    return loss_binary_known(batch, fit, alpha)


# ---------------------------------------------------------------------------
# projections


def project_l1(v, W: float) -> np.ndarray:
    """Euclidean projection onto ``{p : ||p||_1 <= W}`` by sorting."""
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if a.sum() <= W:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    r = np.nonzero(u * k > css - W)[0][-1]
    theta = (css[r] - W) / (r + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


@dataclass(frozen=True)
class L1Ball:
    W: float
    d: int

    def project(self, v) -> np.ndarray:
        return project_l1(v, self.W)

    def contains(self, v, tol: float = 1e-10) -> bool:
        return float(np.abs(v).sum()) <= self.W + tol


def _project_cone(v, r, W):
    """Projection of ``(v, r)`` onto ``{(mu, rho) : ||mu||_1 <= W rho}``.

    KKT gives ``mu = soft(v, lam)`` and ``rho = r + lam W`` with
    ``||soft(v, lam)||_1 = W (r + lam W)``; the left side is piecewise linear
    in ``lam``, so the root is found exactly over the sorted breakpoints.
    """
    a = np.abs(v)
    if a.sum() <= W * r:
        return v.copy(), float(r)
    u = np.concatenate([np.sort(a)[::-1], [0.0]])
    css = np.concatenate([[0.0], np.cumsum(u[:-1])])
    lam = -r / W
    for k in range(u.size):
        lam = (css[k] - W * r) / (k + W * W)
        upper = np.inf if k == 0 else u[k - 1]
        if u[k] <= lam <= upper:
            break
    lam = max(lam, 0.0)
    mu = np.sign(v) * np.maximum(a - lam, 0.0)
    return mu, float(max(r + lam * W, 0.0))


@dataclass(frozen=True)
class LambdaSet:
    """Feasible set ``{(mu, rho) : ||mu||_1 <= W rho, rho_min <= rho <= W}``."""

    W: float
    rho_min: float = 1e-3

    def contains(self, mu, rho, tol: float = 1e-10) -> bool:
        return (
            float(np.abs(mu).sum()) <= self.W * rho + tol
            and self.rho_min - tol <= rho <= self.W + tol
        )

    def project(self, mu, rho):
        return project_lambda(mu, rho, self)

    def project_stacked(self, theta) -> np.ndarray:
        mu, rho = project_lambda(theta[:-1], theta[-1], self)
        return np.append(mu, rho)


def project_lambda(
    mu,
    rho: float,
    lset: LambdaSet,
    method: str = "exact",
    tol: float = 1e-13,
    max_sweeps: int = 10000,
):
    """Euclidean projection onto the set ``Lambda``.

    ``method="exact"``: the squared distance minimized over ``mu`` is convex in
    ``rho`` and is minimized without the box at the cone projection, so the
    box-constrained answer clamps that ``rho`` and projects ``mu`` onto the
    L1 ball of radius ``W rho``.

    ``method="dykstra"``: Dykstra's alternating projections between the cone
    and the ``rho`` box, stopped once iterate and both correction terms settle.
    """
    mu = np.asarray(mu, dtype=float)
    if lset.contains(mu, rho, tol=0.0):
        return mu.copy(), float(rho)
    if method == "exact":
        c_mu, c_rho = _project_cone(mu, rho, lset.W)
        if lset.rho_min <= c_rho <= lset.W:
            return c_mu, c_rho
        r = float(np.clip(c_rho, lset.rho_min, lset.W))
        return project_l1(mu, lset.W * r), r
    if method != "dykstra":
        raise ValueError("method must be 'exact' or 'dykstra'")
    x = np.append(mu, rho)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_sweeps):
        y_mu, y_rho = _project_cone(x[:-1] + p[:-1], x[-1] + p[-1], lset.W)
        y = np.append(y_mu, y_rho)
        p_new = x + p - y
        z = y + q
        x_new = z.copy()
        x_new[-1] = np.clip(z[-1], lset.rho_min, lset.W)
        q_new = z - x_new
        moved = max(np.abs(x_new - x).max(), np.abs(p_new - p).max(), np.abs(q_new - q).max())
        x, p, q = x_new, p_new, q_new
        if moved <= tol and lset.contains(x[:-1], x[-1], tol=1e-12):
            return x[:-1], float(x[-1])
    raise ConvergenceError(f"Dykstra projection did not converge in {max_sweeps} sweeps")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def minimize(
    loss: Callable[[np.ndarray], LossEvaluation],
    project: Callable[[np.ndarray], np.ndarray],
    init,
    tol: float = 1e-8,
    max_iters: int = 50000,
    step: float = 1.0,
    shrink: float = 0.5,
    raise_on_budget: bool = True,
    accelerated: bool = True,
) -> OptimResult:
    """Projected gradient descent with backtracking.

    Stops when the unit-step projected-gradient displacement
    ``||x - P(x - grad)||`` falls to ``tol``. Each trial step starts from
    twice the last accepted step size, capped at ``step``.

    With ``accelerated=True`` the gradient step is taken from an
    extrapolated point (Nesterov momentum). Momentum is reset whenever the
    step would raise the loss, so accepted iterates never increase it.
    """
    x = project(np.asarray(init, dtype=float))
    ev = loss(x)
    history = [ev.value]
    t = step
    x_prev = x
    theta = 1.0
    for it in range(1, max_iters + 1):
        if np.linalg.norm(x - project(x - ev.gradient)) <= tol:
            return OptimResult(x, ev.value, it - 1, True, history)
        y, ev_y = x, ev
        if accelerated and theta > 1.0:
            y = project(x + ((theta_prev - 1.0) / theta) * (x - x_prev))
            ev_y = loss(y)
        t = min(step, 2.0 * t)
        while True:
            x_new = project(y - t * ev_y.gradient)
            dx = x_new - y
            ev_new = loss(x_new)
            bound = ev_y.value + float(ev_y.gradient @ dx) + float(dx @ dx) / (2.0 * t)
            if ev_new.value <= bound + 1e-15 * abs(ev_y.value) or t < 1e-20:
                break
            t *= shrink
        if ev_new.value > ev.value and y is not x:
            # momentum overshoot: restart from x without extrapolation
            theta = 1.0
            x_prev = x
            continue
        if not np.any(x_new - x):
            return OptimResult(x, ev.value, it, True, history)
        x_prev, x, ev = x, x_new, ev_new
        theta_prev = theta
        theta = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        history.append(ev.value)
    if raise_on_budget:
        raise ConvergenceError(f"projected gradient descent did not converge in {max_iters} iterations")
    return OptimResult(x, ev.value, max_iters, False, history)


def minimize_full_info(
    batch: Batch,
    W: float,
    init,
    refit_every: int = 5,
    tol: float = 1e-8,
    max_iters: int = 50000,
    fit_provider: Callable = fit_logconcave,
    step: float = 1.0,
    shrink: float = 0.5,
    max_halvings: int = 30,
):
    """Alternate residual refits with ``refit_every`` frozen-fit descent steps.

    A round of frozen-fit steps is kept only if the loss with the fit
    recomputed at the new point does not exceed the current one; otherwise
    the move is halved, up to ``max_halvings`` times, after which the
    current point is returned. Without this safeguard the alternation can
    cycle on small samples. It stops once a round moves ``alpha`` by at most
    ``tol``: the frozen-fit loss is not differentiable where a residual
    meets the end of the fitted support, so the inner projected-gradient
    test alone may never be met there.

    Returns ``(OptimResult, fit)`` where ``fit`` is the residual fit at the
    returned point.
    """
    alpha = project_l1(np.asarray(init, dtype=float), W)
    proj = lambda v: project_l1(v, W)  # noqa: E731
    fit = residual_fit(batch, alpha, fit_provider)
    current = loss_binary_known(batch, fit, alpha).value
    used = 0
    history = [current]
    while used < max_iters:
        frozen = lambda a, _f=fit: loss_binary_known(batch, _f, a)  # noqa: E731
        res = minimize(frozen, proj, alpha, tol=tol, max_iters=refit_every, step=step,
                       shrink=shrink, raise_on_budget=False)
        used += max(res.iterations, 1)
        cand = res.x
        for _ in range(max_halvings + 1):
            cand_fit = residual_fit(batch, cand, fit_provider)
            value = loss_binary_known(batch, cand_fit, cand).value
            if value <= current:
                break
            cand = 0.5 * (alpha + cand)
        else:
            return OptimResult(alpha, current, used, True, history), fit
        moved = np.linalg.norm(cand - alpha)
        alpha, fit, current = cand, cand_fit, value
        history.append(current)
        if moved <= tol:
            return OptimResult(alpha, current, used, True, history), fit
    raise ConvergenceError(f"alternating full-information fit did not converge in {max_iters} steps")
