"""Bidding policies: the clairvoyant benchmark and episodic learners.

Every learner freezes its estimate within an episode, so an episode's bids
are computed in one vectorized call and the estimate is refit from that
episode's observations at its end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .environment import EnvironmentConfig
from .errors import ConfigError, ConvergenceError
from .logconcave import LogConcaveFit, fit_logconcave
from .noise import NoiseModel
from .optim import (
    Batch,
    LambdaSet,
    LossEvaluation,
    loss_binary_known,
    loss_binary_partial,
    minimize,
    minimize_full_info,
    project_l1,
)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class EpisodeSchedule:
    """Episode lengths ``round(T^(1 - 2^-s))`` with the last one cut so they sum to ``T``."""

    T: int
    lengths: tuple

    @classmethod
    def for_horizon(cls, T: int) -> "EpisodeSchedule":
        if T < 1:
            raise ConfigError("horizon must be positive")
        lengths, total, s = [], 0, 1
        while total < T:
            n = max(1, int(round(T ** (1.0 - 2.0 ** (-s)))))
            n = min(n, T - total)
            lengths.append(n)
            total += n
            s += 1
        return cls(int(T), tuple(lengths))

    @property
    def S(self) -> int:
        return len(self.lengths)

    @property
    def starts(self) -> tuple:
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.lengths)[:-1]]))

    def bounds(self):
        """``(episode, start, stop)`` triples with 1-based episodes and 0-based rounds."""
        for s, (a, n) in enumerate(zip(self.starts, self.lengths), start=1):
            yield s, a, a + n


@dataclass(frozen=True)
class OptimizerOptions:
    tol: float = 1e-8
    max_iters: int = 50000
    step: float = 1.0
    shrink: float = 0.5

    def kwargs(self) -> dict:
        return {"tol": self.tol, "max_iters": self.max_iters, "step": self.step, "shrink": self.shrink}


@dataclass(frozen=True)
class PolicyState:
    """Learner state. ``episode_index`` is 1 until the first update."""

    variant: str
    episode_index: int = 1
    alpha_hat: np.ndarray | None = None
    mu_hat: np.ndarray | None = None
    rho_hat: float | None = None
    fit: LogConcaveFit | None = None
    loss: float = float("nan")
    flagged: tuple = ()


@dataclass(frozen=True)
class UpdateDeps:
    """What ``end_episode_update`` needs besides the state and the batch."""

    W: float
    model: NoiseModel | None = None
    base: NoiseModel | None = None
    rho_min: float = 1e-3
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    refit_every: int = 5
    density_cap: float | None = None


# ---------------------------------------------------------------------------
# bid formulas


def plugin_bid(model: NoiseModel, alpha, X, value) -> np.ndarray:
    """``max{0, a + phi^-1(value - a)}`` with ``a = alpha . x``; rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    a = X @ np.asarray(alpha, dtype=float)
    v = np.broadcast_to(np.asarray(value, dtype=float), a.shape)
    return np.maximum(0.0, a + model.phi_inverse(v - a))


def clairvoyant_bid(cfg: EnvironmentConfig, x, value=None):
    """Optimal bid under the true ``alpha0`` and noise."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    v = cfg.value(X) if value is None else value
    b = plugin_bid(cfg.noise, cfg.alpha0, X, v)
    return float(b[0]) if np.ndim(x) == 1 else b


def _scalar_or_array(x, out):
    return float(out[0]) if np.ndim(x) == 1 else out


def bid_binary_known(state: PolicyState, model: NoiseModel, x, value):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if state.episode_index == 1:
        return _scalar_or_array(x, np.ones(X.shape[0]))
    return _scalar_or_array(x, plugin_bid(model, state.alpha_hat, X, value))


def partial_bid(base: NoiseModel, mu, rho: float, delta: float, X, value) -> np.ndarray:
    """``max{delta, (mu . x + phi0^-1(rho value - mu . x)) / rho}``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    a = X @ np.asarray(mu, dtype=float)
    v = np.broadcast_to(np.asarray(value, dtype=float), a.shape)
    return np.maximum(delta, (a + base.phi_inverse(rho * v - a)) / rho)


def bid_binary_partial(state: PolicyState, base: NoiseModel, delta: float, x, value):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if state.episode_index == 1:
        return _scalar_or_array(x, np.ones(X.shape[0]))
    return _scalar_or_array(x, partial_bid(base, state.mu_hat, state.rho_hat, delta, X, value))


def true_scale_ratio(cfg: EnvironmentConfig, base: NoiseModel) -> float:
    """``rho0`` such that the true noise CDF is ``F0(rho0 z)``."""
    if cfg.noise.kind != base.kind:
        raise ConfigError("true noise and base family must have the same kind")
    return base.scale / cfg.noise.scale


def partial_benchmark_bid(cfg: EnvironmentConfig, base: NoiseModel, delta: float, x, value=None):
    """Truncated clairvoyant bid in the scaled parametrization."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    v = cfg.value(X) if value is None else value
    rho0 = true_scale_ratio(cfg, base)
    return _scalar_or_array(x, partial_bid(base, cfg.alpha0 * rho0, rho0, delta, X, v))


def maximize_fitted_utility(dist, a, value, grid_tol: float = 1e-9) -> np.ndarray:
    """Vectorized golden-section search of ``(value - b) F(b - a)`` on ``[0, value]``.

    The objective is log-concave in ``b``. It vanishes below ``a + lo`` where
    ``lo`` is the left end of the fitted support, so the bracket starts
    there; if that is already past ``value`` the objective is identically
    zero and the bid is 0.
    """
    a = np.asarray(a, dtype=float)
    v = np.broadcast_to(np.asarray(value, dtype=float), a.shape).astype(float)
    left_support = dist.knots[0] if isinstance(dist, LogConcaveFit) else dist.support[0]
    lo = np.maximum(0.0, a + left_support)
    hi = v.copy()
    dead = lo >= hi
    lo = np.where(dead, 0.0, lo)
    hi = np.where(dead, 0.0, hi)

    def obj(b):
        return (v - b) * dist.cdf(b - a)

    c = hi - _GOLDEN * (hi - lo)
    e = lo + _GOLDEN * (hi - lo)
    fc, fe = obj(c), obj(e)
    while np.max(hi - lo) > grid_tol:
        left = fc >= fe
        hi = np.where(left, e, hi)
        lo = np.where(left, lo, c)
        new_c = np.where(left, hi - _GOLDEN * (hi - lo), e)
        new_e = np.where(left, c, lo + _GOLDEN * (hi - lo))
        f_new = obj(np.where(left, new_c, new_e))
        fc, fe = np.where(left, f_new, fe), np.where(left, fc, f_new)
        c, e = new_c, new_e
    b = 0.5 * (lo + hi)
    return np.where(dead, 0.0, b)


def bid_full_info(state: PolicyState, x, value, grid_tol: float = 1e-9):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if state.episode_index == 1:
        return _scalar_or_array(x, np.ones(X.shape[0]))
    return _scalar_or_array(x, maximize_fitted_utility(state.fit, X @ state.alpha_hat, value, grid_tol))


# ---------------------------------------------------------------------------
# episode updates


def least_squares_l1(X, m, W: float, init, optimizer: OptimizerOptions = OptimizerOptions()):
    """``argmin ||X a - m||^2 / (2n)`` over the L1 ball, via sufficient statistics."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = max(X.shape[0], 1)
    G = X.T @ X / n
    h = X.T @ np.asarray(m, dtype=float) / n
    c = float(np.dot(m, m)) / n

    def loss(a):
        Ga = G @ a
        return LossEvaluation(0.5 * float(a @ Ga) - float(h @ a) + 0.5 * c, Ga - h)

    return minimize(loss, lambda v: project_l1(v, W), init, **optimizer.kwargs())


def end_episode_update(state: PolicyState, batch: Batch, deps: UpdateDeps) -> PolicyState:
    """Refit the learner's estimate from one finished episode.

    On a :class:`ConvergenceError` the previous estimate is kept and the
    episode index is recorded in ``flagged``.
    """
    nxt = state.episode_index + 1
    d = batch.X.shape[1]
    opt = deps.optimizer
    try:
        if state.variant == "binary_known":
            init = state.alpha_hat if state.alpha_hat is not None else np.zeros(d)
            res = minimize(lambda a: loss_binary_known(batch, deps.model, a),
                           lambda v: project_l1(v, deps.W), init, **opt.kwargs())
            return replace(state, episode_index=nxt, alpha_hat=res.x, loss=res.value)
        if state.variant == "binary_partial":
            lset = LambdaSet(deps.W, deps.rho_min)
            if state.mu_hat is not None:
                init = np.append(state.mu_hat, state.rho_hat)
            else:
                init = np.append(np.zeros(d), 1.0)
            res = minimize(lambda th: loss_binary_partial(batch, deps.base, th[:-1], th[-1]),
                           lset.project_stacked, init, **opt.kwargs())
            return replace(state, episode_index=nxt, mu_hat=res.x[:-1], rho_hat=float(res.x[-1]),
                           loss=res.value)
        if state.variant == "full_info":
            if batch.m is None:
                raise ConfigError("full-information update needs competing bids")
            init = state.alpha_hat if state.alpha_hat is not None else np.zeros(d)
            res, _ = minimize_full_info(batch, deps.W, init, refit_every=deps.refit_every,
                                        fit_provider=_fit_provider(deps.density_cap), **opt.kwargs())
            fit = fit_logconcave(batch.m - batch.X @ res.x, cap=deps.density_cap)
            return replace(state, episode_index=nxt, alpha_hat=res.x, fit=fit, loss=res.value)
        if state.variant == "plugin_ls":
            raise ConfigError("plugin_ls updates use the full history; see PluginLeastSquares")
    except ConvergenceError:
        flagged = replace(state, episode_index=nxt, flagged=state.flagged + (state.episode_index,))
        return _ensure_estimate(flagged, batch, deps)
    return replace(state, episode_index=nxt)


def _ensure_estimate(state: PolicyState, batch: Batch, deps: UpdateDeps) -> PolicyState:
    """Neutral starting estimate for a learner whose first update failed."""
    d = batch.X.shape[1]
    if state.variant in ("binary_known", "full_info") and state.alpha_hat is None:
        state = replace(state, alpha_hat=np.zeros(d))
    if state.variant == "binary_partial" and state.mu_hat is None:
        state = replace(state, mu_hat=np.zeros(d), rho_hat=float(np.clip(1.0, deps.rho_min, deps.W)))
    if state.variant == "full_info" and state.fit is None:
        state = replace(state, fit=fit_logconcave(batch.m - batch.X @ state.alpha_hat, cap=deps.density_cap))
    return state


def _fit_provider(cap):
    if cap is None:
        return fit_logconcave
    return lambda z: fit_logconcave(z, cap=cap)


# ---------------------------------------------------------------------------
# policy objects used by the harness


class Policy:
    """Common interface: bids for a frozen episode, then an update."""

    variant = "base"
    feedback = "binary"

    def __init__(self, cfg: EnvironmentConfig):
        self.cfg = cfg
        self.state = PolicyState(self.variant)

    def bids(self, X, values) -> np.ndarray:
        raise NotImplementedError

    def benchmark(self, X, values) -> np.ndarray:
        return plugin_bid(self.cfg.noise, self.cfg.alpha0, X, values)

    def update(self, batch: Batch) -> None:
        self.state = replace(self.state, episode_index=self.state.episode_index + 1)

    def alpha_estimate(self):
        return self.state.alpha_hat

    def rho_estimate(self):
        return None

    def fitted_noise(self):
        return None


class Clairvoyant(Policy):
    variant = "clairvoyant"

    def bids(self, X, values):
        return self.benchmark(X, values)

    def alpha_estimate(self):
        return self.cfg.alpha0


class FixedBid(Policy):
    variant = "fixed_bid"

    def __init__(self, cfg, bid: float = 1.0):
        super().__init__(cfg)
        self.bid = float(bid)

    def bids(self, X, values):
        return np.full(np.atleast_2d(X).shape[0], self.bid)


class BinaryKnown(Policy):
    variant = "binary_known"

    def __init__(self, cfg, optimizer: OptimizerOptions = OptimizerOptions()):
        super().__init__(cfg)
        self.deps = UpdateDeps(W=cfg.W, model=cfg.noise, optimizer=optimizer)

    def bids(self, X, values):
        return np.atleast_1d(bid_binary_known(self.state, self.cfg.noise, X, values))

    def update(self, batch):
        self.state = end_episode_update(self.state, Batch(batch.X, batch.b, batch.win), self.deps)


class BinaryPartial(Policy):
    variant = "binary_partial"

    def __init__(self, cfg, base: NoiseModel, delta: float = 0.01, rho_min: float = 1e-3,
                 optimizer: OptimizerOptions = OptimizerOptions()):
        super().__init__(cfg)
        self.base = base
        self.delta = float(delta)
        self.rho0 = true_scale_ratio(cfg, base)
        if self.rho0 > cfg.W:
            raise ConfigError(f"rho0 = {self.rho0:g} exceeds W = {cfg.W}; the truth is outside the feasible set")
        self.deps = UpdateDeps(W=cfg.W, base=base, rho_min=rho_min, optimizer=optimizer)

    def bids(self, X, values):
        return np.atleast_1d(bid_binary_partial(self.state, self.base, self.delta, X, values))

    def benchmark(self, X, values):
        return np.atleast_1d(partial_benchmark_bid(self.cfg, self.base, self.delta, X, values))

    def update(self, batch):
        self.state = end_episode_update(self.state, Batch(batch.X, batch.b, batch.win), self.deps)

    def alpha_estimate(self):
        if self.state.mu_hat is None:
            return None
        return self.state.mu_hat / self.state.rho_hat

    def rho_estimate(self):
        return self.state.rho_hat


class FullInfo(Policy):
    variant = "full_info"
    feedback = "full"

    def __init__(self, cfg, refit_every: int = 5, grid_tol: float = 1e-9,
                 density_cap: float | None = None, optimizer: OptimizerOptions = OptimizerOptions()):
        super().__init__(cfg)
        self.grid_tol = grid_tol
        self.deps = UpdateDeps(W=cfg.W, optimizer=optimizer, refit_every=refit_every,
                               density_cap=density_cap)

    def bids(self, X, values):
        return np.atleast_1d(bid_full_info(self.state, X, values, self.grid_tol))

    def update(self, batch):
        self.state = end_episode_update(self.state, batch, self.deps)

    def fitted_noise(self):
        return self.state.fit


class PluginLeastSquares(Policy):
    """Plug-in bids with an L1-constrained least-squares estimate of ``alpha0``.

    The estimate uses every competing bid seen before the current episode and
    starts at zero, so the bid at round ``t`` depends only on rounds before
    ``t``.
    """

    variant = "plugin_ls"
    feedback = "full"

    def __init__(self, cfg, optimizer: OptimizerOptions = OptimizerOptions()):
        super().__init__(cfg)
        self.optimizer = optimizer
        self.state = PolicyState(self.variant, alpha_hat=np.zeros(cfg.d))
        self._X = []
        self._m = []

    def bids(self, X, values):
        return plugin_bid(self.cfg.noise, self.state.alpha_hat, X, values)

    def update(self, batch):
        self._X.append(batch.X)
        self._m.append(batch.m)
        X = np.vstack(self._X)
        m = np.concatenate(self._m)
        res = least_squares_l1(X, m, self.cfg.W, self.state.alpha_hat, self.optimizer)
        self.state = replace(self.state, episode_index=self.state.episode_index + 1,
                             alpha_hat=res.x, loss=res.value)


POLICY_KINDS = ("clairvoyant", "fixed_bid", "binary_known", "binary_partial", "full_info", "plugin_ls")


def make_policy(cfg: EnvironmentConfig, spec: dict, optimizer: OptimizerOptions) -> Policy:
    kind = spec.get("kind")
    if kind == "clairvoyant":
        return Clairvoyant(cfg)
    if kind == "fixed_bid":
        return FixedBid(cfg, spec.get("bid", 1.0))
    if kind == "binary_known":
        return BinaryKnown(cfg, optimizer)
    if kind == "binary_partial":
        base = NoiseModel.from_dict(spec.get("base", {"kind": cfg.noise.kind, "scale": 1.0}))
        return BinaryPartial(cfg, base, spec.get("delta", 0.01), spec.get("rho_min", 1e-3), optimizer)
    if kind == "full_info":
        return FullInfo(cfg, spec.get("refit_every", 5), spec.get("grid_tol", 1e-9),
                        spec.get("density_cap"), optimizer)
    if kind == "plugin_ls":
        return PluginLeastSquares(cfg, optimizer)
    raise ConfigError(f"unknown policy kind {kind!r}; expected one of {POLICY_KINDS}")
