"""Nonparametric log-concave density estimation.

The estimator maximizes

    (1/n) * sum_i Psi(z_i) - integral exp(Psi)

over concave ``Psi`` that are piecewise linear with knots at the (sorted,
distinct) samples and ``-inf`` outside ``[min z, max z]``, optionally subject
to ``Psi <= cap``. Without a cap the maximizer integrates to one.

The solver is an active-set method: ``Psi`` is kept linear between a small set
of kink points; a kink is added where the directional derivative of the
objective is positive, the kink values are re-optimized by Newton's method
(the Hessian is tridiagonal in the kink values), and kinks that would turn
convex are dropped after a feasibility-preserving line search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded

from .errors import ConvergenceError, DegenerateError

_SERIES_CUTOFF = 0.1
_SERIES_TERMS = 14


def _series(d, k, shift=0):
    """sum_j d^j / j! * c_j for the moment integrals of u^k e^{du} on [0, 1].

    ``shift=0`` gives int u^k e^{du}; ``shift=1`` gives int u(1-u) e^{du}.
    """
    out = np.zeros_like(d)
    term = np.ones_like(d)
    for j in range(_SERIES_TERMS):
        if shift:
            coef = 1.0 / ((j + 2) * (j + 3))
        else:
            coef = 1.0 / (j + k + 1)
        out = out + term * coef
        term = term * d / (j + 1)
    return out


def _moments(r, s):
    """Integrals over u in [0, 1] of w(u) exp((1-u) r + u s).

    Returns ``(E0, E1, E2, E11)`` for weights ``1, u, u^2, u(1-u)``.
    """
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    d = s - r
    small = np.abs(d) < _SERIES_CUTOFF
    er = np.exp(r)
    es = np.exp(s)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        dd = np.where(small, 1.0, d)
        e0 = (es - er) / dd
        e1 = (es * (dd - 1.0) + er) / dd**2
        e2 = (es * (dd * dd - 2.0 * dd + 2.0) - 2.0 * er) / dd**3
        e11 = (es * (dd - 2.0) + er * (dd + 2.0)) / dd**3
    if small.any():
        ds = np.where(small, d, 0.0)
        e0 = np.where(small, er * _series(ds, 0), e0)
        e1 = np.where(small, er * _series(ds, 1), e1)
        e2 = np.where(small, er * _series(ds, 2), e2)
        e11 = np.where(small, er * _series(ds, 0, shift=1), e11)
    return e0, e1, e2, e11


def segment_integral(r, s, length):
    """Integral of exp(Psi) over a segment where Psi runs linearly from r to s."""
    return length * _moments(r, s)[0]


@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous empirical distribution function of a sample."""

    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", np.sort(np.asarray(self.samples, dtype=float)))

    @property
    def n(self) -> int:
        return self.samples.size

    def __call__(self, z):
        return np.searchsorted(self.samples, np.asarray(z, dtype=float), side="right") / self.n


@dataclass(frozen=True)
class LogConcaveFit:
    """Piecewise-linear concave log-density with knots at the samples.

    ``normalization`` is the integral of ``exp(Psi)``. Density and CDF are
    reported for ``exp(Psi) / normalization`` so that the CDF always ends at
    one, also when an active cap keeps the raw integral below one.
    """

    knots: np.ndarray
    psi_values: np.ndarray
    cap: float = np.inf
    normalization: float = 1.0
    weights: np.ndarray | None = None
    iterations: int = 0
    active: np.ndarray | None = None
    _slopes: np.ndarray = field(init=False, repr=False, compare=False)
    _lengths: np.ndarray = field(init=False, repr=False, compare=False)
    _cum_left: np.ndarray = field(init=False, repr=False, compare=False)
    _cum_right: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        psi = np.asarray(self.psi_values, dtype=float)
        lengths = np.diff(knots)
        seg = segment_integral(psi[:-1], psi[1:], lengths)
        cum_left = np.concatenate([[0.0], np.cumsum(seg)])
        cum_right = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "psi_values", psi)
        object.__setattr__(self, "_lengths", lengths)
        object.__setattr__(self, "_slopes", np.diff(psi) / lengths)
        object.__setattr__(self, "_cum_left", cum_left)
        object.__setattr__(self, "_cum_right", cum_right)

    @property
    def mass(self) -> float:
        return float(self._cum_left[-1])

    def _locate(self, z):
        z = np.asarray(z, dtype=float)
        k = np.clip(np.searchsorted(self.knots, z, side="right") - 1, 0, self.knots.size - 2)
        dz = np.clip(z - self.knots[k], 0.0, self._lengths[k])
        psi_z = self.psi_values[k] + self._slopes[k] * dz
        return z, k, dz, psi_z

    def log_density(self, z):
        z, _, _, psi_z = self._locate(z)
        inside = (z >= self.knots[0]) & (z <= self.knots[-1])
        return np.where(inside, psi_z - np.log(self.mass), -np.inf)

    def pdf(self, z):
        return np.exp(self.log_density(z))

    def cdf(self, z):
        z, k, dz, psi_z = self._locate(z)
        part = dz * _moments(self.psi_values[k], psi_z)[0]
        F = (self._cum_left[k] + part) / self.mass
        F = np.where(z < self.knots[0], 0.0, np.where(z >= self.knots[-1], 1.0, F))
        return np.clip(F, 0.0, 1.0)

    def sf(self, z):
        z, k, dz, psi_z = self._locate(z)
        part = (self._lengths[k] - dz) * _moments(psi_z, self.psi_values[k + 1])[0]
        S = (self._cum_right[k + 1] + part) / self.mass
        S = np.where(z < self.knots[0], 1.0, np.where(z >= self.knots[-1], 0.0, S))
        return np.clip(S, 0.0, 1.0)

    def logcdf(self, z):
        with np.errstate(divide="ignore"):
            return np.log(self.cdf(z))

    def logsf(self, z):
        with np.errstate(divide="ignore"):
            return np.log(self.sf(z))

    def dlogcdf(self, z):
        F = self.cdf(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(F > 0, self.pdf(z) / np.where(F > 0, F, 1.0), 0.0)

    def dlogsf(self, z):
        S = self.sf(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(S > 0, -self.pdf(z) / np.where(S > 0, S, 1.0), 0.0)

    def kink_indices(self, tol: float = 1e-7) -> np.ndarray:
        """Indices of knots where the slope of Psi strictly decreases, plus both ends.

        Uses the solver's active set when available; otherwise detects
        slope drops numerically.
        """
        if self.active is not None:
            return np.asarray(self.active, dtype=int)
        change = np.diff(self._slopes)
        scale = 1.0 + np.abs(self._slopes[:-1]) + np.abs(self._slopes[1:])
        inner = np.nonzero(change < -tol * scale)[0] + 1
        return np.concatenate([[0], inner, [self.knots.size - 1]])

    def to_record(self) -> str:
        """Flat text dump: one ``knot psi`` pair per line after a header."""
        lines = [f"# cap={self.cap!r} normalization={self.normalization!r}"]
        lines += [f"{k!r} {p!r}" for k, p in zip(self.knots.tolist(), self.psi_values.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_record(cls, text: str) -> "LogConcaveFit":
        header, *rows = [ln for ln in text.splitlines() if ln.strip()]
        meta = dict(part.split("=", 1) for part in header.lstrip("# ").split())
        arr = np.array([[float(v) for v in row.split()] for row in rows])
        return cls(arr[:, 0], arr[:, 1], cap=float(meta["cap"]), normalization=float(meta["normalization"]))


def cdf_of_fit(fit: LogConcaveFit, z):
    return fit.cdf(z)


# ---------------------------------------------------------------------------
# solver


class _Problem:
    """Objective pieces for distinct sorted points ``x`` with weights ``w``."""

    def __init__(self, x, w, cap):
        self.x = x
        self.w = w
        self.cap = cap
        self.dx = np.diff(x)
        self.n = x.size

    # values on the full grid from kink values
    def expand(self, K, psi):
        return np.interp(self.x, self.x[K], psi)

    def data_coefficients(self, K):
        """c = A^T w where A interpolates kink values onto all points."""
        tau = self.x[K]
        seg = np.clip(np.searchsorted(tau, self.x, side="right") - 1, 0, len(K) - 2)
        lam = (self.x - tau[seg]) / (tau[seg + 1] - tau[seg])
        c = np.bincount(seg, self.w * (1.0 - lam), minlength=len(K))
        c += np.bincount(seg + 1, self.w * lam, minlength=len(K))
        return c

    @staticmethod
    def value(c, dtau, psi):
        return float(c @ psi - np.sum(dtau * _moments(psi[:-1], psi[1:])[0]))

    @staticmethod
    def grad_hess(c, dtau, psi):
        r, s = psi[:-1], psi[1:]
        _, e1_rs, e2_rs, e11 = _moments(r, s)
        _, e1_sr, e2_sr, _ = _moments(s, r)
        g = c.copy()
        g[:-1] -= dtau * e1_sr
        g[1:] -= dtau * e1_rs
        diag = np.zeros_like(psi)
        diag[:-1] += dtau * e2_sr
        diag[1:] += dtau * e2_rs
        off = dtau * e11
        return g, diag, off

    def newton(self, K, psi, max_steps=200):
        """Maximize over functions linear between kinks, subject to psi <= cap."""
        c = self.data_coefficients(K)
        dtau = np.diff(self.x[K])
        cap = self.cap
        psi = np.minimum(psi, cap)
        val = self.value(c, dtau, psi)
        for _ in range(max_steps):
            g, diag, off = self.grad_hess(c, dtau, psi)
            fixed = (psi >= cap - 1e-12) & (g > 0)
            diag_f = np.where(fixed, 1.0, diag)
            off_f = np.where(fixed[:-1] | fixed[1:], 0.0, off)
            rhs = np.where(fixed, 0.0, g)
            ab = np.zeros((2, psi.size))
            # -L has tridiagonal Hessian (diag, off); the ascent step solves H d = g
            ab[0, 1:] = off_f
            ab[1] = diag_f
            step = solveh_banded(ab, rhs, lower=False, check_finite=False)
            decrement = float(rhs @ step)
            if decrement <= 1e-15 * max(1.0, abs(val)):
                break
            t = 1.0
            while True:
                cand = np.minimum(psi + t * step, cap)
                cval = self.value(c, dtau, cand)
                if cval >= val + 1e-4 * t * decrement or t < 1e-12:
                    break
                t *= 0.5
            if cval < val:
                break
            psi, val = cand, cval
        return psi, val

    def full_gradient(self, phi):
        """Partial derivatives of the objective w.r.t. values at every point."""
        r, s = phi[:-1], phi[1:]
        _, e1_rs, _, _ = _moments(r, s)
        _, e1_sr, _, _ = _moments(s, r)
        g = self.w.copy()
        g[:-1] -= self.dx * e1_sr
        g[1:] -= self.dx * e1_rs
        return g

    def directional(self, phi):
        """Derivatives along -(x - x_j)_+ and -(x_j - x)_+ for every j."""
        g = self.full_gradient(phi)
        x = self.x
        gx = g * x
        # sums over i > j
        right_g = np.concatenate([np.cumsum(g[::-1])[::-1][1:], [0.0]])
        right_gx = np.concatenate([np.cumsum(gx[::-1])[::-1][1:], [0.0]])
        # sums over i < j
        left_g = np.concatenate([[0.0], np.cumsum(g)[:-1]])
        left_gx = np.concatenate([[0.0], np.cumsum(gx)[:-1]])
        h_right = -(right_gx - x * right_g)
        h_left = -(x * left_g - left_gx)
        return h_right, h_left


def _kink_changes(x, K, psi):
    slopes = np.diff(psi) / np.diff(x[K])
    return np.diff(slopes)


def fit_logconcave(
    samples,
    cap: float | None = None,
    tol: float = 1e-12,
    max_iters: int = 20000,
) -> LogConcaveFit:
    """Log-concave maximum likelihood fit of a univariate sample.

    Parameters
    ----------
    samples : array-like
        Observations; ties are merged into weighted knots.
    cap : float, optional
        Upper bound on ``Psi`` (log of a density cap). ``None`` means no cap.
    tol : float
        Stop once no kink can raise the objective at rate above ``tol``.
    max_iters : int
        Budget of active-set changes.
    """
    z = np.asarray(samples, dtype=float).ravel()
    if z.size == 0 or not np.all(np.isfinite(z)):
        raise DegenerateError("samples must be a non-empty finite array")
    x, counts = np.unique(z, return_counts=True)
    if x.size < 3:
        raise DegenerateError(f"need at least 3 distinct samples, got {x.size}")
    w = counts / z.size
    cap_val = np.inf if cap is None else float(cap)
    prob = _Problem(x, w, cap_val)

    n = x.size
    K = np.array([0, n - 1])
    psi = np.full(2, min(cap_val, -np.log(x[-1] - x[0])))
    psi, val = prob.newton(K, psi)
    span = x[-1] - x[0]

    # candidates whose insertion was immediately undone; retried after progress
    stalled = np.zeros(n, dtype=bool)
    it = 0
    while True:
        it += 1
        if it > max_iters:
            raise ConvergenceError(f"log-concave fit did not converge in {max_iters} iterations")
        phi = prob.expand(K, psi)
        h_right, h_left = prob.directional(phi)
        h = np.maximum(h_right, h_left)
        h[K] = -np.inf
        h[stalled] = -np.inf
        j = int(np.argmax(h))
        if not h[j] > tol * span:
            break

        pos = int(np.searchsorted(K, j))
        K = np.insert(K, pos, j)
        psi = np.insert(psi, pos, phi[j])
        while True:
            cand, cand_val = prob.newton(K, psi)
            change = _kink_changes(x, K, cand)
            if np.all(change <= 0):
                psi, val = cand, cand_val
                break
            cur = _kink_changes(x, K, psi)
            bad = change > 0
            # largest t with (1 - t) * cur + t * change <= 0
            t = np.min(-cur[bad] / (change[bad] - cur[bad]))
            t = float(np.clip(t, 0.0, 1.0))
            psi = psi + t * (cand - psi)
            mixed = (1.0 - t) * cur + t * change
            drop = np.nonzero(mixed >= -1e-14 * (1.0 + np.abs(cur)))[0] + 1
            if drop.size == 0:
                drop = np.array([int(np.argmax(mixed)) + 1])
            K = np.delete(K, drop)
            psi = np.delete(psi, drop)
            val = prob.value(prob.data_coefficients(K), np.diff(x[K]), psi)
            it += 1
            if it > max_iters:
                raise ConvergenceError(f"log-concave fit did not converge in {max_iters} iterations")
        if j in K:
            stalled[:] = False
        else:
            stalled[j] = True

    psi_all = prob.expand(K, psi)
    mass = float(np.sum(segment_integral(psi_all[:-1], psi_all[1:], np.diff(x))))
    return LogConcaveFit(x, psi_all, cap=cap_val, normalization=mass, weights=w, iterations=it, active=K)


def logconcave_objective(samples, psi_values) -> float:
    """``(1/n) sum Psi(z_i) - integral exp(Psi)`` with ``Psi`` given at the sorted distinct samples."""
    z = np.asarray(samples, dtype=float).ravel()
    x, counts = np.unique(z, return_counts=True)
    psi = np.asarray(psi_values, dtype=float)
    return float(counts @ psi / z.size - np.sum(segment_integral(psi[:-1], psi[1:], np.diff(x))))


def knot_sandwich_check(fit: LogConcaveFit, ecdf: EmpiricalCdf, at: str = "kinks") -> float:
    """Largest violation of ``F_n(z) - 1/n <= F_hat(z) <= F_n(z)``.

    ``at="kinks"`` checks the points where ``Psi`` bends (and both ends),
    which is where the sandwich is guaranteed for the unconstrained MLE.
    ``at="samples"`` checks every sample and is reported as a diagnostic.
    """
    if at == "kinks":
        pts = fit.knots[fit.kink_indices()]
    elif at == "samples":
        pts = ecdf.samples
    else:
        raise ValueError("at must be 'kinks' or 'samples'")
    emp = ecdf(pts)
    est = fit.cdf(pts)
    viol = np.maximum.reduce([emp - 1.0 / ecdf.n - est, est - emp, np.zeros_like(est)])
    return float(viol.max())
