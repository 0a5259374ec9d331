"""Parametric noise distributions for the competing-bid model.

Each :class:`NoiseModel` is a mean-zero, log-concave location/scale family
member. Besides the density and CDF, it exposes the first and second
derivatives of ``log F`` and ``log(1 - F)`` (used by the likelihood losses)
and the virtual-bid map ``phi(x) = x + F(x)/f(x)`` with its inverse.

All methods accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .errors import ConvergenceError, SupportError

KINDS = ("gaussian", "logistic", "laplace", "uniform")

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_HALF = math.log(0.5)


@dataclass(frozen=True)
class NoiseModel:
    """A mean-zero noise distribution.

    ``scale`` is the standard deviation for ``gaussian``, the logistic scale
    for ``logistic``, the Laplace scale ``b`` for ``laplace`` and the
    half-width for ``uniform``. ``window`` is ``W``: when given, constants are
    evaluated on ``[-W, 1 + W]`` and a uniform model must contain that window
    strictly inside its support.
    """

    kind: str
    scale: float
    window: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if not self.scale > 0:
            raise ValueError("noise scale must be positive")
        if self.window is not None:
            if not self.window > 0:
                raise ValueError("window W must be positive")
            if self.kind == "uniform" and not self.scale > 1.0 + self.window:
                raise SupportError(
                    f"uniform half-width {self.scale} does not strictly contain "
                    f"[-{self.window}, {1 + self.window}]"
                )

    # -- constructors -----------------------------------------------------

    @classmethod
    def gaussian(cls, sigma: float, window: float | None = None) -> "NoiseModel":
        return cls("gaussian", sigma, window)

    @classmethod
    def logistic(cls, scale: float, window: float | None = None) -> "NoiseModel":
        return cls("logistic", scale, window)

    @classmethod
    def laplace(cls, scale: float, window: float | None = None) -> "NoiseModel":
        return cls("laplace", scale, window)

    @classmethod
    def uniform(cls, halfwidth: float, window: float | None = None) -> "NoiseModel":
        return cls("uniform", halfwidth, window)

    def with_scale(self, scale: float) -> "NoiseModel":
        return replace(self, scale=scale)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "scale": self.scale}
        if self.window is not None:
            out["window"] = self.window
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(d["kind"], float(d["scale"]), d.get("window"))

    # -- basic functions ----------------------------------------------------

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "uniform":
            return (-self.scale, self.scale)
        return (-math.inf, math.inf)

    def std(self) -> float:
        s = self.scale
        return {
            "gaussian": s,
            "logistic": s * math.pi / math.sqrt(3.0),
            "laplace": s * math.sqrt(2.0),
            "uniform": s / math.sqrt(3.0),
        }[self.kind]

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        s = self.scale
        u = z / s
        if self.kind == "gaussian":
            return -0.5 * u * u - _LOG_SQRT_2PI - math.log(s)
        if self.kind == "logistic":
            return special.log_expit(u) + special.log_expit(-u) - math.log(s)
        if self.kind == "laplace":
            return -np.abs(u) - math.log(2.0 * s)
        inside = np.abs(z) <= s
        return np.where(inside, -math.log(2.0 * s), -np.inf)

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def pdf_derivative(self, z):
        z = np.asarray(z, dtype=float)
        s = self.scale
        f = self.pdf(z)
        if self.kind == "gaussian":
            return -z / (s * s) * f
        if self.kind == "logistic":
            return f * (1.0 - 2.0 * special.expit(z / s)) / s
        if self.kind == "laplace":
            return -np.sign(z) * f / s
        return np.zeros_like(z)

    def logcdf(self, z):
        z = np.asarray(z, dtype=float)
        s = self.scale
        u = z / s
        if self.kind == "gaussian":
            return special.log_ndtr(u)
        if self.kind == "logistic":
            return special.log_expit(u)
        if self.kind == "laplace":
            with np.errstate(over="ignore"):
                return np.where(u < 0, _LOG_HALF + u, np.log1p(-0.5 * np.exp(-np.abs(u))))
        with np.errstate(divide="ignore"):
            return np.log(np.clip((z + s) / (2.0 * s), 0.0, 1.0))

    def logsf(self, z):
        """``log(1 - F(z))``, by symmetry of every supported kind."""
        return self.logcdf(-np.asarray(z, dtype=float))

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        s = self.scale
        if self.kind == "gaussian":
            return special.ndtr(z / s)
        if self.kind == "logistic":
            return special.expit(z / s)
        if self.kind == "uniform":
            return np.clip((z + s) / (2.0 * s), 0.0, 1.0)
        return np.exp(self.logcdf(z))

    def sf(self, z):
        return self.cdf(-np.asarray(z, dtype=float))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        s = self.scale
        if self.kind == "gaussian":
            return rng.normal(0.0, s, size)
        if self.kind == "logistic":
            return rng.logistic(0.0, s, size)
        if self.kind == "laplace":
            return rng.laplace(0.0, s, size)
        return rng.uniform(-s, s, size)

    # -- log-derivatives --------------------------------------------------

    def dlogcdf(self, z):
        """``d/dz log F(z) = f(z) / F(z)``."""
        z = np.asarray(z, dtype=float)
        s = self.scale
        u = z / s
        if self.kind == "gaussian":
            with np.errstate(over="ignore"):
                return np.exp(self.logpdf(z) - special.log_ndtr(u))
        if self.kind == "logistic":
            return special.expit(-u) / s
        if self.kind == "laplace":
            with np.errstate(over="ignore", divide="ignore"):
                right = 1.0 / (s * (2.0 * np.exp(np.abs(u)) - 1.0))
            return np.where(u < 0, 1.0 / s, right)
        with np.errstate(divide="ignore"):
            return np.where(np.abs(z) < s, 1.0 / (z + s), np.where(z >= s, 0.0, np.inf))

    def dlogsf(self, z):
        """``d/dz log(1 - F(z)) = -f(z) / (1 - F(z))``."""
        return -self.dlogcdf(-np.asarray(z, dtype=float))

    def d2logcdf(self, z):
        z = np.asarray(z, dtype=float)
        s = self.scale
        u = z / s
        if self.kind == "gaussian":
            lam = self.dlogcdf(z)
            return -(u / s) * lam - lam * lam
        if self.kind == "logistic":
            return -self.pdf(z) / s
        if self.kind == "laplace":
            with np.errstate(over="ignore", invalid="ignore"):
                e = np.exp(np.abs(u))
                right = -2.0 * e / (s * s * (2.0 * e - 1.0) ** 2)
            return np.where(u < 0, 0.0, np.nan_to_num(right))
        with np.errstate(divide="ignore"):
            return np.where(np.abs(z) < s, -1.0 / (z + s) ** 2, np.where(z >= s, 0.0, -np.inf))

    def d2logsf(self, z):
        return self.d2logcdf(-np.asarray(z, dtype=float))

    # -- virtual bid map --------------------------------------------------

    def mills(self, x):
        """``F(x) / f(x)``; infinite where the density vanishes."""
        x = np.asarray(x, dtype=float)
        s = self.scale
        u = x / s
        if self.kind == "gaussian":
            with np.errstate(over="ignore"):
                return np.exp(special.log_ndtr(u) - self.logpdf(x))
        if self.kind == "logistic":
            with np.errstate(over="ignore"):
                return s * (1.0 + np.exp(u))
        if self.kind == "laplace":
            with np.errstate(over="ignore"):
                return np.where(u < 0, s, s * (2.0 * np.exp(np.abs(u)) - 1.0))
        return np.where(np.abs(x) <= s, x + s, np.inf)

    def phi(self, x):
        """Virtual bid map ``x + F(x)/f(x)``.

        Raises :class:`SupportError` where ``f(x) = 0``.
        """
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform" and np.any(np.abs(x) > self.scale):
            raise SupportError("phi is undefined where the uniform density vanishes")
        return x + self.mills(x)

    def phi_inverse(self, y, tol: float = 1e-10):
        """Solve ``phi(x) = y`` by bracketed bisection.

        ``phi`` is strictly increasing with ``phi(x) > x``, so ``x = y`` is an
        upper bracket and the lower bracket is found by doubling steps.
        For the uniform model ``y`` is clamped to the closure of the range
        ``[-h, 3h]`` and the closed form ``(y - h)/2`` is used.
        """
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 0
        y = np.atleast_1d(y)
        if self.kind == "uniform":
            h = self.scale
            x = (np.clip(y, -h, 3.0 * h) - h) / 2.0
            return float(x[0]) if scalar else x

        hi = y.copy()
        step = np.full_like(y, self.scale)
        lo = y - step
        for _ in range(64):
            bad = self.phi(lo) > y
            if not bad.any():
                break
            step = np.where(bad, 2.0 * step, step)
            lo = np.where(bad, y - step, lo)
        else:
            if np.any(self.phi(lo) > y):
                raise ConvergenceError("phi^-1 bracket expansion exceeded 64 doublings")

        mid = 0.5 * (lo + hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            val = self.phi(mid)
            done = (np.abs(val - y) <= tol) | (hi - lo <= 4.0 * np.spacing(np.maximum(np.abs(lo), np.abs(hi))))
            if done.all():
                break
            above = val > y
            hi = np.where(above & ~done, mid, hi)
            lo = np.where(~above & ~done, mid, lo)
        return float(mid[0]) if scalar else mid


# module-level functional aliases


def pdf(model: NoiseModel, z):
    return model.pdf(z)


def cdf(model: NoiseModel, z):
    return model.cdf(z)


def virtual_phi(model: NoiseModel, x):
    return model.phi(x)


def virtual_phi_inverse(model: NoiseModel, y, tol: float = 1e-10):
    return model.phi_inverse(y, tol)


@dataclass(frozen=True)
class NoiseConstants:
    """Grid-scanned constants of a noise model on ``[-W, 1 + W]``.

    ``B3`` bounds ``|f'|``. ``ell_W`` may be zero for the Laplace model,
    whose ``log F`` is linear on the negative half-line.
    """

    W: float
    h_W: float
    ell_W: float
    B1: float
    B2: float
    B3: float

    @property
    def curvature(self) -> float:
        """Utility curvature bound ``C = 2 B2 + B3``."""
        return 2.0 * self.B2 + self.B3


def noise_constants(model: NoiseModel, W: float | None = None, step: float = 1e-3) -> NoiseConstants:
    if W is None:
        W = model.window
    if W is None:
        raise ValueError("a window W is required to compute noise constants")
    n = int(round((1.0 + 2.0 * W) / step)) + 1
    z = np.linspace(-W, 1.0 + W, n)
    f = model.pdf(z)
    first = np.maximum(np.abs(model.dlogcdf(z)), np.abs(model.dlogsf(z)))
    second = np.minimum(-model.d2logcdf(z), -model.d2logsf(z))
    return NoiseConstants(
        W=float(W),
        h_W=float(first.max()),
        ell_W=float(max(second.min(), 0.0)),
        B1=float(f.min()),
        B2=float(f.max()),
        B3=float(np.abs(model.pdf_derivative(z)).max()),
    )
