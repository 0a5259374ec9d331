"""Synthetic repeated contextual first-price auctions.

Competing bids follow ``m = alpha0 . x + z``. Round data are generated in
fixed-size chunks, each from its own Philox stream keyed by the seed with
the chunk index in the counter, so round ``t`` depends only on ``(seed, t)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .noise import NoiseModel

CHUNK = 4096
CONTEXT_KINDS = ("unit_ball", "truncated_gaussian", "rademacher_scaled", "rademacher_raw")
VALUE_KINDS = ("constant", "clipped_linear")


@dataclass(frozen=True)
class ContextDist:
    """Context distribution.

    ``sigma`` is the per-coordinate standard deviation of the truncated
    Gaussian (rows with ``||x||_2 > 1`` are rejected); it defaults to
    ``1/sqrt(d)``. ``rademacher_raw`` has unit coordinates and norm
    ``sqrt(d)``, so it is only accepted by the lower-bound instance.
    """

    kind: str = "unit_ball"
    sigma: float | None = None

    def __post_init__(self):
        if self.kind not in CONTEXT_KINDS:
            raise ConfigError(f"unknown context kind {self.kind!r}; expected one of {CONTEXT_KINDS}")

    def sample(self, rng: np.random.Generator, n: int, d: int) -> np.ndarray:
        if self.kind == "unit_ball":
            g = rng.standard_normal((n, d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            return g * rng.random(n)[:, None] ** (1.0 / d)
        if self.kind == "truncated_gaussian":
            s = self.sigma if self.sigma is not None else 1.0 / np.sqrt(d)
            out = np.empty((0, d))
            while out.shape[0] < n:
                g = rng.normal(0.0, s, (n, d))
                out = np.vstack([out, g[np.linalg.norm(g, axis=1) <= 1.0]])
            return out[:n]
        signs = 2.0 * rng.integers(0, 2, (n, d)) - 1.0
        if self.kind == "rademacher_scaled":
            return signs / np.sqrt(d)
        return signs

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.sigma is not None:
            out["sigma"] = self.sigma
        return out


@dataclass(frozen=True)
class ValueFn:
    """Known valuation ``beta0(x)``.

    ``constant`` returns ``v``; ``clipped_linear`` returns
    ``clip(intercept + beta . x, 0, 1)``.
    """

    kind: str = "constant"
    v: float = 1.0
    beta: tuple = ()
    intercept: float = 0.5

    def __post_init__(self):
        if self.kind not in VALUE_KINDS:
            raise ConfigError(f"unknown value kind {self.kind!r}; expected one of {VALUE_KINDS}")
        if self.kind == "constant" and not 0.0 <= self.v <= 1.0:
            raise ConfigError("constant value must lie in [0, 1]")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "constant":
            return np.full(X.shape[0], float(self.v))
        return np.clip(self.intercept + X @ np.asarray(self.beta), 0.0, 1.0)

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "v": self.v}
        return {"kind": "clipped_linear", "beta": list(self.beta), "intercept": self.intercept}


@dataclass(frozen=True)
class EnvironmentConfig:
    d: int
    alpha0: np.ndarray
    W: float
    noise: NoiseModel
    context: ContextDist = field(default_factory=ContextDist)
    value: ValueFn = field(default_factory=ValueFn)
    seed: int = 0
    allow_raw_contexts: bool = False

    def __post_init__(self):
        a = np.asarray(self.alpha0, dtype=float).ravel()
        object.__setattr__(self, "alpha0", a)
        if a.size != self.d:
            raise ConfigError(f"alpha0 has length {a.size}, expected d={self.d}")
        if not self.W > 0:
            raise ConfigError("W must be positive")
        if np.abs(a).sum() > self.W + 1e-12:
            raise ConfigError(f"||alpha0||_1 = {np.abs(a).sum():.6g} exceeds W = {self.W}")
        if self.context.kind == "rademacher_raw" and not self.allow_raw_contexts:
            raise ConfigError("rademacher_raw contexts violate ||x||_2 <= 1; lower-bound instance only")
        if self.value.kind == "clipped_linear" and len(self.value.beta) != self.d:
            raise ConfigError("clipped_linear beta must have length d")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def with_seed(self, seed: int) -> "EnvironmentConfig":
        return EnvironmentConfig(self.d, self.alpha0, self.W, self.noise, self.context,
                                 self.value, int(seed), self.allow_raw_contexts)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "alpha0": self.alpha0.tolist(),
            "W": self.W,
            "noise": self.noise.to_dict(),
            "context": self.context.to_dict(),
            "value": self.value.to_dict(),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict, allow_raw_contexts: bool = False) -> "EnvironmentConfig":
        value = dict(d.get("value", {"kind": "constant", "v": 1.0}))
        return cls(
            d=int(d["d"]),
            alpha0=np.asarray(d["alpha0"], dtype=float),
            W=float(d["W"]),
            noise=NoiseModel.from_dict(d["noise"]),
            context=ContextDist(**d.get("context", {})),
            value=ValueFn(**value),
            seed=int(d.get("seed", 0)),
            allow_raw_contexts=allow_raw_contexts,
        )


@dataclass(frozen=True)
class RoundData:
    """Contexts, values and competing bids for rounds ``start .. start+len-1``."""

    start: int
    X: np.ndarray
    value: np.ndarray
    m: np.ndarray

    def __len__(self) -> int:
        return self.m.size

    def permuted(self, cut: int, rng: np.random.Generator) -> "RoundData":
        """Copy with rounds from index ``cut`` on shuffled."""
        idx = np.concatenate([np.arange(cut), cut + rng.permutation(len(self) - cut)])
        return RoundData(self.start, self.X[idx], self.value[idx], self.m[idx])


@dataclass(frozen=True)
class AuctionRound:
    t: int
    x: np.ndarray
    value: float
    bid: float
    m: float
    win: bool


@dataclass(frozen=True)
class Observation:
    win: bool
    m: float | None = None


def _chunk(cfg: EnvironmentConfig, c: int):
    bitgen = np.random.Philox(key=int(cfg.seed), counter=[0, 0, 0, int(c)])
    rng = np.random.Generator(bitgen)
    X = cfg.context.sample(rng, CHUNK, cfg.d)
    z = cfg.noise.sample(rng, CHUNK)
    return X, z


def draw_rounds(cfg: EnvironmentConfig, start: int, stop: int) -> RoundData:
    """Rounds ``start <= t < stop`` (0-based), independent of evaluation order."""
    if stop <= start:
        return RoundData(start, np.zeros((0, cfg.d)), np.zeros(0), np.zeros(0))
    c0, c1 = start // CHUNK, (stop - 1) // CHUNK
    parts = [_chunk(cfg, c) for c in range(c0, c1 + 1)]
    X = np.vstack([p[0] for p in parts])
    z = np.concatenate([p[1] for p in parts])
    lo = start - c0 * CHUNK
    X = X[lo:lo + stop - start]
    z = z[lo:lo + stop - start]
    return RoundData(start, X, cfg.value(X), X @ cfg.alpha0 + z)


def draw_round(cfg: EnvironmentConfig, t: int):
    """``(x, value, m)`` for round ``t``."""
    r = draw_rounds(cfg, t, t + 1)
    return r.X[0], float(r.value[0]), float(r.m[0])


def feedback(rnd: AuctionRound, mode: str) -> Observation:
    if mode == "binary":
        return Observation(bool(rnd.win))
    if mode == "full":
        return Observation(bool(rnd.win), float(rnd.m))
    raise ValueError("mode must be 'binary' or 'full'")


def expected_utility(cfg: EnvironmentConfig, b, x, value=None):
    """``(beta0(x) - b) F(b - alpha0 . x)`` under the true noise; vectorized over rows."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    v = cfg.value(X) if value is None else np.asarray(value, dtype=float)
    b = np.asarray(b, dtype=float)
    out = (v - b) * cfg.noise.cdf(b - X @ cfg.alpha0)
    return float(out[0]) if np.ndim(x) == 1 and out.size == 1 else out


def write_round_log(path, rounds: RoundData, bids, wins) -> None:
    """CSV with columns ``t, x_0..x_{d-1}, value, bid, m, win``."""
    d = rounds.X.shape[1]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *[f"x_{i}" for i in range(d)], "value", "bid", "m", "win"])
        for i in range(len(rounds)):
            w.writerow([
                rounds.start + i + 1,
                *[format(v, ".17g") for v in rounds.X[i]],
                format(rounds.value[i], ".17g"),
                format(bids[i], ".17g"),
                format(rounds.m[i], ".17g"),
                int(wins[i]),
            ])
