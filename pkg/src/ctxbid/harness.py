"""Experiment runner: regret traces, scaling fits, the lower-bound instance and outputs."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .environment import (
    ContextDist,
    EnvironmentConfig,
    RoundData,
    ValueFn,
    draw_rounds,
    expected_utility,
    write_round_log,
)
from .errors import ConfigError, InsufficientDataError
from .noise import NoiseModel
from .optim import Batch
from .policies import EpisodeSchedule, OptimizerOptions, Policy, make_policy

log = logging.getLogger(__name__)

DEFAULT_HORIZONS = (1000, 3162, 10000, 31623, 100000)
TRACE_COLUMNS = ("T", "replication", "t", "inst_regret", "cum_regret", "bid", "benchmark_bid",
                 "win", "realized_utility")
EPISODE_COLUMNS = ("T", "replication", "episode", "start_t", "length", "alpha_err_l2", "rho_hat",
                   "loss", "converged", "cdf_sup_err")
SCALING_COLUMNS = ("T", "mean_R", "std_R", "slope", "intercept", "r2")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else format(v, ".17g")


def run_seed(seed_base: int, T: int, replication: int) -> int:
    """``seed_base`` XOR a 64-bit hash of ``(T, replication)``."""
    h = hashlib.blake2b(f"{int(T)}:{int(replication)}".encode(), digest_size=8).digest()
    return (int(seed_base) ^ int.from_bytes(h, "little")) & (2**64 - 1)


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentConfig
    policy: dict
    horizons: tuple = DEFAULT_HORIZONS
    replications: int = 10
    seed_base: int = 0
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    output_dir: str | None = None
    trace_every: int = 1
    round_log: bool = False
    workers: int = 1
    name: str = "experiment"

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(int(t) for t in self.horizons))
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if list(self.horizons) != sorted(self.horizons) or len(set(self.horizons)) != len(self.horizons):
            raise ConfigError("horizons must be strictly increasing")
        if not self.horizons or self.horizons[0] < 1:
            raise ConfigError("horizons must be positive")
        if self.trace_every < 1:
            raise ConfigError("trace_every must be at least 1")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "environment": self.environment.to_dict(),
            "policy": dict(self.policy),
            "horizons": list(self.horizons),
            "replications": self.replications,
            "seed_base": int(self.seed_base),
            "optimizer": asdict(self.optimizer),
            "output_dir": self.output_dir,
            "trace_every": self.trace_every,
            "round_log": self.round_log,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        policy = dict(d.get("policy", {"kind": "binary_known"}))
        env = EnvironmentConfig.from_dict(d["environment"],
                                          allow_raw_contexts=policy.get("kind") == "plugin_ls")
        return cls(
            environment=env,
            policy=policy,
            horizons=tuple(d.get("horizons", DEFAULT_HORIZONS)),
            replications=int(d.get("replications", 10)),
            seed_base=int(d.get("seed_base", 0)),
            optimizer=OptimizerOptions(**d.get("optimizer", {})),
            output_dir=d.get("output_dir"),
            trace_every=int(d.get("trace_every", 1)),
            round_log=bool(d.get("round_log", False)),
            workers=int(d.get("workers", 1)),
            name=str(d.get("name", "experiment")),
        )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes) -> "ExperimentConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return ExperimentConfig(**d)


@dataclass
class EpisodeRecord:
    episode: int
    start_t: int
    length: int
    alpha_err_l2: float
    rho_hat: float | None
    loss: float
    converged: bool
    cdf_sup_err: float | None = None


@dataclass
class RegretTrace:
    """Per-round regret against the benchmark, computed with the true noise CDF."""

    T: int
    replication: int
    seed: int
    inst_regret: np.ndarray
    cum_regret: np.ndarray
    bid: np.ndarray
    benchmark_bid: np.ndarray
    win: np.ndarray
    realized_utility: np.ndarray
    episodes: list
    rounds: RoundData | None = None

    @property
    def total(self) -> float:
        return float(self.cum_regret[-1]) if self.T else 0.0


def _cdf_sup_error(fit, noise: NoiseModel, W: float) -> float:
    z = np.arange(-W, 1.0 + W + 1e-12, 1e-2)
    return float(np.abs(fit.cdf(z) - noise.cdf(z)).max())


def simulate(env: EnvironmentConfig, policy: Policy, T: int, replication: int = 0,
             rounds: RoundData | None = None, keep_rounds: bool = False) -> RegretTrace:
    """Run one policy for ``T`` rounds; bids are frozen within each episode."""
    if rounds is None:
        rounds = draw_rounds(env, 0, T)
    sched = EpisodeSchedule.for_horizon(T)
    bids = np.empty(T)
    episodes = []
    for s, a, b in sched.bounds():
        X, v, m = rounds.X[a:b], rounds.value[a:b], rounds.m[a:b]
        bid = np.asarray(policy.bids(X, v), dtype=float)
        bids[a:b] = bid
        win = bid >= m
        policy.update(Batch(X, bid, win, m if policy.feedback == "full" else None))
        st = policy.state
        est = policy.alpha_estimate()
        err = float(np.linalg.norm(est - env.alpha0)) if est is not None else float("nan")
        fit = policy.fitted_noise()
        episodes.append(EpisodeRecord(
            episode=s, start_t=a + 1, length=b - a, alpha_err_l2=err,
            rho_hat=policy.rho_estimate(), loss=st.loss, converged=s not in st.flagged,
            cdf_sup_err=_cdf_sup_error(fit, env.noise, env.W) if fit is not None else None,
        ))
        log.debug("T=%d rep=%d episode %d/%d err=%.4g", T, replication, s, sched.S, err)
    bench = np.asarray(policy.benchmark(rounds.X, rounds.value), dtype=float)
    u_star = expected_utility(env, bench, rounds.X, rounds.value)
    u = expected_utility(env, bids, rounds.X, rounds.value)
    inst = u_star - u
    win = bids >= rounds.m
    return RegretTrace(
        T=T, replication=replication, seed=int(env.seed), inst_regret=inst,
        cum_regret=np.cumsum(inst), bid=bids, benchmark_bid=bench, win=win,
        realized_utility=(rounds.value - bids) * win, episodes=episodes,
        rounds=rounds if keep_rounds else None,
    )


def _run_one(args) -> RegretTrace:
    cfg, T, rep = args
    env = cfg.environment.with_seed(run_seed(cfg.seed_base, T, rep))
    policy = make_policy(env, cfg.policy, cfg.optimizer)
    t0 = time.perf_counter()
    tr = simulate(env, policy, T, rep, keep_rounds=cfg.round_log)
    log.info("T=%d rep=%d R(T)=%.6g (%.1fs)", T, rep, tr.total, time.perf_counter() - t0)
    return tr


def run_experiment(cfg: ExperimentConfig) -> list:
    """One trace per (horizon, replication), ordered by horizon then replication."""
    make_policy(cfg.environment, cfg.policy, cfg.optimizer)  # validate early
    jobs = [(cfg, T, r) for T in cfg.horizons for r in range(cfg.replications)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r_squared: float
    horizons: tuple = ()
    mean_R: tuple = ()
    std_R: tuple = ()


def fit_scaling(groups) -> ScalingFit:
    """Least-squares slope of ``log R(T)`` on ``log T``, averaging over replications.

    ``groups`` maps each horizon to its regrets, or is a list of traces.
    """
    if not isinstance(groups, dict):
        grouped: dict = {}
        for tr in groups:
            grouped.setdefault(tr.T, []).append(tr.total)
        groups = grouped
    Ts = sorted(groups)
    if len(Ts) < 3:
        raise InsufficientDataError(f"need at least 3 distinct horizons, got {len(Ts)}")
    means = np.array([np.mean(groups[T]) for T in Ts], dtype=float)
    sds = np.array([np.std(groups[T], ddof=1) if len(groups[T]) > 1 else 0.0 for T in Ts])
    if np.any(means <= 0):
        raise InsufficientDataError("mean regret must be positive at every horizon to fit a power law")
    res = stats.linregress(np.log(Ts), np.log(means))
    return ScalingFit(float(res.slope), float(res.intercept), float(res.rvalue**2),
                      tuple(Ts), tuple(means.tolist()), tuple(sds.tolist()))


# ---------------------------------------------------------------------------
# lower-bound instance


def lower_bound_value(W: float, sigma: float) -> float:
    """Smallest constant value satisfying ``beta0 >= delta + sigma / g((delta + W)/sigma)``.

    ``g`` is the standard normal density and
    ``delta = min{sigma^2 / (2 (W + 3)), g((1 + W)/sigma) sigma^2 / 2}``.
    """
    g = stats.norm.pdf
    delta = min(sigma**2 / (2.0 * (W + 3.0)), g((1.0 + W) / sigma) * sigma**2 / 2.0)
    beta0 = delta + sigma / g((delta + W) / sigma)
    if beta0 > 1.0:
        raise ConfigError(f"lower-bound value {beta0:.4g} exceeds 1 for W={W}, sigma={sigma}")
    return float(beta0)


def lower_bound_config(
    horizons=DEFAULT_HORIZONS,
    replications: int = 10,
    seed_base: int = 0,
    W: float = 0.2,
    sigma: float = 0.2,
    d: int = 2,
    alpha0=None,
) -> ExperimentConfig:
    """Rademacher (+-1) contexts, Gaussian noise, constant value, least-squares plug-in policy.

    ``alpha0`` defaults to ``W e_1`` so that ``|alpha0 . x| = W`` on every round.
    """
    if alpha0 is None:
        alpha0 = np.zeros(d)
        alpha0[0] = W
    env = EnvironmentConfig(
        d=d, alpha0=np.asarray(alpha0, dtype=float), W=W,
        noise=NoiseModel.gaussian(sigma),
        context=ContextDist("rademacher_raw"),
        value=ValueFn("constant", v=lower_bound_value(W, sigma)),
        allow_raw_contexts=True,
    )
    return ExperimentConfig(env, {"kind": "plugin_ls"}, horizons=tuple(horizons),
                            replications=replications, seed_base=seed_base, name="lower_bound")


def run_lower_bound_instance(horizons=DEFAULT_HORIZONS, replications: int = 10, seed_base: int = 0,
                             **kwargs):
    """Regret scaling of the plug-in policy on the lower-bound instance."""
    cfg = lower_bound_config(horizons, replications, seed_base, **kwargs)
    traces = run_experiment(cfg)
    return fit_scaling(traces), traces


def measurability_audit(cfg: ExperimentConfig, T: int, cut: int, seed: int = 0) -> float:
    """Largest change in bids before ``cut`` when the rounds from ``cut`` on are shuffled.

    Zero means the bids before ``cut`` ignore all later rounds.
    """
    env = cfg.environment.with_seed(run_seed(cfg.seed_base, T, 0))
    rounds = draw_rounds(env, 0, T)
    shuffled = rounds.permuted(cut, np.random.default_rng(seed))
    a = simulate(env, make_policy(env, cfg.policy, cfg.optimizer), T, rounds=rounds)
    b = simulate(env, make_policy(env, cfg.policy, cfg.optimizer), T, rounds=shuffled)
    return float(np.abs(a.bid[:cut] - b.bid[:cut]).max())


# ---------------------------------------------------------------------------
# outputs


def _commit_id() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_trace_csv(path, traces, every: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for tr in traces:
            idx = np.arange(every - 1, tr.T, every)
            if tr.T and idx[-1] != tr.T - 1:
                idx = np.append(idx, tr.T - 1)
            for i in idx:
                w.writerow([tr.T, tr.replication, i + 1, _fmt(tr.inst_regret[i]), _fmt(tr.cum_regret[i]),
                            _fmt(tr.bid[i]), _fmt(tr.benchmark_bid[i]), _fmt(bool(tr.win[i])),
                            _fmt(tr.realized_utility[i])])


def write_episode_csv(path, traces) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for tr in traces:
            for e in tr.episodes:
                w.writerow([tr.T, tr.replication, e.episode, e.start_t, e.length, _fmt(e.alpha_err_l2),
                            _fmt(e.rho_hat), _fmt(e.loss), _fmt(bool(e.converged)), _fmt(e.cdf_sup_err)])


def write_scaling_csv(path, fit: ScalingFit | None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCALING_COLUMNS)
        if fit is None:
            return
        for T, m, s in zip(fit.horizons, fit.mean_R, fit.std_R):
            w.writerow([T, _fmt(m), _fmt(s), _fmt(fit.slope), _fmt(fit.intercept), _fmt(fit.r_squared)])


def write_outputs(traces, fit: ScalingFit | None, out_dir, cfg: ExperimentConfig | None = None,
                  wall_time: float | None = None, trace_every: int = 1) -> dict:
    """Write ``trace.csv``, ``episodes.csv``, ``scaling.csv`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trace": out / "trace.csv",
        "episodes": out / "episodes.csv",
        "scaling": out / "scaling.csv",
        "manifest": out / "manifest.json",
    }
    write_trace_csv(paths["trace"], traces, trace_every)
    write_episode_csv(paths["episodes"], traces)
    write_scaling_csv(paths["scaling"], fit)
    if cfg is not None and cfg.round_log:
        for tr in traces:
            if tr.rounds is not None:
                p = out / f"rounds_T{tr.T}_r{tr.replication}.csv"
                write_round_log(p, tr.rounds, tr.bid, tr.win)
    manifest = {
        "config": cfg.to_dict() if cfg is not None else None,
        "runs": [{"T": tr.T, "replication": tr.replication, "seed": str(tr.seed), "R_T": tr.total}
                 for tr in traces],
        "scaling": asdict(fit) if fit is not None else None,
        "commit": _commit_id(),
        "wall_time_s": wall_time,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2, default=list)
    return paths
