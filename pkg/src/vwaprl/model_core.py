"""Market simulator: model constants, the jump-driven market speed and episode rollout.

State at grid node ``i`` is ``Y = (S, X, Q, mu)``: midprice, cash, inventory and
the market's trading speed.  One step of length ``h`` under a selling speed ``v``:

    S'  = S - b v h + sigma sqrt(h) Z
    S^  = S' - k v                 (execution price)
    X'  = X + S^ v h
    Q'  = Q - v h
    mu' = (1 - kappa h) mu + M     (M = sum of the jump sizes arriving in the step)

and the agent collects the running reward ``-phi (v - rho mu)^2 h`` (``mu`` taken
before the step).  At the horizon the residual block is marked at
``S_T - alpha Q_T``, giving the terminal reward ``X_T + Q_T (S_T - alpha Q_T)``.

Jump sizes are exponential with MEAN ``eta_mean``.  With the two preset
environments this makes the stationary mean ``lam * eta_mean / kappa`` equal to
the initial speed ``mu0 = 25``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "MarketParams",
    "PenaltyParams",
    "TimeGrid",
    "MarketState",
    "StepRecord",
    "Trajectory",
    "RngStreams",
    "MarketNoise",
    "Environment",
    "EpisodeAborted",
    "draw_market_noise",
]


class EpisodeAborted(RuntimeError):
    """Raised when a policy produces a non-finite action during a rollout."""

    def __init__(self, node: int, value: float):
        super().__init__(f"non-finite action {value!r} at grid node {node}")
        self.node = node
        self.value = value


def _require(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise ValueError(f"{name}: {msg}")


@dataclass(frozen=True)
class MarketParams:
    """Environment constants (unknown to a model-free agent)."""

    kappa: float = 20.0
    lam: float = 50.0
    eta_mean: float = 10.0
    b: float = 0.1
    k: float = 0.1
    alpha: float = 100.0
    sigma: float = 0.5
    s0: float = 20.0
    x0: float = 0.0
    q0: float = 1.25
    mu0: float = 25.0

    def __post_init__(self):
        for f in fields(self):
            _require(math.isfinite(getattr(self, f.name)), f.name, "must be finite")
        _require(self.kappa > 0, "kappa", "must be > 0")
        _require(self.lam >= 0, "lambda", "must be >= 0")
        _require(self.eta_mean > 0, "eta_mean", "must be > 0")
        _require(self.b >= 0, "b", "must be >= 0")
        _require(self.k >= 0, "k", "must be >= 0")
        _require(self.sigma >= 0, "sigma", "must be >= 0")
        _require(self.alpha > self.b / 2, "alpha", "must exceed b/2")
        _require(self.mu0 >= 0, "mu0", "must be >= 0")


@dataclass(frozen=True)
class PenaltyParams:
    """Agent-side constants: tracking weight, target fraction, temperature."""

    phi: float = 0.1
    rho: float = 0.02
    gamma: float = 0.001

    def __post_init__(self):
        for f in fields(self):
            _require(math.isfinite(getattr(self, f.name)), f.name, "must be finite")
        _require(self.phi > 0, "phi", "must be > 0")
        _require(self.rho >= 0, "rho", "must be >= 0")
        _require(self.gamma >= 0, "gamma", "must be >= 0")


@dataclass(frozen=True)
class TimeGrid:
    t_end: float = 1.0
    n_steps: int = 100

    def __post_init__(self):
        _require(self.t_end > 0 and math.isfinite(self.t_end), "t_end", "must be > 0")
        _require(int(self.n_steps) == self.n_steps and self.n_steps >= 1, "n_steps", "must be an integer >= 1")

    @property
    def step(self) -> float:
        return self.t_end / self.n_steps

    def times(self) -> np.ndarray:
        """Node times ``t_0 .. t_G``."""
        return np.arange(self.n_steps + 1) * self.step


@dataclass(frozen=True)
class MarketState:
    s: float
    x: float
    q: float
    mu: float
    t_index: int = 0

    def as_input(self, grid: TimeGrid) -> np.ndarray:
        """Network input vector ``(t, S, X, Q, mu)``."""
        return np.array([self.t_index * grid.step, self.s, self.x, self.q, self.mu])


@dataclass(frozen=True)
class StepRecord:
    state: MarketState
    action: float
    reward: float
    log_density: Optional[float] = None


class RngStreams:
    """Independent generators for each source of randomness in a run.

    Market paths never depend on what the policy draws, so swapping policies
    keeps the same price and jump sequences for a given seed.
    """

    NAMES = ("price", "jump_count", "jump_size", "policy", "test_fn")

    def __init__(self, seed: Union[int, np.random.SeedSequence, None] = 0):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.seed_sequence = ss
        for name, child in zip(self.NAMES, ss.spawn(len(self.NAMES))):
            setattr(self, name, np.random.Generator(np.random.PCG64(child)))

    @classmethod
    def split(cls, seed, n: int) -> list["RngStreams"]:
        """``n`` independent stream bundles derived from one run seed."""
        return [cls(child) for child in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class MarketNoise:
    """Pre-drawn market randomness for ``n`` episodes of ``G`` steps."""

    z: np.ndarray
    jumps: np.ndarray

    @property
    def n_episodes(self) -> int:
        return self.z.shape[0]


def draw_market_noise(streams: RngStreams, market: MarketParams, grid: TimeGrid, n: int = 1) -> MarketNoise:
    G = grid.n_steps
    z = streams.price.standard_normal((n, G))
    counts = streams.jump_count.poisson(market.lam * grid.step, (n, G))
    total = int(counts.sum())
    jumps = np.zeros(n * G)
    if total:
        sizes = streams.jump_size.exponential(market.eta_mean, total)
        np.add.at(jumps, np.repeat(np.arange(n * G), counts.ravel()), sizes)
    return MarketNoise(z=z, jumps=jumps.reshape(n, G))


@dataclass
class Trajectory:
    """One episode.  Node arrays have ``G + 1`` entries, step arrays ``G``."""

    s: np.ndarray
    x: np.ndarray
    q: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    reward: np.ndarray
    exec_price: np.ndarray
    log_density: Optional[np.ndarray]
    terminal_reward: float
    grid: TimeGrid

    @property
    def n_steps(self) -> int:
        return len(self.v)

    @property
    def steps(self) -> list[StepRecord]:
        lp = self.log_density
        return [
            StepRecord(
                MarketState(self.s[i], self.x[i], self.q[i], self.mu[i], i),
                float(self.v[i]),
                float(self.reward[i]),
                None if lp is None else float(lp[i]),
            )
            for i in range(self.n_steps)
        ]

    @property
    def terminal_state(self) -> MarketState:
        G = self.n_steps
        return MarketState(self.s[G], self.x[G], self.q[G], self.mu[G], G)

    @property
    def total_return(self) -> float:
        """Running rewards plus terminal reward; entropy terms excluded."""
        return float(self.reward.sum() + self.terminal_reward)

    @property
    def stochastic(self) -> bool:
        return self.log_density is not None

    def inputs(self) -> np.ndarray:
        """``(G + 1, 5)`` matrix of network inputs ``(t, S, X, Q, mu)``."""
        return np.column_stack([self.grid.times()[: len(self.s)], self.s, self.x, self.q, self.mu])

    def to_csv(self, path) -> None:
        h = self.grid.step
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t_index", "t", "S", "X", "Q", "mu", "v", "reward", "log_density"])
            for i in range(self.n_steps + 1):
                if i < self.n_steps:
                    lp = "" if self.log_density is None else repr(float(self.log_density[i]))
                    tail = [repr(float(self.v[i])), repr(float(self.reward[i])), lp]
                else:
                    tail = ["", "", ""]
                w.writerow([i, repr(i * h), *(repr(float(a[i])) for a in (self.s, self.x, self.q, self.mu)), *tail])

    @classmethod
    def from_csv(cls, path, market: MarketParams, grid: TimeGrid) -> "Trajectory":
        """Rebuild a trajectory written by :meth:`to_csv`.

        Execution prices are recovered from cash increments, so ``k`` is not needed.
        """
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        nodes = {c: np.array([float(r[c]) for r in rows]) for c in ("S", "X", "Q", "mu")}
        steps = rows[:-1]
        v = np.array([float(r["v"]) for r in steps])
        reward = np.array([float(r["reward"]) for r in steps])
        lp = None
        if steps and steps[0]["log_density"] != "":
            lp = np.array([float(r["log_density"]) for r in steps])
        h = grid.step
        with np.errstate(divide="ignore", invalid="ignore"):
            exec_price = np.where(v != 0, np.diff(nodes["X"]) / (v * h), np.nan)
        s, x, q = nodes["S"], nodes["X"], nodes["Q"]
        terminal = x[-1] + q[-1] * (s[-1] - market.alpha * q[-1])
        return cls(s, x, q, nodes["mu"], v, reward, exec_price, lp, float(terminal), grid)


PolicyFn = Callable[[int, MarketState, np.random.Generator], Union[float, Sequence[float]]]


@dataclass
class Environment:
    """Simulated market under fixed constants.

    A policy is any callable ``policy(t_index, state, rng)`` returning either a
    speed (deterministic) or a ``(speed, log_density)`` pair (sampled).  ``rng``
    is the run's policy stream.
    """

    market: MarketParams = field(default_factory=MarketParams)
    penalty: PenaltyParams = field(default_factory=PenaltyParams)
    grid: TimeGrid = field(default_factory=TimeGrid)

    def __post_init__(self):
        if self.market.kappa * self.grid.step >= 1.0:
            raise ValueError(
                f"kappa: explicit decay needs kappa*h < 1, got {self.market.kappa * self.grid.step:g}"
            )

    @property
    def h(self) -> float:
        return self.grid.step

    def initial_state(self) -> MarketState:
        m = self.market
        return MarketState(m.s0, m.x0, m.q0, m.mu0, 0)

    # -- randomness -------------------------------------------------------
    def sample_eta(self, rng: np.random.Generator) -> float:
        return float(rng.exponential(self.market.eta_mean))

    def _jump_sum(self, streams: RngStreams) -> float:
        n = int(streams.jump_count.poisson(self.market.lam * self.h))
        if n == 0:
            return 0.0
        return float(np.sum(streams.jump_size.exponential(self.market.eta_mean, n)))

    def step_mu(self, mu: float, streams: RngStreams) -> float:
        return (1.0 - self.market.kappa * self.h) * mu + self._jump_sum(streams)

    # -- dynamics ---------------------------------------------------------
    def running_reward(self, v, mu):
        p = self.penalty
        return -p.phi * (v - p.rho * mu) ** 2 * self.h

    def transition(self, state: MarketState, v: float, z: float, jump: float):
        """Deterministic part of a step given the shocks.  Returns (next, reward, exec price)."""
        m, h = self.market, self.h
        s1 = state.s - m.b * v * h + m.sigma * math.sqrt(h) * z
        s_hat = s1 - m.k * v
        nxt = MarketState(
            s=s1,
            x=state.x + s_hat * v * h,
            q=state.q - v * h,
            mu=(1.0 - m.kappa * h) * state.mu + jump,
            t_index=state.t_index + 1,
        )
        return nxt, self.running_reward(v, state.mu), s_hat

    def env_step(self, state: MarketState, v: float, streams: RngStreams):
        z = float(streams.price.standard_normal())
        nxt, reward, _ = self.transition(state, v, z, self._jump_sum(streams))
        return nxt, reward

    def terminal_reward(self, state: MarketState) -> float:
        return state.x + state.q * (state.s - self.market.alpha * state.q)

    # -- episodes ---------------------------------------------------------
    def rollout(self, policy: PolicyFn, streams: RngStreams, noise: Optional[MarketNoise] = None) -> Trajectory:
        G = self.grid.n_steps
        if noise is None:
            noise = draw_market_noise(streams, self.market, self.grid, 1)
        z, jumps = noise.z[0], noise.jumps[0]
        s = np.empty(G + 1)
        x, q, mu = np.empty(G + 1), np.empty(G + 1), np.empty(G + 1)
        v = np.empty(G)
        reward, exec_price = np.empty(G), np.empty(G)
        log_density = None
        state = self.initial_state()
        for i in range(G):
            s[i], x[i], q[i], mu[i] = state.s, state.x, state.q, state.mu
            out = policy(i, state, streams.policy)
            if isinstance(out, tuple):
                a, lp = out
                if log_density is None:
                    log_density = np.empty(G)
                log_density[i] = lp
            else:
                a = out
            a = float(a)
            if not math.isfinite(a):
                raise EpisodeAborted(i, a)
            v[i] = a
            state, reward[i], exec_price[i] = self.transition(state, a, z[i], jumps[i])
        s[G], x[G], q[G], mu[G] = state.s, state.x, state.q, state.mu
        return Trajectory(s, x, q, mu, v, reward, exec_price, log_density, self.terminal_reward(state), self.grid)

    def kernel_args(self):
        """Packed constants for :mod:`vwaprl.kernels`."""
        m, p = self.market, self.penalty
        init = np.array([m.s0, m.x0, m.q0, m.mu0], dtype=float)
        env = np.array([m.b, m.k, m.sigma, m.kappa, p.phi, p.rho, self.h], dtype=float)
        return init, env

    def trajectories_from_paths(self, paths, stochastic: bool) -> list[Trajectory]:
        """Wrap batched kernel output into per-episode :class:`Trajectory` objects."""
        S, X, Q, MU, V, LOGD, REW, EXEC = paths
        alpha = self.market.alpha
        out = []
        for e in range(S.shape[0]):
            term = X[e, -1] + Q[e, -1] * (S[e, -1] - alpha * Q[e, -1])
            out.append(
                Trajectory(S[e], X[e], Q[e], MU[e], V[e], REW[e], EXEC[e],
                           LOGD[e] if stochastic else None, float(term), self.grid)
            )
        return out

    def path_returns(self, paths) -> np.ndarray:
        """Total return (running + terminal reward) of each episode in a kernel batch."""
        S, X, Q = paths[0], paths[1], paths[2]
        REW = paths[6]
        term = X[:, -1] + Q[:, -1] * (S[:, -1] - self.market.alpha * Q[:, -1])
        return REW.sum(axis=1) + term
