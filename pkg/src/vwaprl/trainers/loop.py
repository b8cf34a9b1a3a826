"""Epoch loop shared by the learning algorithms."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from .. import kernels
from ..closed_form import ClosedForm
from ..estimators import EstimationUndefined, ImpactStats
from ..func_approx import DenseNet, LrSchedule, NonFiniteUpdate, sgd_step, state_standardization
from ..gaussian_policy import ActorNet, sample
from ..model_core import Environment, EpisodeAborted, RngStreams, draw_market_noise
from .critics import Critic
from .updates import (
    TargetUndefined,
    adp_actor_grad,
    adp_critic_grad,
    adp_exploratory_policy,
    draw_test_function,
    ml_critic_delta,
    mo_critic_delta,
    policy_delta,
)

ALGORITHMS = ("adp", "adp-explore", "ml-ac", "mo-ac")
STOCHASTIC = {"adp": False, "adp-explore": False, "ml-ac": True, "mo-ac": True}
MAX_CONSECUTIVE_ABORTS = 3

_ABORTS = (EpisodeAborted, NonFiniteUpdate, TargetUndefined, EstimationUndefined, FloatingPointError)


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "mo-ac"
    epochs: int = 1000
    critic_rate: float = 0.01
    actor_rate: float = 0.01
    lr_factor: float = 0.9
    lr_interval: int = 10
    seed: int = 0
    env_tag: str = "env1"
    hidden: tuple = (128, 64, 32)
    batch_size: int = 1
    value_scale: float = 10.0
    critic_baseline: str = "mark"
    init_log_std: float = 0.0
    actor_output_gain: float = 1.0
    critic_output_gain: float = 1.0
    terminal_value: str = "critic"
    eval_episodes: int = 5
    start_spread: float = 0.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm: must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValueError("epochs: must be an integer >= 1")
        if not (self.critic_rate > 0 and self.actor_rate > 0):
            raise ValueError("critic_rate/actor_rate: must be > 0")
        if self.batch_size < 1 or self.eval_episodes < 1:
            raise ValueError("batch_size/eval_episodes: must be >= 1")
        if not 0.0 <= self.start_spread <= 1.0:
            raise ValueError("start_spread: must lie in [0, 1]")
        if self.terminal_value not in ("critic", "payoff"):
            raise ValueError("terminal_value: must be 'critic' or 'payoff'")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    def schedules(self):
        return (LrSchedule(self.critic_rate, self.lr_factor, self.lr_interval),
                LrSchedule(self.actor_rate, self.lr_factor, self.lr_interval))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class EpochReport:
    epoch: int
    mean_return: float
    min_return: float
    max_return: float
    critic_loss: float
    policy_mse: float
    wall_clock: float
    aborted: bool = False
    note: str = ""


@dataclass
class TrainResult:
    actor: ActorNet
    critic: Critic
    reports: list = field(default_factory=list)
    b_hat: Optional[float] = None
    k_hat: Optional[float] = None
    initial_policy_mse: Optional[float] = None


def build_networks(env: Environment, cfg: TrainConfig, rng: np.random.Generator):
    m = env.market
    shift, scale = state_standardization(m.s0, m.x0, m.q0, m.mu0, env.grid.t_end)
    actor = ActorNet.build(cfg.hidden, rng=rng, in_shift=shift, in_scale=scale,
                           action_scale=m.q0 / env.grid.t_end if m.q0 > 0 else 1.0,
                           output_gain=cfg.actor_output_gain, init_log_std=cfg.init_log_std)
    net = DenseNet([5, *cfg.hidden, 1], in_shift=shift, in_scale=scale, rng=rng,
                   output_gain=cfg.critic_output_gain)
    return actor, Critic(net, cfg.value_scale, cfg.critic_baseline, m.alpha)


def actor_paths(env: Environment, actor: ActorNet, noise, eps, stochastic: bool, init=None):
    default_init, en = env.kernel_args()
    init = default_init if init is None else init
    return kernels.simulate_mlp(
        init, en, actor.params, actor.net.widths, actor.net.in_shift, actor.net.in_scale,
        actor.action_scale, stochastic, actor.log_std_lo, actor.log_std_hi, noise.z, noise.jumps, eps)


def policy_mse(env: Environment, actor: ActorNet, paths, closed: ClosedForm) -> float:
    """Mean squared gap between the actor's mean and the optimal speed at visited states."""
    S, X, Q, MU = paths[:4]
    n, G = paths[4].shape
    t = np.broadcast_to(env.grid.times()[:-1], (n, G))
    inp = np.column_stack([t.ravel(), S[:, :-1].ravel(), X[:, :-1].ravel(), Q[:, :-1].ravel(), MU[:, :-1].ravel()])
    mean, _ = actor.mean_std(inp)
    best = closed.optimal_speed_at(inp[:, 0], inp[:, 3], inp[:, 4])
    return float(np.mean((mean - best) ** 2))


def _explore_rollout(env, actor, critic, stats, streams, noise):
    h_b, h_k = _estimates(stats)

    def policy(t_index, state, rng):
        spec = adp_exploratory_policy(critic, t_index, state, h_b, h_k, env.penalty, env.grid)
        if spec.std > 0:
            return sample(spec, rng)[0]
        return spec.mean

    return env.rollout(policy, streams, noise)


def _estimates(stats: ImpactStats):
    # before any data the agent assumes no impact
    try:
        return stats.b, stats.k
    except EstimationUndefined:
        return 0.0, 0.0


def train(env: Environment, cfg: TrainConfig, progress: Optional[Callable[[EpochReport], None]] = None,
          epoch_hook: Optional[Callable[[EpochReport, "TrainResult"], None]] = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs; ``epoch_hook`` sees the live networks after each one."""
    root = np.random.SeedSequence(cfg.seed)
    train_ss, eval_ss, init_ss, start_ss = root.spawn(4)
    streams, eval_streams = RngStreams(train_ss), RngStreams(eval_ss)
    start_rng = np.random.default_rng(start_ss)
    base_init = env.kernel_args()[0]
    actor, critic = build_networks(env, cfg, np.random.default_rng(init_ss))
    closed = ClosedForm(env.market, env.penalty, env.grid)
    critic_lr, actor_lr = cfg.schedules()
    stats = ImpactStats()
    gamma = env.penalty.gamma
    G = env.grid.n_steps
    stochastic = STOCHASTIC[cfg.algorithm]
    result = TrainResult(actor, critic)
    streak = 0
    # the untrained policy's gap to the optimum, measured on its own evaluation episodes
    ev_noise = draw_market_noise(eval_streams, env.market, env.grid, cfg.eval_episodes)
    ev_eps = eval_streams.policy.standard_normal((cfg.eval_episodes, G))
    result.initial_policy_mse = policy_mse(env, actor, actor_paths(env, actor, ev_noise, ev_eps, stochastic), closed)

    for epoch in range(cfg.epochs):
        tick = time.perf_counter()
        noise = draw_market_noise(streams, env.market, env.grid, cfg.batch_size)
        aborted, note, loss = False, "", float("nan")
        try:
            if cfg.algorithm == "adp-explore":
                trajs = [_explore_rollout(env, actor, critic, stats, streams,
                                          type(noise)(noise.z[e:e + 1], noise.jumps[e:e + 1]))
                         for e in range(cfg.batch_size)]
            else:
                eps = streams.policy.standard_normal((cfg.batch_size, G))
                init = np.tile(base_init, (cfg.batch_size, 1))
                if cfg.start_spread > 0:
                    # exploring starts: training episodes begin from a randomised inventory
                    init[:, 2] *= start_rng.uniform(1 - cfg.start_spread, 1 + cfg.start_spread, cfg.batch_size)
                trajs = env.trajectories_from_paths(actor_paths(env, actor, noise, eps, stochastic, init), stochastic)
            c_rate, a_rate = critic_lr.rate(epoch), actor_lr.rate(epoch)

            if cfg.algorithm.startswith("adp"):
                stats.update(trajs)
                b_hat, k_hat = stats.b, stats.k
                loss, c_dir = 0.0, 0.0
                for tr in trajs:
                    lo, g = adp_critic_grad(critic, tr)
                    loss, c_dir = loss + lo, c_dir + g
                critic.params = sgd_step(critic.params, c_dir, c_rate, "descent")
                a_dir = 0.0
                for tr in trajs:
                    a_dir = a_dir + adp_actor_grad(actor, critic, tr, b_hat, k_hat, env.penalty)[1]
                actor.params = sgd_step(actor.params, a_dir, a_rate, "descent")
                result.b_hat, result.k_hat = b_hat, k_hat
            else:
                c_dir, a_dir, loss = 0.0, 0.0, 0.0
                for tr in trajs:
                    if cfg.algorithm == "ml-ac":
                        d, lo = ml_critic_delta(critic, tr, gamma)
                    else:
                        d, A = mo_critic_delta(critic, tr, draw_test_function(streams.test_fn, G), gamma)
                        lo = A * A
                    c_dir, loss = c_dir + d, loss + lo
                    a_dir = a_dir + policy_delta(actor, critic, tr, gamma, cfg.terminal_value)
                direction = "ascent" if cfg.algorithm == "ml-ac" else "descent"
                new_critic = sgd_step(critic.params, c_dir, c_rate, direction)
                actor.params = sgd_step(actor.params, a_dir, a_rate, "ascent")
                critic.params = new_critic
            streak = 0
        except _ABORTS as exc:
            aborted, note = True, f"{type(exc).__name__}: {exc}"
            streak += 1

        ev_noise = draw_market_noise(eval_streams, env.market, env.grid, cfg.eval_episodes)
        ev_eps = eval_streams.policy.standard_normal((cfg.eval_episodes, G))
        try:
            paths = actor_paths(env, actor, ev_noise, ev_eps, stochastic)
            rets = env.path_returns(paths)
            mse = policy_mse(env, actor, paths, closed)
        except EpisodeAborted as exc:
            rets, mse = np.array([np.nan]), float("nan")
            aborted, note = True, note or f"evaluation: {exc}"
        rep = EpochReport(epoch, float(np.mean(rets)), float(np.min(rets)), float(np.max(rets)),
                          float(loss), mse, time.perf_counter() - tick, aborted, note)
        result.reports.append(rep)
        if progress:
            progress(rep)
        if epoch_hook:
            epoch_hook(rep, result)
        if streak >= MAX_CONSECUTIVE_ABORTS:
            raise TrainingAborted(f"{MAX_CONSECUTIVE_ABORTS} consecutive aborted epochs; last: {note}")
    return result
