"""Uniform handles over the policies the lab can evaluate.

A handle simulates batches of episodes through the rollout kernels and reports
the action distribution at arbitrary inputs, whatever the policy's origin.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import kernels
from ..closed_form import ClosedForm
from ..func_approx import load_checkpoint, save_checkpoint
from ..gaussian_policy import ActorNet
from ..model_core import Environment

__all__ = ["PolicyHandle", "twap_policy", "closed_form_policy", "actor_policy", "load_actor", "save_actor"]


@dataclass
class PolicyHandle:
    name: str
    env: Environment
    stochastic: bool
    coef: Optional[np.ndarray] = None
    actor: Optional[ActorNet] = None

    def paths(self, noise, eps, init=None):
        """Kernel batch ``(S, X, Q, MU, V, LOGD, REW, EXEC)`` driven by the given noise."""
        default_init, en = self.env.kernel_args()
        init = default_init if init is None else init
        if self.actor is None:
            return kernels.simulate_affine(init, en, self.coef, noise.z, noise.jumps, eps)
        a = self.actor
        return kernels.simulate_mlp(
            init, en, a.params, a.net.widths, a.net.in_shift, a.net.in_scale, a.action_scale,
            self.stochastic, a.log_std_lo, a.log_std_hi, noise.z, noise.jumps, eps)

    def mean_std(self, inputs):
        """``(mean, std)`` at rows ``(t, S, X, Q, mu)``; std is 0 for deterministic policies."""
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        if self.actor is not None:
            mean, std = self.actor.mean_std(inputs)
            return mean, (std if self.stochastic else np.zeros_like(mean))
        idx = np.clip(np.rint(inputs[:, 0] / self.env.h).astype(int), 0, len(self.coef) - 1)
        c = self.coef[idx]
        return c[:, 0] + c[:, 1] * inputs[:, 3] + c[:, 2] * inputs[:, 4], c[:, 3].copy()


def twap_policy(env: Environment) -> PolicyHandle:
    cf = ClosedForm(env.market, env.penalty, env.grid)
    return PolicyHandle("twap", env, False, coef=cf.twap_coefficients())


def closed_form_policy(env: Environment, stochastic: bool = True) -> PolicyHandle:
    """The optimal exploratory policy, or its mean when ``stochastic`` is false."""
    cf = ClosedForm(env.market, env.penalty, env.grid)
    coef = cf.affine_coefficients(stochastic)
    return PolicyHandle("closed-form", env, bool(stochastic and coef[0, 3] > 0), coef=coef)


def actor_policy(env: Environment, actor: ActorNet, stochastic: bool, name: str = "actor") -> PolicyHandle:
    return PolicyHandle(name, env, stochastic, actor=actor)


def save_actor(path, actor: ActorNet, critic_net=None, algorithm: str = "", stochastic: bool = True, extra=None):
    nets = {"actor": actor.net}
    if critic_net is not None:
        nets["critic"] = critic_net
    meta = {"algorithm": algorithm, "stochastic": bool(stochastic), "action_scale": actor.action_scale,
            "log_std_lo": actor.log_std_lo, "log_std_hi": actor.log_std_hi, **(extra or {})}
    save_checkpoint(path, nets, "gaussian-actor" if stochastic else "deterministic-actor", meta)


def load_actor(path, env: Environment) -> PolicyHandle:
    nets, kind, extra = load_checkpoint(path)
    if "actor" not in nets:
        raise ValueError(f"{path}: checkpoint has no actor network")
    actor = ActorNet(nets["actor"], extra.get("action_scale", 1.0),
                     extra.get("log_std_lo", -10.0), extra.get("log_std_hi", 3.0))
    return actor_policy(env, actor, kind == "gaussian-actor", extra.get("algorithm") or "actor")
