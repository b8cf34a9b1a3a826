"""Network-backed Gaussian policies.

The actor is a :class:`DenseNet` with two outputs ``(m_raw, s_raw)``:

    mean = action_scale * m_raw
    std  = action_scale * exp(clip(s_raw, log_std_lo, log_std_hi))

``action_scale`` puts the raw outputs in units of a natural speed (e.g. the
TWAP rate), so a freshly initialised net explores about one such unit.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .closed_form import GaussianPolicySpec
from .func_approx import DenseNet
from .model_core import MarketState, TimeGrid

__all__ = ["ActorNet", "sample", "log_density", "entropy_penalized_reward"]

_LOG_2PI = math.log(2.0 * math.pi)


def log_density(v, mean, std):
    """Gaussian log-density, vectorised."""
    d = (np.asarray(v, dtype=float) - mean) / std
    return -0.5 * _LOG_2PI - np.log(std) - 0.5 * d * d


def sample(spec: GaussianPolicySpec, rng: np.random.Generator):
    """Draw one speed; returns ``(v, log_density)``."""
    if not spec.std > 0:
        raise ValueError("sampling needs std > 0")
    z = float(rng.standard_normal())
    v = spec.mean + spec.std * z
    return v, -0.5 * _LOG_2PI - math.log(spec.std) - 0.5 * z * z


def entropy_penalized_reward(reward, log_dens, gamma: float, h: float):
    """Per-step regularised reward ``r - gamma * log pi * h`` (``r`` already carries its ``h``)."""
    return reward - gamma * np.asarray(log_dens) * h


class ActorNet:
    def __init__(
        self,
        net: DenseNet,
        action_scale: float = 1.0,
        log_std_lo: float = -10.0,
        log_std_hi: float = 3.0,
    ):
        if net.n_out != 2:
            raise ValueError("actor net needs exactly two outputs (mean, spread)")
        if not action_scale > 0:
            raise ValueError("action_scale must be > 0")
        self.net = net
        self.action_scale = float(action_scale)
        self.log_std_lo = float(log_std_lo)
        self.log_std_hi = float(log_std_hi)

    @classmethod
    def build(cls, hidden=(128, 64, 32), n_in=5, rng=None, in_shift=None, in_scale=None,
              action_scale=1.0, output_gain=1.0, init_log_std=0.0, **kw) -> "ActorNet":
        net = DenseNet([n_in, *hidden, 2], in_shift=in_shift, in_scale=in_scale, rng=rng, output_gain=output_gain)
        net.layers()[-1][1][1] = init_log_std
        return cls(net, action_scale, **kw)

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    @params.setter
    def params(self, value):
        self.net.params = value

    def copy(self) -> "ActorNet":
        return ActorNet(self.net.copy(), self.action_scale, self.log_std_lo, self.log_std_hi)

    def _transform(self, out):
        mean = self.action_scale * out[..., 0]
        std = self.action_scale * np.exp(np.clip(out[..., 1], self.log_std_lo, self.log_std_hi))
        return mean, std

    def mean_std(self, inputs):
        """Batched ``(mean, std)`` for an ``(n, d)`` input matrix."""
        return self._transform(self.net.forward(np.atleast_2d(inputs)))

    def policy_at(self, t_index: int, state: MarketState, grid: TimeGrid) -> GaussianPolicySpec:
        out = self.net.forward(state.as_input(grid))
        mean, std = self._transform(out)
        return GaussianPolicySpec(float(mean), float(std))

    def score(self, t_index: int, state: MarketState, v: float, grid: TimeGrid) -> np.ndarray:
        """Gradient of ``log pi(v | state)`` with respect to the parameters."""
        return self.score_batch(state.as_input(grid)[None, :], np.array([v]), np.ones(1))

    def score_batch(self, inputs, v, weights) -> np.ndarray:
        """``sum_i weights_i * d log pi(v_i | inputs_i) / d params``."""
        v = np.asarray(v, dtype=float)
        w = np.asarray(weights, dtype=float)

        def cotangent(out):
            mean, std = self._transform(out)
            d = (v - mean) / std
            up = np.empty_like(out)
            up[:, 0] = w * d / std * self.action_scale
            inside = (out[:, 1] >= self.log_std_lo) & (out[:, 1] <= self.log_std_hi)
            # d log pi / d s_raw = (d^2 - 1) while the clip is inactive
            up[:, 1] = np.where(inside, w * (d * d - 1.0), 0.0)
            return up

        _, g = self.net.forward_and_grad(np.atleast_2d(inputs), cotangent)
        return g

    def callable(self, grid: TimeGrid, stochastic: bool = True):
        """Adapter for :meth:`Environment.rollout`."""

        def policy(t_index, state, rng):
            spec = self.policy_at(t_index, state, grid)
            if not stochastic:
                return spec.mean
            return sample(spec, rng)

        return policy
