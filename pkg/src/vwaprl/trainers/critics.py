"""Value-function approximators used by the trainers.

Both critics share one small interface: ``value(inputs)``, ``grad_params(inputs,
upstream)``, ``grad_input(inputs)`` and a flat ``params`` vector, where
``inputs`` is an ``(n, 5)`` matrix of ``(t, S, X, Q, mu)`` rows.
"""
from __future__ import annotations

import numpy as np

from ..func_approx import DenseNet
from ..model_core import TimeGrid


BASELINES = ("none", "mark", "terminal")


class Critic:
    """Dense-net critic on top of a fixed baseline value.

    ``baseline`` selects what the net corrects:

    * ``"mark"``: the mark-to-market value ``x + q S``;
    * ``"terminal"``: the terminal reward ``x + q (S - alpha q)`` evaluated at
      the current state, so the critic matches the payoff at the horizon when
      the net output vanishes there;
    * ``"none"``: the bare net.

    The net output is multiplied by ``value_scale``.
    """

    def __init__(self, net: DenseNet, value_scale: float = 1.0, baseline: str = "mark", alpha: float = 0.0):
        if net.n_out != 1:
            raise ValueError("critic net must have a single output")
        if baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}")
        self.net = net
        self.value_scale = float(value_scale)
        self.baseline = baseline
        self.alpha = float(alpha) if baseline == "terminal" else 0.0

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    @params.setter
    def params(self, value):
        self.net.params = value

    def copy(self) -> "Critic":
        return Critic(self.net.copy(), self.value_scale, self.baseline, self.alpha)

    def value(self, inputs) -> np.ndarray:
        x = np.atleast_2d(inputs)
        v = self.value_scale * self.net.forward(x)[:, 0]
        if self.baseline != "none":
            s, cash, q = x[:, 1], x[:, 2], x[:, 3]
            v = v + cash + q * (s - self.alpha * q)
        return v

    def grad_params(self, inputs, upstream) -> np.ndarray:
        up = self.value_scale * np.asarray(upstream, dtype=float)
        return self.net.grad_params(np.atleast_2d(inputs), up)

    def grad_input(self, inputs) -> np.ndarray:
        x = np.atleast_2d(inputs)
        g = self.value_scale * self.net.grad_input(x)
        if self.baseline != "none":
            g[:, 1] += x[:, 3]
            g[:, 2] += 1.0
            g[:, 3] += x[:, 1] - 2.0 * self.alpha * x[:, 3]
        return g


class TabularCritic:
    """One free value per time node, ignoring the rest of the state."""

    def __init__(self, grid: TimeGrid, params=None):
        self.grid = grid
        n = grid.n_steps + 1
        self.params = np.zeros(n) if params is None else np.asarray(params, dtype=float).copy()
        if self.params.shape != (n,):
            raise ValueError(f"expected {n} node values")

    def copy(self) -> "TabularCritic":
        return TabularCritic(self.grid, self.params)

    def _nodes(self, x):
        return np.rint(x[:, 0] / self.grid.step).astype(int)

    def value(self, inputs) -> np.ndarray:
        return self.params[self._nodes(np.atleast_2d(inputs))]

    def grad_params(self, inputs, upstream) -> np.ndarray:
        x = np.atleast_2d(inputs)
        up = np.broadcast_to(np.asarray(upstream, dtype=float).ravel(), (x.shape[0],))
        return np.bincount(self._nodes(x), weights=up, minlength=len(self.params))

    def grad_input(self, inputs) -> np.ndarray:
        raise NotImplementedError("a tabular critic has no state gradient")
