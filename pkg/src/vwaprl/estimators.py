"""Likelihood estimates of the price-impact constants from observed episodes.

With midprice increments ``dS = -b v h + sigma sqrt(h) Z`` the Gaussian
log-likelihood in ``b`` is maximised by

    b_hat = -sum(dS * v) / sum(v^2 h)

and the temporary impact follows exactly from ``S - S_exec = k v``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .model_core import Trajectory

__all__ = ["EstimationUndefined", "estimate_b", "estimate_k", "ImpactStats", "K_MIN_SPEED"]

K_MIN_SPEED = 1e-9


class EstimationUndefined(ValueError):
    """The batch carries no information about the requested constant."""


Batch = Union[Trajectory, Sequence[Trajectory]]


def _as_list(batch: Batch) -> list:
    return [batch] if isinstance(batch, Trajectory) else list(batch)


def _b_terms(traj: Trajectory):
    v = traj.v
    return float(np.dot(np.diff(traj.s), v)), float(np.dot(v, v) * traj.grid.step)


def _k_terms(traj: Trajectory):
    v = traj.v
    mask = np.abs(v) > K_MIN_SPEED
    # S_{i+1} is the post-impact midprice the execution price is quoted from
    ratios = (traj.s[1:][mask] - traj.exec_price[mask]) / v[mask]
    return float(ratios.sum()), int(mask.sum())


def estimate_b(batch: Batch) -> float:
    num, den = 0.0, 0.0
    for tr in _as_list(batch):
        a, c = _b_terms(tr)
        num += a
        den += c
    if den == 0.0:
        raise EstimationUndefined("b: every action in the batch is zero")
    return -num / den


def estimate_k(batch: Batch) -> float:
    total, n = 0.0, 0
    for tr in _as_list(batch):
        a, c = _k_terms(tr)
        total += a
        n += c
    if n == 0:
        raise EstimationUndefined(f"k: no step with |v| > {K_MIN_SPEED:g}")
    return total / n


@dataclass
class ImpactStats:
    """Running sufficient statistics so estimates can pool every episode seen so far."""

    b_num: float = 0.0
    b_den: float = 0.0
    k_sum: float = 0.0
    k_n: int = 0

    def update(self, batch: Batch) -> None:
        for tr in _as_list(batch):
            a, c = _b_terms(tr)
            self.b_num += a
            self.b_den += c
            a, c = _k_terms(tr)
            self.k_sum += a
            self.k_n += c

    @property
    def b(self) -> float:
        if self.b_den == 0.0:
            raise EstimationUndefined("b: every action seen so far is zero")
        return -self.b_num / self.b_den

    @property
    def k(self) -> float:
        if self.k_n == 0:
            raise EstimationUndefined(f"k: no step with |v| > {K_MIN_SPEED:g}")
        return self.k_sum / self.k_n
