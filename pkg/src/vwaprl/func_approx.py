"""Dense feedforward approximators with hand-written reverse mode.

Parameters live in one flat vector so that learning rules can be written as
``theta + rate * delta`` exactly as in the update formulas.  Layout, layer by
layer: ``W`` (fan_in x fan_out, row-major) followed by ``b`` (fan_out).  Hidden
layers use ``tanh``; the output layer is affine.  Inputs are standardised with a
fixed affine map before the first layer.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "DenseNet",
    "LrSchedule",
    "NonFiniteUpdate",
    "sgd_step",
    "save_checkpoint",
    "load_checkpoint",
    "state_standardization",
]

ACTIVATIONS = ("tanh", "identity")


class NonFiniteUpdate(FloatingPointError):
    """A gradient or loss went non-finite; the epoch's update is abandoned."""


def state_standardization(s0: float, x0: float, q0: float, mu0: float, t_end: float):
    """Shift/scale for inputs ``(t, S, X, Q, mu)``: t/T, S/s0, X/(s0 q0), Q/q0, mu/mu0."""
    shift = np.zeros(5)
    scale = np.array([t_end, s0, s0 * q0, q0, mu0], dtype=float)
    scale[scale == 0] = 1.0
    return shift, scale


class DenseNet:
    def __init__(
        self,
        widths: Sequence[int],
        activation: str = "tanh",
        in_shift: Optional[np.ndarray] = None,
        in_scale: Optional[np.ndarray] = None,
        params: Optional[np.ndarray] = None,
        rng: Optional[np.random.Generator] = None,
        output_gain: float = 1.0,
    ):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.widths = tuple(int(w) for w in widths)
        self.activation = activation
        d = self.widths[0]
        self.in_shift = np.zeros(d) if in_shift is None else np.asarray(in_shift, dtype=float).copy()
        self.in_scale = np.ones(d) if in_scale is None else np.asarray(in_scale, dtype=float).copy()
        if self.in_shift.shape != (d,) or self.in_scale.shape != (d,):
            raise ValueError("standardisation vectors must match the input width")
        if params is not None:
            params = np.asarray(params, dtype=float)
            if params.shape != (self.n_params,):
                raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
            self.params = params.copy()
        else:
            self.params = self._init_params(rng or np.random.default_rng(), output_gain)

    @property
    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in zip(self.widths[:-1], self.widths[1:]))

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def _init_params(self, rng, output_gain):
        chunks = []
        n_layers = len(self.widths) - 1
        for l, (fi, fo) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            r = math.sqrt(6.0 / (fi + fo))
            if l == n_layers - 1:
                r *= output_gain
            chunks.append(rng.uniform(-r, r, fi * fo))
            chunks.append(np.zeros(fo))
        return np.concatenate(chunks)

    def layers(self, params: Optional[np.ndarray] = None):
        """``[(W, b), ...]`` as views into the flat vector."""
        p = self.params if params is None else params
        out, off = [], 0
        for fi, fo in zip(self.widths[:-1], self.widths[1:]):
            W = p[off: off + fi * fo].reshape(fi, fo)
            off += fi * fo
            out.append((W, p[off: off + fo]))
            off += fo
        return out

    def copy(self) -> "DenseNet":
        return DenseNet(self.widths, self.activation, self.in_shift, self.in_scale, params=self.params)

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else z

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        if xb.shape[1] != self.n_in:
            raise ValueError(f"input width {xb.shape[1]} != {self.n_in}")
        return xb, single

    def _forward_cache(self, xb):
        a = (xb - self.in_shift) / self.in_scale
        acts = [a]
        layers = self.layers()
        for l, (W, b) in enumerate(layers):
            z = a @ W + b
            a = z if l == len(layers) - 1 else self._act(z)
            acts.append(a)
        return acts

    def forward(self, x) -> np.ndarray:
        xb, single = self._as_batch(x)
        out = self._forward_cache(xb)[-1]
        return out[0] if single else out

    __call__ = forward

    def _backward(self, acts, upstream):
        """Return (flat param gradient summed over the batch, input-layer cotangent)."""
        layers = self.layers()
        grads = [None] * (2 * len(layers))
        delta = upstream
        for l in range(len(layers) - 1, -1, -1):
            W, _ = layers[l]
            a_in = acts[l]
            grads[2 * l] = (a_in.T @ delta).ravel()
            grads[2 * l + 1] = delta.sum(axis=0)
            delta = delta @ W.T
            if l > 0 and self.activation == "tanh":
                delta = delta * (1.0 - a_in * a_in)
        return np.concatenate(grads), delta

    def grad_params(self, x, upstream) -> np.ndarray:
        """Gradient of ``sum(upstream * forward(x))`` w.r.t. the flat parameters."""
        xb, _ = self._as_batch(x)
        up = np.asarray(upstream, dtype=float).reshape(xb.shape[0], self.n_out)
        return self._backward(self._forward_cache(xb), up)[0]

    def forward_and_grad(self, x, upstream_fn):
        """Forward pass, then parameter gradient for ``upstream_fn(output)``.

        Saves a second forward pass when the cotangent depends on the output.
        """
        xb, _ = self._as_batch(x)
        acts = self._forward_cache(xb)
        up = np.asarray(upstream_fn(acts[-1]), dtype=float).reshape(xb.shape[0], self.n_out)
        return acts[-1], self._backward(acts, up)[0]

    def grad_input(self, x) -> np.ndarray:
        """d output / d input (raw, unstandardised coordinates); scalar-output nets only."""
        if self.n_out != 1:
            raise ValueError("input gradient is defined for scalar-output nets only")
        xb, single = self._as_batch(x)
        acts = self._forward_cache(xb)
        _, d = self._backward(acts, np.ones((xb.shape[0], 1)))
        g = d / self.in_scale
        return g[0] if single else g


def sgd_step(params: np.ndarray, grad: np.ndarray, rate: float, direction: str = "descent") -> np.ndarray:
    if direction not in ("ascent", "descent"):
        raise ValueError("direction must be 'ascent' or 'descent'")
    if rate < 0:
        raise ValueError("rate must be >= 0")
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NonFiniteUpdate(f"non-finite gradient component at index {bad}")
    sign = 1.0 if direction == "ascent" else -1.0
    return params + sign * rate * grad


@dataclass(frozen=True)
class LrSchedule:
    """Step decay: ``initial * factor ** (epoch // interval)``."""

    initial: float = 1.0
    factor: float = 0.9
    interval: int = 10

    def __post_init__(self):
        if self.initial <= 0 or not 0 < self.factor <= 1 or self.interval < 1:
            raise ValueError("LrSchedule needs initial > 0, 0 < factor <= 1, interval >= 1")

    def rate(self, epoch: int) -> float:
        return self.initial * self.factor ** (epoch // self.interval)

    def multiplier(self, epoch: int) -> float:
        return self.factor ** (epoch // self.interval)


def save_checkpoint(path, nets: dict, kind: str, extra: Optional[dict] = None) -> None:
    """Write named nets to one ``.npz`` with a JSON header.

    The header records layer widths, activation and standardisation constants for
    each net, plus the policy ``kind`` tag and any ``extra`` metadata.
    """
    header = {"format": "vwaprl-checkpoint/1", "kind": kind, "extra": extra or {}, "nets": {}}
    arrays = {}
    for name, net in nets.items():
        header["nets"][name] = {
            "widths": list(net.widths),
            "activation": net.activation,
            "in_shift": net.in_shift.tolist(),
            "in_scale": net.in_scale.tolist(),
        }
        arrays[f"{name}__params"] = net.params
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(nets, kind, extra)``."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != "vwaprl-checkpoint/1":
            raise ValueError(f"{path}: not a vwaprl checkpoint")
        nets = {}
        for name, h in header["nets"].items():
            nets[name] = DenseNet(
                h["widths"], h["activation"], np.array(h["in_shift"]), np.array(h["in_scale"]),
                params=data[f"{name}__params"],
            )
    return nets, header["kind"], header["extra"]
