"""Minimal differentiable core: dense layers, dilated causal convolution,
Adam, binary cross-entropy, and finite-difference gradient verification.

Everything is float64.  Parameters are initialized from a seeded uniform
distribution scaled by 1/sqrt(fan_in); training code that shuffles batches
must draw from the same seeded generator so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError, StateError

BCE_CLAMP = 1e-12


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    raise ShapeError(f"unknown activation {name!r}")


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    if name == "identity":
        return np.ones_like(z)
    raise ShapeError(f"unknown activation {name!r}")


def fan_in_uniform(rng, shape, fan_in):
    scale = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-scale, scale, size=shape)


class Dense:
    """Fully connected layer: y = act(x @ W.T + b)."""

    def __init__(self, n_in, n_out, activation="identity", rng=None, name="dense"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.activation = activation
        self.name = name
        self.w = fan_in_uniform(rng, (self.n_out, self.n_in), self.n_in)
        self.b = np.zeros(self.n_out)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(
                f"{self.name}: expected input (batch, {self.n_in}), got {x.shape}"
            )
        z = x @ self.w.T + self.b
        a = _act(self.activation, z)
        self._cache = (x, z, a)
        return a

    def backward(self, ga):
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        x, z, a = self._cache
        gz = ga * _act_grad(self.activation, z, a)
        self.gw = gz.T @ x
        self.gb = gz.sum(axis=0)
        return gz @ self.w

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]

    def param_names(self):
        return [f"{self.name}.w", f"{self.name}.b"]


class CausalConv1d:
    """Dilated causal 1-d convolution over (batch, time, channels) sequences.

    Left padding of (kernel-1)*dilation zeros keeps the output length equal
    to the input length, so output at time t never sees inputs after t.
    """

    def __init__(self, in_ch, out_ch, dilation=1, kernel=3, activation="relu",
                 rng=None, name="conv"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch = int(in_ch)
        self.out_ch = int(out_ch)
        self.dilation = int(dilation)
        self.kernel = int(kernel)
        self.activation = activation
        self.name = name
        fan_in = self.in_ch * self.kernel
        self.w = fan_in_uniform(rng, (self.kernel, self.in_ch, self.out_ch), fan_in)
        self.b = np.zeros(self.out_ch)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.in_ch:
            raise ShapeError(
                f"{self.name}: expected input (batch, time, {self.in_ch}), got {x.shape}"
            )
        x = np.ascontiguousarray(x, dtype=np.float64)
        z = kernels.conv1d_forward(x, self.w, self.b, self.dilation)
        a = _act(self.activation, z)
        self._cache = (x, z, a)
        return a

    def backward(self, ga):
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        x, z, a = self._cache
        gz = np.ascontiguousarray(ga * _act_grad(self.activation, z, a))
        gx, self.gw, self.gb = kernels.conv1d_backward(x, self.w, gz, self.dilation)
        return gx

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]

    def param_names(self):
        return [f"{self.name}.w", f"{self.name}.b"]


class Mlp:
    """Stack of dense layers."""

    def __init__(self, sizes, activations, rng=None, name="mlp"):
        if len(activations) != len(sizes) - 1:
            raise ShapeError(f"{name}: {len(sizes) - 1} layers need {len(sizes) - 1} activations")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name
        self.layers = [
            Dense(sizes[i], sizes[i + 1], activations[i], rng, name=f"{name}.{i}")
            for i in range(len(sizes) - 1)
        ]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def param_names(self):
        return [n for layer in self.layers for n in layer.param_names()]


class Adam:
    """Adam with bias correction; updates parameters in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self._shapes = [p.shape for p in params]

    def step(self, params, grads):
        if len(params) != len(self._shapes):
            raise ShapeError(f"expected {len(self._shapes)} parameter arrays, got {len(params)}")
        for p, g, shape in zip(params, grads, self._shapes):
            if p.shape != shape or g.shape != shape:
                raise ShapeError(f"parameter/gradient shape {p.shape}/{g.shape} != state {shape}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def bce_loss(p, y):
    """Binary cross-entropy with predictions clamped to [1e-12, 1 - 1e-12]."""
    p = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    losses = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(np.mean(losses))


@dataclass(frozen=True)
class GradCheckReport:
    per_param: tuple  # (name, max relative error) per parameter array
    max_rel_error: float

    def worst(self):
        return max(self.per_param, key=lambda kv: kv[1]) if self.per_param else ("", 0.0)


# Relative error floor: below this gradient magnitude the comparison is
# effectively absolute, which keeps finite-difference truncation noise on
# near-zero gradients from masquerading as backprop errors.
GRAD_CHECK_FLOOR = 1e-3


def grad_check(loss_fn, params, analytic_grads, h=1e-4, names=None):
    """Central-difference verification of analytic gradients.

    ``loss_fn`` re-evaluates the scalar loss with the current (mutated)
    parameter values.  Every entry of every parameter array is perturbed by
    +-h.  Relative error per entry is |a - n| / max(|a|, |n|, 1e-3); exact
    zero/zero agreement scores 0.
    """
    if names is None:
        names = [f"param{i}" for i in range(len(params))]
    per_param = []
    worst = 0.0
    for p, a_grad, name in zip(params, analytic_grads, names):
        num = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_n = num.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + h
            lp = loss_fn()
            flat_p[j] = orig - h
            lm = loss_fn()
            flat_p[j] = orig
            flat_n[j] = (lp - lm) / (2.0 * h)
        diff = np.abs(a_grad - num)
        denom = np.maximum(np.maximum(np.abs(a_grad), np.abs(num)), GRAD_CHECK_FLOOR)
        rel = diff / denom
        rel[(np.abs(a_grad) == 0.0) & (np.abs(num) == 0.0)] = 0.0
        m = float(rel.max()) if rel.size else 0.0
        per_param.append((name, m))
        worst = max(worst, m)
    return GradCheckReport(tuple(per_param), worst)
