"""Minimal feed-forward substrate with explicit, hand-derived gradients.

Everything here works on float64 numpy arrays so that analytic gradients can
be verified tightly against central finite differences.  Parameters live in
one flat vector per model (see ParamStore); each layer's weight matrix and
bias are reshaped views into that vector, which keeps optimizer updates and
finite-difference probing trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    """Topology of one multilayer perceptron: widths and hidden activation."""

    input_width: int
    hidden_widths: tuple[int, ...]
    output_width: int
    hidden_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        widths = (self.input_width, *self.hidden_widths, self.output_width)
        if any(int(w) != w or w < 1 for w in widths):
            raise ConfigError(f"all layer widths must be positive integers, got {widths}")
        if len(self.hidden_widths) < 1:
            raise ConfigError("at least one hidden layer is required")
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigError(
                f"unknown activation {self.hidden_activation!r}, expected one of {ACTIVATIONS}"
            )

    @property
    def layer_widths(self) -> tuple[int, ...]:
        return (self.input_width, *self.hidden_widths, self.output_width)

    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.layer_widths
        return [(w[i], w[i + 1]) for i in range(len(w) - 1)]

    def parameter_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes())


@dataclass
class ParamTensor:
    """One parameter array plus its gradient, both views into a ParamStore.

    span records where the tensor lives in the flat store, letting callers
    mirror structural edits onto parallel flat arrays (optimizer moments).
    """

    shape: tuple[int, ...]
    values: np.ndarray
    grad: np.ndarray
    span: slice | None = None


class ParamStore:
    """Flat float64 value/grad buffers from which ParamTensors are carved."""

    def __init__(self, total: int):
        self.values = np.zeros(total, dtype=np.float64)
        self.grad = np.zeros(total, dtype=np.float64)
        self._cursor = 0

    @property
    def size(self) -> int:
        return self.values.size

    def alloc(self, shape: Sequence[int]) -> ParamTensor:
        shape = tuple(int(s) for s in shape)
        size = int(np.prod(shape))
        end = self._cursor + size
        if end > self.values.size:
            raise ConfigError("parameter store exhausted; total size was computed wrong")
        t = ParamTensor(
            shape,
            self.values[self._cursor:end].reshape(shape),
            self.grad[self._cursor:end].reshape(shape),
            span=slice(self._cursor, end),
        )
        self._cursor = end
        return t

    def zero_grad(self):
        self.grad[:] = 0.0


class Mlp:
    """An MLP over a ParamStore with cached forward and explicit backward.

    Weights initialize to uniform(-s, s) with s = sqrt(1/fan_in); passing
    rng=None leaves all parameters at zero, which several contracts rely on.
    """

    def __init__(self, spec: MlpSpec, store: Optional[ParamStore] = None,
                 rng: Optional[np.random.Generator] = None):
        self.spec = spec
        if store is None:
            store = ParamStore(spec.parameter_count())
        self.store = store
        self.weights: list[ParamTensor] = []
        self.biases: list[ParamTensor] = []
        for fan_in, fan_out in spec.layer_shapes():
            w = store.alloc((fan_in, fan_out))
            b = store.alloc((fan_out,))
            if rng is not None:
                s = np.sqrt(1.0 / fan_in)
                w.values[:] = rng.uniform(-s, s, size=w.shape)
                b.values[:] = rng.uniform(-s, s, size=b.shape)
            self.weights.append(w)
            self.biases.append(b)

    def parameter_count(self) -> int:
        return self.spec.parameter_count()

    def _check_input(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.spec.input_width:
            raise ConfigError(
                f"expected input width {self.spec.input_width}, got shape {x.shape}"
            )

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Forward pass; accepts a single vector or a (rows, input_width) batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        out, _ = self.forward_cached(x2)
        return out[0] if single else out

    def forward_cached(self, x: np.ndarray):
        """Forward pass returning (output, cache) where cache holds layer inputs."""
        self._check_input(x)
        act = self.spec.hidden_activation
        last = len(self.weights) - 1
        acts = [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.values
            z += b.values
            if i < last:
                if act == "relu":
                    np.maximum(z, 0.0, out=z)
                else:
                    np.tanh(z, out=z)
                h = z
                acts.append(h)
            else:
                h = z
        return h, acts

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the gradient w.r.t. the input."""
        act = self.spec.hidden_activation
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = cache[i]
            self.weights[i].grad += a_prev.T @ g
            self.biases[i].grad += g.sum(axis=0)
            g = g @ self.weights[i].values.T
            if i > 0:
                a = cache[i]
                if act == "relu":
                    g *= a > 0.0
                else:
                    g *= 1.0 - a * a
        return g


def mlp_forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Functional alias for Mlp.forward."""
    return mlp.forward(x)


class MlpBank:
    """d same-topology MLPs evaluated together via stacked matmuls.

    All members share one input batch; weights are (d, fan_in, fan_out)
    stacks so a layer costs one broadcast matmul instead of d separate ones.
    Member e behaves exactly like an Mlp carved from the same rng stream
    order (layer by layer, member-major within a layer).
    """

    def __init__(self, spec: MlpSpec, d: int, store: Optional[ParamStore] = None,
                 rng: Optional[np.random.Generator] = None):
        if d < 1:
            raise ConfigError("bank size must be >= 1")
        self.spec = spec
        self.d = d
        if store is None:
            store = ParamStore(d * spec.parameter_count())
        self.store = store
        self.weights: list[ParamTensor] = []
        self.biases: list[ParamTensor] = []
        for fan_in, fan_out in spec.layer_shapes():
            w = store.alloc((d, fan_in, fan_out))
            b = store.alloc((d, fan_out))
            if rng is not None:
                s = np.sqrt(1.0 / fan_in)
                w.values[:] = rng.uniform(-s, s, size=w.shape)
                b.values[:] = rng.uniform(-s, s, size=b.shape)
            self.weights.append(w)
            self.biases.append(b)

    def parameter_count(self) -> int:
        return self.d * self.spec.parameter_count()

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(np.asarray(x, dtype=np.float64))
        return out

    def member_forward(self, e: int, x: np.ndarray) -> np.ndarray:
        """Forward through member e only; accepts a vector or a row batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.spec.input_width:
            raise ConfigError(
                f"expected input width {self.spec.input_width}, got shape {x.shape}")
        act = self.spec.hidden_activation
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.values[e] + b.values[e]
            h = z if i == last else (np.maximum(z, 0.0) if act == "relu" else np.tanh(z))
        return h[0] if single else h

    def forward_cached(self, x: np.ndarray):
        """All-member forward of one shared (rows, in) batch -> (d, rows, out)."""
        if x.ndim != 2 or x.shape[1] != self.spec.input_width:
            raise ConfigError(
                f"expected input width {self.spec.input_width}, got shape {x.shape}")
        act = self.spec.hidden_activation
        last = len(self.weights) - 1
        acts = [x[None, :, :]]
        h = acts[0]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.values
            z += b.values[:, None, :]
            if i < last:
                if act == "relu":
                    np.maximum(z, 0.0, out=z)
                else:
                    np.tanh(z, out=z)
                h = z
                acts.append(h)
            else:
                h = z
        return h, acts

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
        """Accumulate per-member grads; returns (d, rows, in) input gradients."""
        act = self.spec.hidden_activation
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = cache[i]
            self.weights[i].grad += np.swapaxes(a_prev, 1, 2) @ g
            self.biases[i].grad += g.sum(axis=1)
            g = g @ np.swapaxes(self.weights[i].values, 1, 2)
            if i > 0:
                a = cache[i]
                if act == "relu":
                    g *= a > 0.0
                else:
                    g *= 1.0 - a * a
        return g


def softplus(x):
    """log(1 + exp(x)), stable for large |x|; strictly positive."""
    return np.logaddexp(0.0, x)


def sigmoid(x):
    """Derivative of softplus; stable logistic function."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise exp-normalize, invariant under adding a constant per row."""
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    shifted = z2 - z2.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if single else p


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given row-wise probabilities p and dL/dp."""
    inner = (grad_p * p).sum(axis=-1, keepdims=True)
    return p * (grad_p - inner)


def gaussian_nll_terms(x, mean, raw_scale):
    """Elementwise negative log density terms with std = softplus(raw_scale)."""
    sig = softplus(raw_scale)
    z = (np.asarray(x) - np.asarray(mean)) / sig
    return 0.5 * np.log(2.0 * np.pi) + np.log(sig) + 0.5 * z * z


def gaussian_nll(x, mean, raw_scale) -> float:
    """Diagonal-Gaussian negative log likelihood summed over dimensions."""
    return float(np.sum(gaussian_nll_terms(x, mean, raw_scale)))


def gaussian_nll_backward(x, mean, raw_scale):
    """Elementwise gradients of the NLL terms w.r.t. mean and raw_scale."""
    sig = softplus(raw_scale)
    diff = np.asarray(mean) - np.asarray(x)
    dmean = diff / (sig * sig)
    dsig = 1.0 / sig - (diff * diff) / (sig ** 3)
    return dmean, dsig * sigmoid(raw_scale)
