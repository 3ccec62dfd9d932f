"""Small dense-network engine: forward pass, backprop, optimizers, gradient oracle.

Everything works on float64 numpy arrays. Inputs may be a single vector of
shape ``(in,)`` or a batch of row vectors ``(n, in)``; gradients are summed
over the batch rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

ACTIVATIONS = ("sigmoid", "rectifier", "identity")
OPTIMIZERS = ("rmsprop", "adadelta", "sgd")


class ShapeError(ValueError):
    """Array dimensions do not compose."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite numbers are required."""


def sigmoid(a: np.ndarray) -> np.ndarray:
    # branch form: never exponentiates a large positive number
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _activate(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "rectifier":
        return np.maximum(a, 0.0)
    return a


def _activation_deriv(a: np.ndarray, h: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return h * (1.0 - h)
    if kind == "rectifier":
        return (a > 0).astype(np.float64)
    return np.ones_like(a)


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"layer weights {self.weights.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class MlpParams:
    layers: List[Layer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("an MLP needs at least one layer")
        for k in range(1, len(self.layers)):
            if self.layers[k].n_in != self.layers[k - 1].n_out:
                raise ShapeError(
                    f"layer {k} expects {self.layers[k].n_in} inputs but layer {k - 1} "
                    f"produces {self.layers[k - 1].n_out}"
                )

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def named_arrays(self, prefix: str = "") -> Dict[str, np.ndarray]:
        """Parameter arrays keyed by block name. The arrays are the live ones."""
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"{prefix}{k}.weights"] = layer.weights
            out[f"{prefix}{k}.bias"] = layer.bias
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            [Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            [Layer(np.zeros_like(l.weights), np.zeros_like(l.bias), l.activation) for l in self.layers]
        )


def init_mlp(
    sizes: Sequence[int],
    hidden_activation: str,
    rng: np.random.Generator,
    output_activation: str = "identity",
) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    layers = []
    for k in range(len(sizes) - 1):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = output_activation if k == len(sizes) - 2 else hidden_activation
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpParams(layers)


def _as_batch(net: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.n_in:
        raise ShapeError(f"input of shape {x.shape} does not fit a network with {net.n_in} inputs")
    return x, single


def mlp_forward(net: MlpParams, x) -> np.ndarray:
    h, single = _as_batch(net, x)
    for layer in net.layers:
        h = _activate(h @ layer.weights.T + layer.bias, layer.activation)
    return h[0] if single else h


def forward_trace(net: MlpParams, x) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer ``(input, pre-activation, output)`` needed for backprop."""
    h, _ = _as_batch(net, x)
    trace = []
    for layer in net.layers:
        a = h @ layer.weights.T + layer.bias
        out = _activate(a, layer.activation)
        trace.append((h, a, out))
        h = out
    return trace


def backprop_grads(
    net: MlpParams,
    x,
    output_grad,
    trace: Optional[list] = None,
    return_input_grad: bool = False,
):
    """Gradient of a loss w.r.t. every weight and bias, given d(loss)/d(output).

    Returns an ``MlpParams`` holding the gradients; with ``return_input_grad``
    also the gradient w.r.t. the network input.
    """
    if trace is None:
        trace = forward_trace(net, x)
    g = np.asarray(output_grad, dtype=np.float64)
    single = g.ndim == 1
    if single:
        g = g[None, :]
    n_rows = trace[0][0].shape[0]
    if g.shape != (n_rows, net.n_out):
        raise ShapeError(f"output gradient of shape {g.shape} does not match output ({n_rows}, {net.n_out})")

    grads = []
    n_layers = len(net.layers)
    for k, (layer, (h_in, a, out)) in enumerate(zip(reversed(net.layers), reversed(trace))):
        delta = g if layer.activation == "identity" else g * _activation_deriv(a, out, layer.activation)
        grads.append(Layer(delta.T @ h_in, delta.sum(axis=0), layer.activation))
        if k < n_layers - 1 or return_input_grad:
            g = delta @ layer.weights
    result = MlpParams(grads[::-1])
    if return_input_grad:
        return result, (g[0] if single else g)
    return result


@dataclass
class OptimizerState:
    """Optimizer hyperparameters plus per-block accumulators."""

    kind: str = "rmsprop"
    step_rate: float = 0.001
    decay: float = 0.9
    epsilon_stab: Optional[float] = None  # None: 1e-8, or 1e-6 for adadelta
    sq_grad: Dict[str, np.ndarray] = field(default_factory=dict)
    sq_step: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.step_rate <= 0:
            raise ValueError("step_rate must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.epsilon_stab is None:
            # adadelta's step magnitude starts at sqrt(eps); 1e-8 is too timid to leave the init
            self.epsilon_stab = 1e-6 if self.kind == "adadelta" else 1e-8


def optimizer_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: OptimizerState):
    """Apply one update in place and return ``(params, state)``.

    All gradient blocks are checked before any parameter moves, so a rejected
    step leaves everything untouched.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter block {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient {name!r} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {name!r}")

    rho, eps, lr = state.decay, state.epsilon_stab, state.step_rate
    for name, g in grads.items():
        p = params[name]
        if state.kind == "sgd":
            p -= lr * g
        elif state.kind == "rmsprop":
            ms = state.sq_grad.setdefault(name, np.zeros_like(p))
            ms *= rho
            ms += (1 - rho) * g * g
            p -= lr * g / np.sqrt(ms + eps)
        else:
            ms = state.sq_grad.setdefault(name, np.zeros_like(p))
            md = state.sq_step.setdefault(name, np.zeros_like(p))
            ms *= rho
            ms += (1 - rho) * g * g
            step = np.sqrt(md + eps) / np.sqrt(ms + eps) * g
            md *= rho
            md += (1 - rho) * step * step
            p -= lr * step
    return params, state


def finite_diff_check(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"f is not finite near coordinate {i}")
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(x.shape)


def flatten(arrays: Iterable[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays])


def unflatten_into(vector: np.ndarray, arrays: Sequence[np.ndarray]) -> None:
    """Copy a flat vector back into ``arrays`` (in place)."""
    pos = 0
    for a in arrays:
        a[...] = vector[pos : pos + a.size].reshape(a.shape)
        pos += a.size


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise ``|a-b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
