"""Preference and value networks: tanh MLPs with hand-coded backprop.

Both networks are plain feed-forward stacks (tanh hidden layers, linear
output) over one flat float64 parameter vector.  Layer weights and biases are
views into that vector, so trace and parameter updates operate on the flat
array while the forward pass uses the matrix views; the two can never drift
apart.  No autodiff framework is involved: gradients are derived by hand and
checked against central finite differences in the test suite.

Flat layout: for each layer in order, the weight matrix row-major, then the
bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MLPParams",
    "Traces",
    "PolicyOutput",
    "mlp_forward",
    "preferences",
    "masked_softmax",
    "sample_action",
    "value_estimate",
    "grad_log_policy",
    "grad_value",
    "value_and_grad",
    "policy_and_cache",
    "grad_log_from_cache",
]


class NoFeasibleActionError(ValueError):
    """Masked softmax received an all-false mask."""


@dataclass
class MLPParams:
    """Parameter container for one MLP; dims = (input, hidden..., output)."""

    dims: tuple[int, ...]
    flat: np.ndarray

    @classmethod
    def init(cls, dims, rng: np.random.Generator, zero_output: bool = False) -> "MLPParams":
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per layer; optionally
        zeroes the output layer so the network starts identically zero."""
        dims = tuple(int(d) for d in dims)
        flat = np.empty(cls._size(dims), dtype=np.float64)
        params = cls(dims=dims, flat=flat)
        offset = 0
        n_layers = len(dims) - 1
        for layer, (w, bias) in enumerate(params.layers()):
            bound = 1.0 / np.sqrt(dims[layer])
            n = w.size + bias.size
            if zero_output and layer == n_layers - 1:
                flat[offset:offset + n] = 0.0
            else:
                flat[offset:offset + n] = rng.uniform(-bound, bound, size=n)
            offset += n
        return params

    @staticmethod
    def _size(dims) -> int:
        return sum((dims[k] + 1) * dims[k + 1] for k in range(len(dims) - 1))

    def layers(self):
        """Yields (weight view (out, in), bias view (out,)) per layer."""
        offset = 0
        for k in range(len(self.dims) - 1):
            n_in, n_out = self.dims[k], self.dims[k + 1]
            w = self.flat[offset:offset + n_in * n_out].reshape(n_out, n_in)
            offset += n_in * n_out
            bias = self.flat[offset:offset + n_out]
            offset += n_out
            yield w, bias

    def flatten(self) -> np.ndarray:
        return self.flat.copy()

    def set_flat(self, values: np.ndarray) -> None:
        if values.shape != self.flat.shape:
            raise ValueError(f"flat vector has size {values.size}, expected {self.flat.size}")
        self.flat[:] = values

    def copy(self) -> "MLPParams":
        return MLPParams(dims=self.dims, flat=self.flat.copy())

    @property
    def size(self) -> int:
        return self.flat.size


@dataclass
class Traces:
    """Eligibility traces aligned with the two parameter vectors."""

    z_w: np.ndarray
    z_theta: np.ndarray

    @classmethod
    def zeros(cls, w: MLPParams, theta: MLPParams) -> "Traces":
        return cls(np.zeros(w.size), np.zeros(theta.size))


@dataclass(frozen=True)
class PolicyOutput:
    """Action distribution over the global action index set."""

    probs: np.ndarray
    mask: np.ndarray


def _forward_cached(params: MLPParams, x: np.ndarray):
    """Returns (output, activation list); activations[k] feeds layer k."""
    if x.shape != (params.dims[0],):
        raise ValueError(f"input has shape {x.shape}, expected ({params.dims[0]},)")
    acts = [x]
    a = x
    layer_list = list(params.layers())
    for k, (w, bias) in enumerate(layer_list):
        z = w @ a + bias
        a = z if k == len(layer_list) - 1 else np.tanh(z)
        acts.append(a)
    return a, acts


def _backward(params: MLPParams, acts, out_grad: np.ndarray) -> np.ndarray:
    """Gradient of out_grad . output w.r.t. the flat parameter vector."""
    layer_list = list(params.layers())
    pieces = [None] * len(layer_list)
    go = out_grad
    for k in range(len(layer_list) - 1, -1, -1):
        w, _ = layer_list[k]
        a_in = acts[k]
        pieces[k] = (np.outer(go, a_in).reshape(-1), go)
        if k > 0:
            go = (w.T @ go) * (1.0 - acts[k] * acts[k])  # tanh'(z) = 1 - tanh(z)^2
    return np.concatenate([arr for pair in pieces for arr in pair])


def mlp_forward(params: MLPParams, x: np.ndarray) -> np.ndarray:
    out, _ = _forward_cached(params, np.asarray(x, dtype=np.float64))
    return out


def preferences(theta: MLPParams, features: np.ndarray) -> np.ndarray:
    """Action-preference vector h(s, .); width = the action index range."""
    return mlp_forward(theta, features)


def masked_softmax(h: np.ndarray, mask: np.ndarray) -> PolicyOutput:
    """Softmax restricted to feasible entries, max-shifted for overflow safety."""
    h = np.asarray(h, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if h.shape != mask.shape:
        raise ValueError("preference and mask lengths differ")
    if not mask.any():
        raise NoFeasibleActionError("no feasible action to normalize over")
    shifted = h[mask]
    e = np.exp(shifted - shifted.max())
    probs = np.zeros_like(h)
    probs[mask] = e / e.sum()
    return PolicyOutput(probs=probs, mask=mask)


def sample_action(out: PolicyOutput, rng: np.random.Generator) -> int:
    """Index draw from the policy; infeasible indices carry zero mass."""
    u = rng.random()
    k = int(np.searchsorted(np.cumsum(out.probs), u, side="right"))
    return min(k, out.probs.size - 1)


def value_estimate(w: MLPParams, features: np.ndarray) -> float:
    if w.dims[-1] != 1:
        raise ValueError("value network must have scalar output")
    return float(mlp_forward(w, features)[0])


def value_and_grad(w: MLPParams, features: np.ndarray) -> tuple[float, np.ndarray]:
    out, acts = _forward_cached(w, np.asarray(features, dtype=np.float64))
    return float(out[0]), _backward(w, acts, np.ones(1))


def grad_value(w: MLPParams, features: np.ndarray) -> np.ndarray:
    return value_and_grad(w, features)[1]


def policy_and_cache(theta: MLPParams, features: np.ndarray, mask: np.ndarray):
    """Forward pass reused by both sampling and the score-function gradient."""
    h, acts = _forward_cached(theta, np.asarray(features, dtype=np.float64))
    return masked_softmax(h, mask), acts


def grad_log_from_cache(theta: MLPParams, acts, out: PolicyOutput, k: int) -> np.ndarray:
    # d ln pi_k / d h = onehot(k) - probs, which already vanishes on the
    # infeasible entries because their probability is zero.
    go = -out.probs.copy()
    go[k] += 1.0
    return _backward(theta, acts, go)


def grad_log_policy(theta: MLPParams, features: np.ndarray, k: int,
                    mask: np.ndarray) -> np.ndarray:
    """Exact gradient of ln pi(k | s) w.r.t. the flat preference parameters."""
    mask = np.asarray(mask, dtype=bool)
    if not (0 <= k < mask.size) or not mask[k]:
        raise ValueError(f"action index {k} is not feasible under the mask")
    out, acts = policy_and_cache(theta, features, mask)
    return grad_log_from_cache(theta, acts, out, k)
