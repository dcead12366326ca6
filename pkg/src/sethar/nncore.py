"""Minimal deterministic neural-network core.

Dense layers over float64 numpy matrices, manual backpropagation for
stacks of dense layers ending in softmax, and RMSProp with L2 weight
decay. Everything is single-threaded and bit-reproducible for a fixed
seed; there is no autograd, the gradient of each layer is written out
explicitly and verified against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

ACTIVATIONS = ("none", "relu", "softmax")


def as_matrix(a, name="array"):
    """Validate and return a float64, C-contiguous, 2-D matrix."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    return m


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)
    activation: str = "none"

    def __post_init__(self):
        self.weights = as_matrix(self.weights, "weights")
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"bias shape {self.bias.shape} does not match "
                f"{self.weights.shape[0]} output units"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_width(self):
        return self.weights.shape[1]

    @property
    def out_width(self):
        return self.weights.shape[0]


@dataclass
class Mlp:
    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("Mlp needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_width != b.in_width:
                raise DimensionError(
                    f"layer widths {a.out_width} -> {b.in_width} incompatible"
                )
        for layer in self.layers[:-1]:
            if layer.activation == "softmax":
                raise ValueError("softmax is only permitted on the final layer")

    @property
    def in_width(self):
        return self.layers[0].in_width

    @property
    def out_width(self):
        return self.layers[-1].out_width

    def parameters(self):
        """Flat list of parameter arrays, weights then bias per layer."""
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out


def init_params(shape, seed):
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)), reproducible per seed.

    For a (out, in) weight matrix fan_in is the input width and fan_out
    the output width; for a 1-D shape both default to its length.
    """
    rng = np.random.default_rng(seed)
    if len(shape) == 2:
        fan_out, fan_in = shape
    else:
        fan_out = fan_in = shape[0]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def build_mlp(widths, seed, final_activation="softmax"):
    """Dense stack over the given widths: ReLU hiddens, chosen final act.

    widths = [in, h1, ..., out]. Per-layer seeds are derived from the
    master seed so the result is bit-reproducible.
    """
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    n_layers = len(widths) - 1
    seeds = np.random.SeedSequence(seed).generate_state(n_layers, dtype=np.uint64)
    layers = []
    for k in range(n_layers):
        act = final_activation if k == n_layers - 1 else "relu"
        layers.append(DenseLayer(
            weights=init_params((widths[k + 1], widths[k]), int(seeds[k])),
            bias=np.zeros(widths[k + 1]),
            activation=act,
        ))
    return Mlp(layers)


def softmax(logits, axis=-1):
    """Row-wise softmax, shifted by the max so it is overflow-safe."""
    x = np.asarray(logits, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def dense_forward(layer, inp):
    """activation(inp @ W.T + b), applied row-wise over the batch."""
    x = as_matrix(inp, "input")
    if x.shape[1] != layer.in_width:
        raise DimensionError(
            f"input width {x.shape[1]} != layer input width {layer.in_width}"
        )
    pre = x @ layer.weights.T + layer.bias
    if layer.activation == "relu":
        return np.maximum(pre, 0.0)
    if layer.activation == "softmax":
        return softmax(pre, axis=1)
    return pre


def mlp_forward(net, inp):
    x = inp
    for layer in net.layers:
        x = dense_forward(layer, x)
    return x


def mlp_forward_cached(net, inp):
    """Forward pass keeping every post-activation, input first."""
    acts = [as_matrix(inp, "input")]
    for layer in net.layers:
        acts.append(dense_forward(layer, acts[-1]))
    return acts


PROB_FLOOR = 1e-12


def nll_loss(probs, labels):
    """Mean negative log-likelihood of the true classes.

    Probabilities are clamped to [PROB_FLOOR, 1] before the log so a
    confidently wrong row yields a large finite loss, never -inf, and a
    row marginally above 1 from rounding never yields a negative loss.
    """
    p = as_matrix(probs, "probs")
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != p.shape[0]:
        raise DimensionError("labels must be 1-D with one entry per row")
    if np.any(y < 0) or np.any(y >= p.shape[1]):
        raise IndexError(f"label out of range for {p.shape[1]} classes")
    picked = np.clip(p[np.arange(p.shape[0]), y], PROB_FLOOR, 1.0)
    return float(-np.log(picked).mean())


def _activation_deriv(layer, post):
    # Derivative of the activation expressed through its own output.
    if layer.activation == "relu":
        return post > 0.0
    if layer.activation == "none":
        return 1.0
    raise ValueError("softmax derivative is folded into the loss delta")


def backprop_from_delta(net, acts, delta_pre):
    """Backpropagate a gradient given w.r.t. the final pre-activation.

    acts is the list from mlp_forward_cached. Returns (grads, d_input)
    where grads is one (dW, db) pair per layer and d_input the gradient
    w.r.t. the network input.
    """
    grads = [None] * len(net.layers)
    delta = delta_pre
    d_input = None
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        d_prev = delta @ layer.weights
        if k == 0:
            d_input = d_prev
        else:
            delta = d_prev * _activation_deriv(net.layers[k - 1], acts[k])
    return grads, d_input


def softmax_nll_delta(probs, labels):
    """Gradient of mean NLL w.r.t. the softmax pre-activations."""
    delta = probs.copy()
    delta[np.arange(probs.shape[0]), labels] -= 1.0
    return delta / probs.shape[0]


def backward(net, inp, labels):
    """Analytic gradients of nll_loss(mlp_forward(net, inp), labels).

    The final layer must be softmax; hidden layers may be relu or none.
    """
    if net.layers[-1].activation != "softmax":
        raise ValueError("backward requires a softmax final layer")
    y = np.asarray(labels)
    acts = mlp_forward_cached(net, inp)
    if np.any(y < 0) or np.any(y >= net.out_width):
        raise IndexError(f"label out of range for {net.out_width} classes")
    delta = softmax_nll_delta(acts[-1], y)
    grads, _ = backprop_from_delta(net, acts, delta)
    return grads


def flatten_grads(grads):
    """Per-layer (dW, db) pairs to a flat list matching Mlp.parameters()."""
    return [arr for pair in grads for arr in pair]


@dataclass
class RmsPropState:
    lr: float
    alpha: float = 0.99
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    accumulators: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


def rmsprop_step(state, params, grads):
    """One RMSProp update, in place.

    g' = g + weight_decay * theta
    v  = alpha * v + (1 - alpha) * g'^2
    theta -= lr * g' / (sqrt(v) + epsilon)

    The decay enters through the gradient, so reported losses stay free
    of the penalty term. Accumulators are created on first use.
    """
    if not state.accumulators:
        state.accumulators = [np.zeros_like(p) for p in params]
    if len(state.accumulators) != len(params) or len(grads) != len(params):
        raise DimensionError("params, grads and accumulators must align")
    for theta, g, v in zip(params, grads, state.accumulators):
        if theta.shape != g.shape:
            raise DimensionError("gradient shape does not match parameter")
        geff = g + state.weight_decay * theta
        v *= state.alpha
        v += (1.0 - state.alpha) * geff * geff
        theta -= state.lr * geff / (np.sqrt(v) + state.epsilon)
    return params
