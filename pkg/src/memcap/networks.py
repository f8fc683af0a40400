"""Exact forward evaluation and analytic parameter gradients.

Two architectures are supported:

* fully-connected: z^l = W^l a^{l-1} + b^l, a^l = sigma(z^l), output affine;
* residual: h^l = h^{l-1} + V^l sigma(U^l h^{l-1} + b^l) + c^l with an
  affine-in-sigma head g(x) = V^L sigma(U^L h^{L-1} + b^L) + c^L.

Parameter vectors are flattened in the fixed order

    [vec(W^L), b^L, vec(W^{L-1}), b^{L-1}, ..., vec(W^1), b^1]

with column-major vec().  Nothing depends on this order semantically, but the
gradient, the flatten/unflatten pair, and the SGD lab all share it.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .activations import RELU_LIKE, Activation, act_eval, act_slope


@dataclass(frozen=True)
class FnnParams:
    """Weights and biases of an L-layer fully-connected network.

    ``weights[l]`` has shape (d_{l+1}, d_l) against dims (d_0, ..., d_L);
    layers 1..L-1 are followed by the activation, the last layer is affine.
    """

    weights: tuple
    biases: tuple
    activation: Activation

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=float) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=float) for b in self.biases))
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight/bias lists")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {l + 1}: W is {w.shape}, b is {b.shape}")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(
                    f"layer {l + 1}: expects {w.shape[1]} inputs, "
                    f"previous layer has {self.weights[l - 1].shape[0]} outputs"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {l + 1}: non-finite entries")

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class ResidualBlock:
    """One residual update h -> h + V sigma(U h + b) + c."""

    U: np.ndarray
    V: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "U", np.asarray(self.U, dtype=float))
        object.__setattr__(self, "V", np.asarray(self.V, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))

    @property
    def width(self) -> int:
        return self.U.shape[0]


@dataclass(frozen=True)
class ResNetParams:
    """Residual network: blocks preserving the d_x-dimensional stream, then a head.

    The head reuses the ResidualBlock container but maps to the output space:
    head.U is (d_L, d_x), head.V is (d_y, d_L), head.c is (d_y,).
    """

    blocks: tuple
    head: ResidualBlock
    activation: Activation

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        d_x = self.d_x
        for i, blk in enumerate(self.blocks):
            if blk.U.shape[1] != d_x or blk.V.shape != (d_x, blk.U.shape[0]):
                raise ValueError(f"block {i + 1}: shapes do not preserve the residual stream")
            if blk.b.shape != (blk.U.shape[0],) or blk.c.shape != (d_x,):
                raise ValueError(f"block {i + 1}: bad bias shapes")
        h = self.head
        if h.U.shape[1] != d_x or h.V.shape[1] != h.U.shape[0] or h.b.shape != (h.U.shape[0],):
            raise ValueError("head shapes inconsistent")
        if h.c.shape != (h.V.shape[0],):
            raise ValueError("head output bias has wrong length")

    @property
    def d_x(self) -> int:
        return self.head.U.shape[1] if not self.blocks else self.blocks[0].U.shape[1]

    @property
    def d_y(self) -> int:
        return self.head.V.shape[0]

    @property
    def hidden_node_count(self) -> int:
        return sum(blk.width for blk in self.blocks)


def fnn_forward(params: FnnParams, x, keep_hidden: bool = False):
    """Evaluate f(x) for a single input vector.

    With ``keep_hidden`` returns (y, zs, activations) where zs[l] / acts[l]
    are the pre-/post-activation of hidden layer l+1.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (params.dims[0],):
        raise ValueError(f"input has shape {x.shape}, expected ({params.dims[0]},)")
    out = fnn_forward_batch(params, x[None, :], keep_hidden=keep_hidden)
    if keep_hidden:
        y, zs, acts = out
        return y[0], [z[0] for z in zs], [a[0] for a in acts]
    return out[0]


def fnn_forward_batch(params: FnnParams, X, keep_hidden: bool = False):
    """Evaluate f on the rows of X, shape (n, d_0) -> (n, d_L)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.dims[0]:
        raise ValueError(f"input has shape {X.shape}, expected (n, {params.dims[0]})")
    a = X
    zs, acts = [], []
    for l in range(params.n_layers - 1):
        z = a @ params.weights[l].T + params.biases[l]
        a = act_eval(params.activation, z)
        if keep_hidden:
            zs.append(z)
            acts.append(a)
    y = a @ params.weights[-1].T + params.biases[-1]
    if keep_hidden:
        return y, zs, acts
    return y


def resnet_forward(params: ResNetParams, x, keep_hidden: bool = False):
    x = np.asarray(x, dtype=float)
    if x.shape != (params.d_x,):
        raise ValueError(f"input has shape {x.shape}, expected ({params.d_x},)")
    out = resnet_forward_batch(params, x[None, :], keep_hidden=keep_hidden)
    if keep_hidden:
        y, states = out
        return y[0], [h[0] for h in states]
    return out[0]


def resnet_forward_batch(params: ResNetParams, X, keep_hidden: bool = False):
    """Evaluate g on the rows of X; optionally return all residual states h^l."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.d_x:
        raise ValueError(f"input has shape {X.shape}, expected (n, {params.d_x})")
    h = X
    states = [h]
    for blk in params.blocks:
        z = h @ blk.U.T + blk.b
        h = h + act_eval(params.activation, z) @ blk.V.T + blk.c
        if keep_hidden:
            states.append(h)
    head = params.head
    z = h @ head.U.T + head.b
    y = act_eval(params.activation, z) @ head.V.T + head.c
    if keep_hidden:
        return y, states
    return y


# ---------------------------------------------------------------------------
# parameter flattening (shared by the gradient and the SGD lab)


def flatten_params(params: FnnParams) -> np.ndarray:
    chunks = []
    for w, b in zip(reversed(params.weights), reversed(params.biases)):
        chunks.append(w.flatten(order="F"))
        chunks.append(b)
    return np.concatenate(chunks)


def unflatten_params(theta, template: FnnParams) -> FnnParams:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (template.n_params,):
        raise ValueError(f"theta has {theta.shape}, expected ({template.n_params},)")
    weights, biases = [], []
    pos = 0
    for w, b in zip(reversed(template.weights), reversed(template.biases)):
        weights.append(theta[pos : pos + w.size].reshape(w.shape, order="F"))
        pos += w.size
        biases.append(theta[pos : pos + b.size])
        pos += b.size
    return FnnParams(tuple(reversed(weights)), tuple(reversed(biases)), template.activation)


def fnn_gradient_batch(params: FnnParams, X) -> np.ndarray:
    """Parameter gradients of a scalar-output network, one row per input.

    Row n is the flattened gradient of f at X[n] in the same ordering as
    ``flatten_params``: layer L block first, each block being
    [a^{l-1}; 1] (x) D^l where D^l backpropagates the output row through the
    activation slope diagonals.  Inputs sitting exactly on a breakpoint give
    the right-piece slope; use ``is_differentiable_at`` to rule those out.
    """
    if params.dims[-1] != 1:
        raise ValueError("parameter gradient is defined for scalar outputs only")
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n == 0:
        return np.zeros((0, params.n_params))
    _, zs, acts = fnn_forward_batch(params, X, keep_hidden=True)
    inputs = [X] + acts  # a^0 .. a^{L-1}
    L = params.n_layers
    # D^l, computed backwards; D^L = 1
    D = [None] * (L + 1)
    D[L] = np.ones((n, 1))
    for l in range(L - 1, 0, -1):
        back = D[l + 1] @ params.weights[l]  # (n, d_l)
        D[l] = back * act_slope(params.activation, zs[l - 1])
    blocks = []
    ones = np.ones((n, 1))
    for l in range(L, 0, -1):
        a_prev = np.concatenate([inputs[l - 1], ones], axis=1)  # (n, d_{l-1}+1)
        blk = np.einsum("ni,nj->nij", a_prev, D[l])
        blocks.append(blk.reshape(n, -1))
    return np.concatenate(blocks, axis=1)


def fnn_gradient(params: FnnParams, x) -> np.ndarray:
    """Flattened gradient of f(x) with respect to all parameters (d_y = 1)."""
    x = np.asarray(x, dtype=float)
    return fnn_gradient_batch(params, x[None, :])[0]


# ---------------------------------------------------------------------------
# differentiability margins and activation patterns


def hidden_breakpoint_margin(params: FnnParams, X) -> float:
    """min over data points, hidden nodes and breakpoints of |z - breakpoint|."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.inf
    _, zs, _ = fnn_forward_batch(params, X, keep_hidden=True)
    bps = params.activation.breakpoints()
    margin = np.inf
    for z in zs:
        margin = min(margin, np.abs(z[..., None] - bps).min())
    return float(margin)


def is_differentiable_at(params: FnnParams, X, margin: float = 1e-9) -> bool:
    """True iff every hidden pre-activation stays ``margin`` away from every kink."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    return hidden_breakpoint_margin(params, X) >= margin


def activation_pattern(params: FnnParams, X) -> tuple:
    """Per-layer region codes of the hidden pre-activations (one int per node)."""
    X = np.asarray(X, dtype=float)
    _, zs, _ = fnn_forward_batch(params, X, keep_hidden=True)
    bps = params.activation.breakpoints()
    return tuple(np.searchsorted(bps, z, side="right") for z in zs)


def same_pattern(p1: tuple, p2: tuple) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(p1, p2)) and len(p1) == len(p2)


# ---------------------------------------------------------------------------
# JSON serialization (shortest round-trip decimals; bit-exact for finite doubles)


def _act_to_json(act: Activation) -> dict:
    doc = {"kind": act.kind}
    if act.kind == RELU_LIKE:
        doc["s_plus"] = float(act.s_plus)
        doc["s_minus"] = float(act.s_minus)
    return doc


def _act_from_json(doc: dict) -> Activation:
    if doc["kind"] == RELU_LIKE:
        return Activation(RELU_LIKE, float(doc["s_plus"]), float(doc["s_minus"]))
    return Activation(doc["kind"])


def network_to_json(params) -> dict:
    if isinstance(params, FnnParams):
        return {
            "arch": "fnn",
            "activation": _act_to_json(params.activation),
            "dims": list(params.dims),
            "layers": [
                {"W": w.tolist(), "b": b.tolist()}
                for w, b in zip(params.weights, params.biases)
            ],
        }
    if isinstance(params, ResNetParams):
        return {
            "arch": "resnet",
            "activation": _act_to_json(params.activation),
            "dims": [params.d_x]
            + [blk.width for blk in params.blocks]
            + [params.head.width, params.d_y],
            "blocks": [
                {"U": blk.U.tolist(), "V": blk.V.tolist(), "b": blk.b.tolist(), "c": blk.c.tolist()}
                for blk in params.blocks
            ],
            "head": {
                "U": params.head.U.tolist(),
                "V": params.head.V.tolist(),
                "b": params.head.b.tolist(),
                "c": params.head.c.tolist(),
            },
        }
    raise TypeError(f"cannot serialize {type(params).__name__}")


def network_from_json(doc: dict):
    act = _act_from_json(doc["activation"])
    if doc["arch"] == "fnn":
        weights = tuple(np.array(layer["W"], dtype=float) for layer in doc["layers"])
        biases = tuple(np.array(layer["b"], dtype=float) for layer in doc["layers"])
        return FnnParams(weights, biases, act)
    if doc["arch"] == "resnet":
        blocks = tuple(
            ResidualBlock(np.array(b["U"], float), np.array(b["V"], float),
                          np.array(b["b"], float), np.array(b["c"], float))
            for b in doc["blocks"]
        )
        h = doc["head"]
        head = ResidualBlock(np.array(h["U"], float), np.array(h["V"], float),
                             np.array(h["b"], float), np.array(h["c"], float))
        return ResNetParams(blocks, head, act)
    raise ValueError(f"unknown arch {doc['arch']!r}")


def write_json_atomic(doc: dict, path: str) -> None:
    """Write JSON via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_network(params, path: str) -> None:
    write_json_atomic(network_to_json(params), path)


def load_network(path: str):
    with open(path) as fh:
        return network_from_json(json.load(fh))
