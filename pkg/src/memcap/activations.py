"""Piecewise-linear activations: ReLU-like, hard-tanh, and the gate bump.

All three are total functions on the reals.  A ReLU-like activation has two
pieces with slopes s_plus > s_minus >= 0 meeting at the origin (this covers
ReLU and Leaky ReLU).  Hard-tanh is the three-piece saturation at +-1.  The
gate is the four-piece triangular bump

    gate(t) = (1/2) * (hard_tanh(2t + 1) + hard_tanh(-2t + 1))

which passes values in (-1, 1) and outputs 0 outside [-1, 1].  Hard-tanh can
be written as a difference of two shifted ReLU-like units, so every hard-tanh
network has a ReLU-like twin of twice the width; see
``expand_hard_tanh_to_relu_like`` in :mod:`memcap.construct_fnn`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HARD_TANH = "hard_tanh"
RELU_LIKE = "relu_like"
GATE = "gate"

_KINDS = (HARD_TANH, RELU_LIKE, GATE)


@dataclass(frozen=True)
class Activation:
    """Descriptor for a piecewise-linear activation.

    ``s_plus``/``s_minus`` are only meaningful for ``relu_like`` and must
    satisfy s_plus > s_minus >= 0.
    """

    kind: str
    s_plus: float = 1.0
    s_minus: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == RELU_LIKE:
            if not (self.s_plus > self.s_minus >= 0.0):
                raise ValueError(
                    f"relu_like needs s_plus > s_minus >= 0, "
                    f"got ({self.s_plus}, {self.s_minus})"
                )

    @property
    def n_pieces(self) -> int:
        return {RELU_LIKE: 2, HARD_TANH: 3, GATE: 4}[self.kind]

    def breakpoints(self) -> np.ndarray:
        """Kink locations, strictly increasing."""
        if self.kind == RELU_LIKE:
            return np.array([0.0])
        if self.kind == HARD_TANH:
            return np.array([-1.0, 1.0])
        return np.array([-1.0, 0.0, 1.0])

    def piece_slopes(self) -> np.ndarray:
        """Slope of each piece, left to right (n_pieces entries)."""
        if self.kind == RELU_LIKE:
            return np.array([self.s_minus, self.s_plus])
        if self.kind == HARD_TANH:
            return np.array([0.0, 1.0, 0.0])
        return np.array([0.0, 1.0, -1.0, 0.0])


def hard_tanh(t):
    return np.clip(t, -1.0, 1.0)


def gate(t):
    t = np.asarray(t, dtype=float)
    return 0.5 * (hard_tanh(2.0 * t + 1.0) + hard_tanh(-2.0 * t + 1.0))


def act_eval(act: Activation, t):
    """Evaluate the activation elementwise.  Accepts scalars or arrays."""
    arr = np.asarray(t, dtype=float)
    if act.kind == RELU_LIKE:
        out = np.where(arr >= 0.0, act.s_plus * arr, act.s_minus * arr)
    elif act.kind == HARD_TANH:
        out = hard_tanh(arr)
    else:
        out = gate(arr)
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out)
    return out


def act_slope(act: Activation, t):
    """Derivative wherever it exists; at a breakpoint the right piece is used.

    Callers that care about differentiability must keep inputs away from the
    breakpoints (see ``is_differentiable_at`` in :mod:`memcap.networks`).
    """
    arr = np.asarray(t, dtype=float)
    region = np.searchsorted(act.breakpoints(), arr, side="right")
    out = act.piece_slopes()[region]
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out)
    return out


def breakpoint_margin(act: Activation, z) -> float:
    """Smallest |z - breakpoint| over all entries of z and all breakpoints."""
    arr = np.asarray(z, dtype=float)
    if arr.size == 0:
        return np.inf
    dists = np.abs(arr[..., None] - act.breakpoints())
    return float(dists.min())
