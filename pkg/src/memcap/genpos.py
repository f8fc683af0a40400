"""Classification constructions for data in general position.

When no d_x + 1 points share an affine hyperplane, any d_x same-class points
sit on a hyperplane containing no other point.  One gate unit per such chunk
fires exactly on its chunk: the residual construction uses the gates to push
chosen points far along their class coordinate and reads the classes off a
threshold head; the 2-layer construction wires each gate straight to its
class output.  Either way roughly N/d_x + d_y gates suffice instead of N
hidden nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .activations import HARD_TANH, RELU_LIKE, Activation
from .construct_fnn import MAX_DOUBLINGS, MU_CLIP
from .data import CLASSIFICATION, Dataset, rng_for
from .errors import CapacityError, ConstructionError, GeneralPositionError
from .networks import FnnParams, ResNetParams, ResidualBlock, fnn_forward_batch, resnet_forward_batch

DET_TOL = 1e-8            # scaled-determinant threshold for affine independence
EXHAUSTIVE_LIMIT = 10**6  # check all subsets when there are at most this many
DEFAULT_SAMPLES = 2000
ON_PLANE_TOL = 1e-9
MAX_BETA_REDRAWS = 16


# ---------------------------------------------------------------------------
# general-position certification


@dataclass(frozen=True)
class GeneralPositionReport:
    ok: bool
    mode: str              # "exhaustive" or "sampled"
    n_checked: int
    worst_margin: float    # smallest relative singular value seen
    violation: tuple | None = None

    def __bool__(self) -> bool:
        return self.ok


def _affine_margins(X: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    """Relative smallest singular value of each subset's edge matrix.

    0 means the d_x + 1 points are affinely flat.  (A determinant scaled by
    the Hadamard bound would shrink exponentially with d_x even for generic
    data, so the singular-value ratio is what a fixed threshold can judge.)
    """
    base = X[subsets[:, 0]][:, None, :]
    edges = X[subsets[:, 1:]] - base  # (m, d_x, d_x)
    gram = edges @ np.swapaxes(edges, 1, 2)
    eig = np.linalg.eigvalsh(gram)
    lead = np.maximum(eig[:, -1], 1e-300)
    return np.sqrt(np.maximum(eig[:, 0], 0.0) / lead)


def is_general_position(X, tol: float = DET_TOL, *, seed: int = 0,
                        n_samples: int = DEFAULT_SAMPLES,
                        exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> GeneralPositionReport:
    """Check that no d_x + 1 points lie on a common affine hyperplane.

    Exhaustive over all subsets when their number is small enough, otherwise
    a seeded sample of ``n_samples`` subsets.  Truthiness is the verdict.
    """
    X = np.asarray(X, dtype=float)
    n, d_x = X.shape
    if n <= d_x:
        return GeneralPositionReport(True, "exhaustive", 0, np.inf)
    total = math.comb(n, d_x + 1)
    if total <= exhaustive_limit:
        subsets = np.array(list(_combinations(n, d_x + 1)), dtype=int)
        mode = "exhaustive"
    else:
        rng = rng_for(seed, "genpos-subsets")
        subsets = np.array([rng.choice(n, size=d_x + 1, replace=False) for _ in range(n_samples)])
        mode = "sampled"
    worst = np.inf
    for start in range(0, len(subsets), 4096):
        chunk = subsets[start : start + 4096]
        vals = _affine_margins(X, chunk)
        i = int(np.argmin(vals))
        if vals[i] < worst:
            worst = float(vals[i])
            if worst < tol:
                return GeneralPositionReport(False, mode, len(subsets), worst,
                                             tuple(int(j) for j in chunk[i]))
    return GeneralPositionReport(True, mode, len(subsets), worst)


def _combinations(n: int, k: int):
    import itertools

    return itertools.combinations(range(n), k)


# ---------------------------------------------------------------------------
# hyperplanes through chosen points


@dataclass(frozen=True)
class Hyperplane:
    """Unit-normal affine hyperplane u.x + c = 0 through the selected points."""

    u: np.ndarray
    c: float
    selected: tuple
    separation: float  # min |u.x + c| over all non-selected points


def hyperplane_through(X, indices, *, seed: int = 0, min_separation: float | None = None,
                       max_redraws: int = MAX_BETA_REDRAWS) -> Hyperplane:
    """Hyperplane vanishing on exactly the selected points.

    With fewer than d_x points the plane is underdetermined; the free
    directions are fixed by a seeded random combination, redrawn if some
    other point happens to land on the plane.
    """
    X = np.asarray(X, dtype=float)
    n, d_x = X.shape
    indices = tuple(int(i) for i in indices)
    S = X[list(indices)]
    scale = max(1.0, float(np.abs(X).max()))
    A = np.concatenate([S, np.ones((len(S), 1))], axis=1)
    basis = null_space(A)
    expected_dim = d_x + 1 - len(indices)
    if basis.shape[1] != expected_dim:
        raise GeneralPositionError(
            f"selected points are affinely dependent (null dim {basis.shape[1]}, "
            f"expected {expected_dim})"
        )
    others = np.setdiff1d(np.arange(n), indices)
    rng = rng_for(seed, "hyperplane-completion")
    floor = min_separation if min_separation is not None else ON_PLANE_TOL * scale
    draws = max_redraws if expected_dim > 1 else 1
    best = None
    for _ in range(draws):
        coeff = rng.standard_normal(expected_dim) if expected_dim > 1 else np.ones(1)
        v = basis @ coeff
        norm_u = np.linalg.norm(v[:d_x])
        if norm_u < 1e-12:
            continue
        u = v[:d_x] / norm_u
        c = float(v[d_x] / norm_u)
        on_resid = float(np.abs(S @ u + c).max()) if len(S) else 0.0
        if on_resid > ON_PLANE_TOL * scale:
            raise ConstructionError(f"selected points miss their plane by {on_resid:.2e}")
        sep = float(np.abs(X[others] @ u + c).min()) if len(others) else np.inf
        if sep >= floor:
            return Hyperplane(u, c, indices, sep)
        best = sep
    raise GeneralPositionError(
        f"no separating hyperplane through {indices}: best margin {best!r} < {floor:.2e}"
    )


# ---------------------------------------------------------------------------
# node budgets


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def node_budget(n: int, d_x: int, d_y: int, arch: str, activation: Activation) -> int:
    """Minimal hidden-node count of the matching construction (head included
    for the residual architecture)."""
    if min(n, d_x, d_y) <= 0:
        raise ValueError("arguments must be positive")
    mult = 2 if activation.kind == HARD_TANH else 4
    body = _ceil_div(mult * n + mult * d_y * d_x, d_x)
    if arch == "fnn2":
        return body
    if arch == "resnet":
        head = d_y if activation.kind == HARD_TANH else 2 * d_y
        return body + head
    raise ValueError(f"unknown architecture {arch!r}")


# ---------------------------------------------------------------------------
# gate planning shared by both constructions


@dataclass(frozen=True)
class GateNode:
    class_index: int
    members: tuple
    plane: Hyperplane
    alpha: float
    beta: float | None = None  # only residual gates push


def _class_chunks(dataset: Dataset, seed) -> list:
    """Chunks of at most d_x same-class points, ordered along a seeded
    projection inside each class; every point appears in exactly one chunk."""
    rng = rng_for(seed, "chunk-projection")
    u = rng.standard_normal(dataset.d_x)
    chunks = []
    for k in range(dataset.d_y):
        idx = np.flatnonzero(dataset.y == k)
        idx = idx[np.argsort(dataset.X[idx] @ u, kind="stable")]
        for start in range(0, len(idx), dataset.d_x):
            chunks.append((k, tuple(int(i) for i in idx[start : start + dataset.d_x])))
    return chunks


def _gate_alpha(states: np.ndarray, plane: Hyperplane, members, *,
                mu_clip: float = MU_CLIP) -> float:
    """Doubling search: scale the plane so every non-member clears |t| > 1."""
    others = np.setdiff1d(np.arange(len(states)), members)
    vals = states[others] @ plane.u + plane.c
    alpha = 1.0
    for _ in range(MAX_DOUBLINGS + 1):
        if len(others) == 0 or np.abs(alpha * vals).min() >= 1.0 + mu_clip:
            break
        alpha *= 2.0
    else:
        raise ConstructionError("gate scale search exceeded its cap")
    on_vals = states[list(members)] @ plane.u + plane.c
    if len(members) and np.abs(alpha * on_vals).max() > 1e-7:
        raise ConstructionError("gate does not sit flat on its own points")
    return alpha


def _check_budget_args(dataset: Dataset):
    if dataset.task != CLASSIFICATION:
        raise ValueError("general-position constructions classify")
    if dataset.n == 0:
        raise ValueError("nothing to memorize")


# ---------------------------------------------------------------------------
# residual construction


def construct_resnet_classifier(dataset: Dataset, activation: Activation, seed, *,
                                block_width: int | None = None, mu_clip: float = MU_CLIP,
                                gp_samples: int = DEFAULT_SAMPLES, det_tol: float = DET_TOL):
    """Residual network with exact one-hot outputs on a general-position dataset.

    Uses exactly ``node_budget(..., "resnet", ...)`` hidden nodes: each gate
    (two hard-tanh or four ReLU-like nodes) pushes its d_x chosen points far
    along their class coordinate; the head thresholds the pushed coordinates.
    Pushes draw a fresh magnitude until the moved states remain in general
    position.  Returns (params, report).
    """
    _check_budget_args(dataset)
    d_x, d_y, n = dataset.d_x, dataset.d_y, dataset.n
    if d_x < d_y:
        raise ValueError(f"needs d_x >= d_y, got {d_x} < {d_y}")
    gp0 = is_general_position(dataset.X, det_tol, seed=seed, n_samples=gp_samples)
    if not gp0.ok:
        raise GeneralPositionError(f"inputs not in general position: {gp0.violation}")
    relu = activation.kind == RELU_LIKE
    npg = 4 if relu else 2  # physical nodes per gate
    body_budget = node_budget(n, d_x, d_y, "fnn2", activation)
    head_width = 2 * d_y if relu else d_y
    block_width = d_x if block_width is None else int(block_width)
    if block_width < npg:
        raise ValueError(f"block width must hold at least one gate ({npg} nodes)")

    chunks = _class_chunks(dataset, seed)
    gates_per_block = block_width // npg
    x_max = dataset.X.max(axis=0)

    if relu:
        den = activation.s_plus - activation.s_minus
        shift_hr = (activation.s_plus + activation.s_minus) / den

    rng_beta = rng_for(seed, "push-magnitudes")
    states = dataset.X.copy()
    blocks = []
    gate_log = []
    pos = 0
    used_nodes = 0
    while pos < len(chunks):
        batch = chunks[pos : pos + gates_per_block]
        pos += len(batch)
        width = npg * len(batch)
        U = np.zeros((width, d_x))
        V = np.zeros((d_x, width))
        b = np.zeros(width)
        c_blk = np.zeros(d_x)
        block_input = states.copy()
        for g, (k, members) in enumerate(batch):
            plane = hyperplane_through(block_input, members,
                                       seed=hash((int(seed) & 0xFFFF, pos, g)) & 0x7FFFFFFF)
            alpha = _gate_alpha(block_input, plane, members, mu_clip=mu_clip)
            beta_min = float(x_max[k] + 1.0 - block_input[list(members), k].min())
            beta = None
            for _ in range(MAX_BETA_REDRAWS):
                candidate = float(rng_beta.uniform(beta_min + 1.0, 2.0 * beta_min + 2.0))
                trial = states.copy()
                trial[list(members), k] += candidate
                if is_general_position(trial, det_tol, seed=seed, n_samples=gp_samples).ok:
                    beta = candidate
                    states = trial
                    break
            if beta is None:
                raise GeneralPositionError("push magnitude kept breaking general position")
            base = npg * g
            if relu:
                t_w, t_b = 2.0 * alpha * plane.u, 2.0 * alpha * plane.c
                U[base + 0], b[base + 0] = t_w, t_b + 2.0
                U[base + 1], b[base + 1] = t_w, t_b
                U[base + 2], b[base + 2] = -t_w, -t_b + 2.0
                U[base + 3], b[base + 3] = -t_w, -t_b
                coeff = beta / (2.0 * den)
                V[k, base + 0] = coeff
                V[k, base + 1] = -coeff
                V[k, base + 2] = coeff
                V[k, base + 3] = -coeff
                c_blk[k] += -beta * shift_hr
            else:
                U[base + 0], b[base + 0] = 2.0 * alpha * plane.u, 2.0 * alpha * plane.c + 1.0
                U[base + 1], b[base + 1] = -2.0 * alpha * plane.u, -2.0 * alpha * plane.c + 1.0
                V[k, base + 0] = beta / 2.0
                V[k, base + 1] = beta / 2.0
            gate_log.append({
                "class": k,
                "members": list(members),
                "alpha": alpha,
                "beta": beta,
                "separation": plane.separation,
            })
        blocks.append(ResidualBlock(U, V, b, c_blk))
        used_nodes += width

    # spend the remaining budget on inert nodes so the count is exact
    spare = body_budget - used_nodes
    if spare < 0:
        raise CapacityError(f"construction wants {used_nodes} nodes, budget is {body_budget}")
    while spare > 0:
        width = min(spare, block_width)
        U = np.zeros((width, d_x))
        V = np.zeros((d_x, width))
        b = np.full(width, -1.0 if relu else 3.0)
        blocks.append(ResidualBlock(U, V, b, np.zeros(d_x)))
        spare -= width

    if relu:
        U_h = np.zeros((2 * d_y, d_x))
        b_h = np.zeros(2 * d_y)
        V_h = np.zeros((d_y, 2 * d_y))
        for k in range(d_y):
            U_h[2 * k, k] = 2.0
            U_h[2 * k + 1, k] = 2.0
            b_h[2 * k] = -2.0 * x_max[k]
            b_h[2 * k + 1] = -2.0 * x_max[k] - 2.0
            V_h[k, 2 * k] = 1.0 / (2.0 * den)
            V_h[k, 2 * k + 1] = -1.0 / (2.0 * den)
        c_h = np.full(d_y, 0.5 - shift_hr / 2.0)
    else:
        U_h = np.zeros((d_y, d_x))
        U_h[:, :d_y] = 2.0 * np.eye(d_y)
        b_h = -2.0 * x_max[:d_y] - 1.0
        V_h = 0.5 * np.eye(d_y)
        c_h = np.full(d_y, 0.5)
    head = ResidualBlock(U_h, V_h, b_h, c_h)
    params = ResNetParams(tuple(blocks), head, activation)

    out = resnet_forward_batch(params, dataset.X)
    err = float(np.abs(out - dataset.one_hot()).max())
    if err > 1e-6:
        raise ConstructionError(f"one-hot verification failed: max error {err:.3e}")
    n_gates = len(gate_log)
    report = {
        "theorem": "thm4",
        "budget": {"hidden_nodes": body_budget, "head_nodes": head_width,
                   "total": body_budget + head_width, "used_gate_nodes": used_nodes},
        "n_gates": n_gates,
        "gate_bound": _ceil_div(n + d_y * d_x, d_x),
        "gates": gate_log,
        "general_position_check": {"mode": gp0.mode, "worst_margin": gp0.worst_margin},
        "fit_error_max": err,
    }
    return params, report


# ---------------------------------------------------------------------------
# 2-layer construction


def construct_2layer_classifier(dataset: Dataset, activation: Activation, seed, *,
                                mu_clip: float = MU_CLIP, gp_samples: int = DEFAULT_SAMPLES,
                                det_tol: float = DET_TOL):
    """One-hidden-layer network with exact one-hot outputs (general position).

    Every gate reads the raw input, so no pushes are needed: the gate's class
    basis vector is wired straight to the output.  Uses exactly
    ``node_budget(..., "fnn2", ...)`` hidden nodes.  Returns (params, report).
    """
    _check_budget_args(dataset)
    d_x, d_y, n = dataset.d_x, dataset.d_y, dataset.n
    gp0 = is_general_position(dataset.X, det_tol, seed=seed, n_samples=gp_samples)
    if not gp0.ok:
        raise GeneralPositionError(f"inputs not in general position: {gp0.violation}")
    relu = activation.kind == RELU_LIKE
    npg = 4 if relu else 2
    d1 = node_budget(n, d_x, d_y, "fnn2", activation)
    chunks = _class_chunks(dataset, seed)
    if npg * len(chunks) > d1:
        raise CapacityError(f"{len(chunks)} gates need {npg * len(chunks)} nodes, budget {d1}")
    if relu:
        den = activation.s_plus - activation.s_minus
        shift_hr = (activation.s_plus + activation.s_minus) / den

    W1 = np.zeros((d1, d_x))
    b1 = np.full(d1, -1.0 if relu else 0.0)
    W2 = np.zeros((d_y, d1))
    b2 = np.zeros(d_y)
    gate_log = []
    for g, (k, members) in enumerate(chunks):
        plane = hyperplane_through(dataset.X, members, seed=hash((int(seed) & 0xFFFF, g)) & 0x7FFFFFFF)
        alpha = _gate_alpha(dataset.X, plane, members, mu_clip=mu_clip)
        base = npg * g
        t_w, t_b = 2.0 * alpha * plane.u, 2.0 * alpha * plane.c
        if relu:
            W1[base + 0], b1[base + 0] = t_w, t_b + 2.0
            W1[base + 1], b1[base + 1] = t_w, t_b
            W1[base + 2], b1[base + 2] = -t_w, -t_b + 2.0
            W1[base + 3], b1[base + 3] = -t_w, -t_b
            W2[k, base + 0] = 1.0 / (2.0 * den)
            W2[k, base + 1] = -1.0 / (2.0 * den)
            W2[k, base + 2] = 1.0 / (2.0 * den)
            W2[k, base + 3] = -1.0 / (2.0 * den)
            b2[k] += -shift_hr
        else:
            W1[base + 0], b1[base + 0] = t_w, t_b + 1.0
            W1[base + 1], b1[base + 1] = -t_w, -t_b + 1.0
            W2[k, base + 0] = 0.5
            W2[k, base + 1] = 0.5
        gate_log.append({"class": k, "members": list(members), "alpha": alpha,
                         "separation": plane.separation})
    params = FnnParams((W1, W2), (b1, b2), activation)
    out = fnn_forward_batch(params, dataset.X)
    err = float(np.abs(out - dataset.one_hot()).max())
    if err > 1e-6:
        raise ConstructionError(f"one-hot verification failed: max error {err:.3e}")
    report = {
        "theorem": "cor5",
        "budget": {"hidden_nodes": d1, "used_gate_nodes": npg * len(chunks)},
        "n_gates": len(chunks),
        "gate_bound": _ceil_div(n + d_y * d_x, d_x),
        "gates": gate_log,
        "general_position_check": {"mode": gp0.mode, "worst_margin": gp0.worst_margin},
        "fit_error_max": err,
    }
    return params, report
