"""Exact breakpoint algebra for scalar piecewise-linear functions.

A function is a strictly increasing breakpoint list, one slope per piece, and
an anchor (t0, f(t0)) pinning the level; values propagate continuously from
the anchor.  Canonical form merges adjacent pieces with equal slopes, so the
piece count of a sum is at most k + l - 1 and of an activation composition at
most p * k, the counting rules behind the shallow-capacity upper bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import Activation, act_eval
from .data import REGRESSION, Dataset
from .networks import FnnParams

SLOPE_MERGE_TOL = 1e-12
BREAK_DEDUP_TOL = 1e-12


@dataclass(frozen=True)
class PiecewiseLinear1D:
    """Canonical continuous piecewise-linear function on the real line."""

    breakpoints: np.ndarray  # (m - 1,) strictly increasing
    slopes: np.ndarray       # (m,)
    anchor_t: float
    anchor_value: float
    _knot_values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bps = np.atleast_1d(np.asarray(self.breakpoints, dtype=float))
        slopes = np.atleast_1d(np.asarray(self.slopes, dtype=float))
        if len(slopes) != len(bps) + 1:
            raise ValueError("need one slope per piece (len(breakpoints) + 1)")
        if len(bps) > 1 and np.diff(bps).min() <= 0:
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "_knot_values", self._values_at_knots())

    def _values_at_knots(self) -> np.ndarray:
        bps, slopes = self.breakpoints, self.slopes
        m = len(bps)
        vals = np.zeros(m)
        if m == 0:
            return vals
        ia = int(np.searchsorted(bps, self.anchor_t, side="right"))
        if ia <= m - 1:
            vals[ia] = self.anchor_value + slopes[ia] * (bps[ia] - self.anchor_t)
            for j in range(ia + 1, m):
                vals[j] = vals[j - 1] + slopes[j] * (bps[j] - bps[j - 1])
        if ia >= 1:
            vals[ia - 1] = self.anchor_value + slopes[ia] * (bps[ia - 1] - self.anchor_t)
            for j in range(ia - 2, -1, -1):
                vals[j] = vals[j + 1] - slopes[j + 1] * (bps[j + 1] - bps[j])
        return vals

    @property
    def n_pieces(self) -> int:
        return len(self.slopes)

    def __call__(self, t):
        arr = np.asarray(t, dtype=float)
        if len(self.breakpoints) == 0:
            out = self.anchor_value + self.slopes[0] * (arr - self.anchor_t)
        else:
            idx = np.searchsorted(self.breakpoints, arr, side="right")
            ref_idx = np.clip(idx - 1, 0, len(self.breakpoints) - 1)
            ref_t = self.breakpoints[ref_idx]
            ref_v = self._knot_values[ref_idx]
            out = ref_v + self.slopes[idx] * (arr - ref_t)
        if np.isscalar(t) or np.ndim(t) == 0:
            return float(out)
        return out


def from_affine(slope: float, intercept: float) -> PiecewiseLinear1D:
    return PiecewiseLinear1D(np.array([]), np.array([float(slope)]), 0.0, float(intercept))


def constant(value: float) -> PiecewiseLinear1D:
    return from_affine(0.0, value)


def _canonical(bps, slopes, anchor_t, anchor_value) -> PiecewiseLinear1D:
    """Merge adjacent near-equal slopes; drop the breakpoints between them."""
    bps = np.asarray(bps, dtype=float)
    slopes = np.asarray(slopes, dtype=float)
    keep_bp = []
    keep_slope = [slopes[0]]
    for i in range(len(bps)):
        s_prev, s_next = keep_slope[-1], slopes[i + 1]
        tol = SLOPE_MERGE_TOL * max(1.0, abs(s_prev), abs(s_next))
        if abs(s_next - s_prev) < tol:
            continue
        keep_bp.append(bps[i])
        keep_slope.append(s_next)
    return PiecewiseLinear1D(np.array(keep_bp), np.array(keep_slope), anchor_t, anchor_value)


def _merged_breakpoints(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    merged = np.sort(np.concatenate([b1, b2]))
    if len(merged) == 0:
        return merged
    scale = max(1.0, float(np.abs(merged).max()))
    keep = [merged[0]]
    for t in merged[1:]:
        if t - keep[-1] > BREAK_DEDUP_TOL * scale:
            keep.append(t)
    return np.array(keep)


def _dedup_pairs(bps: np.ndarray, slopes):
    """Drop breakpoints that collide within tolerance; the sliver between two
    colliding breakpoints vanishes and the right-hand piece takes over."""
    slopes = np.asarray(slopes, dtype=float)
    if len(bps) == 0:
        return bps, slopes
    scale = max(1.0, float(np.abs(bps).max()))
    keep_bp = [bps[0]]
    keep_slope = [slopes[0], slopes[1]]
    for i in range(1, len(bps)):
        if bps[i] - keep_bp[-1] <= BREAK_DEDUP_TOL * scale:
            keep_slope[-1] = slopes[i + 1]
        else:
            keep_bp.append(bps[i])
            keep_slope.append(slopes[i + 1])
    return np.array(keep_bp), np.array(keep_slope)


def _interval_representatives(bps: np.ndarray) -> np.ndarray:
    """One probe point strictly inside each of the len(bps)+1 intervals."""
    if len(bps) == 0:
        return np.array([0.0])
    width = max(1.0, float(bps[-1] - bps[0]))
    inner = (bps[:-1] + bps[1:]) / 2.0
    return np.concatenate([[bps[0] - width], inner, [bps[-1] + width]])


def pwl_add(f: PiecewiseLinear1D, g: PiecewiseLinear1D) -> PiecewiseLinear1D:
    """Exact sum in canonical form; piece count is at most k + l - 1."""
    bps = _merged_breakpoints(f.breakpoints, g.breakpoints)
    reps = _interval_representatives(bps)
    idx_f = np.searchsorted(f.breakpoints, reps, side="right")
    idx_g = np.searchsorted(g.breakpoints, reps, side="right")
    slopes = f.slopes[idx_f] + g.slopes[idx_g]
    t0 = bps[0] if len(bps) else 0.0
    out = _canonical(bps, slopes, t0, f(t0) + g(t0))
    assert out.n_pieces <= f.n_pieces + g.n_pieces - 1
    return out


def pwl_scale(f: PiecewiseLinear1D, c: float) -> PiecewiseLinear1D:
    if c == 0.0:
        return constant(0.0)
    return PiecewiseLinear1D(f.breakpoints, c * f.slopes, f.anchor_t, c * f.anchor_value)


def pwl_compose_activation(act: Activation, f: PiecewiseLinear1D) -> PiecewiseLinear1D:
    """Exact sigma(f(t)) in canonical form; piece count at most p * k.

    Within each piece of f the crossings of f with the activation kinks are
    affine inversions; a zero-slope piece sitting exactly on a kink is
    treated as non-crossing, with its region chosen right-continuously.
    """
    outer_bps = act.breakpoints()
    outer_slopes = act.piece_slopes()
    f_bps = f.breakpoints
    edges = np.concatenate([[-np.inf], f_bps, [np.inf]])
    new_bps = []
    new_slopes = []
    for i in range(f.n_pieces):
        lo, hi = edges[i], edges[i + 1]
        s = f.slopes[i]
        ref_t = f_bps[i - 1] if i >= 1 else (f_bps[0] if len(f_bps) else f.anchor_t)
        ref_v = f(ref_t)
        crossings = []
        if s != 0.0:
            for beta in outer_bps:
                t_star = ref_t + (beta - ref_v) / s
                if lo < t_star < hi:
                    crossings.append(t_star)
        crossings.sort()
        sub_edges = [lo] + crossings + [hi]
        if i >= 1:
            new_bps.append(lo)
        for j in range(len(sub_edges) - 1):
            a, b = sub_edges[j], sub_edges[j + 1]
            if j >= 1:
                new_bps.append(a)
            if np.isinf(a) and np.isinf(b):
                rep = ref_t
            elif np.isinf(a):
                rep = b - 1.0
            elif np.isinf(b):
                rep = a + 1.0
            else:
                rep = (a + b) / 2.0
            z = ref_v + s * (rep - ref_t)
            region = int(np.searchsorted(outer_bps, z, side="right"))
            new_slopes.append(outer_slopes[region] * s)
    bps, new_slopes = _dedup_pairs(np.asarray(new_bps, dtype=float), new_slopes)
    t0 = bps[0] if len(bps) else 0.0
    out = _canonical(bps, np.asarray(new_slopes), t0, act_eval(act, f(t0)))
    assert out.n_pieces <= act.n_pieces * f.n_pieces
    return out


# ---------------------------------------------------------------------------
# exact 1-D restrictions of scalar networks


def restrict_to_line(params: FnnParams, u) -> PiecewiseLinear1D:
    """Exact breakpoint form of t -> f(t * u) for a scalar-output network."""
    if params.dims[-1] != 1:
        raise ValueError("restriction needs a scalar-output network")
    u = np.asarray(u, dtype=float)
    if u.shape != (params.dims[0],):
        raise ValueError(f"direction has shape {u.shape}, expected ({params.dims[0]},)")
    act = params.activation
    w_eff = params.weights[0] @ u
    funcs = [from_affine(w_eff[j], params.biases[0][j]) for j in range(len(w_eff))]
    if params.n_layers > 1:
        funcs = [pwl_compose_activation(act, h) for h in funcs]
    for l in range(1, params.n_layers):
        W, b = params.weights[l], params.biases[l]
        nxt = []
        for k in range(W.shape[0]):
            acc = constant(b[k])
            for j in range(W.shape[1]):
                if W[k, j] != 0.0:
                    acc = pwl_add(acc, pwl_scale(funcs[j], W[k, j]))
            nxt.append(acc)
        if l < params.n_layers - 1:
            nxt = [pwl_compose_activation(act, h) for h in nxt]
        funcs = nxt
    return funcs[0]


def line_forward(params: FnnParams, u, t, extended: bool = False) -> np.ndarray:
    """f(t * u) evaluated directly (no breakpoint algebra), vectorized in t.

    ``extended`` evaluates in long-double precision (slow; for small batches
    where finite differences over tiny steps would drown in roundoff).  Large
    float64 batches are processed in cache-sized chunks.
    """
    dtype = np.longdouble if extended else float
    u = np.asarray(u, dtype=dtype)
    t = np.asarray(t, dtype=dtype)
    chunk = len(t) if extended or len(t) <= 65536 else 65536
    w_eff = params.weights[0].astype(dtype) @ u
    out = np.empty(len(t), dtype=dtype)
    for start in range(0, len(t), chunk):
        a = t[start : start + chunk, None] * w_eff + params.biases[0].astype(dtype)
        a = _act_any(params.activation, a)
        for l in range(1, params.n_layers - 1):
            a = _act_any(params.activation, a @ params.weights[l].astype(dtype).T
                         + params.biases[l].astype(dtype))
        out[start : start + chunk] = (a @ params.weights[-1].astype(dtype).T
                                      + params.biases[-1].astype(dtype))[:, 0]
    return out


def _act_any(act: Activation, z):
    # like act_eval but dtype-preserving for long doubles
    if act.kind == "relu_like":
        return np.where(z >= 0, act.s_plus * z, act.s_minus * z)
    if act.kind == "hard_tanh":
        return np.clip(z, -1.0, 1.0)
    return 0.5 * (np.clip(2 * z + 1, -1.0, 1.0) + np.clip(-2 * z + 1, -1.0, 1.0))


def dense_piece_count(params: FnnParams, u, lo: float, hi: float,
                      n_grid: int = 1_000_000, slope_tol: float = 1e-7,
                      focus=None) -> int:
    """Piece count of f(t u) sampled on a grid of ``n_grid`` points: the
    sampling oracle, counting only from function values.

    Counts maximal runs of constant finite-difference slope; a kink interior
    to a cell blends that one cell's slope, so singleton runs are transition
    artifacts, not pieces.  A uniform grid cannot resolve breakpoints closer
    than a few cells, so ``focus`` (a sorted list of claimed kink locations)
    diverts a small part of the budget to a fine sub-grid inside every
    claimed piece, evaluated in extended precision; a slope jump only counts
    when it exceeds both the tolerance and the rounding noise of its own
    finite-difference step, which keeps the fine steps from manufacturing
    pieces.
    """
    focus = None if focus is None or len(focus) == 0 else np.asarray(focus, dtype=float)
    per_piece = 12
    n_fine = 0 if focus is None else per_piece * (len(focus) + 1)
    t_coarse = np.linspace(lo, hi, n_grid - n_fine)
    pieces_fine = []
    if focus is not None:
        span = hi - lo
        edges = np.concatenate([[lo], focus, [hi]])
        for a, b in zip(edges[:-1], edges[1:]):
            pad = 0.01 * (b - a)
            pts = np.linspace(a + pad, b - pad, per_piece)
            pieces_fine.append(pts)
        t_fine = np.concatenate(pieces_fine)
        t_fine = t_fine[(t_fine > lo) & (t_fine < hi)]
    else:
        t_fine = np.array([])

    vals_coarse = line_forward(params, u, t_coarse)
    if len(t_fine):
        vals_fine_ld = np.asarray(line_forward(params, u, t_fine, extended=True),
                                  dtype=np.longdouble)
        t_all = np.concatenate([t_coarse, t_fine])
        v_all = np.concatenate([vals_coarse, np.asarray(vals_fine_ld, dtype=float)])
        v_ld = np.concatenate([vals_coarse.astype(np.longdouble), vals_fine_ld])
        eps_all = np.concatenate([
            np.full(len(t_coarse), np.finfo(float).eps),
            np.full(len(t_fine), float(np.finfo(np.longdouble).eps)),
        ])
        order = np.argsort(t_all, kind="stable")
        t_all, v_all, v_ld, eps_all = t_all[order], v_all[order], v_ld[order], eps_all[order]
        keep = np.concatenate([[True], np.diff(t_all) > 0])
        t_all, v_all, v_ld, eps_all = t_all[keep], v_all[keep], v_ld[keep], eps_all[keep]
    else:
        t_all = t_coarse
        v_all = vals_coarse
        v_ld = None
        eps_all = np.full(len(t_coarse), np.finfo(float).eps)

    dt = np.diff(t_all)
    slopes = np.diff(v_all) / dt
    if v_ld is not None:
        # pairs touching a fine sample: redo the cancellation-prone
        # subtraction in extended precision (small count, loop-free)
        fine = eps_all < np.finfo(float).eps
        redo = np.flatnonzero(fine[:-1] | fine[1:])
        if len(redo):
            num = v_ld[redo + 1] - v_ld[redo]
            den = t_all[redo + 1].astype(np.longdouble) - t_all[redo].astype(np.longdouble)
            slopes[redo] = np.asarray(num / den, dtype=float)
    # per-pair rounding noise of the finite-difference slope
    pair_eps = np.maximum(eps_all[:-1], eps_all[1:])
    mag = np.maximum(np.abs(v_all[:-1]), np.abs(v_all[1:]))
    noise = 4.0 * pair_eps * np.maximum(mag, 1.0) / dt
    tol = slope_tol * max(1.0, float(np.abs(slopes).max()))
    jump = np.abs(np.diff(slopes))
    significant = jump > tol + 2.0 * (noise[:-1] + noise[1:])
    boundaries = np.flatnonzero(significant)
    run_lengths = np.diff(np.concatenate([[-1], boundaries, [len(slopes) - 1]]))
    return int(np.count_nonzero(run_lengths >= 2))


def piece_bound(depth: int, p: int, d1: int, d2: int | None = None) -> int:
    """Largest possible piece count of a depth-2 or depth-3 restriction."""
    if depth == 2:
        return (p - 1) * d1 + 1
    if depth == 3:
        if d2 is None:
            raise ValueError("depth 3 needs d2")
        return p * (p - 1) * d1 * d2 + (p - 1) * d2 + 1
    raise ValueError(f"piece bound only covers depths 2 and 3, got {depth}")


def hard_dataset(n: int, u) -> Dataset:
    """Alternating labels on a line: x_i = i * u, y_i = (-1)^i, i = 1..n.

    Any exact fit restricted to the line needs at least n - 1 pieces, which
    is what defeats narrow shallow networks.
    """
    u = np.asarray(u, dtype=float)
    if n < 1:
        raise ValueError("need n >= 1")
    if not np.any(u != 0.0):
        raise ValueError("direction must be nonzero")
    X = np.arange(1, n + 1)[:, None] * u[None, :]
    y = np.where(np.arange(1, n + 1) % 2 == 0, 1.0, -1.0)[:, None]
    return Dataset(X, y, REGRESSION, 1)


def _collinear_direction(X: np.ndarray):
    """Direction u with x_i = t_i u for all rows, or None if not collinear."""
    norms = np.linalg.norm(X, axis=1)
    if not norms.any():
        return None if X.shape[0] > 1 else np.ones(X.shape[1])
    u = X[int(np.argmax(norms))]
    t = X @ u / (u @ u)
    if np.abs(X - t[:, None] * u[None, :]).max() > 1e-9 * max(1.0, norms.max()):
        raise ValueError("dataset does not lie on a line through the origin")
    return u


def required_pieces(t: np.ndarray, y: np.ndarray) -> int:
    """Minimal piece count any exact interpolant of (t_i, y_i) must have."""
    order = np.argsort(t)
    diffs = np.diff(y[order])
    signs = np.sign(diffs[diffs != 0.0])
    if len(signs) == 0:
        return 1
    return int(np.count_nonzero(np.diff(signs) != 0)) + 1


def refute_fit(params: FnnParams, dataset: Dataset) -> dict:
    """Certificate that a network cannot fit a collinear dataset.

    Counts the exact pieces of the restriction to the data line and compares
    with the alternation count the labels force.  Returns a dict with keys
    verdict ("impossible" or "undecided"), piece_count, required_pieces and,
    for depth 2/3 networks, the architecture-level bound.
    """
    if dataset.task != REGRESSION or dataset.d_y != 1:
        raise ValueError("refutation applies to scalar regression data")
    u = _collinear_direction(dataset.X)
    if u is None:
        raise ValueError("dataset does not lie on a line through the origin")
    t = dataset.X @ u / (u @ u)
    restriction = restrict_to_line(params, u)
    pieces = restriction.n_pieces
    needed = required_pieces(t, dataset.y[:, 0])
    depth = params.n_layers
    bound = None
    if depth in (2, 3):
        widths = params.dims[1:-1]
        bound = piece_bound(depth, params.activation.n_pieces, *widths)
    return {
        "verdict": "impossible" if pieces < needed else "undecided",
        "piece_count": pieces,
        "required_pieces": needed,
        "bound": bound,
    }
