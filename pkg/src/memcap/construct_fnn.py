"""Closed-form weight synthesis for shallow fully-connected memorizers.

The 3-layer construction projects all inputs onto a random line, splits the
sorted projections into p groups of q points handled by the p first-layer
nodes, and lets each of the q second-layer nodes interpolate one point per
group while clipping every other point into a saturated region whose signs
are arranged so that the q node outputs sum to y + 1.  The 4-layer classifier
reuses the same two layers on a scalar encoding of the classes and decodes
one-hot outputs through per-class gate units.

Everything is built for hard-tanh; ReLU-like networks are obtained by the
exact two-for-one node expansion (``expand_hard_tanh_to_relu_like``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .activations import HARD_TANH, RELU_LIKE, Activation, hard_tanh
from .data import CLASSIFICATION, REGRESSION, Dataset, _find_duplicate_rows, subseed
from .errors import CapacityError, ConstructionError, ProjectionError
from .networks import FnnParams, fnn_forward_batch

MU_CLIP = 1e-3        # clipped pre-activations stay this far outside [-1, 1]
MU_GAP = 1e-12        # relative gap required between sorted projections
MU_INTERP = 1e-9      # interpolation residual allowed at the selected points
MAX_RESAMPLES = 64
MAX_DOUBLINGS = 60
FIT_TOL = 1e-6


# ---------------------------------------------------------------------------
# projection plan


@dataclass(frozen=True)
class ProjectionPlan:
    """A direction u plus the sorted projections c_i = u.x_{perm[i]}.

    ``delta`` is the sentinel gap: the construction behaves as if two extra
    virtual points sat at c_1 - delta and c_N + delta.
    """

    u: np.ndarray
    perm: np.ndarray
    c: np.ndarray
    delta: float

    @property
    def n(self) -> int:
        return len(self.c)

    def with_sentinels(self) -> np.ndarray:
        return np.concatenate([[self.c[0] - self.delta], self.c, [self.c[-1] + self.delta]])


def project_and_sort(X, seed, *, mu_gap: float = MU_GAP,
                     max_resamples: int = MAX_RESAMPLES, u=None) -> ProjectionPlan:
    """Find a Gaussian direction separating all inputs, sort along it.

    Resamples until the sorted projections are strictly increasing with
    relative gaps of at least ``mu_gap``.  Passing ``u`` skips the sampling
    and fails immediately if that direction does not separate the points.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot project an empty dataset")
    dup = _find_duplicate_rows(X)
    if dup is not None:
        raise ValueError(f"duplicate input rows {dup[0]} and {dup[1]}")
    rng = np.random.default_rng(seed)
    attempts = 1 if u is not None else max_resamples
    for _ in range(attempts):
        direction = np.asarray(u, dtype=float) if u is not None else rng.standard_normal(X.shape[1])
        c_raw = X @ direction
        order = np.argsort(c_raw, kind="stable")
        c = c_raw[order]
        span = c[-1] - c[0] if n > 1 else 0.0
        if n == 1 or (span > 0 and np.diff(c).min() >= mu_gap * span):
            delta = max(1.0, 1e-3 * span)
            return ProjectionPlan(direction, order, c, delta)
    raise ProjectionError(
        f"no separating projection after {attempts} draws; inputs are numerically coincident"
    )


def index_set(k: int, p: int, q: int) -> np.ndarray:
    """The p positions (1-based, in sorted order) handled by row k in [1, q].

    Position j comes from group j: (j-1)q + k for odd j, jq + 1 - k for even
    j, which makes the q sets partition [pq] and alternate through the groups.
    """
    if not 1 <= k <= q:
        raise ValueError(f"k={k} outside [1, {q}]")
    members = [(j - 1) * q + k if j % 2 == 1 else j * q + 1 - k for j in range(1, p + 1)]
    return np.array(members, dtype=int)


# ---------------------------------------------------------------------------
# layer 1: scale the projection so each node keeps exactly one group unclipped


def _layer1_scalars(c_ext: np.ndarray, p: int, q: int):
    """Per-node slope/bias on the projection value, plus condition margins.

    c_ext holds the sorted projections with sentinels at both ends
    (c_ext[i] = c_i for i in 1..N, c_ext[0] and c_ext[N+1] the sentinels).
    Node j maps the midpoints of the straddling gaps of its group to -+1, so
    its group lands strictly inside (-1, 1) and everything else clips; odd
    and even nodes run in opposite directions.
    """
    n = len(c_ext) - 2
    if p * q != n:
        raise ValueError(f"p*q = {p * q} != {n} points")
    scal = np.zeros(p)
    bias = np.zeros(p)
    for j in range(1, p + 1):
        lo = c_ext[(j - 1) * q] + c_ext[(j - 1) * q + 1]
        hi = c_ext[j * q] + c_ext[j * q + 1]
        sign = 1.0 if j % 2 == 1 else -1.0
        scal[j - 1] = sign * 4.0 / (hi - lo)
        bias[j - 1] = -sign * (hi + lo) / (hi - lo)
    z = np.outer(c_ext[1:-1], scal) + bias  # (n, p)
    margin = np.inf
    for j in range(1, p + 1):
        inside = slice((j - 1) * q, j * q)
        zin = z[inside, j - 1]
        before = z[: (j - 1) * q, j - 1]
        after = z[j * q :, j - 1]
        if j % 2 == 0:
            zin, before, after = -zin, -before, -after
        ok = (
            np.all(np.abs(zin) < 1.0)
            and np.all(np.diff(zin) > 0)
            and np.all(before < -1.0)
            and np.all(after > 1.0)
        )
        if not ok:
            raise ConstructionError(f"layer-1 interleaving conditions failed at node {j}")
        margin = min(
            margin,
            float((1.0 - np.abs(zin)).min()),
            float((-1.0 - before).min()) if before.size else np.inf,
            float((after - 1.0).min()) if after.size else np.inf,
        )
    return scal, bias, z, float(margin)


def layer1_params(plan: ProjectionPlan, p: int, q: int):
    """First-layer weights (p, d_x) and biases for an already-padded plan."""
    scal, bias, _, _ = _layer1_scalars(plan.with_sentinels(), p, q)
    return np.outer(scal, plan.u), bias


# ---------------------------------------------------------------------------
# layer 2: interpolate one point per group, clip the rest with fixed signs


def _expected_clip_signs(members0: np.ndarray, n: int, k: int) -> np.ndarray:
    """Saturation sign (+-1) demanded of z_k at every non-selected position.

    Positions between the j-th and (j+1)-th selected points clip to -1 when
    j is even and +1 when j is odd (for odd k; even k flips), which is what
    makes the row outputs sum to y + 1 across rows.
    """
    signs = np.zeros(n)
    bounds = np.concatenate([[-1], members0, [n]])
    for j in range(len(bounds) - 1):
        seg = slice(bounds[j] + 1, bounds[j + 1])
        s = 1.0 if j % 2 == 1 else -1.0
        signs[seg] = s if k % 2 == 1 else -s
    signs[members0] = 0.0
    return signs


def _saturated_rows(p: int):
    """Layer-1 output patterns of virtual points far below / above all data."""
    a_lo = np.array([-1.0 if j % 2 == 1 else 1.0 for j in range(1, p + 1)])
    return a_lo, -a_lo


def solve_layer2_row(k: int, layer1_outputs, targets, sign: int, *,
                     mu_clip: float = MU_CLIP, max_doublings: int = MAX_DOUBLINGS,
                     interp_tol: float = MU_INTERP, particular: str = "min_norm"):
    """Weights/bias of one second-layer node: exact values on its index set,
    clipped with the demanded signs everywhere else (including far outside
    the data range).

    The solution is mu + alpha * nu with mu a particular interpolant, nu the
    one-dimensional null direction (first p entries one-signed), and alpha
    grown by doubling from ``sign`` until every off-set point clears the
    +-(1 + mu_clip) band.  ``particular`` picks mu: "min_norm" is the plain
    least-squares interpolant; "clip_aimed" also regresses the off-set points
    onto their saturation targets before being corrected back to exact
    interpolation, which keeps the final weights (and hence the parameter
    gradients at the minimum) orders of magnitude smaller.  Returns
    (w, b, alpha).
    """
    A = np.asarray(layer1_outputs, dtype=float)
    n, p = A.shape
    if n % p:
        raise ValueError("layer1_outputs row count must be a multiple of p")
    q = n // p
    members0 = index_set(k, p, q) - 1
    M = np.concatenate([A[members0], np.ones((p, 1))], axis=1)
    y_sel = np.asarray(targets, dtype=float)[members0]

    null = null_space(M)
    if null.shape[1] != 1:
        raise ConstructionError(
            f"row {k}: null space has dimension {null.shape[1]}, expected 1 "
            "(layer-1 interleaving must have failed)"
        )
    nu = null[:, 0]
    if np.all(nu[:p] > 0):
        pass
    elif np.all(nu[:p] < 0):
        nu = -nu
    else:
        raise ConstructionError(f"row {k}: null direction is not one-signed on the weights")

    off = np.setdiff1d(np.arange(n), members0)
    a_lo, a_hi = _saturated_rows(p)
    M_off = np.concatenate(
        [
            np.concatenate([A[off], np.ones((len(off), 1))], axis=1),
            np.array([np.append(a_lo, 1.0), np.append(a_hi, 1.0)]),
        ]
    )
    expected = _expected_clip_signs(members0, n, k)
    # far tails behave like the intervals before the first / after the last
    # selected point (for even p both clip to the same side)
    edge_lo = -1.0 if k % 2 == 1 else 1.0
    edge_hi = edge_lo * (-1.0 if p % 2 == 1 else 1.0)
    signs_off = np.concatenate([expected[off], [edge_lo, edge_hi]])

    if particular == "min_norm":
        mu_part = np.linalg.lstsq(M, y_sel, rcond=None)[0]
    elif particular == "clip_aimed":
        stacked = np.concatenate([M, M_off])
        rhs = np.concatenate([y_sel, signs_off * (1.0 + 2.0 * mu_clip)])
        w0 = np.linalg.lstsq(stacked, rhs, rcond=None)[0]
        mu_part = w0 + np.linalg.lstsq(M, y_sel - M @ w0, rcond=None)[0]
    else:
        raise ValueError(f"unknown particular-solution mode {particular!r}")

    alpha = float(sign)
    for _ in range(max_doublings + 1):
        w = mu_part + alpha * nu
        z_off = M_off @ w
        if np.all(signs_off * z_off >= 1.0 + mu_clip):
            break
        alpha *= 2.0
    else:
        raise ConstructionError(f"row {k}: clipping scale exceeded 2^{max_doublings}")

    # large alpha amplifies the null-direction roundoff; refine in extended
    # precision so the stored weights interpolate down to the float64 floor
    M_l = M.astype(np.longdouble)
    y_l = y_sel.astype(np.longdouble)
    w_l = w.astype(np.longdouble)
    for _ in range(3):
        resid = y_l - M_l @ w_l
        if np.abs(resid).max() < 1e-13:
            break
        w_l = w_l + np.linalg.lstsq(M, np.asarray(resid, dtype=float), rcond=None)[0]
    w = np.asarray(w_l, dtype=float)
    err = float(np.abs(M_l @ w.astype(np.longdouble) - y_l).max())
    if err > _interp_floor(w, interp_tol):
        raise ConstructionError(f"row {k}: interpolation residual {err:.2e} > {interp_tol:g}")
    return w[:p], float(w[p]), alpha


def _interp_floor(w, interp_tol: float) -> float:
    # rounding the solution to 64-bit floats perturbs each z by up to
    # eps * sum|w_j a_j|; when clipping forces very large weights no float64
    # vector can interpolate below that, so the check allows for it
    return max(interp_tol, 4.0 * np.finfo(float).eps * float(np.abs(w).sum()))


# ---------------------------------------------------------------------------
# grouped-row engine shared by the 3-layer, 4-layer and deep builders


@dataclass(frozen=True)
class GroupedRowsFit:
    """Hard-tanh two-layer core fitted to sorted 1-D projections.

    ``w1_scal``/``b1`` act on the scalar projection; ``W2``/``b2`` are
    (n_groups, q, p)/(n_groups, q): one bank of q rows per target coordinate,
    all sharing the first layer.  Summing a bank's outputs gives target + 1
    on the data and 0 far outside the projection range.
    """

    w1_scal: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    alphas: np.ndarray
    p: int
    q: int
    diagnostics: dict


def fit_grouped_rows(c_core, targets, p: int, q: int, delta: float, *,
                     mu_clip: float = MU_CLIP, particular: str = "min_norm") -> GroupedRowsFit:
    """Fit every target coordinate over strictly increasing projections.

    c_core has p*q entries (real points plus fillers), targets is (p*q, G).
    """
    c_core = np.asarray(c_core, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = len(c_core)
    n_groups = targets.shape[1]
    if targets.shape[0] != n or p * q != n:
        raise ValueError("c_core, targets and p*q disagree")
    if p % 2 or q % 2:
        raise ValueError("the alternating construction needs even p and q")
    c_ext = np.concatenate([[c_core[0] - delta], c_core, [c_core[-1] + delta]])
    scal, b1, z1, layer1_margin = _layer1_scalars(c_ext, p, q)
    a1 = hard_tanh(z1)

    W2 = np.zeros((n_groups, q, p))
    b2 = np.zeros((n_groups, q))
    alphas = np.zeros((n_groups, q))
    for g in range(n_groups):
        for k in range(1, q + 1):
            w, b, alpha = solve_layer2_row(
                k, a1, targets[:, g], sign=1 if k % 2 == 1 else -1, mu_clip=mu_clip,
                particular=particular,
            )
            W2[g, k - 1] = w
            b2[g, k - 1] = b
            alphas[g, k - 1] = alpha

    # verification: exact interpolation, signed clipping, and the sum identity
    # (interpolation and sums are checked in extended precision: the weights
    # are large and a float64 dot product would only show its own roundoff)
    a1_l = a1.astype(np.longdouble)
    clip_margin = np.inf
    clip_margin_max = 0.0
    interp_err = 0.0
    sum_err = 0.0
    for g in range(n_groups):
        z2 = np.asarray(a1_l @ W2[g].astype(np.longdouble).T + b2[g], dtype=np.longdouble)
        a2 = np.clip(z2, -1.0, 1.0)
        for k in range(1, q + 1):
            members0 = index_set(k, p, q) - 1
            interp_err = max(interp_err, float(np.abs(z2[members0, k - 1] - targets[members0, g]).max()))
            expected = _expected_clip_signs(members0, n, k)
            off = expected != 0
            if off.any():
                margins = np.asarray(expected[off] * z2[off, k - 1], dtype=float) - 1.0
                if margins.min() <= 0:
                    raise ConstructionError(f"row {k}: clipping sign pattern violated")
                clip_margin = min(clip_margin, float(margins.min()))
                clip_margin_max = max(clip_margin_max, float(margins.max()))
        sum_err = max(sum_err, float(np.abs(a2.sum(axis=1) - (targets[:, g] + 1.0)).max()))
    weight_floor = max(
        _interp_floor(np.concatenate([W2[g, kk], [b2[g, kk]]]), MU_INTERP)
        for g in range(n_groups)
        for kk in range(q)
    )
    if interp_err > weight_floor:
        raise ConstructionError(f"interpolation residual {interp_err:.2e}")
    if sum_err > weight_floor:
        raise ConstructionError(f"row-sum identity off by {sum_err:.2e}")

    diagnostics = {
        "layer1_margin": layer1_margin,
        "clip_margin_min": float(clip_margin),
        "clip_margin_max": float(clip_margin_max),
        "alpha_abs_max": float(np.abs(alphas).max()),
        "interp_err_max": float(interp_err),
        "sum_identity_err_max": float(sum_err),
    }
    return GroupedRowsFit(scal, b1, W2, b2, alphas, p, q, diagnostics)


def extend_with_fillers(c_sub, n_fill: int, left_bound=None, right_bound=None,
                        base_delta=None):
    """Append synthetic projections beyond the last point; pick the sentinel gap.

    Fillers and the sentinel clearance stay strictly inside
    (left_bound, right_bound) so neighbouring data (when this range is one
    block of a deeper construction) remains fully clipped.
    Returns (extended projections, delta).
    """
    c_sub = np.asarray(c_sub, dtype=float)
    span = c_sub[-1] - c_sub[0] if len(c_sub) > 1 else 0.0
    delta0 = base_delta if base_delta is not None else max(1.0, 1e-3 * span)
    left_gap = np.inf if left_bound is None else c_sub[0] - left_bound
    right_gap = np.inf if right_bound is None else right_bound - c_sub[-1]
    if left_gap <= 0 or right_gap <= 0:
        raise ValueError("bounds must lie strictly outside the projection range")
    room = min(delta0, right_gap / 2.0)
    if n_fill > 0:
        fillers = c_sub[-1] + room * np.arange(1, n_fill + 1) / (n_fill + 1)
        c_out = np.concatenate([c_sub, fillers])
    else:
        c_out = c_sub
    delta = min(delta0, left_gap, right_gap / 2.0)
    return c_out, float(delta)


# ---------------------------------------------------------------------------
# capacity arithmetic


def _div(activation: Activation) -> int:
    return 2 if activation.kind == HARD_TANH else 4


def check_capacity(kind: str, widths, activation: Activation, d_y: int, n: int,
                   blocks=None) -> bool:
    """Arithmetic sufficiency condition of the matching construction.

    Kinds: ``3layer`` (widths d1, d2), ``4layer_classifier`` (d1, d2, d3),
    ``deep`` / ``deep_classifier`` (all hidden widths plus the block start
    indices).  Hard-tanh uses floor divisors 2, ReLU-like 4 (one hard-tanh
    node costs two ReLU-like nodes).
    """
    if activation.kind not in (HARD_TANH, RELU_LIKE):
        raise ValueError(f"no capacity rule for activation {activation.kind!r}")
    widths = tuple(int(w) for w in widths)
    if any(w <= 0 for w in widths):
        raise ValueError("widths must be positive")
    d = _div(activation)
    if kind == "3layer":
        if len(widths) != 2:
            raise ValueError("3layer takes widths (d1, d2)")
        d1, d2 = widths
        return 4 * (d1 // d) * (d2 // (d * d_y)) >= n
    if kind == "4layer_classifier":
        if len(widths) != 3:
            raise ValueError("4layer_classifier takes widths (d1, d2, d3)")
        d1, d2, d3 = widths
        return 4 * (d1 // d) * (d2 // d) >= n and d3 >= d * d_y
    if kind == "deep":
        return _check_deep(widths, blocks, d, d_y, n)
    if kind == "deep_classifier":
        return _check_deep_classifier(widths, blocks, d, d_y, n)
    raise ValueError(f"unsupported architecture kind {kind!r}")


def _block_reserve(j: int, m: int, d_y: int) -> int:
    """Nodes a block must leave free for the input/output carry chains."""
    return d_y * (1 if j > 1 else 0) + (1 if j < m else 0)


def _check_deep(widths, blocks, d, d_y, n) -> bool:
    L = len(widths) + 1
    blocks = tuple(int(b) for b in blocks or ())
    m = len(blocks)
    if m == 0 or any(blocks[i] + 1 >= blocks[i + 1] for i in range(m - 1)):
        return False
    if blocks[-1] > L - 2 or blocks[0] < 1:
        return False
    total = 0
    for j, l in enumerate(blocks, start=1):
        r = _block_reserve(j, m, d_y)
        if widths[l - 1] <= r or widths[l] <= r:
            continue
        total += 4 * ((widths[l - 1] - r) // d) * ((widths[l] - r) // (d * d_y))
    if total < n:
        return False
    for j in range(m - 1):
        for k in range(blocks[j] + 2, blocks[j + 1]):
            if widths[k - 1] < d_y + 1:
                return False
    for k in range(blocks[-1] + 2, L):
        if widths[k - 1] < d_y:
            return False
    return True


def _check_deep_classifier(widths, blocks, d, d_y, n) -> bool:
    # classification variant: the last index hosts the gate layer, the ones
    # before it fit a scalar class code, so the per-block reserve drops to
    # one carry node each way
    L = len(widths) + 1
    blocks = tuple(int(b) for b in blocks or ())
    m = len(blocks)
    if m < 2 or any(blocks[i] + 1 >= blocks[i + 1] for i in range(m - 1)):
        return False
    if blocks[-1] > L - 1 or blocks[0] < 1:
        return False
    total = 0
    for j, l in enumerate(blocks[:-1], start=1):
        r = (1 if j > 1 else 0) + (1 if j < m - 1 else 0)
        if widths[l - 1] <= r or widths[l] <= r:
            continue
        total += 4 * ((widths[l - 1] - r) // d) * ((widths[l] - r) // d)
    if total < n:
        return False
    if widths[blocks[-1] - 1] < d * d_y:
        return False
    for j in range(m - 2):
        for k in range(blocks[j] + 2, blocks[j + 1]):
            if widths[k - 1] < 2:
                return False
    for k in range(blocks[-1] + 1, L):
        if widths[k - 1] < d_y:
            return False
    return True


def shrink_group_shape(d1_cap: int, d2_cap: int, n: int):
    """Smallest even (p, q) with p <= d1_cap, q <= d2_cap and p*q >= n.

    Starts from the largest even widths and shrinks; keeps the filler count
    (p*q - n) small so padded projections stay well spaced.
    """
    p = 2 * (d1_cap // 2)
    q = 2 * (d2_cap // 2)
    if p < 2 or q < 2 or p * q < n:
        raise CapacityError(f"group shape {d1_cap}x{d2_cap} cannot hold {n} points")
    while p > 2 and (p - 2) * q >= n:
        p -= 2
    while q > 2 and p * (q - 2) >= n:
        q -= 2
    return p, q


# ---------------------------------------------------------------------------
# hard-tanh -> ReLU-like expansion and width padding


def expand_hard_tanh_to_relu_like(params: FnnParams, s_plus: float = 1.0,
                                  s_minus: float = 0.0) -> FnnParams:
    """Exact ReLU-like twin with every hidden layer doubled.

    Each hard-tanh node sigma_H(z) is rewritten as
    (sigma_R(z + 1) - sigma_R(z - 1) - s_plus - s_minus) / (s_plus - s_minus),
    so the new network computes the identical function everywhere.
    """
    if params.activation.kind != HARD_TANH:
        raise ValueError("expansion starts from a hard-tanh network")
    act = Activation(RELU_LIKE, s_plus, s_minus)
    den = s_plus - s_minus
    shift = (s_plus + s_minus) / den
    weights, biases = [], []
    expanded_prev = False
    L = params.n_layers
    for l in range(L):
        W, b = params.weights[l], params.biases[l]
        if expanded_prev:
            W_eff = np.zeros((W.shape[0], 2 * W.shape[1]))
            W_eff[:, 0::2] = W / den
            W_eff[:, 1::2] = -W / den
            b_eff = b - W.sum(axis=1) * shift
        else:
            W_eff, b_eff = W.copy(), b.copy()
        if l < L - 1:
            W_new = np.repeat(W_eff, 2, axis=0)
            b_new = np.repeat(b_eff, 2)
            b_new[0::2] += 1.0
            b_new[1::2] -= 1.0
            expanded_prev = True
        else:
            W_new, b_new = W_eff, b_eff
        weights.append(W_new)
        biases.append(b_new)
    return FnnParams(tuple(weights), tuple(biases), act)


_SAFE_BIAS = {HARD_TANH: 0.0, RELU_LIKE: -1.0, "gate": 0.5}


def pad_hidden_widths(params: FnnParams, hidden_dims) -> FnnParams:
    """Grow hidden layers to the requested widths with inert nodes.

    Padding nodes get zero weights in and out and a bias that keeps their
    pre-activation away from every breakpoint.
    """
    hidden_dims = tuple(int(d) for d in hidden_dims)
    dims = params.dims
    if len(hidden_dims) != params.n_layers - 1:
        raise ValueError("one target width per hidden layer")
    if any(t < d for t, d in zip(hidden_dims, dims[1:-1])):
        raise ValueError("cannot shrink a layer")
    safe = _SAFE_BIAS[params.activation.kind]
    weights = [w.copy() for w in params.weights]
    biases = [b.copy() for b in params.biases]
    for l, target in enumerate(hidden_dims):
        extra = target - weights[l].shape[0]
        if extra == 0:
            continue
        weights[l] = np.vstack([weights[l], np.zeros((extra, weights[l].shape[1]))])
        biases[l] = np.concatenate([biases[l], np.full(extra, safe)])
        weights[l + 1] = np.hstack([weights[l + 1], np.zeros((weights[l + 1].shape[0], extra))])
    return FnnParams(tuple(weights), tuple(biases), params.activation)


# ---------------------------------------------------------------------------
# public builders


def _verify_fit(params: FnnParams, X, target_matrix, tol: float = FIT_TOL) -> float:
    out = fnn_forward_batch(params, X)
    err = float(np.abs(out - target_matrix).max()) if len(X) else 0.0
    if err > tol:
        raise ConstructionError(f"fit verification failed: max error {err:.3e} > {tol:g}")
    return err


def _assemble_3layer_hard_tanh(dataset: Dataset, p: int, q: int, seed, *, mu_clip,
                               u=None, particular="min_norm", delta=None):
    """Exact-width hard-tanh memorizer; returns (params, report)."""
    plan = project_and_sort(dataset.X, subseed(seed, "projection"), u=u)
    targets = dataset.one_hot()[plan.perm]
    n_fill = p * q - dataset.n
    c_core, delta = extend_with_fillers(plan.c, n_fill, base_delta=delta)
    targets_ext = np.vstack([targets, np.zeros((n_fill, dataset.d_y))])
    fit = fit_grouped_rows(c_core, targets_ext, p, q, delta, mu_clip=mu_clip,
                           particular=particular)

    d_y = dataset.d_y
    W1 = np.outer(fit.w1_scal, plan.u)
    b1 = fit.b1
    W2 = fit.W2.reshape(d_y * q, p)
    b2 = fit.b2.reshape(d_y * q)
    W3 = np.zeros((d_y, d_y * q))
    for g in range(d_y):
        W3[g, g * q : (g + 1) * q] = 1.0
    b3 = -np.ones(d_y)
    params = FnnParams((W1, W2, W3), (b1, b2, b3), Activation(HARD_TANH))
    report = {
        "theorem": "thm1",
        "p": p,
        "q_per_group": q,
        "n_fillers": n_fill,
        "delta": delta,
        "alpha": fit.alphas.tolist(),
        **fit.diagnostics,
    }
    return params, report


def construct_3layer(dataset: Dataset, d1: int, d2: int, activation: Activation,
                     seed, *, mu_clip: float = MU_CLIP, u=None,
                     particular: str = "min_norm", delta: float | None = None):
    """3-layer network memorizing a regression dataset exactly.

    Hard-tanh needs 4*floor(d1/2)*floor(d2/(2 d_y)) >= N; ReLU-like twice the
    width.  ``u`` optionally pins the projection direction instead of drawing
    it from the seed.  Returns (params, report); raises CapacityError /
    ConstructionError.
    """
    if dataset.task != REGRESSION:
        dataset = Dataset(dataset.X, dataset.one_hot(), REGRESSION, dataset.d_y)
    if dataset.n == 0:
        raise ValueError("nothing to memorize")
    if not check_capacity("3layer", (d1, d2), activation, dataset.d_y, dataset.n):
        raise CapacityError(f"widths ({d1}, {d2}) cannot hold {dataset.n} points")
    d = _div(activation)
    p, q = shrink_group_shape(d1 // (d // 2), (d2 // (d // 2)) // dataset.d_y, dataset.n)
    core, report = _assemble_3layer_hard_tanh(dataset, p, q, seed, mu_clip=mu_clip, u=u,
                                              particular=particular, delta=delta)
    if activation.kind == RELU_LIKE:
        core = expand_hard_tanh_to_relu_like(core, activation.s_plus, activation.s_minus)
        report["expanded_to_relu_like"] = True
    params = pad_hidden_widths(core, (d1, d2))
    report["capacity_check"] = True
    report["fit_error_max"] = _verify_fit(params, dataset.X, dataset.y)
    return params, report


def class_codes(d_y: int) -> np.ndarray:
    """Distinct scalar codes for the classes, equispaced inside (-1, 1)."""
    return -1.0 + 2.0 * np.arange(1, d_y + 1) / (d_y + 1)


def gate_sharpness(d_y: int) -> float:
    # steep enough that every other class code lands in the gate's dead zone
    return 4.0 * (d_y + 1)


def construct_4layer_classifier(dataset: Dataset, d1: int, d2: int, d3: int,
                                activation: Activation, seed, *,
                                mu_clip: float = MU_CLIP):
    """4-layer network producing exact one-hot outputs for every data point.

    Classes are encoded as distinct scalars rho_j, the first two hidden
    layers memorize the scalar code, and layer 3 holds one gate per class
    (two hard-tanh nodes each) that fires only on its own code.
    """
    if dataset.task != CLASSIFICATION:
        raise ValueError("classifier construction needs a classification dataset")
    if dataset.n == 0:
        raise ValueError("nothing to memorize")
    if not check_capacity("4layer_classifier", (d1, d2, d3), activation, dataset.d_y, dataset.n):
        raise CapacityError(f"widths ({d1}, {d2}, {d3}) violate the classifier bound")
    d_y = dataset.d_y
    half = _div(activation) // 2  # 1 for hard-tanh, 2 for relu-like
    rho = class_codes(d_y)
    beta = gate_sharpness(d_y)

    plan = project_and_sort(dataset.X, subseed(seed, "projection"))
    scalar_targets = rho[dataset.y][plan.perm][:, None]
    p, q = shrink_group_shape(d1 // half, d2 // half, dataset.n)
    n_fill = p * q - dataset.n
    c_core, delta = extend_with_fillers(plan.c, n_fill)
    targets_ext = np.vstack([scalar_targets, np.zeros((n_fill, 1))])
    fit = fit_grouped_rows(c_core, targets_ext, p, q, delta, mu_clip=mu_clip)

    W1 = np.outer(fit.w1_scal, plan.u)
    b1 = fit.b1
    W2 = fit.W2[0]
    b2 = fit.b2[0]
    # gates read s = sum of the q row outputs (= rho_class + 1 on the data)
    W3 = np.zeros((2 * d_y, q))
    b3 = np.zeros(2 * d_y)
    for j in range(d_y):
        W3[2 * j, :] = 2.0 * beta
        b3[2 * j] = 1.0 - 2.0 * beta * (rho[j] + 1.0)
        W3[2 * j + 1, :] = -2.0 * beta
        b3[2 * j + 1] = 1.0 + 2.0 * beta * (rho[j] + 1.0)
    W4 = np.zeros((d_y, 2 * d_y))
    for j in range(d_y):
        W4[j, 2 * j] = 0.5
        W4[j, 2 * j + 1] = 0.5
    b4 = np.zeros(d_y)
    core = FnnParams((W1, W2, W3, W4), (b1, b2, b3, b4), Activation(HARD_TANH))
    if activation.kind == RELU_LIKE:
        core = expand_hard_tanh_to_relu_like(core, activation.s_plus, activation.s_minus)
    params = pad_hidden_widths(core, (d1, d2, d3))
    report = {
        "theorem": "prop2",
        "p": p,
        "q": q,
        "n_fillers": n_fill,
        "class_codes": rho.tolist(),
        "gate_sharpness": beta,
        "alpha": fit.alphas.tolist(),
        **fit.diagnostics,
        "capacity_check": True,
        "expanded_to_relu_like": activation.kind == RELU_LIKE,
    }
    report["fit_error_max"] = _verify_fit(params, dataset.X, dataset.one_hot())
    return params, report
