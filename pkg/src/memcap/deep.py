"""Deep/narrow memorizers: blocks of two adjacent layers, each fitting a
contiguous slice of the projection-sorted data.

Every block is the two-layer core from :mod:`memcap.construct_fnn`, fitted to
(y - 1)/2 so its row sum (y + 1)/2 survives the saturating carry chain.  A
single reserved node per layer carries the scalar input projection forward to
later blocks, and d_y reserved nodes accumulate the block outputs; points
outside a block's projection range contribute exactly zero to its sum, so the
block contributions add up cleanly and the output layer just rescales.

ReLU-like networks double the fitting nodes of each block (two-for-one
expansion) but carry the corridor values with a single node by shifting them
into the positive linear region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import RELU_LIKE, Activation
from .construct_fnn import (
    FIT_TOL,
    MU_CLIP,
    _block_reserve,
    _div,
    _verify_fit,
    check_capacity,
    construct_3layer,
    extend_with_fillers,
    fit_grouped_rows,
    project_and_sort,
    shrink_group_shape,
)
from .data import REGRESSION, Dataset, subseed
from .errors import CapacityError
from .networks import FnnParams

CORRIDOR_SPAN = 0.9   # scalar carries live in [-span, span], clear of the kinks
RELU_SHIFT = 2.0      # relu corridors store v as s_plus * (v + RELU_SHIFT)


@dataclass(frozen=True)
class BlockLayout:
    """Hidden widths d_1..d_{L-1} plus the 1-based block start indices.

    Block j occupies layers (l_j, l_j + 1); blocks may not overlap or touch.
    ``subset_sizes`` optionally pins how many points each block fits
    (otherwise blocks are filled greedily up to capacity in sorted order).
    """

    widths: tuple
    blocks: tuple
    d_y: int = 1
    subset_sizes: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        L = self.n_layers
        if not self.blocks:
            raise ValueError("need at least one block")
        if any(w <= 0 for w in self.widths):
            raise ValueError("widths must be positive")
        if any(b + 1 >= b2 for b, b2 in zip(self.blocks, self.blocks[1:])):
            raise ValueError("blocks must be separated: l_j + 1 < l_{j+1}")
        if self.blocks[0] < 1 or self.blocks[-1] > L - 2:
            raise ValueError(f"block indices must lie in [1, {L - 2}]")
        if self.subset_sizes is not None:
            object.__setattr__(self, "subset_sizes", tuple(int(s) for s in self.subset_sizes))
            if len(self.subset_sizes) != len(self.blocks):
                raise ValueError("one subset size per block")

    @property
    def n_layers(self) -> int:
        return len(self.widths) + 1

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def reserve(self, j: int) -> int:
        """Carry nodes block j must leave free (1-based j)."""
        return _block_reserve(j, self.n_blocks, self.d_y)

    def block_capacity(self, j: int, activation: Activation) -> int:
        d = _div(activation)
        l = self.blocks[j - 1]
        r = self.reserve(j)
        w1, w2 = self.widths[l - 1] - r, self.widths[l] - r
        if w1 <= 0 or w2 <= 0:
            return 0
        return 4 * (w1 // d) * (w2 // (d * self.d_y))


def _subset_sizes(layout: BlockLayout, activation: Activation, n: int):
    if layout.subset_sizes is not None:
        sizes = list(layout.subset_sizes)
        if sum(sizes) != n:
            raise ValueError(f"subset sizes sum to {sum(sizes)}, dataset has {n}")
        for j, s in enumerate(sizes, start=1):
            if s > layout.block_capacity(j, activation):
                raise CapacityError(f"block {j} holds at most "
                                    f"{layout.block_capacity(j, activation)} points, got {s}")
        return sizes
    sizes = []
    rem = n
    for j in range(1, layout.n_blocks + 1):
        take = min(layout.block_capacity(j, activation), rem)
        sizes.append(take)
        rem -= take
    if rem:
        raise CapacityError(f"{rem} points left over after filling every block")
    return sizes


def construct_deep(dataset: Dataset, layout: BlockLayout, activation: Activation,
                   seed, *, mu_clip: float = MU_CLIP):
    """Memorize a regression dataset with the given deep block layout.

    Returns (params, report).  A single block spanning layers 1-2 of a
    3-layer network is exactly the shallow construction and is delegated to
    it, parameters included.
    """
    if dataset.task != REGRESSION:
        dataset = Dataset(dataset.X, dataset.one_hot(), REGRESSION, dataset.d_y)
    if dataset.n == 0:
        raise ValueError("nothing to memorize")
    if layout.d_y != dataset.d_y:
        raise ValueError(f"layout is for d_y={layout.d_y}, dataset has d_y={dataset.d_y}")
    if not check_capacity("deep", layout.widths, activation, layout.d_y, dataset.n,
                          blocks=layout.blocks):
        raise CapacityError("layout violates the deep memorization bound")

    if layout.n_blocks == 1 and layout.n_layers == 3 and layout.blocks == (1,):
        params, report = construct_3layer(
            dataset, layout.widths[0], layout.widths[1], activation, seed, mu_clip=mu_clip
        )
        report = dict(report, theorem="prop3", degenerate_single_block=True)
        return params, report

    relu = activation.kind == RELU_LIKE
    if relu:
        den = activation.s_plus - activation.s_minus
        shift_hr = (activation.s_plus + activation.s_minus) / den
        s_plus = activation.s_plus
    half = 2 if relu else 1
    d_y = layout.d_y
    L = layout.n_layers
    l_first, l_last = layout.blocks[0], layout.blocks[-1]
    d = _div(activation)

    plan = project_and_sort(dataset.X, subseed(seed, "projection"))
    y_sorted = dataset.y[plan.perm]
    sizes = _subset_sizes(layout, activation, dataset.n)

    # scalar corridor value: projections mapped affinely into the safe span
    span = plan.c[-1] - plan.c[0]
    if span > 0:
        t_scale = 2.0 * CORRIDOR_SPAN / span
        t_offset = -t_scale * (plan.c[0] + plan.c[-1]) / 2.0
    else:
        t_scale, t_offset = 0.0, 0.0
    t_all = t_scale * plan.c + t_offset

    def has_circle(k: int) -> bool:
        return l_last >= 2 and 1 <= k <= l_last - 1

    def has_diamond(k: int) -> bool:
        return l_first + 2 <= k <= L - 1

    def circle_col(k: int) -> int:
        return 0

    def diamond_cols(k: int) -> np.ndarray:
        start = 1 if has_circle(k) else 0
        return np.arange(start, start + d_y)

    def block_row_start(k: int) -> int:
        return (1 if has_circle(k) else 0) + (d_y if has_diamond(k) else 0)

    # corridor codec: how a logical value v is stored in / read from a node
    write_shift = RELU_SHIFT if relu else 0.0

    def read_coeff(gamma: float):
        """(weight on the stored activation, bias contribution) for gamma * v."""
        if relu:
            return gamma / s_plus, -gamma * RELU_SHIFT
        return gamma, 0.0

    safe_bias = -1.0 if relu else 0.0
    weights = []
    biases = []
    dims = (dataset.d_x,) + layout.widths + (d_y,)
    for k in range(1, L + 1):
        weights.append(np.zeros((dims[k], dims[k - 1])))
        biases.append(np.full(dims[k], safe_bias if k < L else 0.0))

    # fit each block's slice in projection space
    block_fits = {}
    block_l1_cols = {}
    block_l2_rows = {}
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    report_blocks = []
    for j in range(1, layout.n_blocks + 1):
        n_j = sizes[j - 1]
        if n_j == 0:
            report_blocks.append({"block": j, "n_points": 0})
            continue
        l = layout.blocks[j - 1]
        r = layout.reserve(j)
        lo, hi = offsets[j - 1], offsets[j]
        reads_x = l == 1
        vals_all = plan.c if reads_x else t_all
        sub = vals_all[lo:hi]
        left = vals_all[lo - 1] if lo > 0 else None
        right = vals_all[hi] if hi < dataset.n else None
        p, q = shrink_group_shape((layout.widths[l - 1] - r) // half,
                                  ((layout.widths[l] - r) // half) // d_y, n_j)
        c_core, delta = extend_with_fillers(sub, p * q - n_j, left, right)
        targets = np.vstack([(y_sorted[lo:hi] - 1.0) / 2.0, np.zeros((p * q - n_j, d_y))])
        fit = fit_grouped_rows(c_core, targets, p, q, delta, mu_clip=mu_clip)
        block_fits[j] = fit
        report_blocks.append({
            "block": j, "layers": [l, l + 1], "n_points": n_j, "p": p, "q_per_group": q,
            "n_fillers": p * q - n_j, **fit.diagnostics,
        })

        # wire block layer 1 (rows read x through u, or the circle carry)
        W1, b1 = weights[l - 1], biases[l - 1]
        base = block_row_start(l)
        cols = np.arange(base, base + half * p)
        block_l1_cols[j] = cols
        for i in range(p):
            if reads_x:
                w_in = fit.w1_scal[i] * plan.u
                bias0 = fit.b1[i]
            else:
                # the block was fitted in corridor coordinates, so its rows
                # read the carried value t directly
                coeff, extra = read_coeff(fit.w1_scal[i])
                w_in = np.zeros(dims[l - 1])
                w_in[circle_col(l - 1)] = coeff
                bias0 = fit.b1[i] + extra
            if relu:
                W1[base + 2 * i] = w_in
                W1[base + 2 * i + 1] = w_in
                b1[base + 2 * i] = bias0 + 1.0
                b1[base + 2 * i + 1] = bias0 - 1.0
            else:
                W1[base + i] = w_in
                b1[base + i] = bias0

        # wire block layer 2 (one bank of q rows per output coordinate)
        W2, b2 = weights[l], biases[l]
        base2 = block_row_start(l + 1)
        rows = np.zeros((d_y, q), dtype=int)
        for g in range(d_y):
            for kk in range(q):
                hw = fit.W2[g, kk]
                hb = fit.b2[g, kk]
                row_log = base2 + half * (g * q + kk)
                if relu:
                    w_row = np.zeros(dims[l])
                    w_row[cols[0::2]] = hw / den
                    w_row[cols[1::2]] = -hw / den
                    bias_eff = hb - hw.sum() * shift_hr
                    W2[row_log] = w_row
                    W2[row_log + 1] = w_row
                    b2[row_log] = bias_eff + 1.0
                    b2[row_log + 1] = bias_eff - 1.0
                else:
                    W2[row_log, cols] = hw
                    b2[row_log] = hb
                rows[g, kk] = row_log
        block_l2_rows[j] = rows

    def add_block_sum(W_row, bias_holder, bias_idx, j, g, gamma):
        """Add gamma * (sum of block j's bank g) into a row being built."""
        rows = block_l2_rows[j][g]
        if relu:
            W_row[rows] += gamma / den
            W_row[rows + 1] += -gamma / den
            bias_holder[bias_idx] += -gamma * len(rows) * shift_hr
        else:
            W_row[rows] += gamma

    block_after = {layout.blocks[j - 1] + 2: j for j in range(1, layout.n_blocks + 1)
                   if j in block_fits}

    # carry chains
    for k in range(1, L):
        W, b = weights[k - 1], biases[k - 1]
        if has_circle(k):
            row = circle_col(k)
            if k == 1:
                W[row] = t_scale * plan.u
                b[row] = t_offset + write_shift
            else:
                coeff, extra = read_coeff(1.0)
                W[row, circle_col(k - 1)] = coeff
                b[row] = extra + write_shift
        if has_diamond(k):
            dcols = diamond_cols(k)
            for g in range(d_y):
                row = dcols[g]
                b[row] = write_shift
                if has_diamond(k - 1):
                    coeff, extra = read_coeff(1.0)
                    W[row, diamond_cols(k - 1)[g]] = coeff
                    b[row] += extra
                if k in block_after:
                    add_block_sum(W[row], b, row, block_after[k], g, 1.0)

    # output layer: rescale the accumulated (y + 1) / 2 back to y
    W_out, b_out = weights[L - 1], biases[L - 1]
    for g in range(d_y):
        b_out[g] = -1.0
        if has_diamond(L - 1):
            coeff, extra = read_coeff(2.0)
            W_out[g, diamond_cols(L - 1)[g]] = coeff
            b_out[g] += extra
        if l_last + 1 == L - 1 and layout.n_blocks in block_fits:
            add_block_sum(W_out[g], b_out, g, layout.n_blocks, g, 2.0)

    params = FnnParams(tuple(weights), tuple(biases), activation)
    report = {
        "theorem": "prop3",
        "subset_sizes": sizes,
        "blocks": report_blocks,
        "capacity_check": True,
    }
    report["fit_error_max"] = _verify_fit(params, dataset.X, dataset.y, FIT_TOL)
    return params, report
