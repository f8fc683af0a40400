import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memcap.activations import Activation
from memcap.construct_fnn import construct_3layer
from memcap.networks import FnnParams
from memcap.pwl import (
    PiecewiseLinear1D,
    constant,
    dense_piece_count,
    from_affine,
    hard_dataset,
    line_forward,
    piece_bound,
    pwl_add,
    pwl_compose_activation,
    pwl_scale,
    refute_fit,
    required_pieces,
    restrict_to_line,
)

H = Activation("hard_tanh")
R = Activation("relu_like", 1.0, 0.0)
G = Activation("gate")

ABS = PiecewiseLinear1D(np.array([0.0]), np.array([-1.0, 1.0]), 0.0, 0.0)


def random_pwl(rng, max_pieces=6, scale=3.0):
    m = int(rng.integers(1, max_pieces + 1))
    bps = np.sort(rng.uniform(-scale, scale, m - 1))
    bps = np.unique(bps)
    slopes = rng.uniform(-scale, scale, len(bps) + 1)
    # enforce distinct adjacent slopes so the input is canonical
    for i in range(1, len(slopes)):
        while abs(slopes[i] - slopes[i - 1]) < 1e-6:
            slopes[i] += 0.37
    return PiecewiseLinear1D(bps, slopes, 0.0, float(rng.uniform(-1, 1)))


def pwl_sample_pieces(f, lo=-20.0, hi=20.0, n=20001, tol=1e-6):
    """Counting oracle on plain samples of a 1-D function object."""
    ts = np.linspace(lo, hi, n)
    slopes = np.diff(f(ts)) / (ts[1] - ts[0])
    jump = np.abs(np.diff(slopes)) > tol * max(1.0, np.abs(slopes).max())
    bounds = np.flatnonzero(jump)
    runs = np.diff(np.concatenate([[-1], bounds, [len(slopes) - 1]]))
    return int(np.count_nonzero(runs >= 2))


def test_eval_and_continuity():
    f = PiecewiseLinear1D(np.array([-1.0, 2.0]), np.array([0.0, 1.0, -2.0]), 0.0, 5.0)
    assert f(0.0) == 5.0
    assert f(-1.0) == pytest.approx(4.0)
    assert f(-3.0) == pytest.approx(4.0)
    assert f(2.0) == pytest.approx(7.0)
    assert f(3.0) == pytest.approx(5.0)
    ts = np.linspace(-5, 5, 1001)
    vals = f(ts)
    assert np.abs(np.diff(vals)).max() < 0.05  # continuous at the kinks


def test_add_sharing_breakpoint():
    s = pwl_add(ABS, ABS)
    assert s.n_pieces == 2
    assert s(2.0) == 4.0 and s(-1.5) == 3.0


def test_add_distinct_breakpoints():
    shifted = PiecewiseLinear1D(np.array([1.0]), np.array([-1.0, 1.0]), 1.0, 0.0)
    s = pwl_add(ABS, shifted)
    assert s.n_pieces == 3
    assert s(0.0) == pytest.approx(1.0)
    assert s(1.0) == pytest.approx(1.0)


def test_add_cancellation():
    s = pwl_add(ABS, pwl_scale(ABS, -1.0))
    assert s.n_pieces == 1
    assert s(3.3) == 0.0


def test_compose_affine_through_hard_tanh():
    c = pwl_compose_activation(H, from_affine(2.0, 0.0))
    assert c.n_pieces == 3
    assert c(0.2) == pytest.approx(0.4)
    assert c(5.0) == 1.0


def test_compose_relu_of_abs_minus_one():
    f = pwl_add(ABS, constant(-1.0))  # |t| - 1, 2 pieces
    c = pwl_compose_activation(R, f)
    assert c.n_pieces <= R.n_pieces * f.n_pieces
    assert c.n_pieces == pwl_sample_pieces(c)
    for t, want in ((-3.0, 2.0), (-0.5, 0.0), (0.5, 0.0), (3.0, 2.0)):
        assert c(t) == pytest.approx(want)


def test_compose_constant():
    c = pwl_compose_activation(G, constant(0.5))
    assert c.n_pieces == 1
    assert c(123.0) == pytest.approx(0.5)


@given(st.integers(0, 10_000))
@settings(max_examples=120, deadline=None)
def test_add_piece_bound_property(seed):
    rng = np.random.default_rng(seed)
    f, g = random_pwl(rng), random_pwl(rng)
    s = pwl_add(f, g)
    assert s.n_pieces <= f.n_pieces + g.n_pieces - 1
    ts = rng.uniform(-10, 10, 64)
    np.testing.assert_allclose(s(ts), f(ts) + g(ts), atol=1e-9)


@given(st.integers(0, 10_000), st.sampled_from(["hard_tanh", "relu_like", "gate"]))
@settings(max_examples=120, deadline=None)
def test_compose_piece_bound_property(seed, kind):
    act = Activation(kind) if kind != "relu_like" else Activation(kind, 1.0, 0.0)
    rng = np.random.default_rng(seed)
    f = random_pwl(rng)
    c = pwl_compose_activation(act, f)
    assert c.n_pieces <= act.n_pieces * f.n_pieces
    ts = rng.uniform(-15, 15, 64)
    from memcap.activations import act_eval

    np.testing.assert_allclose(c(ts), act_eval(act, f(ts)), atol=1e-9)


def test_piece_bound_values():
    assert piece_bound(2, 2, 4) == 5
    assert piece_bound(3, 2, 3, 3) == 22
    assert piece_bound(2, 3, 1) == 3
    with pytest.raises(ValueError):
        piece_bound(4, 2, 3, 3)
    with pytest.raises(ValueError):
        piece_bound(3, 2, 3)


def test_restriction_of_linear_network():
    net = FnnParams((np.array([[1.0, -2.0]]),), (np.array([0.3]),), H)
    f = restrict_to_line(net, np.array([1.0, 1.0]))
    assert f.n_pieces == 1
    assert f(2.0) == pytest.approx(-1.7)


def test_restriction_bounds_2layer():
    rng = np.random.default_rng(0)
    for _ in range(20):
        W1 = rng.standard_normal((4, 2))
        b1 = rng.standard_normal(4)
        W2 = rng.standard_normal((1, 4))
        b2 = rng.standard_normal(1)
        net = FnnParams((W1, W2), (b1, b2), R)
        f = restrict_to_line(net, rng.standard_normal(2))
        assert f.n_pieces <= piece_bound(2, 2, 4)


def test_restriction_bounds_3layer():
    rng = np.random.default_rng(1)
    for _ in range(20):
        dims = [2, 3, 3, 1]
        ws = tuple(rng.standard_normal((dims[i + 1], dims[i])) for i in range(3))
        bs = tuple(rng.standard_normal(dims[i + 1]) for i in range(3))
        net = FnnParams(ws, bs, R)
        f = restrict_to_line(net, rng.standard_normal(2))
        assert f.n_pieces <= piece_bound(3, 2, 3, 3) == 22


def test_restriction_exactness_random_probes():
    rng = np.random.default_rng(2)
    for kind in (R, H, G):
        dims = [3, 5, 4, 1]
        ws = tuple(rng.standard_normal((dims[i + 1], dims[i])) for i in range(3))
        bs = tuple(rng.standard_normal(dims[i + 1]) for i in range(3))
        net = FnnParams(ws, bs, kind)
        u = rng.standard_normal(3)
        f = restrict_to_line(net, u)
        ts = rng.uniform(-30, 30, 10_000)
        assert np.abs(f(ts) - line_forward(net, u, ts)).max() <= 1e-9


def test_dense_oracle_matches_exact():
    rng = np.random.default_rng(3)
    for _ in range(15):
        dims = [2, int(rng.integers(1, 6)), 1]
        ws = tuple(rng.standard_normal((dims[i + 1], dims[i])) for i in range(2))
        bs = tuple(rng.standard_normal(dims[i + 1]) for i in range(2))
        net = FnnParams(ws, bs, H)
        u = rng.standard_normal(2)
        f = restrict_to_line(net, u)
        bps = f.breakpoints
        lo, hi = (bps[0] - 1, bps[-1] + 1) if len(bps) else (-2.0, 2.0)
        assert dense_piece_count(net, u, lo, hi, n_grid=100_000, focus=bps) == f.n_pieces


def test_hard_dataset():
    ds = hard_dataset(3, np.array([1.0, 0.0]))
    np.testing.assert_array_equal(ds.X, [[1, 0], [2, 0], [3, 0]])
    np.testing.assert_array_equal(ds.y[:, 0], [-1, 1, -1])
    one = hard_dataset(1, np.array([2.0]))
    assert one.y[0, 0] == -1.0
    with pytest.raises(ValueError):
        hard_dataset(4, np.zeros(2))
    needed = required_pieces(np.arange(1, 9), hard_dataset(8, np.array([1.0])).y[:, 0])
    assert needed == 7


def test_refute_fit_impossible():
    rng = np.random.default_rng(5)
    net = FnnParams((rng.standard_normal((4, 2)), rng.standard_normal((1, 4))),
                    (rng.standard_normal(4), rng.standard_normal(1)), R)
    verdict = refute_fit(net, hard_dataset(8, np.array([1.0, 0.5])))
    assert verdict["verdict"] == "impossible"
    assert verdict["bound"] == 5
    assert verdict["required_pieces"] == 7
    assert verdict["piece_count"] <= 5
    # bound arithmetic mirrors the strict inequality (p-1)d1 + 2 < N
    assert (2 - 1) * 4 + 2 < 8


def test_refute_fit_undecided_small_n():
    rng = np.random.default_rng(5)
    net = FnnParams((rng.standard_normal((4, 2)), rng.standard_normal((1, 4))),
                    (rng.standard_normal(4), rng.standard_normal(1)), R)
    assert refute_fit(net, hard_dataset(3, np.array([1.0, 0.5])))["verdict"] == "undecided"
    assert refute_fit(net, hard_dataset(1, np.array([1.0, 0.5])))["verdict"] == "undecided"


def test_refute_fit_requires_collinear():
    rng = np.random.default_rng(6)
    net = FnnParams((rng.standard_normal((4, 2)), rng.standard_normal((1, 4))),
                    (rng.standard_normal(4), rng.standard_normal(1)), R)
    from memcap.data import Dataset

    ds = Dataset(rng.standard_normal((5, 2)), rng.uniform(-1, 1, (5, 1)), "regression", 1)
    with pytest.raises(ValueError):
        refute_fit(net, ds)


def test_tightness_construction_achieves_required_pieces():
    # a memorizer fitted to the alternating dataset realizes at least N - 1
    # pieces along the data line, so the lower and upper bounds meet
    u = np.array([1.0, -0.3])
    ds = hard_dataset(16, u)
    params, _ = construct_3layer(ds, 4, 4, H, seed=0)
    f = restrict_to_line(params, u)
    assert f.n_pieces >= 15
