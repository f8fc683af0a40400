import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memcap.activations import Activation, act_eval, act_slope, breakpoint_margin


def test_hard_tanh_cases():
    act = Activation("hard_tanh")
    assert act_eval(act, -2.0) == -1.0
    assert act_eval(act, 0.37) == 0.37
    assert act_eval(act, 1.0) == 1.0
    assert act_eval(act, 5.0) == 1.0


def test_relu_like_cases():
    act = Activation("relu_like", 1.0, 0.0)
    assert act_eval(act, -3.0) == 0.0
    assert act_eval(act, 2.0) == 2.0
    leaky = Activation("relu_like", 1.0, 0.1)
    assert act_eval(leaky, -2.0) == pytest.approx(-0.2)


def test_gate_cases():
    act = Activation("gate")
    assert act_eval(act, 0.0) == 1.0
    assert act_eval(act, -1.0) == 0.0
    assert act_eval(act, 2.0) == 0.0
    assert act_eval(act, -0.5) == 0.5
    assert act_eval(act, 0.5) == 0.5


def test_invalid_slopes_rejected():
    with pytest.raises(ValueError):
        Activation("relu_like", 0.5, 0.5)
    with pytest.raises(ValueError):
        Activation("relu_like", 1.0, -0.1)
    with pytest.raises(ValueError):
        Activation("sigmoid")


@given(st.floats(-50, 50), st.floats(0.1, 4.0), st.floats(0.0, 0.09))
@settings(max_examples=200, deadline=None)
def test_hard_tanh_is_relu_like_combination(t, s_plus, s_minus):
    # hard_tanh(t) == (relu(t+1) - relu(t-1) - s+ - s-) / (s+ - s-)
    r = Activation("relu_like", s_plus, s_minus)
    combo = (act_eval(r, t + 1.0) - act_eval(r, t - 1.0) - s_plus - s_minus) / (s_plus - s_minus)
    assert combo == pytest.approx(act_eval(Activation("hard_tanh"), t), abs=1e-9)


def test_representation_identity_on_grid():
    ts = np.linspace(-7, 7, 10_000)
    h = act_eval(Activation("hard_tanh"), ts)
    for s_plus, s_minus in ((1.0, 0.0), (2.0, 0.5)):
        r = Activation("relu_like", s_plus, s_minus)
        combo = (act_eval(r, ts + 1) - act_eval(r, ts - 1) - s_plus - s_minus) / (s_plus - s_minus)
        np.testing.assert_allclose(combo, h, atol=1e-12)


def test_gate_identity_on_grid():
    ts = np.linspace(-5, 5, 10_000)
    h = Activation("hard_tanh")
    combo = 0.5 * (act_eval(h, 2 * ts + 1) + act_eval(h, -2 * ts + 1))
    np.testing.assert_allclose(combo, act_eval(Activation("gate"), ts), atol=0)


def test_slopes_and_margins():
    g = Activation("gate")
    assert act_slope(g, -0.5) == 1.0
    assert act_slope(g, 0.5) == -1.0
    assert act_slope(g, 3.0) == 0.0
    assert breakpoint_margin(g, np.array([0.4, -0.2])) == pytest.approx(0.2)
    assert breakpoint_margin(g, np.array([])) == np.inf
    assert Activation("hard_tanh").n_pieces == 3
    assert Activation("relu_like").n_pieces == 2
    assert g.n_pieces == 4
