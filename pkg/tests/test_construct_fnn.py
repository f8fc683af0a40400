import numpy as np
import pytest
from scipy.linalg import null_space

from memcap.activations import Activation, act_eval, hard_tanh
from memcap.construct_fnn import (
    _expected_clip_signs,
    check_capacity,
    construct_3layer,
    construct_4layer_classifier,
    expand_hard_tanh_to_relu_like,
    extend_with_fillers,
    fit_grouped_rows,
    index_set,
    layer1_params,
    pad_hidden_widths,
    project_and_sort,
    shrink_group_shape,
    solve_layer2_row,
)
from memcap.data import Dataset, gen_dataset
from memcap.errors import CapacityError, ProjectionError
from memcap.networks import fnn_forward_batch

H = Activation("hard_tanh")
R = Activation("relu_like", 1.0, 0.0)


# ---------------------------------------------------------------------------
# capacity arithmetic


def test_capacity_3layer():
    assert check_capacity("3layer", (4, 4), H, 1, 16)
    assert not check_capacity("3layer", (4, 4), R, 1, 16)  # 4*1*1 < 16
    assert check_capacity("3layer", (8, 8), R, 1, 16)
    assert not check_capacity("3layer", (4, 4), H, 1, 17)


def test_capacity_4layer_classifier():
    # a million points in a thousand classes with widths 2k-2k-4k
    assert check_capacity("4layer_classifier", (2000, 2000, 4000), R, 1000, 10**6)
    assert not check_capacity("4layer_classifier", (2000, 2000, 3999), R, 1000, 10**6)
    assert check_capacity("4layer_classifier", (20, 20, 20), H, 10, 400)


def test_capacity_deep():
    assert check_capacity("deep", (17, 17, 17, 17), H, 1, 512, blocks=(1, 3))
    assert not check_capacity("deep", (17, 17, 17, 17), H, 1, 2000, blocks=(1, 3))
    # touching blocks are rejected
    assert not check_capacity("deep", (17, 17, 17), H, 1, 100, blocks=(1, 2))
    # corridor too narrow for d_y + 1
    assert not check_capacity("deep", (10, 10, 1, 10, 10), H, 2, 8, blocks=(1, 4))


def test_capacity_deep_classifier():
    # L=4, m=2 (blocks at 1 and 3) matches the 4-layer classifier rule
    for n in (100, 400):
        assert check_capacity("deep_classifier", (20, 20, 20), H, 10, n, blocks=(1, 3)) == \
            check_capacity("4layer_classifier", (20, 20, 20), H, 10, n)


def test_capacity_unsupported():
    with pytest.raises(ValueError):
        check_capacity("5layer", (4, 4), H, 1, 4)
    with pytest.raises(ValueError):
        check_capacity("3layer", (0, 4), H, 1, 4)


def test_shrink_group_shape():
    p, q = shrink_group_shape(32, 32, 64)
    assert p * q >= 64 and p % 2 == 0 and q % 2 == 0
    assert shrink_group_shape(4, 4, 16) == (4, 4)
    with pytest.raises(CapacityError):
        shrink_group_shape(2, 2, 5)


# ---------------------------------------------------------------------------
# projection plans


def test_project_and_sort_explicit_direction():
    X = np.array([[0.0, 0.0], [1.0, 0.0]])
    plan = project_and_sort(X, 0, u=np.array([1.0, 0.0]))
    np.testing.assert_array_equal(plan.c, [0.0, 1.0])
    np.testing.assert_array_equal(plan.perm, [0, 1])
    ext = plan.with_sentinels()
    assert ext[0] == -plan.delta and ext[-1] == 1.0 + plan.delta


def test_project_and_sort_duplicate_rows_rejected():
    X = np.array([[1.0, 2.0], [1.0, 2.0]])
    with pytest.raises(ValueError, match="duplicate"):
        project_and_sort(X, 0)


def test_project_and_sort_random():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((100, 5))
    plan = project_and_sort(X, 42)
    assert len(plan.c) == 100
    assert np.all(np.diff(plan.c) > 0)
    span = plan.c[-1] - plan.c[0]
    assert np.diff(plan.c).min() >= 1e-12 * span


def test_project_and_sort_coincident_projections_fail():
    # two inputs are so close that every projection gap is far below the
    # relative floor; resampling cannot help
    X = np.array([[0.0], [1e-300], [1.0]])
    with pytest.raises(ProjectionError):
        project_and_sort(X, 0, max_resamples=4)


# ---------------------------------------------------------------------------
# index sets


def test_index_set_examples():
    assert list(index_set(1, 4, 4)) == [1, 8, 9, 16]
    assert list(index_set(2, 4, 4)) == [2, 7, 10, 15]
    for k in (1, 2, 3):
        assert list(index_set(k, 1, 4)) == [k]


def test_index_set_partitions():
    for p in range(2, 17, 2):
        for q in range(2, 17, 2):
            seen = np.concatenate([index_set(k, p, q) for k in range(1, q + 1)])
            assert sorted(seen) == list(range(1, p * q + 1))
            for k in range(1, q + 1):
                members = index_set(k, p, q)
                assert np.all(np.diff(members) > 0)
                for j, m in enumerate(members, start=1):
                    assert j * q - q + 1 <= m <= j * q


# ---------------------------------------------------------------------------
# layer 1


def test_layer1_single_group():
    X = np.linspace(0, 1, 6)[:, None]
    plan = project_and_sort(X, 0, u=np.array([1.0]))
    W1, b1 = layer1_params(plan, 1, 6)
    z = X @ W1.T + b1
    assert np.all(np.abs(z) < 1) and np.all(np.diff(z[:, 0]) > 0)


def test_layer1_figure_layout():
    X = np.arange(16, dtype=float)[:, None]
    plan = project_and_sort(X, 0, u=np.array([1.0]))
    W1, b1 = layer1_params(plan, 4, 4)
    z = X @ W1.T + b1
    a = hard_tanh(z)
    for j in range(1, 5):
        inside = slice(4 * (j - 1), 4 * j)
        assert np.all(np.abs(z[inside, j - 1]) < 1)
        outside = np.abs(a[:, j - 1]) == 1.0
        expected = np.ones(16, dtype=bool)
        expected[inside] = False
        np.testing.assert_array_equal(outside, expected)


def test_layer1_conditions_random():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((64, 3))
    plan = project_and_sort(X, 5)
    W1, b1 = layer1_params(plan, 8, 8)
    z = np.sort(plan.c) [:, None] * (W1 @ plan.u / (plan.u @ plan.u))  # placeholder sanity
    z = X[plan.perm] @ W1.T + b1
    for j in range(1, 9):
        inside = z[8 * (j - 1) : 8 * j, j - 1]
        before = z[: 8 * (j - 1), j - 1]
        after = z[8 * j :, j - 1]
        if j % 2 == 0:
            inside, before, after = -inside, -before, -after
        assert np.all(np.abs(inside) < 1)
        assert np.all(np.diff(inside) > 0)
        assert np.all(before < -1) and np.all(after > 1)


# ---------------------------------------------------------------------------
# layer-2 rows and the null-space lemma


def _layer1_outputs(n, p, q, rng):
    X = np.sort(rng.standard_normal(n))[:, None]
    plan = project_and_sort(X, 0, u=np.array([1.0]))
    W1, b1 = layer1_params(plan, p, q)
    return hard_tanh(X[plan.perm] @ W1.T + b1), plan


def test_solve_layer2_row_scalar_case():
    # p=1: one equation, two unknowns; any target is hit exactly
    rng = np.random.default_rng(3)
    A, _ = _layer1_outputs(4, 1, 4, rng)
    targets = np.array([0.3, -0.5, 0.9, 0.0])
    for k in (1, 2):
        w, b, alpha = solve_layer2_row(k, A, targets, sign=1 if k % 2 else -1)
        z = A @ w + b
        assert z[k - 1] == pytest.approx(targets[k - 1], abs=1e-9)


def test_solve_layer2_row_figure_instance():
    rng = np.random.default_rng(4)
    A, plan = _layer1_outputs(16, 4, 4, rng)
    targets = rng.uniform(-1, 1, 16)
    w, b, alpha = solve_layer2_row(1, A, targets, sign=1)
    z = A @ w + b
    members = index_set(1, 4, 4) - 1
    np.testing.assert_allclose(z[members], targets[members], atol=1e-9)
    others = np.setdiff1d(np.arange(16), members)
    assert np.all(np.abs(z[others]) >= 1.0 + 1e-3)
    assert alpha > 0
    # expected sign pattern from the interleaving
    signs = _expected_clip_signs(members, 16, 1)
    assert np.all(np.sign(z[others]) == signs[others])


def test_null_space_lemma_random_instances():
    # the per-row system matrix: +-1 pattern off the diagonal, interior values
    # on it, ones in the last column; rank p with a one-signed null direction
    rng = np.random.default_rng(123)
    for _ in range(200):
        p = int(rng.integers(1, 9))
        M = np.ones((p, p + 1))
        for j in range(p):
            for l in range(p):
                if l < j:
                    M[j, l] = 1.0 if (l + 1) % 2 == 1 else -1.0
                elif l > j:
                    M[j, l] = -1.0 if (l + 1) % 2 == 1 else 1.0
                else:
                    M[j, j] = rng.uniform(-0.999, 0.999)
        assert np.linalg.matrix_rank(M) == p
        null = null_space(M)
        assert null.shape[1] == 1
        lead = null[:p, 0]
        assert np.all(lead > 0) or np.all(lead < 0)


def test_fit_grouped_rows_identities():
    rng = np.random.default_rng(7)
    n, p, q = 64, 8, 8
    c = np.sort(rng.standard_normal(n) * 3)
    targets = rng.uniform(-1, 1, (n, 1))
    c_ext, delta = extend_with_fillers(c, 0)
    fit = fit_grouped_rows(c_ext, targets, p, q, delta)
    z1 = np.outer(c, fit.w1_scal) + fit.b1
    a1 = hard_tanh(z1)
    z2 = a1 @ fit.W2[0].T + fit.b2[0]
    a2 = hard_tanh(z2)
    # summation identity: row outputs add to target + 1
    np.testing.assert_allclose(a2.sum(axis=1), targets[:, 0] + 1.0, atol=1e-9)
    # clipping ledger: off-set points sit strictly beyond +-1 with the
    # alternating sign pattern
    for k in range(1, q + 1):
        members = index_set(k, p, q) - 1
        signs = _expected_clip_signs(members, n, k)
        off = signs != 0
        assert np.all(signs[off] * z2[off, k - 1] >= 1.0 + 1e-3)
    assert fit.diagnostics["clip_margin_min"] >= 1e-3


def test_extend_with_fillers_bounds():
    c = np.array([0.0, 1.0, 2.0])
    out, delta = extend_with_fillers(c, 2, left_bound=-0.5, right_bound=2.4)
    assert len(out) == 5
    assert np.all(np.diff(out) > 0)
    assert out[-1] + delta / 2 < 2.4
    assert c[0] - delta / 2 > -0.5


# ---------------------------------------------------------------------------
# full constructions


def test_construct_3layer_figure_configuration():
    ds = gen_dataset("regression_uniform", 16, 3, 1, seed=7)
    params, report = construct_3layer(ds, 4, 4, H, seed=7)
    assert params.dims == (3, 4, 4, 1)
    err = np.abs(fnn_forward_batch(params, ds.X) - ds.y).max()
    assert err <= 1e-6
    assert report["theorem"] == "thm1"
    assert report["fit_error_max"] <= 1e-6


def test_construct_3layer_single_point():
    ds = Dataset(np.array([[0.3, -0.2]]), np.array([[0.5]]), "regression", 1)
    params, _ = construct_3layer(ds, 2, 2, H, seed=0)
    assert fnn_forward_batch(params, ds.X)[0, 0] == pytest.approx(0.5, abs=1e-9)


def test_construct_3layer_capacity_failure():
    ds = gen_dataset("regression_uniform", 17, 2, 1, seed=0)
    with pytest.raises(CapacityError):
        construct_3layer(ds, 4, 4, H, seed=0)


def test_construct_3layer_multi_output():
    ds = gen_dataset("regression_uniform", 24, 4, 3, seed=9)
    # need 4*(d1/2)*(d2/(2*3)) >= 24 -> d1=4, d2=12: 4*2*2=16 < 24; d1=6: 4*3*2=24
    params, _ = construct_3layer(ds, 6, 12, H, seed=9)
    assert np.abs(fnn_forward_batch(params, ds.X) - ds.y).max() <= 1e-6


def test_construct_3layer_relu_doubled_widths():
    ds = gen_dataset("regression_uniform", 64, 5, 1, seed=3)
    params_h, _ = construct_3layer(ds, 16, 16, H, seed=3)
    params_r, _ = construct_3layer(ds, 32, 32, R, seed=3)
    assert params_r.activation.kind == "relu_like"
    assert params_r.dims == (5, 32, 32, 1)
    for p in (params_h, params_r):
        assert np.abs(fnn_forward_batch(p, ds.X) - ds.y).max() <= 1e-6


def test_expansion_computes_identical_function():
    ds = gen_dataset("regression_uniform", 16, 2, 1, seed=5)
    params, _ = construct_3layer(ds, 4, 4, H, seed=5)
    for s_plus, s_minus in ((1.0, 0.0), (1.7, 0.3)):
        twin = expand_hard_tanh_to_relu_like(params, s_plus, s_minus)
        assert twin.dims == (2, 8, 8, 1)
        rng = np.random.default_rng(0)
        probes = rng.uniform(-10, 10, size=(10_000, 2))
        np.testing.assert_allclose(
            fnn_forward_batch(twin, probes), fnn_forward_batch(params, probes), atol=1e-9
        )


def test_pad_hidden_widths_inert():
    ds = gen_dataset("regression_uniform", 8, 2, 1, seed=1)
    params, _ = construct_3layer(ds, 4, 4, H, seed=1)
    padded = pad_hidden_widths(params, (9, 7))
    assert padded.dims == (2, 9, 7, 1)
    rng = np.random.default_rng(2)
    probes = rng.standard_normal((500, 2))
    np.testing.assert_allclose(fnn_forward_batch(padded, probes),
                               fnn_forward_batch(params, probes))


def test_construct_4layer_classifier_exact_one_hot():
    ds = gen_dataset("classification_gaussian", 400, 6, 10, seed=5)
    params, report = construct_4layer_classifier(ds, 20, 20, 20, H, seed=5)
    out = fnn_forward_batch(params, ds.X)
    assert np.abs(out - ds.one_hot()).max() <= 1e-6
    assert (out.argmax(axis=1) == ds.y).mean() == 1.0
    assert report["theorem"] == "prop2"
    # layer-3 gates: the gate for class j passes only its own class code
    rho = np.array(report["class_codes"])
    beta = report["gate_sharpness"]
    for j in range(10):
        for jp in range(10):
            t = beta * (rho[jp] - rho[j])
            val = act_eval(Activation("gate"), t)
            assert val == pytest.approx(1.0 if j == jp else 0.0, abs=1e-12)


def test_construct_4layer_classifier_relu_variant():
    ds = gen_dataset("classification_gaussian", 96, 4, 3, seed=8)
    params, _ = construct_4layer_classifier(ds, 40, 40, 12, R, seed=8)
    out = fnn_forward_batch(params, ds.X)
    assert np.abs(out - ds.one_hot()).max() <= 1e-6
    assert params.dims == (4, 40, 40, 12, 3)


def test_construct_4layer_single_class():
    ds = Dataset(np.array([[0.0], [1.0], [2.0]]), np.zeros(3, dtype=int), "classification", 1)
    params, _ = construct_4layer_classifier(ds, 4, 4, 2, H, seed=0)
    out = fnn_forward_batch(params, ds.X)
    np.testing.assert_allclose(out, np.ones((3, 1)), atol=1e-9)


def test_construct_is_deterministic():
    ds = gen_dataset("regression_uniform", 32, 3, 1, seed=2)
    p1, _ = construct_3layer(ds, 8, 8, H, seed=99)
    p2, _ = construct_3layer(ds, 8, 8, H, seed=99)
    for a, b in zip(p1.weights, p2.weights):
        np.testing.assert_array_equal(a, b)


def test_clip_aimed_particular_solution():
    # the alternative particular solution trades null-direction scale for a
    # regression onto the clip targets; the fit contract is unchanged
    ds = gen_dataset("regression_uniform", 64, 4, 1, seed=17)
    default, rep_a = construct_3layer(ds, 16, 16, H, seed=17)
    aimed, rep_b = construct_3layer(ds, 16, 16, H, seed=17, particular="clip_aimed")
    for params in (default, aimed):
        assert np.abs(fnn_forward_batch(params, ds.X) - ds.y).max() <= 1e-6
    with pytest.raises(ValueError):
        construct_3layer(ds, 16, 16, H, seed=17, particular="nonsense")


def test_custom_delta_and_direction():
    ds = gen_dataset("regression_uniform", 32, 3, 1, seed=19)
    u = np.array([1.0, 0.0, 0.0])
    params, rep = construct_3layer(ds, 8, 8, H, seed=19, u=u, delta=0.05)
    assert np.abs(fnn_forward_batch(params, ds.X) - ds.y).max() <= 1e-6
    assert rep["delta"] <= 0.05
