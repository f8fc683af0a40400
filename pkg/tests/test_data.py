import numpy as np
import pytest

from memcap.data import (
    CLASSIFICATION,
    Dataset,
    DuplicateInputsError,
    gen_dataset,
    load_csv,
    rng_for,
    save_csv,
    subseed,
)
from memcap.genpos import is_general_position


def test_dataset_validation():
    with pytest.raises(DuplicateInputsError) as err:
        Dataset(np.array([[1.0, 2.0], [0.0, 0.0], [1.0, 2.0]]),
                np.zeros((3, 1)), "regression", 1)
    assert err.value.rows == (0, 2)
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0]]), np.array([[1.5]]), "regression", 1)
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0]]), np.array([3]), "classification", 2)


def test_one_hot_expansion():
    ds = Dataset(np.arange(3.0)[:, None], np.array([2, 0, 1]), CLASSIFICATION, 3)
    manual = np.zeros((3, 3))
    manual[0, 2] = manual[1, 0] = manual[2, 1] = 1.0
    np.testing.assert_array_equal(ds.one_hot(), manual)
    np.testing.assert_array_equal(ds.class_counts(), [1, 1, 1])


def test_gen_kinds_and_determinism():
    a = gen_dataset("regression_uniform", 20, 3, 2, seed=5)
    b = gen_dataset("regression_uniform", 20, 3, 2, seed=5)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    assert np.abs(a.y).max() <= 0.9

    c = gen_dataset("classification_gaussian", 30, 4, 3, seed=1)
    assert c.task == CLASSIFICATION and set(np.unique(c.y)) <= {0, 1, 2}

    g = gen_dataset("general_position", 25, 4, 2, seed=2)
    assert is_general_position(g.X, seed=2).ok

    h = gen_dataset("hard_line", 4, 3, 1, seed=3)
    assert list(h.y[:, 0]) == [-1.0, 1.0, -1.0, 1.0]

    empty = gen_dataset("regression_uniform", 0, 3, 1, seed=0)
    assert empty.n == 0


def test_subseed_stability():
    r1 = rng_for(7, "stage-a").standard_normal(4)
    r2 = rng_for(7, "stage-a").standard_normal(4)
    r3 = rng_for(7, "stage-b").standard_normal(4)
    np.testing.assert_array_equal(r1, r2)
    assert not np.array_equal(r1, r3)
    assert subseed(7, "x").entropy == 7


def test_csv_roundtrip_regression(tmp_path):
    ds = gen_dataset("regression_uniform", 13, 4, 2, seed=11)
    path = tmp_path / "r.csv"
    save_csv(ds, str(path))
    back = load_csv(str(path))
    np.testing.assert_array_equal(back.X, ds.X)  # bit-exact round trip
    np.testing.assert_array_equal(back.y, ds.y)
    assert back.task == ds.task and back.d_y == ds.d_y


def test_csv_roundtrip_classification(tmp_path):
    ds = gen_dataset("classification_gaussian", 17, 3, 4, seed=2)
    path = tmp_path / "c.csv"
    save_csv(ds, str(path))
    back = load_csv(str(path))
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_array_equal(back.one_hot(), ds.one_hot())


def test_csv_duplicate_rows_named(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("x1,x2,y1\n1.0,2.0,0.1\n3.0,4.0,0.2\n1.0,2.0,0.3\n")
    with pytest.raises(ValueError, match="rows 1 and 3"):
        load_csv(str(path))


def test_csv_malformed(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,x2,y1\n1.0,2.0\n")
    with pytest.raises(ValueError, match="row 2"):
        load_csv(str(path))
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        load_csv(str(path))
