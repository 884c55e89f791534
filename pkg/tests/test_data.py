import numpy as np
import pytest

from detvi.data import (
    DataMatrix,
    FeatureMeta,
    ImportanceReport,
    TargetVector,
    clip_and_normalize,
    kfold,
    load_bundled,
    load_csv,
)
from detvi.errors import ConfigError, DataError, DegenerateImportanceError


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_csv_numeric(tmp_path):
    X, y = load_csv(write(tmp_path, "a,b,t\n1,2,0.5\n3,4,1.5\n5,6,2.5\n"), "t")
    assert X.n == 3 and X.p == 2
    assert X.names == ["a", "b"]
    assert y.task == "regression"
    assert y.values.tolist() == [0.5, 1.5, 2.5]


def test_load_csv_lexicographic_encoding(tmp_path):
    path = write(tmp_path, "c,t\nb,1\na,0\nb,1\n")
    X, y = load_csv(path, "t")
    assert X.values[:, 0].tolist() == [1.0, 0.0, 1.0]
    assert X.feature_meta[0].categories == ("a", "b")
    assert y.task == "classification"
    X2, _ = load_csv(path, "t", encode="appearance")
    assert X2.values[:, 0].tolist() == [0.0, 1.0, 0.0]


@pytest.mark.parametrize(
    "text, target, code",
    [
        ("a,t\n1,2\n", "zz", "missing-target"),
        ("a,t\n1,NA\n2,3\n", "t", "non-finite"),
        ("a,t\n1,inf\n2,3\n", "t", "non-finite"),
        ("a,t\n", "t", "empty"),
        ("", "t", "empty"),
    ],
)
def test_load_csv_error_codes(tmp_path, text, target, code):
    with pytest.raises(DataError) as info:
        load_csv(write(tmp_path, text), target)
    assert info.value.code == code


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DataError) as info:
        load_csv(tmp_path / "nope.csv", "t")
    assert info.value.code == "missing-file"


def test_bundled_hmda_shape():
    X, y = load_bundled("hmda")
    assert (X.n, X.p) == (2380, 12)
    assert "black" in X.names
    assert y.task == "regression"


def test_bundled_german_credit_shape():
    X, y = load_bundled("german_credit")
    assert (X.n, X.p) == (1000, 20)
    assert y.task == "classification"
    assert y.values.mean() == pytest.approx(0.3)


def test_data_matrix_is_read_only_copy():
    raw = np.ones((3, 2))
    X = DataMatrix(raw)
    raw[0, 0] = 5.0
    assert X.values[0, 0] == 1.0
    with pytest.raises(ValueError):
        X.values[0, 0] = 2.0


def test_data_matrix_validation():
    with pytest.raises(ConfigError):
        DataMatrix(np.array([[1.0, np.nan], [1.0, 2.0]]))
    with pytest.raises(ConfigError):
        DataMatrix(np.ones((2, 2)), ["a", "a"])
    with pytest.raises(ConfigError):
        DataMatrix(np.ones((2, 2)), [FeatureMeta("a"), FeatureMeta("b", "weird")])


def test_target_vector_validation():
    with pytest.raises(ConfigError):
        TargetVector(np.array([0.0, 2.0]), "classification", 2)


@pytest.mark.parametrize(
    "raw, expected",
    [([0.5, -0.2], [1.0, 0.0]), ([1, 1, 2], [0.25, 0.25, 0.5])],
)
def test_clip_and_normalize(raw, expected):
    assert clip_and_normalize(raw).tolist() == expected


def test_clip_and_normalize_degenerate():
    with pytest.raises(DegenerateImportanceError):
        clip_and_normalize([-1, -2])


def test_kfold():
    assert kfold(10, 5, 3).sizes == [2, 2, 2, 2, 2]
    a, b = kfold(10, 3, 9), kfold(10, 3, 9)
    assert np.array_equal(a.assignments, b.assignments)
    with pytest.raises(ConfigError):
        kfold(5, 6, 0)
    plan = kfold(23, 4, 1)
    rows = np.concatenate([plan.test_rows(f) for f in range(4)])
    assert sorted(rows.tolist()) == list(range(23))
    assert not set(plan.test_rows(0)) & set(plan.train_rows(0))


def make_report(**kw):
    base = dict(method="direct-opt", metric="MSE", features=["a", "b", "c"], raw=[2.0, 1.0, 1.0], normalized=[0.5, 0.25, 0.25])
    base.update(kw)
    return ImportanceReport(**base)


def test_report_invariants():
    rep = make_report()
    assert rep.top_k(2) == (0, 1)
    assert make_report(normalized=[0.25, 0.5, 0.25]).top_k(3) == (1, 0, 2)
    with pytest.raises(ConfigError):
        make_report(normalized=[0.5, 0.25, 0.2])
    with pytest.raises(ConfigError):
        make_report(method="shap")
    with pytest.raises(ConfigError):
        make_report(systemic=[0.5, 0.25, 0.25], direct=[0.5, 0.25, 0.25], indirect=[0.1, 0.0, -0.05])
    rep = make_report(systemic=[0.4, 0.3, 0.3], direct=[0.5, 0.25, 0.25], indirect=[-0.1, 0.05, 0.05])
    assert set(rep.as_dict()) >= {"systemic", "direct", "indirect", "runtime_ms"}
    assert "runtime_ms" not in rep.as_dict(timing=False)
