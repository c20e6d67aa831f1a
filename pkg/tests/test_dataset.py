import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetero_mia.dataset import (
    Schema,
    TabularDataset,
    gen_synthetic,
    load_csv,
    load_schema,
    preprocess,
)
from hetero_mia.errors import DataError, SchemaError

from conftest import DATA, SCHEMAS, gaussian_spec

HAVE_STUDENTS = (DATA / "students.csv").exists()
HAVE_HEART = (DATA / "heart.csv").exists()


# --------------------------------------------------------------------------- load_csv


def test_missing_row_dropped_and_counted(tiny_csv, tiny_schema):
    raw = load_csv(tiny_csv, tiny_schema)
    assert raw.n == 2
    assert raw.dropped_rows == 1
    assert raw.labels.tolist() == [1, 1]
    assert raw.groups.tolist() == ["GP", "MS"]
    ds = preprocess(raw)
    assert ds.n == 2 and ds.dropped_rows == 1


def test_missing_column_named(tmp_path, tiny_schema):
    path = tmp_path / "bad.csv"
    path.write_text("sex,score,site\nF,12,GP\n")
    with pytest.raises(SchemaError, match="'age'"):
        load_csv(path, tiny_schema)


def test_unparseable_numeric_reports_row(tmp_path, tiny_schema):
    path = tmp_path / "bad.csv"
    path.write_text("sex,age,score,site\nF,17,12,GP\nM,seventeen,8,MS\n")
    with pytest.raises(DataError, match="row 1"):
        load_csv(path, tiny_schema)


def test_all_rows_missing_is_fatal(tmp_path, tiny_schema):
    path = tmp_path / "empty.csv"
    path.write_text("sex,age,score,site\nF,,12,GP\n")
    with pytest.raises(DataError, match="no complete rows"):
        load_csv(path, tiny_schema)


def test_unseen_category_rejected(tmp_path, tiny_schema):
    path = tmp_path / "x.csv"
    path.write_text("sex,age,score,site\nX,17,12,GP\n")
    with pytest.raises(DataError, match="not in vocabulary"):
        load_csv(path, tiny_schema)


def test_label_column_cannot_be_feature():
    with pytest.raises(SchemaError):
        Schema.from_dict(
            {"label": {"column": "a", "rule": {"op": ">", "value": 0}}, "columns": [{"name": "a", "kind": "numeric"}]}
        )


def test_dropped_columns_absent(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b,G1,y\n1,2,3,1\n4,5,6,0\n")
    schema = Schema.from_dict(
        {
            "label": {"column": "y", "rule": {"map": {0: 0, 1: 1}}},
            "columns": [{"name": "a"}, {"name": "b"}, {"name": "G1", "kind": "drop"}],
        }
    )
    ds = preprocess(load_csv(path, schema))
    assert ds.feature_names == ["a", "b"]
    assert ds.features.tolist() == [[1.0, 2.0], [4.0, 5.0]]


# --------------------------------------------------------------------------- preprocess


def test_one_hot_columns_sum_to_one(tiny_csv, tiny_schema):
    ds = preprocess(load_csv(tiny_csv, tiny_schema))
    assert ds.feature_names == ["sex=F", "sex=M", "age"]
    np.testing.assert_array_equal(ds.features[:, :2].sum(axis=1), 1.0)
    np.testing.assert_array_equal(ds.features[:, :2], [[1, 0], [0, 1]])


def test_standardize_population_scaling(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("v,y\n0,0\n2,1\n")
    schema = Schema.from_dict({"label": {"column": "y", "rule": {"map": {0: 0, 1: 1}}}, "columns": [{"name": "v"}]})
    raw = load_csv(path, schema)
    assert preprocess(raw, standardize=True).features[:, 0].tolist() == [-1.0, 1.0]
    assert preprocess(raw, standardize=False).features[:, 0].tolist() == [0.0, 2.0]


def test_standardize_leaves_one_hot_alone(tiny_csv, tiny_schema):
    ds = preprocess(load_csv(tiny_csv, tiny_schema), standardize=True)
    np.testing.assert_array_equal(ds.features[:, :2], [[1, 0], [0, 1]])
    assert ds.features[:, 2].tolist() == [-1.0, 1.0]


def test_preprocess_idempotent_without_standardize(tiny_csv, tiny_schema):
    once = preprocess(load_csv(tiny_csv, tiny_schema))
    twice = preprocess(once)
    np.testing.assert_array_equal(once.features, twice.features)
    assert once.feature_names == twice.feature_names


def test_dimension_independent_of_rows(tmp_path, tiny_schema):
    path = tmp_path / "one.csv"
    path.write_text("sex,age,score,site\nM,17,12,GP\n")
    one = preprocess(load_csv(path, tiny_schema))
    assert one.d == 3 and one.features[0, :2].tolist() == [0.0, 1.0]


def test_save_load_roundtrip(tmp_path, tiny_csv, tiny_schema):
    ds = preprocess(load_csv(tiny_csv, tiny_schema), standardize=True)
    sidecar = ds.save(tmp_path / "out.csv")
    assert sidecar.name == "out.meta.json"
    back = TabularDataset.load(tmp_path / "out.csv")
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.feature_names == ds.feature_names
    assert back.group_values() == ["GP", "MS"]
    assert back.onehot_blocks == ds.onehot_blocks


@given(st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=30), st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_one_hot_invariant_any_rows(tmp_path_factory, tokens, seed):
    path = tmp_path_factory.mktemp("oh") / "p.csv"
    rng = np.random.default_rng(seed)
    lines = ["c,v,y"] + [f"{t},{rng.normal():.6f},{int(rng.integers(2))}" for t in tokens]
    path.write_text("\n".join(lines) + "\n")
    schema = Schema.from_dict(
        {
            "label": {"column": "y", "rule": {"map": {0: 0, 1: 1}}},
            "columns": [{"name": "c", "kind": "categorical", "vocabulary": ["a", "b", "c"]}, {"name": "v"}],
        }
    )
    ds = preprocess(load_csv(path, schema), standardize=bool(seed % 2))
    assert ds.d == 4
    np.testing.assert_array_equal(ds.features[:, :3].sum(axis=1), 1.0)
    assert np.all(np.isfinite(ds.features))


# --------------------------------------------------------------------------- shipped schemas


def test_shipped_schemas_parse():
    students = load_schema(SCHEMAS / "students.yaml")
    heart = load_schema(SCHEMAS / "heart.yaml")
    assert students.group_column == "school" and heart.group_column == "hospital"
    assert {"G1", "G2"}.isdisjoint(c.name for c in students.feature_columns)
    assert students.label_rule.apply("10") == 1 and students.label_rule.apply("9") == 0
    assert heart.label_rule.apply("0") == 0 and heart.label_rule.apply("3") == 1


@pytest.mark.skipif(not HAVE_STUDENTS, reason="data/students.csv absent; run scripts/fetch_data.py")
def test_students_loads():
    ds = preprocess(load_csv(DATA / "students.csv", load_schema(SCHEMAS / "students.yaml")))
    assert ds.n_classes == 2
    assert 600 <= ds.n <= 700
    assert ds.group_values() == ["GP", "MS"]


@pytest.mark.skipif(not HAVE_HEART, reason="data/heart.csv absent; run scripts/fetch_data.py")
def test_heart_loads_raw_magnitudes():
    ds = preprocess(load_csv(DATA / "heart.csv", load_schema(SCHEMAS / "heart.yaml")))
    assert ds.n_classes == 2
    assert 850 <= ds.n <= 920
    assert ds.group_values() == ["CH", "CL", "HU", "VA"]
    chol = ds.features[:, ds.feature_names.index("chol")]
    assert 150 < np.median(chol[chol > 0]) < 400


# --------------------------------------------------------------------------- synthetic


def test_synthetic_means():
    ds = gen_synthetic(gaussian_spec([("g", 0, 0.0, 1.0, 5000), ("g", 1, 5.0, 1.0, 5000)]), 7)
    assert abs(ds.features[ds.labels == 0].mean()) < 0.05
    assert abs(ds.features[ds.labels == 1].mean() - 5.0) < 0.05


def test_synthetic_zero_variance():
    ds = gen_synthetic(gaussian_spec([("g", 0, 3.0, 0.0, 50), ("g", 1, 1.0, 1.0, 5)]), 1)
    assert np.all(ds.features[ds.labels == 0] == 3.0)


def test_synthetic_deterministic():
    spec = gaussian_spec([("g", 0, [0, 1], [[2, 0.5], [0.5, 1]], 100), ("h", 1, [1, 1], 1.0, 100)])
    a, b = gen_synthetic(spec, 42), gen_synthetic(spec, 42)
    assert a.features.tobytes() == b.features.tobytes()
    assert gen_synthetic(spec, 43).features.tobytes() != a.features.tobytes()


def test_synthetic_rejects_non_psd():
    spec = gaussian_spec([("g", 0, [0, 0], [[1, 2], [2, 1]], 10), ("g", 1, [0, 0], 1.0, 10)])
    with pytest.raises(DataError, match="positive semi-definite"):
        gen_synthetic(spec, 0)


def test_synthetic_moments_converge():
    cov = np.array([[2.0, 0.6, 0.0], [0.6, 1.0, -0.3], [0.0, -0.3, 0.5]])
    mean = np.array([1.0, -2.0, 0.5])
    ds = gen_synthetic(gaussian_spec([("g", 0, mean, cov, 5000), ("g", 1, -mean, cov, 5000)]), 3)
    for k, m in ((0, mean), (1, -mean)):
        x = ds.features[ds.labels == k]
        assert np.linalg.norm(x.mean(axis=0) - m) / np.linalg.norm(m) < 0.10
        assert np.linalg.norm(np.cov(x.T) - cov) / np.linalg.norm(cov) < 0.10
