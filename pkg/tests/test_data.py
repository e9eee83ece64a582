import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permweight.data import (
    Dataset,
    EstimandRequest,
    Normalization,
    ParseError,
    Schema,
    SchemaError,
    SizeError,
    TreatmentKind,
    ValidationError,
    WeightSet,
    effective_sample_size,
    hajek_normalize,
    load_dataset,
    read_weights,
    save_dataset,
    validate,
    write_header,
    write_weights,
)
from permweight.simulation import DgpKind, DgpSpec, draw_dgp

SCHEMA = Schema("a", ("x1",), "y")


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_binary_four_rows(tmp_path):
    p = _write(tmp_path, "a,y,x1\n0,1.5,0.2\n1,2.5,0.1\n1,0.5,-1\n0,3,2\n")
    ds = load_dataset(p, SCHEMA)
    assert (ds.n, ds.d, ds.treatment_kind) == (4, 1, TreatmentKind.BINARY)
    np.testing.assert_array_equal(ds.outcome, [1.5, 2.5, 0.5, 3.0])


def test_load_infers_continuous(tmp_path):
    p = _write(tmp_path, "a,y,x1\n0.0,1,0\n0.5,1,1\n1.0,1,2\n0.3,1,3\n")
    assert load_dataset(p, SCHEMA).treatment_kind is TreatmentKind.CONTINUOUS


def test_treatment_kind_override(tmp_path):
    p = _write(tmp_path, "a,y,x1\n0,1,0\n1,1,1\n1,1,2\n0,1,3\n")
    ds = load_dataset(p, SCHEMA, treatment_kind="continuous")
    assert ds.treatment_kind is TreatmentKind.CONTINUOUS


def test_tab_delimited_and_comments(tmp_path):
    p = _write(tmp_path, "# produced elsewhere\na\ty\tx1\n0\t1\t0\n1\t2\t1\n")
    ds = load_dataset(p, SCHEMA)
    assert ds.n == 2


def test_na_cell_names_row(tmp_path):
    p = _write(tmp_path, "a,y,x1\n0,1,0\n1,1,NA\n1,1,2\n")
    with pytest.raises(ParseError) as err:
        load_dataset(p, SCHEMA)
    assert err.value.row == 1
    assert "row 1" in str(err.value)


def test_missing_column(tmp_path):
    p = _write(tmp_path, "a,y,z\n0,1,0\n1,1,1\n")
    with pytest.raises(SchemaError, match="x1"):
        load_dataset(p, SCHEMA)


def test_single_row_is_size_error(tmp_path):
    p = _write(tmp_path, "a,y,x1\n0,1,0\n")
    with pytest.raises(SizeError):
        load_dataset(p, SCHEMA)


def test_outcome_optional(tmp_path):
    p = _write(tmp_path, "a,x1\n0,0\n1,1\n")
    ds = load_dataset(p, Schema("a", ("x1",)))
    assert ds.outcome is None
    with pytest.raises(ValidationError):
        ds.require_outcome()


def test_validate_single_arm():
    ds = Dataset(np.ones(4), np.zeros((4, 1)), treatment_kind=TreatmentKind.BINARY)
    issues = validate(ds)
    assert any("single treatment arm" in i for i in issues)
    with pytest.raises(ValidationError):
        Dataset.create(np.ones(4), np.zeros((4, 1)))


def test_validate_nan_location():
    x = np.zeros((5, 2))
    x[3, 1] = np.nan
    issues = validate(Dataset(np.arange(5.0), x, treatment_kind=TreatmentKind.CONTINUOUS))
    assert any("(3, 1)" in i or "row 3" in i for i in issues)


def test_validate_accepts_continuous():
    ds = Dataset(np.linspace(0, 1, 5), np.ones((5, 1)), treatment_kind=TreatmentKind.CONTINUOUS)
    assert validate(ds) == []


def test_binary_kind_requires_binary_values():
    with pytest.raises(ValidationError):
        Dataset.create(np.array([0.0, 0.5, 1.0]), np.zeros((3, 1)), treatment_kind="binary")


def test_dataset_arrays_are_read_only():
    ds = Dataset.create(np.array([0.0, 1.0]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        ds.treatment[0] = 5.0


@pytest.mark.parametrize("kind", list(DgpKind))
@pytest.mark.parametrize("misspecified", [False, True])
def test_simulated_datasets_validate(kind, misspecified):
    ds, _ = draw_dgp(DgpSpec(kind, misspecified, 200, 3))
    assert validate(ds) == []


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(2, 30),
    d=st.integers(1, 4),
    seed=st.integers(0, 2**32 - 1),
    binary=st.booleans(),
)
def test_save_load_round_trip(tmp_path_factory, n, d, seed, binary):
    rng = np.random.default_rng(seed)
    a = np.r_[0.0, 1.0, rng.integers(0, 2, n - 2)] if binary else rng.normal(size=n) * 1e3
    ds = Dataset.create(a, rng.normal(size=(n, d)) * 10.0 ** rng.integers(-8, 8), rng.normal(size=n))
    path = tmp_path_factory.mktemp("rt") / "ds.csv"
    schema = save_dataset(ds, path)
    back = load_dataset(path, schema)
    np.testing.assert_allclose(back.covariates, ds.covariates, rtol=1e-12, atol=0)
    np.testing.assert_allclose(back.treatment, ds.treatment, rtol=1e-12, atol=0)
    np.testing.assert_allclose(back.outcome, ds.outcome, rtol=1e-12, atol=0)
    assert back.treatment_kind is ds.treatment_kind


def test_weightset_invariants():
    with pytest.raises(ValidationError):
        WeightSet(np.array([1.0, -0.1]))
    with pytest.raises(ValidationError):
        WeightSet(np.array([1.0, np.inf]))
    with pytest.raises(ValidationError):
        WeightSet(np.array([1.0, 2.0]), normalization=Normalization.HAJEK)
    ws = WeightSet(np.array([1.0, 3.0, 4.0])).hajek()
    assert ws.normalization is Normalization.HAJEK
    assert ws.weights.sum() == pytest.approx(3.0, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=50))
def test_hajek_sums_to_n(values):
    w = hajek_normalize(np.array(values))
    assert abs(w.sum() - len(values)) <= 1e-9 * len(values)


def test_hajek_rejects_zero_total():
    with pytest.raises(ValidationError):
        hajek_normalize(np.zeros(3))


def test_effective_sample_size():
    assert effective_sample_size(np.ones(10)) == pytest.approx(10.0)
    assert effective_sample_size(np.r_[1.0, np.zeros(9)]) == pytest.approx(1.0)


def test_weights_file_round_trip(tmp_path):
    ws = WeightSet(np.array([0.1, 2.0, 1 / 3]), 5, Normalization.NONE, 2, "pw-test")
    path = tmp_path / "w.csv"
    write_weights(ws, path, {"seed": 3})
    text = path.read_text()
    assert text.startswith("# seed: 3\n")
    assert "unit_index,weight" in text
    np.testing.assert_array_equal(read_weights(path), ws.weights)


def test_weight_report_fields():
    rep = WeightSet(np.ones(4), 7, Normalization.NONE, 1, "pw-x").report()
    assert rep["replicates"] == 7
    assert rep["method_tag"] == "pw-x"
    assert rep["clamp_count"] == 1
    assert rep["normalization"] == "none"


def test_write_header_json_values():
    buf = io.StringIO()
    write_header(buf, {"b": [1, 2], "a": "x"})
    assert buf.getvalue() == '# b: [1, 2]\n# a: "x"\n'


def test_estimand_request_grid():
    with pytest.raises(ValueError):
        EstimandRequest("dose-response")
    with pytest.raises(ValueError):
        EstimandRequest("dose-response", (1.0, 0.0))
    assert EstimandRequest("dose-response", (0.0, 1.0)).grid == (0.0, 1.0)
    with pytest.raises(ValueError):
        EstimandRequest("median")
