import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from cubic_momentum.dataio import (
    Dataset,
    LibSVMParseError,
    load_libsvm,
    parse_libsvm,
    serialize_libsvm,
    subsample,
    synth_logistic,
)


def test_parse_single_row():
    ds = parse_libsvm(b"+1 1:2.0 3:-1.5\n")
    assert (ds.n, ds.d) == (1, 3)
    assert ds.row(0) == {0: 2.0, 2: -1.5}
    assert ds.labels.tolist() == [1.0]


def test_parse_empty_feature_row():
    ds = parse_libsvm("-1\n")
    assert (ds.n, ds.d) == (1, 1)
    assert ds.row(0) == {}
    assert ds.labels.tolist() == [-1.0]
    np.testing.assert_array_equal(ds.dense, [[0.0]])


def test_parse_malformed_value_reports_position():
    with pytest.raises(LibSVMParseError) as info:
        parse_libsvm(b"1 3:abc\n")
    err = info.value
    assert err.line == 1
    assert err.token == "3:abc"
    assert err.column == 3


@pytest.mark.parametrize(
    "text, reason",
    [
        ("abc 1:1\n", "non-numeric label"),
        ("1 x:1\n", "non-integer index"),
        ("1 0:1\n", "index must be positive"),
        ("1 2:1 2:3\n", "strictly increasing"),
        ("1 3:1 2:3\n", "strictly increasing"),
        ("1 3\n", "malformed"),
        ("1 :4\n", "malformed"),
        ("1 1:inf\n", "non-finite"),
    ],
)
def test_parse_errors(text, reason):
    with pytest.raises(LibSVMParseError, match=reason):
        parse_libsvm(text)


def test_error_line_numbers_count_comments_and_blanks():
    text = "# header\n\n+1 1:1\n-1 2:x\n"
    with pytest.raises(LibSVMParseError) as info:
        parse_libsvm(text)
    assert info.value.line == 4


def test_label_normalization_and_comments():
    ds = parse_libsvm("0 1:1 # zero label\n2 2:1\n-3 1:1\r\n+1 1:5")
    assert ds.labels.tolist() == [-1.0, 1.0, -1.0, 1.0]
    assert ds.n == 4


def test_dimension_override():
    ds = parse_libsvm("1 2:1\n", d=10)
    assert ds.d == 10
    assert parse_libsvm("1 12:1\n", d=10).d == 12


def test_no_rows_is_an_error():
    with pytest.raises(ValueError):
        parse_libsvm("# nothing\n\n")


def test_load_from_file(tmp_path):
    path = tmp_path / "tiny.svm"
    path.write_bytes(b"+1 1:0.5\n-1 2:0.25\n")
    ds = load_libsvm(path)
    assert ds.n == 2 and ds.d == 2


rows = st.lists(
    st.tuples(
        st.sampled_from([-1, 1]),
        st.dictionaries(
            st.integers(1, 40),
            st.floats(allow_nan=False, allow_infinity=False, width=64),
            max_size=6,
        ),
    ),
    min_size=1,
    max_size=8,
)


def _render(data):
    lines = []
    for label, feats in data:
        parts = [str(label)] + [f"{k}:{v!r}" for k, v in sorted(feats.items())]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


@settings(max_examples=200, deadline=None)
@given(rows)
def test_round_trip(data):
    ds = parse_libsvm(_render(data))
    again = parse_libsvm(serialize_libsvm(ds), d=ds.d)
    assert again.same_as(ds)
    assert np.all(ds.features.indices < ds.d)


def test_dataset_invariants():
    X = sp.csr_matrix(np.ones((2, 2)))
    with pytest.raises(ValueError):
        Dataset(X, np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        Dataset(X, np.array([1.0]))


def test_synth_deterministic():
    a = synth_logistic(4, 2, 7, 0.0)
    b = synth_logistic(4, 2, 7, 0.0)
    assert a.same_as(b)
    np.testing.assert_array_equal(a.w_star, b.w_star)


def test_synth_noiseless_labels_separable():
    ds = synth_logistic(500, 10, 3, 0.0)
    margins = ds.labels * (ds.dense @ ds.w_star)
    assert np.all(margins >= 0)
    np.testing.assert_array_equal(ds.labels, np.where(ds.dense @ ds.w_star >= 0, 1.0, -1.0))


def test_synth_flip_fraction():
    ds = synth_logistic(2000, 20, 1, 0.1)
    clean = np.where(ds.dense @ ds.w_star >= 0, 1.0, -1.0)
    frac = float(np.mean(clean != ds.labels))
    assert 0.06 <= frac <= 0.14


@pytest.mark.parametrize("kw", [dict(n=0, d=1), dict(n=1, d=0), dict(n=2, d=2, noise=0.5)])
def test_synth_preconditions(kw):
    kw.setdefault("noise", 0.0)
    with pytest.raises(ValueError):
        synth_logistic(seed=0, **kw)


def test_subsample_full_is_same_multiset():
    ds = synth_logistic(30, 4, 0, 0.1)
    sub = subsample(ds, ds.n, 5)
    key = lambda d: sorted(map(tuple, np.column_stack([d.labels, d.dense]).tolist()))
    assert key(sub) == key(ds)
    assert sub.d == ds.d


def test_subsample_single_row_and_determinism():
    ds = synth_logistic(30, 4, 0, 0.1)
    one = subsample(ds, 1, 3)
    rows = [r.tolist() for r in ds.dense]
    assert one.dense[0].tolist() in rows
    assert subsample(ds, 10, 9).same_as(subsample(ds, 10, 9))


def test_subsample_bounds():
    ds = synth_logistic(5, 2, 0)
    with pytest.raises(ValueError):
        subsample(ds, 6, 0)
    with pytest.raises(ValueError):
        subsample(ds, 0, 0)
