from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crows.design import (
    DataFormatError,
    Design,
    InvalidDesignError,
    build_state,
    design_to_csv,
    from_incidence,
    ones_minus_identity,
    parse_design_csv,
    pool_sheet,
    read_compound_map,
    row_slack,
    ue_s2,
    ue_s2_doubled,
    ue_s2_fraction,
    validate,
)


def pm1(rng, n, k, c=None):
    X = -np.ones((n, k), dtype=np.int64)
    for i in range(n):
        m = rng.integers(0, (c if c is not None else k) + 1)
        X[i, rng.choice(k, m, replace=False)] = 1
    return X


@st.composite
def designs(draw, max_n=12, max_k=12):
    n = draw(st.integers(1, max_n))
    k = draw(st.integers(1, max_k))
    bits = draw(st.lists(st.booleans(), min_size=n * k, max_size=n * k))
    return np.where(np.array(bits).reshape(n, k), 1, -1)


def q_by_pairs(X):
    # independent route: sum of squared inner products over all column pairs of [1, X]
    L = [[1] + [int(v) for v in row] for row in X]
    cols = list(zip(*L))
    return sum(sum(a * b for a, b in zip(u, v)) ** 2 for u in cols for v in cols)


def test_validate_reports_first_bad_entry():
    X = np.array([[1, -1], [0, 2]])
    v = validate(X)
    assert len(v) == 1 and v[0].kind == "entry" and (v[0].row, v[0].col) == (1, 0)


def test_validate_row_violations():
    X = np.array([[1, 1, -1], [1, -1, -1], [1, 1, 1]])
    v = validate(X, c=1)
    assert [x.row for x in v] == [0, 2] and all(x.kind == "row" for x in v)


def test_validate_shape():
    assert validate(np.ones(3))[0].kind == "shape"
    assert validate(np.ones((0, 3)))[0].kind == "shape"


def test_design_rejects_bad_input():
    with pytest.raises(InvalidDesignError):
        Design(np.array([[1, 1], [1, 1]]), c=1)
    with pytest.raises(InvalidDesignError):
        Design(np.array([[1, 0]]))


def test_design_defaults_c_to_k():
    assert Design(np.ones((2, 3), dtype=int)).c == 3


def test_small_example_values():
    # all wells empty: every column equals -1
    st0 = build_state(Design(-np.ones((4, 4), dtype=int), 1))
    assert st0.Q == 16 * 25
    assert ue_s2(st0) == 8.0
    st2 = build_state(Design(np.array([[1, -1], [-1, -1]]), 1))
    assert ue_s2_fraction(st2) == Fraction(2, 3)
    st1 = build_state(Design(2 * np.eye(4, dtype=int) - 1, 1))
    assert st1.Q == 112
    assert ue_s2(st1) == pytest.approx(0.8)
    assert ue_s2_doubled(st1) == pytest.approx(1.6)
    assert ue_s2_fraction(st1) == Fraction(4, 5)


@settings(max_examples=200, deadline=None)
@given(designs())
def test_q_matches_pairwise_oracle(X):
    st_ = build_state(X)
    n, k = X.shape
    assert st_.Q == q_by_pairs(X)
    assert st_.Q == n * n * (k + 1) + 2 * st_.off_diag_sq
    assert np.all(np.diag(st_.S) == n)


@settings(max_examples=100, deadline=None)
@given(designs())
def test_ue_s2_matches_naive_double_loop(X):
    st_ = build_state(X)
    k = X.shape[1]
    L = [[1] + [int(v) for v in row] for row in X]
    cols = list(zip(*L))
    o_s = sum(sum(a * b for a, b in zip(cols[i], cols[j])) ** 2 for i in range(k + 1) for j in range(i + 1, k + 1))
    assert ue_s2_fraction(st_) == Fraction(o_s, k * (k + 1))
    assert ue_s2_doubled(st_) == pytest.approx(2 * ue_s2(st_))


@settings(max_examples=100, deadline=None)
@given(designs())
def test_complement_symmetry(X):
    # negating X leaves off-diagonal squares among factors unchanged and flips intercept column sign
    assert build_state(X).Q == build_state(-X).Q


def test_slack_profile():
    d = Design(np.array([[1, -1, -1], [-1, -1, -1], [1, 1, -1]]), 2)
    s = row_slack(d)
    assert list(s.slack) == [2, 4, 0]
    assert (s.min, s.max, s.tight) == (0, 4, False)


def test_csv_round_trip():
    rng = np.random.default_rng(3)
    d = Design(pm1(rng, 6, 9, 4), 4)
    text = design_to_csv(d)
    assert text.splitlines()[0] == "f1,f2,f3,f4,f5,f6,f7,f8,f9"
    assert parse_design_csv(text, 4) == d


def test_csv_infers_c():
    d = parse_design_csv("f1,f2,f3\n1,1,-1\n-1,1,-1\n")
    assert d.c == 2


@pytest.mark.parametrize("text", ["", "a,b\n1,1\n", "f1,f2\n1\n", "f1,f2\n1,x\n", "f1,f2\n1,0\n"])
def test_csv_format_errors(text):
    with pytest.raises(DataFormatError):
        parse_design_csv(text)


def test_pool_sheet_uses_one_based_wells(tmp_path):
    d = Design(np.array([[1, -1, 1], [-1, -1, -1]]), 2)
    assert pool_sheet(d) == "1: f1,f3\n2: \n"
    p = tmp_path / "map.csv"
    p.write_text("index,label\n1,captopril\n3,EDTA\n")
    assert pool_sheet(d, read_compound_map(p)) == "1: captopril,EDTA\n2: \n"


def test_compound_map_rejects_garbage(tmp_path):
    p = tmp_path / "map.csv"
    p.write_text("index,label\nx,y\n")
    with pytest.raises(DataFormatError):
        read_compound_map(p)


def test_incidence_and_ocow_layout():
    d = from_incidence([[1, 0], [0, 1]])
    assert d.entries.tolist() == [[1, -1], [-1, 1]] and d.c == 2
    assert ones_minus_identity(2).entries.tolist() == d.entries.tolist()
    o = ones_minus_identity(5)
    assert o.c == 1 and (o.plus_counts() == 1).all()
