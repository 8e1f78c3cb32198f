import itertools
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crows.bounds import (
    BoundError,
    BoundInconsistency,
    BoundReport,
    certify,
    identity_check,
    full_row_bound,
)
from crows.construct import ConstructConfig, construct
from crows.design import Design, build_state


def full_rows(n, k, c, rng):
    X = -np.ones((n, k), dtype=np.int64)
    for i in range(n):
        X[i, rng.choice(k, c, replace=False)] = 1
    return X


def min_square_sum(parts, total, cap=None):
    # exhaustive minimum of sum x_i^2 over integer splits of total into parts, 0 <= x_i <= cap
    @lru_cache(maxsize=None)
    def go(m, t):
        if m == 0:
            return 0 if t == 0 else float("inf")
        hi = t if cap is None else min(t, cap)
        return min(x * x + go(m - 1, t - x) for x in range(hi + 1))
    return go(parts, total)


def test_small_case_values():
    r = full_row_bound(4, 4, 1)
    assert (r.Q_lb, r.ue_lb) == (112, 0.8)
    assert full_row_bound(2, 2, 2).Q_lb == 36


def test_reference_quantities():
    r = full_row_bound(96, 144, 10)
    assert (r.gamma, r.delta, r.phi, r.psi) == (6, 96, 12, 10176)


@pytest.mark.parametrize("n,k,c", [(0, 2, 1), (2, 0, 1), (2, 2, 0), (2, 2, 3)])
def test_bad_parameters(n, k, c):
    with pytest.raises(BoundError):
        full_row_bound(n, k, c)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 30))
def test_even_spread_is_minimal(parts, total):
    phi, psi = divmod(total, parts)
    assert parts * phi * phi + psi * (2 * phi + 1) == min_square_sum(parts, total)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.data())
def test_column_sum_term_matches_brute_force(n, k, data):
    c = data.draw(st.integers(1, k))
    # a column holding t entries of +1 sums to 2t - n; the +1 entries total nc
    best = min(
        sum((n - 2 * t) ** 2 for t in ts)
        for ts in itertools.product(range(n + 1), repeat=k)
        if sum(ts) == n * c
    )
    assert full_row_bound(n, k, c).colsum_lb == best


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 25), st.integers(1, 25), st.integers(0, 2**32 - 1))
def test_identities_hold(n, k, seed):
    X = np.random.default_rng(seed).choice([-1, 1], size=(n, k))
    assert identity_check(X) == (0, 0, 0)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.data())
def test_bound_is_sound_on_random_full_designs(n, k, data):
    c = data.draw(st.integers(1, k))
    X = full_rows(n, k, c, np.random.default_rng(data.draw(st.integers(0, 2**32 - 1))))
    assert build_state(Design(X, c)).Q >= full_row_bound(n, k, c).Q_lb


@pytest.mark.parametrize("n,k,c", [(2, 3, 1), (3, 3, 1), (3, 3, 2), (3, 4, 2), (4, 4, 2), (2, 5, 2)])
def test_bound_below_exhaustive_optimum(n, k, c):
    rows = [r for r in itertools.product([-1, 1], repeat=k) if r.count(1) == c]
    best = min(build_state(np.array(d)).Q for d in itertools.product(rows, repeat=n))
    assert best >= full_row_bound(n, k, c).Q_lb


def test_certify_tight_design():
    res = construct(ConstructConfig(4, 4, 1, starts=10, seed=0))
    cert = certify(res.design)
    assert cert.applicable and cert.tight and cert.gap_Q == 0 and cert.Q == 112


def test_certify_with_slack_is_not_applicable():
    d = Design(np.array([[1, -1, -1], [-1, -1, -1]]), 1)
    cert = certify(d)
    assert not cert.applicable and cert.Q_lb is None


def test_certify_rejects_mismatched_report():
    d = Design(2 * np.eye(4, dtype=int) - 1, 1)
    with pytest.raises(BoundError):
        certify(d, full_row_bound(4, 4, 2))


def test_certify_flags_inconsistency():
    d = Design(2 * np.eye(4, dtype=int) - 1, 1)
    fake = BoundReport(4, 4, 1, 0, 0, 0, 0, 0, 0, 0, 10**6, 0.0)
    with pytest.raises(BoundInconsistency):
        certify(d, fake)
