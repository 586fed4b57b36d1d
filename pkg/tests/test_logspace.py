import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lseattn.logspace import (
    NEG_INF,
    EmptyReductionError,
    as_matrix,
    lcse_over_axis,
    logadd,
    lse,
    lse_over_axis,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
log_real = st.one_of(finite, st.just(NEG_INF))


def brute_lse(xs):
    xs = [x for x in xs if x != -math.inf]
    if not xs:
        return -math.inf
    return math.log(math.fsum(math.exp(x) for x in xs))


class TestLse:
    def test_two_equal_logits(self):
        assert lse_over_axis([0.0, 0.0])[0] == pytest.approx(0.6931471805599453, abs=1e-15)

    @pytest.mark.parametrize("x", [-700.0, -3.2, 0.0, 17.5, 700.0])
    def test_single_element_identity(self, x):
        assert lse_over_axis([[x]])[0] == x

    def test_large_values_do_not_overflow(self):
        out = lse_over_axis([1000.0, 1000.0])[0]
        assert out == pytest.approx(1000 + math.log(2), abs=1e-12)

    def test_axis_selection(self, rng):
        m = rng.uniform(-3, 3, (4, 5))
        by_row = lse_over_axis(m, "cols")
        by_col = lse_over_axis(m, "rows")
        assert by_row.shape == (4,) and by_col.shape == (5,)
        np.testing.assert_allclose(by_row, [brute_lse(r) for r in m], atol=1e-13)
        np.testing.assert_allclose(by_col, [brute_lse(c) for c in m.T], atol=1e-13)

    def test_all_neg_inf_slice(self):
        m = np.array([[NEG_INF, NEG_INF], [0.0, NEG_INF]])
        with np.errstate(all="raise"):
            out = lse_over_axis(m, "cols")
        assert out[0] == NEG_INF
        assert out[1] == 0.0

    def test_empty_reduction(self):
        with pytest.raises(EmptyReductionError, match="empty reduction"):
            lse_over_axis(np.zeros((3, 0)), "cols")

    def test_rejects_nan_and_posinf(self):
        with pytest.raises(ValueError, match="NaN"):
            as_matrix([[0.0, np.nan]])
        with pytest.raises(ValueError, match=r"\+inf"):
            as_matrix([[np.inf]])

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            lse_over_axis([[1.0]], "depth")

    @given(st.lists(finite, min_size=1, max_size=20), finite)
    def test_shift_covariance(self, xs, alpha):
        x = np.array(xs)
        assert lse(x + alpha, axis=0) == pytest.approx(lse(x, axis=0) + alpha, abs=1e-12)

    @given(st.lists(log_real, min_size=1, max_size=20))
    def test_equals_logadd_fold(self, xs):
        folded = NEG_INF
        for x in xs:
            folded = logadd(folded, x)
        out = lse(np.array(xs), axis=0)
        if folded == NEG_INF:
            assert out == NEG_INF
        else:
            assert out == pytest.approx(folded, abs=1e-12)
            assert out == pytest.approx(brute_lse(xs), abs=1e-12)


class TestLcse:
    def test_zeros(self):
        out = lcse_over_axis([0.0, 0.0, 0.0])[0]
        np.testing.assert_allclose(out, [0.0, math.log(2), math.log(3)], atol=1e-15)
        assert out[0] == 0.0

    def test_single_element(self):
        assert lcse_over_axis([[-4.25]])[0, 0] == -4.25

    def test_prefix_oracle(self, rng):
        row = rng.uniform(-5, 5, 8)
        out = lcse_over_axis(row)[0]
        assert out[0] == row[0]
        for k in range(1, 9):
            assert out[k - 1] == pytest.approx(brute_lse(row[:k]), abs=1e-12)

    def test_scans_down_rows(self, rng):
        m = rng.uniform(-5, 5, (6, 3))
        out = lcse_over_axis(m, "rows")
        np.testing.assert_array_equal(out[0], m[0])
        for j in range(3):
            for k in range(1, 7):
                assert out[k - 1, j] == pytest.approx(brute_lse(m[:k, j]), abs=1e-12)

    @given(st.lists(log_real, min_size=1, max_size=30))
    def test_last_equals_lse(self, xs):
        out = lcse_over_axis([xs])[0]
        total = lse(np.array(xs), axis=0)
        if total == NEG_INF:
            assert out[-1] == NEG_INF
        else:
            assert out[-1] == pytest.approx(total, abs=1e-12)
        assert not np.isnan(out).any() and not np.isposinf(out).any()


class TestLogadd:
    def test_identity(self):
        assert logadd(NEG_INF, 3.5) == 3.5
        assert logadd(3.5, NEG_INF) == 3.5
        assert logadd(NEG_INF, NEG_INF) == NEG_INF

    def test_zeros(self):
        assert logadd(0.0, 0.0) == pytest.approx(math.log(2), abs=1e-15)

    def test_associative_random(self, rng):
        a, b, c = rng.uniform(-10, 10, (3, 1000))
        direct = np.array([brute_lse(t) for t in zip(a, b, c)])
        np.testing.assert_allclose(logadd(logadd(a, b), c), direct, atol=1e-12, rtol=0)
        np.testing.assert_allclose(logadd(a, logadd(b, c)), direct, atol=1e-12, rtol=0)

    @given(finite, finite)
    def test_commutative(self, a, b):
        assert logadd(a, b) == pytest.approx(logadd(b, a), abs=1e-12)

    @given(finite, finite, finite)
    def test_associative(self, a, b, c):
        assert logadd(logadd(a, b), c) == pytest.approx(logadd(a, logadd(b, c)), abs=1e-12)

    @given(log_real)
    def test_two_sided_identity_exact(self, a):
        assert logadd(NEG_INF, a) == a
        assert logadd(a, NEG_INF) == a

    @given(log_real, log_real)
    def test_never_nan_or_posinf(self, a, b):
        out = logadd(a, b)
        assert not math.isnan(out) and out != math.inf
