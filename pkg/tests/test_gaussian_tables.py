import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from pcnic.coding.gaussian import (
    BYTE_TABLE,
    DEFAULT_TAIL,
    SIGMA_MIN,
    TOTAL_FREQ,
    CdfTable,
    build_cdf,
    build_cdf_batch,
    det_erf,
    det_exp,
    residual_bytes,
    residual_value,
)
from pcnic.errors import FormatError


def oracle_table_counts(mu, sigma, t):
    """Scalar reference construction: math.erf masses, explicit
    largest-remainder loop with the same floor-of-1 rule."""
    n_bins = 2 * t + 2
    masses = []
    for v in range(-t, t + 1):
        hi = 0.5 * (1.0 + math.erf((v + 0.5 - mu) / (sigma * math.sqrt(2))))
        lo = 0.5 * (1.0 + math.erf((v - 0.5 - mu) / (sigma * math.sqrt(2))))
        masses.append(max(hi - lo, 0.0))
    masses.append(max(1.0 - sum(masses), 0.0))
    total = sum(masses) or 1.0
    budget = TOTAL_FREQ - n_bins
    scaled = [m / total * budget for m in masses]
    base = [math.floor(s) for s in scaled]
    leftover = budget - sum(base)
    remainders = sorted(range(n_bins), key=lambda i: (-(scaled[i] - base[i]), i))
    counts = list(base)
    for i in remainders[:leftover]:
        counts[i] += 1
    return [c + 1 for c in counts]


class TestDeterministicMath:
    def test_det_exp_close_to_numpy(self):
        y = np.linspace(-30, 5, 2001)
        got = det_exp(y)
        np.testing.assert_allclose(got, np.exp(y), rtol=5e-15)

    def test_det_erf_within_documented_error(self):
        x = np.linspace(-6, 6, 4001)
        err = np.abs(det_erf(x) - special.erf(x))
        assert err.max() < 1.6e-7

    def test_det_erf_odd_symmetry_exact(self):
        x = np.linspace(0.001, 5, 500)
        np.testing.assert_array_equal(det_erf(-x), -det_erf(x))


class TestTableConstruction:
    def test_counts_sum_and_floor(self):
        rng = np.random.default_rng(0)
        mus = rng.uniform(-0.5, 0.5, size=50)
        sigmas = rng.uniform(SIGMA_MIN, 25.0, size=50)
        for table in build_cdf_batch(mus, sigmas):
            assert table.counts.sum() == TOTAL_FREQ
            assert table.counts.min() >= 1
            assert table.cum[0] == 0 and table.cum[-1] == TOTAL_FREQ

    def test_zero_mean_tables_symmetric(self):
        table = build_cdf(0.0, 1.7, t=8)
        sym = table.counts[:-1]               # escape slot excluded
        np.testing.assert_array_equal(sym, sym[::-1])

    @pytest.mark.parametrize("mu,sigma,t", [
        (0.0, 1.0, 6),
        (0.3, 0.11, 4),
        (-0.5, 3.7, 10),
        (0.49, 19.0, 24),
    ])
    def test_matches_scalar_oracle(self, mu, sigma, t):
        table = build_cdf(mu, sigma, t)
        want = oracle_table_counts(mu, sigma, t)
        # erf approximations differ by <=1.5e-7 in mass, so allow one count
        # of slack per bin (65536 * 1.5e-7 is well under 1).
        diff = np.abs(table.counts - np.array(want))
        assert diff.max() <= 1

    def test_narrow_sigma_concentrates(self):
        table = build_cdf(0.0, SIGMA_MIN, t=4)
        assert table.counts[table.index_for(0)] > 65000
        assert table.counts.min() >= 1

    def test_escape_carries_tails(self):
        # fat distribution, small support: escape mass must dominate
        table = build_cdf(0.0, 20.0, t=1)
        assert table.counts[table.escape_index] > TOTAL_FREQ // 2

    def test_batch_equals_single(self):
        mus = [0.0, 0.25, -0.4]
        sigmas = [1.0, 0.5, 7.0]
        batch = build_cdf_batch(mus, sigmas, t=5)
        for mu, sigma, table in zip(mus, sigmas, batch):
            single = build_cdf(mu, sigma, t=5)
            np.testing.assert_array_equal(table.counts, single.counts)

    def test_sigma_below_bound_rejected(self):
        with pytest.raises(ValueError, match="sigma"):
            build_cdf(0.0, 0.05)

    def test_find_matches_linear_scan(self):
        table = build_cdf(0.1, 2.3, t=6)
        for target in range(0, TOTAL_FREQ, 997):
            linear = max(
                i for i in range(len(table.counts))
                if table.cum[i] <= target)
            assert table.find(target) == linear

    def test_index_value_round_trip(self):
        table = build_cdf(0.0, 1.0, t=3)
        for v in range(-3, 4):
            assert table.value_for(table.index_for(v)) == v
        assert table.index_for(9) == table.escape_index
        with pytest.raises(ValueError):
            table.value_for(table.escape_index)


class TestResiduals:
    @given(st.integers(min_value=-32768, max_value=32767))
    def test_round_trip(self, value):
        hi, lo = residual_bytes(value)
        assert 0 <= hi <= 255 and 0 <= lo <= 255
        assert residual_value(hi, lo) == value

    def test_out_of_range_rejected(self):
        with pytest.raises(FormatError):
            residual_bytes(40000)
        with pytest.raises(FormatError):
            residual_bytes(-40000)

    def test_byte_table_uniform(self):
        assert BYTE_TABLE.counts.sum() == TOTAL_FREQ
        assert BYTE_TABLE.find(0) == 0
        assert BYTE_TABLE.find(TOTAL_FREQ - 1) == 255
        assert BYTE_TABLE.find(256 * 37 + 5) == 37


@settings(max_examples=30, deadline=None)
@given(
    mu=st.floats(min_value=-0.5, max_value=0.5),
    sigma=st.floats(min_value=SIGMA_MIN, max_value=30.0),
    t=st.integers(min_value=1, max_value=DEFAULT_TAIL),
)
def test_any_table_well_formed(mu, sigma, t):
    table = build_cdf(mu, sigma, t)
    assert len(table.counts) == 2 * t + 2
    assert table.counts.sum() == TOTAL_FREQ
    assert table.counts.min() >= 1
    assert np.all(np.diff(table.cum) == table.counts)
