import math
import threading
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occupancy import (
    DoublingBlocks,
    Explicit,
    Geometric,
    Merged,
    NegativeBinomial,
    PoissonWeights,
    PowerLaw,
    QuasiBinomial,
    RepeatedGeometric,
    merge,
)
from occupancy.models import (
    FiniteSupportError,
    ModelError,
    mass_and_normalizer,
    truncation_index,
)


def _brute(model, j_max):
    return np.array([model.freq(j) for j in range(1, j_max + 1)])


class TestFrequencies:
    @pytest.mark.parametrize("q", [0.1, 0.5, 0.9])
    def test_geometric(self, q):
        m = Geometric(q, normalized=True)
        js = np.arange(1, 60)
        np.testing.assert_allclose(m.freqs(js), (1 - q) * q ** (js - 1), rtol=1e-13)

    def test_poisson_weights(self):
        m = PoissonWeights(2.0, normalized=True)
        for j in (1, 2, 5, 30):
            want = mpmath.mpf(2) ** j / mpmath.factorial(j) / (mpmath.e**2 - 1)
            assert m.freq(j) == pytest.approx(float(want), rel=1e-13)

    def test_negative_binomial(self):
        m = NegativeBinomial(2.0, 0.5, normalized=True)
        # binom(j+1, j) 2^-j / (2^2 - 1) = (j+1) 2^-j / 3
        for j in (1, 4, 40):
            assert m.freq(j) == pytest.approx((j + 1) * 2.0**-j / 3, rel=1e-12)

    def test_quasi_binomial(self):
        lam, q = 1.0, 0.3
        m = QuasiBinomial(lam, q)
        for j in (1, 2, 6):
            want = math.prod(lam + i * q for i in range(j)) / math.factorial(j)
            assert m.freq(j) == pytest.approx(want, rel=1e-12)
        assert m.raw_mass == pytest.approx(float(mpmath.nsum(lambda j: mpmath.rf(lam / q, j) * q**j / mpmath.factorial(j), [1, mpmath.inf])), rel=1e-12)

    def test_quasi_binomial_zero_q_is_poisson(self):
        a, b = QuasiBinomial(1.5, 0.0), PoissonWeights(1.5)
        np.testing.assert_allclose(_brute(a, 40), _brute(b, 40), rtol=1e-13)

    def test_power_law(self):
        m = PowerLaw(2.0, normalized=True)
        assert m.freq(3) == pytest.approx(6 / (9 * math.pi**2), rel=1e-14)
        assert m.tail_sum(10) == pytest.approx(float(mpmath.zeta(2, 11) * 6 / mpmath.pi**2), rel=1e-13)

    def test_repeated_geometric_layout(self):
        m = RepeatedGeometric(0.5)
        want = [0.5, 0.25, 0.25, 0.125, 0.125, 0.125, 0.0625]
        np.testing.assert_allclose(_brute(m, 7), want)
        # sum_i i q^i = q / (1 - q)^2
        assert m.raw_mass == pytest.approx(2.0)

    def test_doubling_blocks_layout(self):
        m = DoublingBlocks()
        want = [2**-2] * 2 + [2**-4] * 4 + [2**-8] * 16 + [2**-16]
        np.testing.assert_array_equal(_brute(m, 23), want)
        assert m.count_greater(2**-9) == 22
        assert m.count_greater(2**-17) == 22 + 256

    def test_deep_index_does_not_underflow(self):
        m = Geometric(0.5)
        assert m.log_freq(5000) == pytest.approx(5000 * math.log(0.5))
        assert m.freq(5000) == 0.0


class TestMass:
    @pytest.mark.parametrize(
        "model, mass",
        [
            (Geometric(0.5), 1.0),
            (Geometric(0.75), 3.0),
            (PoissonWeights(1.0), math.e - 1),
            (NegativeBinomial(2.0, 0.5), 3.0),
            (RepeatedGeometric(0.6), 0.6 / 0.16),
            (PowerLaw(2.0), math.pi**2 / 6),
            (DoublingBlocks(), sum(2.0 ** -(2**i) for i in range(8))),
        ],
    )
    def test_raw_mass(self, model, mass):
        assert model.raw_mass == pytest.approx(mass, rel=1e-13)
        total, scale = mass_and_normalizer(model.renormalized(True))
        assert scale == pytest.approx(1 / mass, rel=1e-13)

    def test_normalized_models_sum_to_one(self, models):
        for name, m in models.items():
            assert m.is_probability(), name
            assert m.tail_sum(0) == pytest.approx(1.0, abs=1e-13), name

    @pytest.mark.parametrize("j", [1, 3, 10, 57])
    def test_tail_matches_partial_sums(self, models, j):
        for name, m in models.items():
            head = math.fsum(m.freq(i) for i in range(1, j + 1))
            assert head + m.tail_sum(j) == pytest.approx(m.mass, abs=1e-13), name

    def test_tail_certificate_brackets(self):
        m = PowerLaw(1.5)
        v, err = m.tail_sum_bounded(100)
        exact = float(mpmath.zeta(1.5, 101))
        assert abs(v - exact) <= err + 1e-15


class TestValidation:
    @pytest.mark.parametrize(
        "make",
        [
            lambda: Geometric(1.0),
            lambda: Geometric(0.0),
            lambda: PowerLaw(1.0),
            lambda: PowerLaw(2.0, cutoff=0),
            lambda: PoissonWeights(-1.0),
            lambda: NegativeBinomial(1.0, 1.2),
            lambda: Explicit([0.1, 0.2]),
            lambda: Explicit([0.5, -0.1]),
            lambda: Explicit([0.1], tail=Geometric(0.5)),
            lambda: DoublingBlocks(0),
            lambda: DoublingBlocks(10),
        ],
    )
    def test_rejects(self, make):
        with pytest.raises(ModelError):
            make()

    @pytest.mark.parametrize("make", [lambda: PoissonWeights(3.0), lambda: NegativeBinomial(4.0, 0.5)])
    def test_rejects_non_monotone(self, make):
        with pytest.raises(ModelError, match="non-increasing"):
            make()

    def test_finite_support_index(self):
        m = Explicit([0.5, 0.3, 0.2])
        assert m.support_size == 3 and not m.infinite
        assert m.freq(3) == 0.2
        assert m.log_freqs(np.array([4]))[0] == -math.inf


class TestMeasure:
    @given(st.floats(min_value=1e-200, max_value=0.9))
    @settings(max_examples=80, deadline=None)
    def test_count_greater_geometric(self, y):
        m = Geometric(0.5)
        n = m.count_greater(y)
        assert n == 0 or m.freq(n) > y
        assert not m.freq(n + 1) > y

    @given(st.sampled_from([0.25, 0.5, 0.125]), st.integers(0, 30))
    def test_count_greater_at_atoms(self, q, j):
        # threshold equal to an atom: that atom is not strictly greater
        m = Geometric(q)
        y = m.freq(j + 1)
        assert m.count_greater(y) == j

    def test_count_greater_tiny_threshold(self):
        m = RepeatedGeometric(0.5)
        # blocks 1..b exceed 2^-b-1 exactly when i <= b
        assert m.count_greater(2.0**-1001) == 1000 * 1001 // 2

    @pytest.mark.parametrize("y", [0.3, 0.01, 1e-6, 1e-12])
    def test_mass_leq_complements_atoms(self, models, y):
        for name, m in models.items():
            vals, mults = m.atoms_above(y)
            above = float(np.dot(vals, mults))
            assert above + m.mass_leq(y) == pytest.approx(m.mass, abs=1e-12), name

    def test_atoms_group_equal_values(self):
        vals, mults = RepeatedGeometric(0.5).atoms_above(0.01)
        np.testing.assert_array_equal(vals, [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625])
        np.testing.assert_array_equal(mults, [1, 2, 3, 4, 5, 6])


class TestTailRatio:
    def test_geometric(self):
        assert Geometric(0.5).tail_ratio(7) == pytest.approx(1.0)
        assert Geometric(0.25).tail_ratio(3) == pytest.approx(1 / 3)

    def test_repeated_geometric(self):
        # rho at the last index of block b: sum_{i>b} i q^{i-b}
        q = 0.5
        m = RepeatedGeometric(q)
        j = 10  # blocks 1..4 end at index 10
        want = math.fsum(i * q ** (i - 4) for i in range(5, 400))
        assert m.tail_ratio(j) == pytest.approx(want, rel=1e-13)

    @pytest.mark.parametrize("j, levels", [(7, 4), (22, 4)])
    def test_doubling_blocks_exact(self, j, levels):
        m = DoublingBlocks()
        k = [Fraction(2 ** (2**i)) for i in range(levels + 2)]
        p = [1 / k[i + 1] for i in range(levels + 1)]
        sizes = [int(k[i]) for i in range(levels + 1)]
        flat = [v for v, s in zip(p, sizes) for _ in range(s)]
        rest = sum(1 / k[i] for i in range(levels + 1, levels + 2))
        want = (sum(flat[j:]) + rest) / flat[j - 1]
        assert m.tail_ratio(j) == pytest.approx(float(want), rel=1e-12)

    def test_doubling_blocks_values(self):
        m = DoublingBlocks()
        # 16 remaining boxes of the block, then 1/k_3 + 1/k_4 + ... relative to 1/k_3
        assert m.tail_ratio(7) == pytest.approx(16 + 2**-8 + 2**-24 + 2**-56, rel=1e-14)
        assert m.tail_ratio(22) == pytest.approx(1 + 2**-8 + 2**-24 + 2**-56, rel=1e-14)

    def test_power_law_grows(self):
        m = PowerLaw(2.0)
        assert m.tail_ratio(1000) == pytest.approx(999.5, rel=1e-3)


class TestMerged:
    def test_frequencies_interleave(self):
        m = merge([Geometric(0.5), Geometric(0.25)])
        want = sorted([0.5**j for j in range(1, 40)] + [0.25**j for j in range(1, 40)], reverse=True)
        np.testing.assert_allclose(_brute(m, 30), want[:30])

    def test_measure_is_additive(self):
        parts = [Geometric(0.5), PoissonWeights(1.0)]
        m = Merged(parts)
        for y in (0.3, 0.01, 1e-9):
            assert m.count_greater(y) == sum(p.count_greater(y) for p in parts)
            assert m.mass_leq(y) == pytest.approx(sum(p.mass_leq(y) for p in parts))

    def test_concurrent_prefix(self):
        m = merge([Geometric(0.5), Geometric(0.7), PowerLaw(3.0)])
        out = [None] * 8

        def work(i):
            out[i] = _brute(m, 200 + 10 * i)[:200]

        threads = [threading.Thread(target=work, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for arr in out[1:]:
            np.testing.assert_array_equal(arr, out[0])
        assert np.all(np.diff(out[0]) <= 0)


class TestTruncation:
    @pytest.mark.parametrize("t", [1.0, 1e3, 1e6])
    def test_index_bounds_tail(self, t):
        m = Geometric(0.5)
        cert = truncation_index(m, t, 1e-10)
        assert t * m.tail_sum(cert.index) <= 1e-10

    def test_finite_support(self):
        cert = truncation_index(Explicit([0.6, 0.4]), 1e9, 1e-12)
        assert cert.tail_bound == 0.0


def test_lagged_beyond_support():
    from occupancy.counting import lagged_ratio

    with pytest.raises(FiniteSupportError):
        lagged_ratio(Explicit([0.5, 0.5]), 2, 1)
