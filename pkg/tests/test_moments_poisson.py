import math

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occupancy import DoublingBlocks, Explicit, Geometric, PowerLaw
from occupancy.moments_poisson import depoisson_gap, phi_r_t, phi_t, var_t, var_t_via_delta_nu


def _mp_sum(q, t, f, normalized=True):
    mpmath.mp.dps = 40
    q = mpmath.mpf(q)
    c = (1 - q) / q if normalized else 1
    return float(mpmath.nsum(lambda j: f(t * c * q**j), [1, mpmath.inf]))


class TestClosedForms:
    @given(st.floats(1e-3, 60.0))
    @settings(max_examples=50, deadline=None)
    def test_dyadic_variance(self, t):
        rep = var_t(Geometric(0.5, normalized=True), t)
        assert rep.value == pytest.approx(-math.expm1(-t), abs=1e-13)

    @pytest.mark.parametrize("q, t", [(0.5, 3.0), (0.8, 250.0), (0.3, 1e5)])
    def test_phi_against_mpmath(self, q, t):
        want = _mp_sum(q, t, lambda y: -mpmath.expm1(-y))
        assert phi_t(Geometric(q, normalized=True), t).value == pytest.approx(want, rel=1e-13)

    @pytest.mark.parametrize("r", [1, 2, 5])
    def test_phi_r_against_mpmath(self, r):
        t = 40.0
        want = _mp_sum(0.7, t, lambda y: y**r * mpmath.exp(-y) / mpmath.factorial(r))
        assert phi_r_t(Geometric(0.7, normalized=True), t, r).value == pytest.approx(want, rel=1e-12)

    def test_unnormalized_rates(self):
        m = Geometric(0.9)
        want = _mp_sum(0.9, 7.0, lambda y: -mpmath.expm1(-y), normalized=False)
        assert phi_t(m, 7.0).value == pytest.approx(want, rel=1e-13)
        assert not phi_t(m, 7.0).extra["normalized"]


class TestIdentities:
    @pytest.mark.parametrize("t", [0.5, 30.0])
    def test_mass_balance(self, models, t):
        # sum_r r Phi_r(t) = t * mass
        for name, m in models.items():
            total = math.fsum(r * phi_r_t(m, t, r).value for r in range(1, 200))
            assert total == pytest.approx(t * m.mass, rel=1e-9), name

    @pytest.mark.parametrize("t", [1.0, 1e3, 1e7])
    def test_variance_is_phi_difference(self, models, t):
        for name, m in models.items():
            rep = var_t(m, t)
            tol = 1e-12 * max(1.0, rep.value) + 4 * rep.error_bound
            assert rep.extra["phi_difference_gap"] <= tol, name

    @pytest.mark.parametrize("t", [2.0, 500.0, 1e6])
    def test_delta_nu_route(self, models, t):
        for name, m in models.items():
            a = var_t(m, t, check=False)
            b = var_t_via_delta_nu(m, t)
            assert abs(a.value - b.value) <= 1e-9 + a.error_bound + b.error_bound, name

    def test_zero_time(self):
        assert phi_t(Geometric(0.5), 0).value == 0.0
        assert var_t(Geometric(0.5), 0).value == 0.0

    @pytest.mark.parametrize("bad", [-1.0, math.inf, math.nan])
    def test_bad_time(self, bad):
        with pytest.raises(ValueError):
            phi_t(Geometric(0.5), bad)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            phi_r_t(Geometric(0.5), 1.0, 0)


class TestCertificates:
    def test_power_law_head_and_tail(self):
        m = PowerLaw(2.0, normalized=True)
        rep = phi_t(m, 1e6)
        # Phi(t) ~ Gamma(1/2) sqrt(t c) with c = 6 / pi^2
        assert rep.value == pytest.approx(math.sqrt(math.pi * 1e6 * 6 / math.pi**2), rel=1e-3)
        assert rep.error_bound < 1e-9 * rep.value

    def test_finite_support_exact(self):
        m = Explicit([0.5, 0.3, 0.2], normalized=True)
        rep = var_t(m, 4.0)
        want = sum(math.exp(-4 * p) * -math.expm1(-4 * p) for p in (0.5, 0.3, 0.2))
        assert rep.value == pytest.approx(want, rel=1e-15)
        assert rep.error_bound == 0.0


class TestDepoissonization:
    # n |V(n) - V_n| for p_j = 2^-j, from a 50-digit evaluation of both series
    SCALED_GAP = {100: 2.0710154801578154, 1000: 2.0803623114455650}

    @pytest.mark.parametrize("n", sorted(SCALED_GAP))
    def test_oracle(self, n):
        gap = depoisson_gap(Geometric(0.5, normalized=True), n)
        assert n * abs(gap.var_gap) == pytest.approx(self.SCALED_GAP[n], rel=1e-7)

    @pytest.mark.parametrize("n", [1, 5, 50, 400])
    def test_mean_gap_bracket(self, models, n):
        for name, m in models.items():
            gap = depoisson_gap(m, n)
            assert gap.within_bound, name
            assert gap.to_dict()["n"] == n


class TestDoublingBlocks:
    """Blocks of k_i = 2^(2^i) boxes with frequency 1/k_(i+1)."""

    @pytest.mark.parametrize("i", [1, 2, 3])
    def test_pair_count_lower_bound(self, i):
        # the i-th block alone contributes (t^2 k_i / k_(i+1)^2) e^(-t / k_(i+1)) / 2
        m = DoublingBlocks()
        k = DoublingBlocks.k
        t = 2 * k(i + 1)
        assert phi_r_t(m, t, 2).value >= 2 * math.exp(-2) * k(i)

    def test_series_matches_block_sum(self):
        m = DoublingBlocks()
        t = 1000.0
        blocks = [(2 ** (2**i), 2.0 ** -(2 ** (i + 1))) for i in range(7)]
        want = math.fsum(size * (t * p) ** 2 / 2 * math.exp(-t * p) for size, p in blocks)
        assert phi_r_t(m, t, 2).value == pytest.approx(want, rel=1e-12)
