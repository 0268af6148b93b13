import json
import math

import pytest

from occupancy import Explicit, Geometric, PoissonWeights, merge
from occupancy.criteria import (
    VARIANCE_FLOOR,
    AuditEntry,
    AuditReport,
    BoundedBy,
    ConvergesTo,
    CriterionConfig,
    Diverges,
    Inconclusive,
    classify,
    detect_lag,
    invariant_audit,
    lag_bound,
    v_scan,
)
from occupancy.models import FiniteSupportError

EXPECTED = {
    "geometric_1/2": ConvergesTo(1),
    "geometric_2^-1/2": ConvergesTo(2),
    "geometric_0.7": BoundedBy(2),
    "geometric_0.6": BoundedBy(2),
    "poisson_1": BoundedBy(1),
    "poisson_2": BoundedBy(1),
    "negative_binomial_2_0.5": ConvergesTo(1),
    "quasi_binomial_1_0.3": BoundedBy(1),
    "merged_3x_geometric_1/2": ConvergesTo(3),
}


class TestClassify:
    @pytest.mark.parametrize("name", sorted(EXPECTED))
    def test_catalog_verdicts(self, models, name):
        assert classify(models[name]).verdict == EXPECTED[name]

    @pytest.mark.parametrize("name", ["power_law_2", "repeated_geometric_0.6", "repeated_geometric_0.3"])
    def test_diverging(self, models, name):
        v = classify(models[name]).verdict
        assert isinstance(v, Diverges)
        assert v.witness == "tail-ratio"

    def test_doubling_blocks_has_no_witness(self, models):
        v = classify(models["doubling_blocks"]).verdict
        assert isinstance(v, Inconclusive)

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_lag_k(self, k):
        assert classify(Geometric(2 ** (-1 / k))).verdict == ConvergesTo(k)

    def test_finite_support_rejected(self):
        with pytest.raises(FiniteSupportError, match="infinite support required"):
            classify(Explicit([0.5, 0.5]))

    def test_report_shape(self):
        out = classify(Geometric(0.5)).to_dict()
        assert out["verdict"] == {"type": "ConvergesTo", "k": 1}
        assert {"lag_ratios", "rho", "d_over_x", "v_scan"} <= set(out["evidence"])
        assert out["config"]["k_max"] == 16
        json.dumps(out)

    def test_config_changes_outcome(self):
        # too few lags to see the period of a lag-3 sequence
        cfg = CriterionConfig(k_max=2)
        v = classify(Geometric(2 ** (-1 / 3)), cfg).verdict
        assert v != ConvergesTo(3)

    def test_scan_disagreement_downgrades(self):
        # a window where the scan cannot have settled yet
        cfg = CriterionConfig(t_range=(0.01, 1.0), scan_per_decade=4)
        v = classify(Geometric(2 ** (-1 / 4)), cfg).verdict
        assert isinstance(v, Inconclusive)
        assert v.candidate == ConvergesTo(4)


class TestDetectLag:
    def test_merged_dyadic(self):
        assert detect_lag(merge([Geometric(0.5), Geometric(0.5)])) == 2

    def test_poisson_has_none(self):
        assert detect_lag(PoissonWeights(1.0)) is None

    def test_slow_convergence_extrapolated(self, models):
        # p_{j+1}/p_j = (j + 2) / (2 (j + 1)) approaches 1/2 like 1/j
        assert detect_lag(models["negative_binomial_2_0.5"]) == 1


class TestLagBound:
    def test_values(self):
        assert lag_bound({1: 0.5}) == 1
        assert lag_bound({1: 0.7, 2: 0.49}) == 2
        assert lag_bound({1: 0.9, 2: 0.81, 3: 0.729}) == 7
        assert lag_bound({1: 1.0}) == math.inf

    @pytest.mark.parametrize("q", [0.3, 0.55, 0.7, 0.85])
    def test_geometric_scan_respects_bound(self, q):
        m = Geometric(q)
        bound = lag_bound({k: q**k for k in range(1, 9)})
        _, vs = v_scan(m, CriterionConfig(t_range=(1.0, 1e8)))
        assert vs.max() <= bound


class TestConfig:
    def test_probes_double(self):
        probes = CriterionConfig().probes()
        assert probes[:3] == [100, 200, 400]

    @pytest.mark.parametrize("kw", [{"j_window": (10, 5)}, {"k_max": 0}, {"block": 1}, {"j_window": (100, 200)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            CriterionConfig(**kw).probes()


class TestAudit:
    @pytest.mark.parametrize(
        "name", ["geometric_1/2", "geometric_0.7", "poisson_1", "power_law_2", "doubling_blocks", "repeated_geometric_0.3"]
    )
    def test_passes(self, models, name):
        rep = invariant_audit(models[name])
        assert rep.passed, [e.to_dict() for e in rep.failures]

    def test_finite_model(self):
        rep = invariant_audit(Explicit([0.4, 0.3, 0.2, 0.1], normalized=True))
        assert rep.passed
        assert rep.entry("variance_floor").status == "n/a"

    def test_entries(self):
        rep = invariant_audit(Geometric(0.5, normalized=True))
        names = {e.name for e in rep.entries}
        assert {"sandwich_lower", "sandwich_upper", "golden_bracket", "variance_floor", "phi_log_growth"} <= names
        assert rep.entry("variance_floor").slack >= -1e-12
        json.dumps(rep.to_dict())

    def test_failure_reported(self):
        rep = AuditReport({}, [AuditEntry("x", "pass", 0.0), AuditEntry("y", "fail", -1.0, 1e-10)])
        assert not rep.passed
        assert [e.name for e in rep.failures] == ["y"]


def test_variance_floor_constant():
    assert VARIANCE_FLOOR == pytest.approx(0.2325441579348, abs=1e-12)
