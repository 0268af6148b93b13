"""Decide whether the occupancy variance converges, stays bounded or diverges.

The asymptotic conditions on lagged ratios p_{j+k}/p_j, tail ratios rho_j and
the counting function delta_nu are probed on finite windows; every verdict is
cross-checked against a direct scan of V(t) and downgraded to Inconclusive
when the two disagree.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import counting
from .export import jsonable as _jsonable
from .models import FiniteSupportError, FrequencyModel
from .moments_poisson import phi_r_t, phi_t, var_t, var_t_via_delta_nu

__all__ = [
    "AuditEntry",
    "AuditReport",
    "BoundedBy",
    "ClassificationVerdict",
    "ConvergesTo",
    "CriterionConfig",
    "Diverges",
    "Inconclusive",
    "Verdict",
    "VARIANCE_FLOOR",
    "classify",
    "detect_lag",
    "invariant_audit",
    "lag_bound",
    "v_scan",
]

VARIANCE_FLOOR = math.exp(-1.0) - math.exp(-2.0)
GOLDEN = math.sqrt(5.0) - 2.0


@dataclass(frozen=True)
class CriterionConfig:
    """Finite windows standing in for the asymptotic conditions.

    Parameters
    ----------
    j_window : (int, int)
        Index range for lagged-ratio and tail-ratio probes.
    k_max : int
        Largest lag tried.
    ratio_tol : float
        Tolerance for "tends to 1/2" and "at most 1/2".
    block : int
        Consecutive indices per probe; suprema and infima are taken over them.
    x_range : (float, float or None)
        Grid extent for D(x)/x and delta_nu; None means p_1.
    t_range : (float, float)
        Extent of the V(t) scan.
    scan_per_decade : int
    scan_tol : float
        Allowed |V(t_max) - k| for a ConvergesTo verdict.
    d_tol : float
        Allowed |D(x)/x - k| at the smallest grid x.
    d_points : int
    rho_threshold : float
        A growing tail ratio must end above this to count as diverging.
    """

    j_window: tuple[int, int] = (100, 10_000)
    k_max: int = 16
    ratio_tol: float = 1e-3
    block: int = 64
    x_range: tuple[float, float | None] = (1e-10, None)
    t_range: tuple[float, float] = (1.0, 1e10)
    scan_per_decade: int = 8
    scan_tol: float = 5e-2
    d_tol: float = 0.1
    d_points: int = 41
    rho_threshold: float = 10.0
    audit_t_range: tuple[float, float] = (1e-2, 1e8)
    audit_points: int = 60
    audit_upper_t: float = 1e4
    exact_tol: float = 1e-10
    sup_tol: float = 1e-3
    chain_tol: float = 1e-6

    def __post_init__(self):
        lo, hi = self.j_window
        if not (1 <= lo < hi):
            raise ValueError(f"j_window must be a nonempty range, got {self.j_window}")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.block < 2:
            raise ValueError("block must be >= 2")

    def probes(self) -> list[int]:
        lo, hi = self.j_window
        out = []
        m = 0
        while True:
            j = math.ceil(lo * 2**m)
            if j + self.block + self.k_max > hi:
                break
            out.append(j)
            m += 1
        if len(out) < 3:
            raise ValueError("j_window too short for three probes")
        return out

    def to_dict(self) -> dict:
        return asdict(self)


# -- verdicts ------------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    def to_dict(self) -> dict:
        out = {"type": type(self).__name__}
        out.update({k: (v.to_dict() if isinstance(v, Verdict) else v) for k, v in asdict(self).items()})
        if isinstance(self, Inconclusive) and self.candidate is not None:
            out["candidate"] = self.candidate.to_dict()
        return out


@dataclass(frozen=True)
class ConvergesTo(Verdict):
    k: int


@dataclass(frozen=True)
class BoundedBy(Verdict):
    k: int


@dataclass(frozen=True)
class Diverges(Verdict):
    witness: str


@dataclass(frozen=True)
class Inconclusive(Verdict):
    reason: str
    candidate: Verdict | None = None

    def to_dict(self) -> dict:
        out = {"type": "Inconclusive", "reason": self.reason}
        if self.candidate is not None:
            out["candidate"] = self.candidate.to_dict()
        return out


@dataclass
class ClassificationVerdict:
    verdict: Verdict
    evidence: dict
    config: CriterionConfig

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.to_dict(),
            "evidence": _jsonable(self.evidence),
            "config": _jsonable(self.config.to_dict()),
        }


# -- probes ----------------------------------------------------------------------


def _require_infinite(model: FrequencyModel) -> None:
    if not model.infinite:
        raise FiniteSupportError("infinite support required: the criteria concern p_j as j -> infinity")


def _ratio_envelopes(model: FrequencyModel, cfg: CriterionConfig) -> dict[int, dict]:
    """Per lag k: sup and inf of p_{j+k}/p_j over each probe block."""
    probes = cfg.probes()
    out = {k: {"probes": probes, "sup": [], "inf": []} for k in range(1, cfg.k_max + 1)}
    for j0 in probes:
        logs = model.log_freqs(np.arange(j0, j0 + cfg.block + cfg.k_max))
        for k in range(1, cfg.k_max + 1):
            r = np.exp(logs[k : k + cfg.block] - logs[: cfg.block])
            out[k]["sup"].append(float(r.max()))
            out[k]["inf"].append(float(r.min()))
    return out


def _extrapolate(seq: list[float]) -> list[float]:
    # probes double in j, so an O(1/j) error cancels in 2 r(2j) - r(j)
    return [2.0 * b - a for a, b in zip(seq[:-1], seq[1:])]


def _lag_converges(env: dict, tol: float) -> tuple[bool, dict]:
    sup, inf = env["sup"], env["inf"]
    raw_dev = [max(abs(s - 0.5), abs(i - 0.5)) for s, i in zip(sup, inf)]
    es, ei = _extrapolate(sup), _extrapolate(inf)
    ext_dev = [max(abs(s - 0.5), abs(i - 0.5)) for s, i in zip(es, ei)]
    tail_es, tail_ei = es[-3:], ei[-3:]
    agree = (max(tail_es) - min(tail_es) <= tol) and (max(tail_ei) - min(tail_ei) <= tol)
    ok_ext = agree and max(ext_dev[-3:]) <= tol
    ok_raw = max(raw_dev[-3:]) <= tol
    info = {"extrap_sup": es, "extrap_inf": ei, "raw_deviation": raw_dev, "extrap_deviation": ext_dev}
    return ok_ext or ok_raw, info


def detect_lag(model: FrequencyModel, config: CriterionConfig | None = None) -> int | None:
    """Smallest k <= k_max with p_{j+k}/p_j -> 1/2 on the probe window, else None."""
    cfg = config or CriterionConfig()
    _require_infinite(model)
    env = _ratio_envelopes(model, cfg)
    for k in range(1, cfg.k_max + 1):
        if _lag_converges(env[k], cfg.ratio_tol)[0]:
            return k
    return None


def _window_max_ratios(model: FrequencyModel, cfg: CriterionConfig) -> dict[int, float]:
    """max over j in the whole window of p_{j+k}/p_j, per k."""
    lo, hi = cfg.j_window
    logs = model.log_freqs(np.arange(lo, hi + cfg.k_max + 1))
    n = hi - lo + 1
    return {k: float(np.exp(np.max(logs[k : k + n] - logs[:n]))) for k in range(1, cfg.k_max + 1)}


def lag_bound(window_max: dict[int, float]) -> float:
    """min over k of k * ceil(log_{1/q_k} 2) for window-max ratios q_k < 1."""
    best = math.inf
    for k, q in window_max.items():
        if 0 < q < 1:
            c = math.ceil(math.log(2.0) / -math.log(q) - 1e-9)
            best = min(best, k * max(c, 1))
    return best


def _x_grid(model: FrequencyModel, cfg: CriterionConfig) -> np.ndarray:
    lo, hi = cfg.x_range
    hi = model.freq(1) if hi is None else hi
    return np.geomspace(hi, lo, cfg.d_points)


def v_scan(model: FrequencyModel, cfg: CriterionConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """V(t) on a log grid spanning cfg.t_range."""
    cfg = cfg or CriterionConfig()
    lo, hi = cfg.t_range
    n = int(round(math.log10(hi / lo) * cfg.scan_per_decade)) + 1
    ts = np.geomspace(lo, hi, n)
    return ts, np.array([var_t(model, t, check=False).value for t in ts])


def _scan_summary(ts: np.ndarray, vs: np.ndarray) -> dict:
    top = ts[-1]
    last = ts >= top / 10
    prev = (ts >= top / 100) & (ts < top / 10)
    early = ts <= np.sqrt(ts[0] * top)
    return {
        "t": ts,
        "v": vs,
        "v_t_max": float(vs[-1]),
        "max_last_decade": float(vs[last].max()),
        "max_previous_decade": float(vs[prev].max()) if prev.any() else float("nan"),
        "max_first_half": float(vs[early].max()),
        "sup": float(vs.max()),
    }


def _half_reach(model: FrequencyModel, j: int, cap: int = 1 << 22) -> int:
    """Number of indices i > j with p_i > p_j / 2, found in log space."""
    target = model.log_freq(j) - math.log(2.0)
    span = 64
    while True:
        logs = model.log_freqs(np.arange(j + 1, j + span + 1))
        count = int(np.count_nonzero(logs > target))
        if count < span or span >= cap:
            return count
        span *= 4


def _divergence_witness(model: FrequencyModel, cfg: CriterionConfig, xs, dnu) -> tuple[str | None, dict]:
    probes = cfg.probes()
    rho_inf = []
    for j0 in probes:
        rho_inf.append(min(model.tail_ratio(j) for j in range(j0, j0 + cfg.block)))
    growing = all(b > a for a, b in zip(rho_inf[:-1], rho_inf[1:]))
    info: dict[str, Any] = {"rho_inf": rho_inf}
    if growing and rho_inf[-1] >= cfg.rho_threshold and rho_inf[-1] >= 2 * rho_inf[0]:
        return "tail-ratio", info
    if dnu.size > 1 and dnu[-1] > dnu[:-1].max():
        return "delta-nu", info
    # liminf-half: the largest lag keeping p_{j+k}/p_j > 1/2 keeps growing past k_max
    reach = [_half_reach(model, j) for j in probes]
    info["half_reach"] = reach
    if all(b >= a for a, b in zip(reach[:-1], reach[1:])) and reach[-1] > cfg.k_max and reach[-1] >= 2 * reach[0]:
        return "liminf-half", info
    return None, info


def classify(model: FrequencyModel, config: CriterionConfig | None = None) -> ClassificationVerdict:
    """Classify the large-t behaviour of V(t) (equivalently of V_n).

    Steps, in order: a lag k with p_{j+k}/p_j -> 1/2 and D(x)/x -> k gives
    ConvergesTo(k); a window-max lagged ratio at most 1/2 gives BoundedBy(k);
    a firing divergence witness gives Diverges.  The V(t) scan must agree,
    otherwise the verdict becomes Inconclusive carrying the candidate.
    """
    cfg = config or CriterionConfig()
    _require_infinite(model)
    env = _ratio_envelopes(model, cfg)
    lag_info = {}
    lag = None
    for k in range(1, cfg.k_max + 1):
        ok, info = _lag_converges(env[k], cfg.ratio_tol)
        lag_info[k] = {**env[k], **info}
        if ok and lag is None:
            lag = k
    window_max = _window_max_ratios(model, cfg)
    xs = _x_grid(model, cfg)
    d_over_x = np.array([counting.big_d(model, x) / x for x in xs])
    dnu = np.array([counting.delta_nu(model, x) for x in xs], dtype=float)
    ts, vs = v_scan(model, cfg)
    scan = _scan_summary(ts, vs)
    evidence: dict[str, Any] = {
        "lag_ratios": [
            {"k": k, "probes": v["probes"], "sup": v["sup"], "inf": v["inf"], "window_max": window_max[k]}
            for k, v in lag_info.items()
        ],
        "detected_lag": lag,
        "x": xs,
        "d_over_x": d_over_x,
        "delta_nu": dnu,
        "v_scan": scan,
    }

    candidate: Verdict | None = None
    if lag is not None and abs(d_over_x[-1] - lag) <= cfg.d_tol:
        candidate = ConvergesTo(lag)
    if candidate is None:
        for k in range(1, cfg.k_max + 1):
            if window_max[k] <= 0.5 + cfg.ratio_tol:
                candidate = BoundedBy(k)
                break
    witness_info: dict = {}
    if candidate is None:
        witness, witness_info = _divergence_witness(model, cfg, xs, dnu)
        if witness is not None:
            candidate = Diverges(witness)
    else:
        rho = [model.tail_ratio(j) for j in cfg.probes()]
        witness_info = {"rho": rho}
    evidence["rho"] = witness_info

    if candidate is None:
        verdict: Verdict = Inconclusive("no criterion fired on the probe window")
    else:
        conflict = _scan_conflict(candidate, scan, cfg)
        verdict = candidate if conflict is None else Inconclusive(conflict, candidate)
    return ClassificationVerdict(verdict, evidence, cfg)


def _scan_conflict(v: Verdict, scan: dict, cfg: CriterionConfig) -> str | None:
    if isinstance(v, ConvergesTo):
        if abs(scan["v_t_max"] - v.k) > cfg.scan_tol:
            return f"V(t_max) = {scan['v_t_max']:.6g} is not within {cfg.scan_tol} of {v.k}"
    elif isinstance(v, BoundedBy):
        if scan["max_last_decade"] > v.k + cfg.scan_tol:
            return f"V reaches {scan['max_last_decade']:.6g} in the last decade, above the bound {v.k}"
    elif isinstance(v, Diverges):
        grows = scan["max_last_decade"] > scan["max_previous_decade"]
        grows = grows and scan["max_last_decade"] > (1 + cfg.scan_tol) * scan["max_first_half"]
        if not grows:
            return "V(t) is not increasing over the last two decades of the scan"
    return None


# -- invariant audit ----------------------------------------------------------------


@dataclass
class AuditEntry:
    """One inequality checked by the audit.

    ``slack`` is the worst (smallest) right-hand side minus left-hand side
    seen; the entry passes when slack >= -tolerance.
    """

    name: str
    status: str  # "pass", "fail" or "n/a"
    slack: float = float("nan")
    tolerance: float = 0.0
    detail: str = ""

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


@dataclass
class AuditReport:
    """Per-inequality outcomes plus the grid suprema they were built from."""

    model: dict
    entries: list[AuditEntry] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e.status != "fail" for e in self.entries)

    @property
    def failures(self) -> list[AuditEntry]:
        return [e for e in self.entries if e.status == "fail"]

    def entry(self, name: str) -> AuditEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "passed": self.passed,
            "summary": _jsonable(self.summary),
            "entries": [e.to_dict() for e in self.entries],
        }


def _entry(name: str, slacks, tol: float, detail: str = "") -> AuditEntry:
    slacks = np.asarray(slacks, dtype=float)
    worst = float(slacks.min()) if slacks.size else float("inf")
    return AuditEntry(name, "pass" if worst >= -tol else "fail", worst, tol, detail)


def _is_bounded(model: FrequencyModel, cfg: CriterionConfig) -> tuple[bool, dict[int, float]]:
    if not model.infinite:
        return True, {}
    wm = _window_max_ratios(model, cfg)
    return any(q <= 0.5 + cfg.ratio_tol for q in wm.values()), wm


def _fd_signs(model: FrequencyModel, t: float) -> tuple[float, float, float]:
    h = 0.05 * t
    f = {i: phi_t(model, t + i * h).value for i in (-2, -1, 0, 1, 2)}
    d1 = (f[1] - f[-1]) / (2 * h)
    d2 = (f[1] - 2 * f[0] + f[-1]) / h**2
    d3 = (f[2] - 2 * f[1] + 2 * f[-1] - f[-2]) / (2 * h**3)
    return d1, d2, d3


def _delta_nu_sup(model: FrequencyModel, x_lo: float, x_hi: float) -> int:
    """Exact sup of delta_nu over [x_lo, x_hi] (it only changes at p_j and 2 p_j)."""
    vals, _ = model.atoms_above(x_lo / 2)
    pts = np.concatenate([vals, 2 * vals, [x_lo, x_hi]])
    pts = np.unique(pts[(pts >= x_lo) & (pts <= x_hi)])
    cand = list(pts) + list(0.5 * (pts[:-1] + pts[1:]))
    return max(counting.delta_nu(model, x) for x in cand)


def invariant_audit(model: FrequencyModel, config: CriterionConfig | None = None) -> AuditReport:
    """Check the moment inequalities on the configured grids.

    Exact inequalities use tolerance ``exact_tol`` plus the certified
    truncation bounds of the quantities involved; inequalities between
    asymptotic suprema use ``sup_tol`` (``chain_tol`` for the supremum chain).
    Checks whose hypotheses fail are reported as "n/a".
    """
    cfg = config or CriterionConfig()
    report = AuditReport(model.to_spec())
    ts = np.geomspace(*cfg.audit_t_range, cfg.audit_points)
    upper = ts >= cfg.audit_upper_t

    V = [var_t(model, t) for t in ts]
    v = np.array([r.value for r in V])
    vb = np.array([r.error_bound for r in V])

    # sandwich: Phi_1(2t)/2 <= V(t) <= Phi_1(t)
    p1_2t = [phi_r_t(model, 2 * t, 1) for t in ts]
    p1_t = [phi_r_t(model, t, 1) for t in ts]
    a = np.array([r.value for r in p1_2t])
    b = np.array([r.value for r in p1_t])
    err = vb + np.array([r.error_bound for r in p1_2t]) + np.array([r.error_bound for r in p1_t])
    tol = cfg.exact_tol + float(err.max())
    report.entries.append(_entry("sandwich_lower", v - 0.5 * a, tol, "Phi_1(2t)/2 <= V(t)"))
    report.entries.append(_entry("sandwich_upper", b - v, tol, "V(t) <= Phi_1(t)"))

    # Phi_r(t) <= 2^{r(r+1)/2}/r! V(2^-r t)
    phis = {}
    for r in range(1, 5):
        pr = [phi_r_t(model, t, r) for t in ts]
        vr = [var_t(model, t / 2**r, check=False) for t in ts]
        phis[r] = np.array([x.value for x in pr])
        c = 2 ** (r * (r + 1) / 2) / math.factorial(r)
        slack = c * np.array([x.value for x in vr]) - phis[r]
        e = max(x.error_bound for x in pr) + c * max(x.error_bound for x in vr)
        report.entries.append(_entry(f"phi_r_bound_r{r}", slack, cfg.exact_tol + e, f"r = {r}"))

    bounded, wm = _is_bounded(model, cfg)
    v_bar = float(v[upper].max())
    report.summary["sup_v"] = v_bar
    if model.infinite and bounded:
        sup_phi = {r: float(phis[r][upper].max()) for r in phis}
        report.entries.append(
            _entry(
                "sup_chain_phi_r",
                [math.e * sup_phi[1] - max(sup_phi.values())],
                cfg.chain_tol,
                "sup_r Phi_r <= e sup Phi_1",
            )
        )
        report.entries.append(
            _entry("sup_chain_phi_1", [2 * v_bar - sup_phi[1]], cfg.chain_tol, "sup Phi_1 <= 2 sup V")
        )
        # increment form: (Phi(t) - Phi(t0)) / log(t/t0) <= sup Phi_1 <= 2 sup_{[t0/2, t/2]} V
        t0 = ts[upper][0]
        phi0 = phi_t(model, t0).value
        v_half = max(v_bar, var_t(model, t0 / 2, check=False).value)
        growth = np.array([(phi_t(model, t).value - phi0) / math.log(t / t0) for t in ts[upper][1:]])
        report.entries.append(
            _entry(
                "phi_log_growth",
                2 * v_half - growth,
                cfg.sup_tol,
                "(Phi(t) - Phi(t0)) / log(t/t0) <= 2 sup V",
            )
        )
        t_lo, t_hi = ts[upper][0], ts[upper][-1]
        w_bar = _delta_nu_sup(model, 1.0 / t_hi, 1.0 / t_lo)
        report.entries.append(
            _entry(
                "golden_bracket",
                [v_bar - GOLDEN * w_bar, w_bar - v_bar],
                cfg.sup_tol,
                f"(sqrt5-2) w <= v <= w with v = {v_bar:.6g}, w = {w_bar}",
            )
        )
        c_kq = lag_bound(wm)
        report.summary.update(sup_delta_nu=w_bar, lag_bound=c_kq)
        report.entries.append(
            _entry("lag_ceiling_bound", [c_kq - v_bar], cfg.sup_tol, f"sup V <= {c_kq}")
        )
    else:
        why = "finite support" if not model.infinite else "variance not bounded on the probe window"
        for name in ("sup_chain_phi_r", "sup_chain_phi_1", "phi_log_growth", "golden_bracket", "lag_ceiling_bound"):
            report.entries.append(AuditEntry(name, "n/a", detail=why))

    if model.infinite:
        floor = max(var_t(model, 1.0 / model.freq(k), check=False).value for k in range(1, 21))
        report.entries.append(
            _entry("variance_floor", [floor - VARIANCE_FLOOR], cfg.exact_tol, f"max_k V(1/p_k) = {floor:.6g}")
        )
    else:
        report.entries.append(AuditEntry("variance_floor", "n/a", detail="finite support"))

    # representation agreement
    gaps = np.array([r.extra["phi_difference_gap"] for r in V])
    tol_rep = 1e-11 * np.maximum(1.0, np.abs(v)) + 3 * vb
    report.entries.append(_entry("phi_difference_agreement", tol_rep - gaps, 0.0, "|V - (Phi(2t) - Phi(t))|"))
    sub = np.arange(0, ts.size, 5)
    slack = []
    for i in sub:
        alt = var_t_via_delta_nu(model, ts[i], max_breakpoints=4000)
        slack.append(tol_rep[i] + alt.error_bound - abs(alt.value - v[i]))
    report.entries.append(_entry("delta_nu_agreement", slack, 0.0, "|V - t int exp(-tx) delta_nu(x) dx|"))

    signs = []
    for t in (1.0, 10.0, 100.0):
        d1, d2, d3 = _fd_signs(model, t)
        signs.extend([d1, -d2, d3])
    report.entries.append(_entry("alternating_derivatives", signs, 0.0, "signs of Phi', Phi'', Phi''' are +, -, +"))
    return report
