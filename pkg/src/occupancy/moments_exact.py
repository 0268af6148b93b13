"""Exact fixed-n moments of the occupancy counts.

With n balls, K_n is the number of occupied boxes and K_{n,r} the number of
boxes holding exactly r balls.  Every result carries the truncation
certificate of the series it came from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .models import (
    FrequencyModel,
    Kernel,
    NormalizationError,
    TruncationCertificate,
    ZERO_CERT,
)

__all__ = ["MomentReport", "phi_n", "phi_n_r", "var_n", "VAR_METHODS"]

VAR_METHODS = ("exact", "hwang-janson")
_EPS = 1e-12


@dataclass
class MomentReport:
    """A computed moment with its provenance.

    Attributes
    ----------
    quantity : str
        Name such as ``"phi_n"`` or ``"var_t"``.
    argument : float
        The n or t the quantity was evaluated at.
    value : float
    certificate : TruncationCertificate
        Truncation point and error bound of the underlying series.
    method : str
    extra : dict
        Method-specific diagnostics (e.g. cross-check discrepancies).
    """

    quantity: str
    argument: float
    value: float
    certificate: TruncationCertificate
    method: str = "series"
    extra: dict = field(default_factory=dict)

    @property
    def error_bound(self) -> float:
        return self.certificate.purpose_bound

    def __float__(self) -> float:
        return float(self.value)

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "argument": float(self.argument),
            "value": float(self.value),
            "method": self.method,
            "certificate": self.certificate.to_dict(),
            "extra": {k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in self.extra.items()},
        }


def _require_probability(model: FrequencyModel) -> None:
    if not model.is_probability():
        raise NormalizationError(
            f"fixed-n moments need frequencies summing to 1; this model has mass "
            f"{model.mass:.6g} (set normalized=true)"
        )


def _check_n(n) -> int:
    if isinstance(n, bool) or int(n) != n or n < 0:
        raise ValueError(f"n must be a non-negative integer, got {n!r}")
    return int(n)


def occupied_kernel(n: int) -> Kernel:
    """f(p) = 1 - (1-p)^n."""

    def f(p):
        with np.errstate(divide="ignore"):
            return -np.expm1(n * np.log1p(-p))

    return Kernel(f, float(n), float(n))


def exactly_r_kernel(n: int, r: int) -> Kernel:
    """f(p) = C(n, r) p^r (1-p)^(n-r)."""
    lcomb = special.gammaln(n + 1.0) - special.gammaln(r + 1.0) - special.gammaln(n - r + 1.0)

    def f(p):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            rest = (n - r) * np.log1p(-p) if n > r else np.zeros_like(p)
            out = np.exp(lcomb + r * np.log(p) + rest)
        return np.where(p > 0, out, 0.0)

    slope = float(n) if r == 1 else 0.0
    return Kernel(f, n / r, slope)


def phi_n(model: FrequencyModel, n: int, eps: float = _EPS) -> MomentReport:
    """E K_n = sum_j (1 - (1 - p_j)^n)."""
    _require_probability(model)
    n = _check_n(n)
    if n == 0:
        return MomentReport("phi_n", 0, 0.0, ZERO_CERT)
    value, cert = model.kernel_sum(occupied_kernel(n), eps)
    return MomentReport("phi_n", n, value, cert)


def phi_n_r(model: FrequencyModel, n: int, r: int, eps: float = _EPS) -> MomentReport:
    """E K_{n,r} = sum_j C(n, r) p_j^r (1 - p_j)^(n - r)."""
    _require_probability(model)
    n = _check_n(n)
    if isinstance(r, bool) or int(r) != r or r < 1:
        raise ValueError(f"r must be a positive integer, got {r!r}")
    r = int(r)
    if r > n:
        return MomentReport("phi_n_r", n, 0.0, ZERO_CERT, extra={"r": r})
    value, cert = model.kernel_sum(exactly_r_kernel(n, r), eps)
    return MomentReport("phi_n_r", n, value, cert, extra={"r": r})


def _pair_term(n: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(1 - a - b)^n - (1 - a)^n (1 - b)^n, without cancellation.

    Uses 1 - a - b = (1 - a)(1 - b)(1 - ab / ((1 - a)(1 - b))).
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        la = np.log1p(-a)
        lb = np.log1p(-b)
        ratio = a * b / ((1.0 - a) * (1.0 - b))
        out = np.exp(n * (la + lb)) * np.expm1(n * np.log1p(-np.minimum(ratio, 1.0)))
    # a + b >= 1 only happens with the two largest frequencies; fall back to direct
    bad = ~np.isfinite(out) | (a + b >= 1.0)
    if np.any(bad):
        aa = np.broadcast_to(a, out.shape)[bad]
        bb = np.broadcast_to(b, out.shape)[bad]
        out[bad] = np.maximum(1.0 - aa - bb, 0.0) ** n - (1.0 - aa) ** n * (1.0 - bb) ** n
    return out


def _cross_sum(n: int, vals: np.ndarray, mults: np.ndarray, block: int = 512) -> float:
    """sum over ordered pairs i != j of the pair term, on (value, multiplicity) atoms."""
    total = 0.0
    m = vals.size
    for start in range(0, m, block):
        a = vals[start : start + block, None]
        ma = mults[start : start + block, None]
        g = _pair_term(n, a, vals[None, :])
        w = ma * mults[None, :]
        # same atom: m(m-1) ordered pairs instead of m^2
        idx = np.arange(start, min(start + block, m))
        w[idx - start, idx] = mults[idx] * (mults[idx] - 1.0)
        total += float(np.sum(g * w))
    return total


def var_n(
    model: FrequencyModel,
    n: int,
    method: str = "exact",
    max_atoms: int = 4000,
    eps: float = 1e-10,
) -> MomentReport:
    """Var K_n.

    ``exact`` sums the double series
    Phi_{2n} - Phi_n + sum_{i != j} [(1 - p_i - p_j)^n - (1 - p_i)^n (1 - p_j)^n]
    over the atoms above a cut and corrects for the rest to first order.
    ``hwang-janson`` returns Phi_{2n} - Phi_n, whose distance to the exact
    variance is at most Phi_{n,1}^2 / n.
    """
    _require_probability(model)
    n = _check_n(n)
    if method not in VAR_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {VAR_METHODS}")
    if n == 0:
        return MomentReport("var_n", 0, 0.0, ZERO_CERT, method)
    p2n = phi_n(model, 2 * n)
    pn = phi_n(model, n)
    diag = p2n.value - pn.value
    diag_cert = p2n.certificate.combine(pn.certificate)
    if method == "hwang-janson":
        p1 = phi_n_r(model, n, 1)
        bound = p1.value**2 / n + diag_cert.purpose_bound
        cert = TruncationCertificate(diag_cert.index, diag_cert.tail_bound, bound)
        return MomentReport("var_n", n, diag, cert, method, {"phi_n_1": p1.value})

    y = min(eps / (2.0 * n), model.freq(1))
    while True:
        rem = model.mass_leq(y)
        if 2.0 * n * rem <= eps or model.count_greater(y / 2) > max_atoms:
            break
        y /= 2
    vals, mults = model.atoms_above(y)
    if mults.sum() > 0 and vals.size > max_atoms:
        vals, mults = vals[:max_atoms], mults[:max_atoms]
        rem = model.mass - float(np.dot(vals, mults))
    cross = _cross_sum(n, vals, mults)
    # pairs with one member in the remainder: -n p_i (1 - p_i)^(n-1) p_j to first order
    with np.errstate(divide="ignore", invalid="ignore"):
        lead = n * vals * np.exp((n - 1) * np.log1p(-vals))
    # a box of probability 1 makes (n - 1) * log(0) undefined when n = 1
    lead = np.where(vals < 1.0, lead, float(n == 1))
    correction = -2.0 * rem * float(np.dot(mults, lead))
    value = diag + cross + correction
    head_mass = float(np.dot(mults, vals))
    bound = diag_cert.purpose_bound + 2.0 * n * rem * max(head_mass + rem, 0.0)
    cert = TruncationCertificate(int(mults.sum()), rem, bound)
    extra = {"diagonal": diag, "cross": cross, "tail_correction": correction}
    return MomentReport("var_n", n, value, cert, method, extra)
