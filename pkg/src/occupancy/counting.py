"""Functionals of the counting measure nu = sum_j delta_{p_j}.

All functions take the model's exposed frequencies, so a normalized model
gives the functionals of the normalized sequence.  Boundary convention:
``delta_nu(x)`` counts frequencies in the half-open interval (x/2, x].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import FiniteSupportError, FrequencyModel

__all__ = [
    "CountingProfile",
    "big_d",
    "delta_nu",
    "karlin_integral",
    "lagged_ratio",
    "nu_tilde_over_x",
    "profile",
    "tail_ratio",
]


def _positive(x: float) -> float:
    x = float(x)
    if not x > 0:
        raise ValueError(f"x must be positive, got {x}")
    return x


def delta_nu(model: FrequencyModel, x: float) -> int:
    """Number of frequencies in (x/2, x]."""
    x = _positive(x)
    return model.count_greater(x / 2) - model.count_greater(x)


def big_d(model: FrequencyModel, x: float) -> float:
    """D(x) = int_0^x delta_nu(y) dy = sum_j max(0, min(x, 2 p_j) - p_j).

    Computed from tail masses as 2 nu~[0, x/2] - nu~[0, x] + x delta_nu(x).
    """
    x = _positive(x)
    n_half = model.count_greater(x / 2)
    n_x = model.count_greater(x)
    m_half = model.tail_sum(n_half)
    # frequencies in (x/2, x] summed directly when few, to avoid cancellation
    k = n_half - n_x
    if 0 < k <= 4096 and n_half <= 1_000_000:
        js = np.arange(n_x + 1, n_half + 1)
        inside = float(np.sum(model.freqs(js)))
        return max(0.0, m_half + x * k - inside)
    m_x = model.tail_sum(n_x)
    return max(0.0, 2.0 * m_half - m_x + x * k)


def nu_tilde_over_x(model: FrequencyModel, x: float) -> float:
    """(sum of p_j <= x) / x."""
    x = _positive(x)
    return model.mass_leq(x) / x


def tail_ratio(model: FrequencyModel, j: int) -> float:
    """rho_j = (sum_{i>j} p_i) / p_j."""
    return model.tail_ratio(j)


def lagged_ratio(model: FrequencyModel, j: int, k: int) -> float:
    """p_{j+k} / p_j, formed in log space so deep indices do not underflow."""
    if k < 0:
        raise ValueError("lag must be non-negative")
    size = model.support_size
    if size is not None and j + k > size:
        raise FiniteSupportError(f"index {j + k} beyond the {size} frequencies")
    return math.exp(model.log_freq(j + k) - model.log_freq(j))


def karlin_integral(model: FrequencyModel, x: float) -> float:
    """x * int_x^inf y^-2 delta_nu(y) dy = x sum_{2 p_j > x} (1/max(x, p_j) - 1/(2 p_j))."""
    x = _positive(x)
    vals, mults = model.atoms_above(x / 2)
    if vals.size == 0:
        return 0.0
    terms = 1.0 / np.maximum(x, vals) - 0.5 / vals
    return float(x * np.dot(mults, np.maximum(terms, 0.0)))


@dataclass
class CountingProfile:
    """Counting-measure quantities tabulated on a grid of x."""

    x: np.ndarray
    delta_nu: np.ndarray
    big_d: np.ndarray
    d_over_x: np.ndarray
    nu_tilde_over_x: np.ndarray
    karlin: np.ndarray
    model: dict = field(default_factory=dict)

    def columns(self) -> dict[str, np.ndarray]:
        return {
            "x": self.x,
            "delta_nu": self.delta_nu,
            "D": self.big_d,
            "D_over_x": self.d_over_x,
            "nu_tilde_over_x": self.nu_tilde_over_x,
            "karlin": self.karlin,
        }


def profile(model: FrequencyModel, grid) -> CountingProfile:
    """Evaluate every counting functional on ``grid``."""
    xs = np.asarray(grid, dtype=float)
    if xs.ndim != 1 or np.any(~(xs > 0)):
        raise ValueError("grid must be a 1-d array of positive x")
    dn = np.array([delta_nu(model, x) for x in xs], dtype=float)
    d = np.array([big_d(model, x) for x in xs])
    nt = np.array([nu_tilde_over_x(model, x) for x in xs])
    kl = np.array([karlin_integral(model, x) for x in xs])
    return CountingProfile(xs, dn, d, d / xs, nt, kl, model.to_spec())
