"""Tabulate moments and counting functionals of a model over a grid.

Each quantity lives on one axis: t for the Poissonized moments, x for the
counting-measure functionals and the index j for ratios of frequencies.
A single scan may only mix quantities that share an axis.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import counting
from .models import FrequencyModel
from .moments_poisson import phi_r_t, phi_t, var_t

__all__ = ["AXES", "Grid", "ScanRequest", "ScanResult", "run_scan"]

AXES = {
    "phi": "t",
    "phi_r": "t",
    "var": "t",
    "var_check": "t",
    "delta_nu": "x",
    "d_over_x": "x",
    "karlin": "x",
    "rho": "j",
    "lag_ratios": "j",
}


@dataclass(frozen=True)
class Grid:
    """Evenly spaced points, geometrically for ``kind='log'``."""

    kind: str
    lo: float
    hi: float
    points: int

    def __post_init__(self):
        if self.kind not in ("log", "linear"):
            raise ValueError(f"grid kind must be 'log' or 'linear', got {self.kind!r}")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"grid needs lo < hi, got lo={self.lo}, hi={self.hi}")
        if self.points < 2:
            raise ValueError(f"grid needs at least 2 points, got {self.points}")
        if self.kind == "log" and self.lo <= 0:
            raise ValueError("log grid needs lo > 0")

    @classmethod
    def parse(cls, text: str) -> "Grid":
        """Parse ``KIND:LO:HI:N``, e.g. ``log:1:1e6:25``."""
        parts = text.split(":")
        if len(parts) != 4:
            raise ValueError(f"grid must look like log:LO:HI:N, got {text!r}")
        kind, lo, hi, n = parts
        try:
            return cls(kind, float(lo), float(hi), int(n))
        except ValueError as err:
            if "grid" in str(err):
                raise
            raise ValueError(f"grid: cannot parse numbers in {text!r}") from None

    def values(self) -> np.ndarray:
        if self.kind == "log":
            v = np.geomspace(self.lo, self.hi, self.points)
        else:
            v = np.linspace(self.lo, self.hi, self.points)
        v[0], v[-1] = self.lo, self.hi
        return v

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi, "points": self.points}


@dataclass
class ScanRequest:
    """What to tabulate.

    ``r`` lists the orders for ``phi_r`` (columns phi1, phi2, ...) and ``k``
    the lags for ``lag_ratios`` (columns lag1, lag2, ...).
    """

    quantities: Sequence[str]
    grid: Grid
    r: Sequence[int] = (1, 2)
    k: Sequence[int] = (1, 2)
    eps: float = 1e-12
    threads: int = 1

    def axis(self) -> str:
        if not self.quantities:
            raise ValueError("quantities: at least one is required")
        unknown = [q for q in self.quantities if q not in AXES]
        if unknown:
            raise ValueError(f"quantities: unknown {unknown}; choose from {sorted(AXES)}")
        if len(set(self.quantities)) != len(self.quantities):
            raise ValueError("quantities: duplicates are not allowed")
        axes = {AXES[q] for q in self.quantities}
        if len(axes) > 1:
            raise ValueError(f"quantities: cannot mix axes {sorted(axes)} in one scan")
        if "phi_r" in self.quantities and (not self.r or min(self.r) < 1):
            raise ValueError("r: phi_r needs positive orders")
        if "lag_ratios" in self.quantities and (not self.k or min(self.k) < 0):
            raise ValueError("k: lag_ratios needs non-negative lags")
        return axes.pop()

    def columns(self) -> list[str]:
        out = []
        for q in self.quantities:
            if q == "phi_r":
                out += [f"phi{r}" for r in self.r]
            elif q == "lag_ratios":
                out += [f"lag{k}" for k in self.k]
            else:
                out.append(q)
        return out


@dataclass
class ScanResult:
    axis: str
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def rows(self) -> int:
        return len(next(iter(self.columns.values())))


def _row(model: FrequencyModel, req: ScanRequest, v) -> list:
    out = []
    for q in req.quantities:
        if q == "phi":
            out.append(phi_t(model, v, req.eps).value)
        elif q == "phi_r":
            out += [phi_r_t(model, v, r, req.eps).value for r in req.r]
        elif q == "var":
            out.append(var_t(model, v, req.eps, check=False).value)
        elif q == "var_check":
            out.append(phi_t(model, 2 * v, req.eps).value - phi_t(model, v, req.eps).value)
        elif q == "delta_nu":
            out.append(counting.delta_nu(model, v))
        elif q == "d_over_x":
            out.append(counting.big_d(model, v) / v)
        elif q == "karlin":
            out.append(counting.karlin_integral(model, v))
        elif q == "rho":
            out.append(counting.tail_ratio(model, v))
        elif q == "lag_ratios":
            out += [counting.lagged_ratio(model, v, k) for k in req.k]
    return out


def run_scan(model: FrequencyModel, request: ScanRequest) -> ScanResult:
    """Evaluate every requested column at every grid point.

    Rows come back in grid order whatever ``request.threads`` is.
    """
    axis = request.axis()
    pts = request.grid.values()
    if axis == "j":
        if request.grid.lo < 1:
            raise ValueError("grid: index scans need lo >= 1")
        pts = np.rint(pts).astype(np.int64)
        grid = [int(j) for j in pts]
    else:
        if request.grid.lo <= 0:
            raise ValueError(f"grid: {axis} must be positive")
        grid = [float(v) for v in pts]
    threads = max(1, int(request.threads))
    if threads == 1:
        rows = [_row(model, request, v) for v in grid]
    else:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(lambda v: _row(model, request, v), grid))
    names = request.columns()
    table = np.array(rows, dtype=float).reshape(len(grid), len(names))
    cols = {axis: pts}
    for i, name in enumerate(names):
        cols[name] = table[:, i]
    return ScanResult(axis, cols)
