"""Frequency sequences (p_j) for the infinite occupancy scheme.

Each model stores the raw family frequencies together with their total mass.
A model flagged ``normalized`` exposes ``p_j / mass`` through every public
accessor; family hooks (``_raw_*``) always work with the raw values.

Index access (``freq``, ``tail_sum``, ``tail_ratio``) is 1-based and accepts
arbitrary Python integers, so block models with astronomically many boxes can
still be addressed.  Measure access (``count_greater``, ``mass_leq``,
``atoms_above``, ``kernel_sum``) treats the model as the counting measure
``sum_j delta_{p_j}`` and works on (value, multiplicity) atoms.
"""

from __future__ import annotations

import math
import threading
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, ClassVar, Sequence

import numpy as np
from scipy import integrate, special

__all__ = [
    "MAX_ATOMS",
    "DoublingBlocks",
    "Explicit",
    "FiniteSupportError",
    "FrequencyModel",
    "Geometric",
    "Kernel",
    "Merged",
    "ModelError",
    "NegativeBinomial",
    "NormalizationError",
    "PoissonWeights",
    "PowerLaw",
    "QuasiBinomial",
    "RepeatedGeometric",
    "TruncationCertificate",
    "catalog",
    "freq",
    "mass_and_normalizer",
    "merge",
    "tail_sum",
    "truncation_index",
]

MAX_ATOMS = 1 << 22
# below this threshold plain float comparison loses meaning (subnormals)
_TINY = 1e-290
_MONOTONE_PROBE = 10_000
_CHUNK = 256


class ModelError(ValueError):
    """Malformed or unsupported frequency model."""


class NormalizationError(ValueError):
    """A fixed-n quantity was requested for a model whose mass is not 1."""


class FiniteSupportError(ValueError):
    """The operation needs infinitely many frequencies."""


@dataclass(frozen=True)
class TruncationCertificate:
    """Where an infinite series was cut and what the cut can cost.

    ``tail_bound`` is a true upper bound on the neglected frequency mass;
    ``purpose_bound`` bounds the induced error in the reported quantity.
    """

    index: int
    tail_bound: float
    purpose_bound: float

    def to_dict(self) -> dict:
        return {
            "index": int(self.index),
            "tail_bound": float(self.tail_bound),
            "purpose_bound": float(self.purpose_bound),
        }

    def combine(self, other: "TruncationCertificate") -> "TruncationCertificate":
        return TruncationCertificate(
            max(self.index, other.index),
            self.tail_bound + other.tail_bound,
            self.purpose_bound + other.purpose_bound,
        )


ZERO_CERT = TruncationCertificate(0, 0.0, 0.0)


@dataclass(frozen=True)
class Kernel:
    """A per-frequency summand ``f(p)`` for series ``sum_j f(p_j)``.

    Contract: ``0 <= f(p) <= lip * p`` for all ``p >= 0`` and ``f'(0) = slope``.
    ``scale`` rescales the argument, which is how composite models evaluate a
    kernel on their parts' frequencies.
    """

    func: Callable[[np.ndarray], np.ndarray]
    lip: float
    slope: float
    scale: float = 1.0

    def __call__(self, p):
        return self.func(self.scale * np.asarray(p, dtype=float))

    def scaled(self, s: float) -> "Kernel":
        if s == 1.0:
            return self
        return Kernel(self.func, self.lip * s, self.slope * s, self.scale * s)


def _check_index(j) -> int:
    if isinstance(j, (bool, np.bool_)) or not isinstance(j, (int, np.integer)):
        raise TypeError(f"index must be an integer, got {j!r}")
    j = int(j)
    if j < 1:
        raise ValueError(f"index must be >= 1, got {j}")
    return j


class FrequencyModel(ABC):
    """Non-increasing positive frequencies with a finite total mass."""

    kind: ClassVar[str]

    def __init__(self, *, normalized: bool = False) -> None:
        self.normalized = bool(normalized)

    # -- family hooks (raw units) ------------------------------------------

    @abstractmethod
    def _raw_mass(self) -> float:
        """Total mass of the raw family frequencies."""

    @abstractmethod
    def _raw_log_freq(self, j: int) -> float:
        """log p_j for a 1-based Python int index."""

    def _raw_freq(self, j: int) -> float:
        return math.exp(self._raw_log_freq(j))

    def _raw_log_freqs(self, js: np.ndarray) -> np.ndarray:
        return np.array([self._raw_log_freq(int(j)) for j in js], dtype=float)

    @abstractmethod
    def _raw_tail(self, j: int) -> tuple[float, float]:
        """(sum_{i>j} p_i, absolute error bound) for j >= 1."""

    @abstractmethod
    def tail_ratio(self, j: int) -> float:
        """rho_j = sum_{i>j} p_i / p_j (scale free)."""

    def _raw_atoms_above(self, y: float) -> tuple[np.ndarray, np.ndarray]:
        n = self.count_greater(y * self.scale)
        if n > MAX_ATOMS:
            raise ModelError(f"{n} atoms above {y:g}; exceeds MAX_ATOMS")
        if n == 0:
            return np.empty(0), np.empty(0)
        js = np.arange(1, n + 1)
        return np.exp(self._raw_log_freqs(js)), np.ones(n)

    @property
    def support_size(self) -> int | None:
        """Number of frequencies, or None when the support is infinite."""
        return None

    @property
    def infinite(self) -> bool:
        return self.support_size is None

    @abstractmethod
    def params(self) -> dict:
        """Family parameters keyed by their spec-file field names."""

    # -- scale ---------------------------------------------------------------

    @cached_property
    def raw_mass(self) -> float:
        return float(self._raw_mass())

    @property
    def mass(self) -> float:
        """Mass of the frequencies as exposed (1 for normalized models)."""
        return 1.0 if self.normalized else self.raw_mass

    @cached_property
    def scale(self) -> float:
        if not self.normalized:
            return 1.0
        if self.raw_mass <= 0:
            raise ModelError("cannot normalize a zero-mass model")
        return 1.0 / self.raw_mass

    @cached_property
    def _log_scale(self) -> float:
        return math.log(self.scale)

    def is_probability(self, tol: float = 1e-12) -> bool:
        return self.normalized or abs(self.raw_mass - 1.0) <= tol

    # -- index access ----------------------------------------------------------

    def _in_support(self, j: int) -> None:
        size = self.support_size
        if size is not None and j > size:
            raise IndexError(f"index {j} beyond the {size} frequencies of this model")

    def freq(self, j: int) -> float:
        j = _check_index(j)
        self._in_support(j)
        return self.scale * self._raw_freq(j)

    def log_freq(self, j: int) -> float:
        j = _check_index(j)
        self._in_support(j)
        return self._raw_log_freq(j) + self._log_scale

    def log_freqs(self, js) -> np.ndarray:
        """Vectorized log p_j; indices beyond a finite support give -inf."""
        js = np.asarray(js, dtype=np.int64)
        out = np.full(js.shape, -np.inf)
        size = self.support_size
        ok = js >= 1 if size is None else (js >= 1) & (js <= size)
        if np.any(js < 1):
            raise ValueError("indices must be >= 1")
        if ok.any():
            out[ok] = self._raw_log_freqs(js[ok]) + self._log_scale
        return out

    def freqs(self, js) -> np.ndarray:
        return np.exp(self.log_freqs(js))

    def tail_sum_bounded(self, j: int) -> tuple[float, float]:
        """(sum_{i>j} p_i, absolute error bound); j = 0 gives the total mass."""
        j = int(j)
        if j < 0:
            raise ValueError("tail index must be >= 0")
        if j == 0:
            return self.mass, 4e-16 * self.mass
        size = self.support_size
        if size is not None and j >= size:
            return 0.0, 0.0
        v, e = self._raw_tail(j)
        return self.scale * v, self.scale * e

    def tail_sum(self, j: int) -> float:
        return self.tail_sum_bounded(j)[0]

    def tail_upper(self, j: int) -> float:
        """A certified upper bound on sum_{i>j} p_i."""
        v, e = self.tail_sum_bounded(j)
        return v + e

    # -- measure access --------------------------------------------------------

    def _gt(self, j: int, y: float, outer: float) -> bool:
        if y >= _TINY:
            return outer * self.freq(j) > y
        return math.log(outer) + self.log_freq(j) > math.log(y)

    def count_greater(self, y: float, outer: float = 1.0) -> int:
        """#{j : outer * p_j > y}, by exponential bracketing then bisection."""
        if not y > 0:
            raise ValueError(f"threshold must be positive, got {y}")
        size = self.support_size
        if size == 0 or not self._gt(1, y, outer):
            return 0
        lo, hi = 1, 2
        while True:
            if size is not None and hi >= size:
                if self._gt(size, y, outer):
                    return size
                hi = size
                break
            if not self._gt(hi, y, outer):
                break
            lo, hi = hi, 2 * hi
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self._gt(mid, y, outer):
                lo = mid
            else:
                hi = mid
        return lo

    def first_index_leq(self, y: float) -> int:
        """Smallest j with p_j <= y (1-based)."""
        return self.count_greater(y) + 1

    def mass_leq(self, y: float, outer: float = 1.0) -> float:
        """sum of p_j over j with outer * p_j <= y."""
        return self.tail_sum(self.count_greater(y, outer))

    def atoms_above(self, y: float) -> tuple[np.ndarray, np.ndarray]:
        """Distinct-value atoms (values, multiplicities) with value > y."""
        vals, mults = self._raw_atoms_above(y / self.scale)
        return vals * self.scale, mults

    def kernel_sum(
        self, kernel: Kernel, eps: float = 1e-12, max_atoms: int = MAX_ATOMS
    ) -> tuple[float, TruncationCertificate]:
        """sum_j kernel(p_j) with a certified truncation bound."""
        if kernel.lip == 0:
            return 0.0, ZERO_CERT
        y = self._kernel_cut(kernel.lip, eps, max_atoms)
        vals, mults = self.atoms_above(y)
        head = float(np.dot(mults, kernel(vals))) if vals.size else 0.0
        rem = self.mass_leq(y)
        cert = TruncationCertificate(self.count_greater(y), rem, kernel.lip * rem)
        return head + kernel.slope * rem, cert

    def _kernel_cut(self, lip: float, eps: float, max_atoms: int) -> float:
        """A threshold y with lip * mass_leq(y) <= eps, if reachable."""
        top = self.freq(1) if self.support_size != 0 else 1.0
        y = min(eps / lip, top)
        while lip * self.mass_leq(y) > eps:
            if self.count_greater(y / 2) > max_atoms:
                break
            y /= 2
        return y

    # -- misc ----------------------------------------------------------------

    def to_spec(self) -> dict:
        spec = {"kind": self.kind}
        spec.update(self.params())
        spec["normalized"] = self.normalized
        return spec

    def renormalized(self, normalized: bool) -> "FrequencyModel":
        from .specfile import model_from_spec

        spec = self.to_spec()
        spec["normalized"] = normalized
        return model_from_spec(spec)

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        norm = ", normalized=True" if self.normalized else ""
        return f"{type(self).__name__}({args}{norm})"


def _ratio(name: str, value, lo_open: bool = True) -> float:
    value = float(value)
    if not (0.0 < value < 1.0) if lo_open else not (0.0 <= value < 1.0):
        interval = "(0, 1)" if lo_open else "[0, 1)"
        raise ModelError(f"field '{name}': ratio must lie in {interval}, got {value}")
    return value


def _positive(name: str, value) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise ModelError(f"field '{name}': must be a positive real, got {value}")
    return value


class Geometric(FrequencyModel):
    """p_j = q**j."""

    kind = "geometric"

    def __init__(self, q: float, *, normalized: bool = False) -> None:
        super().__init__(normalized=normalized)
        self.q = _ratio("q", q)
        self._logq = math.log(self.q)

    def params(self) -> dict:
        return {"q": self.q}

    def _raw_mass(self) -> float:
        return self.q / (1.0 - self.q)

    def _raw_freq(self, j: int) -> float:
        return self.q**j

    def _raw_log_freq(self, j: int) -> float:
        return j * self._logq

    def _raw_log_freqs(self, js):
        return js * self._logq

    def _raw_tail(self, j):
        v = self.q ** (j + 1) / (1.0 - self.q)
        return v, 4e-16 * v

    def tail_ratio(self, j):
        _check_index(j)
        return self.q / (1.0 - self.q)


class PowerLaw(FrequencyModel):
    """p_j = j**(-alpha), optionally cut off after ``cutoff`` indices.

    Tails use the Hurwitz zeta function; the integral bracket
    ``int_{j+1}^inf <= tail <= int_j^inf`` serves as the certified bound.
    Kernel sums over the infinite tail use Euler-Maclaurin with the integral
    evaluated by quadrature.
    """

    kind = "power_law"
    _EM_CUT = 1e-3

    def __init__(self, alpha: float, cutoff: int | None = None, *, normalized: bool = False):
        super().__init__(normalized=normalized)
        alpha = float(alpha)
        if not alpha > 1:
            raise ModelError(f"field 'alpha': mass diverges unless alpha > 1, got {alpha}")
        self.alpha = alpha
        if cutoff is not None:
            if int(cutoff) != cutoff or cutoff < 1:
                raise ModelError(f"field 'cutoff': must be a positive integer, got {cutoff}")
            cutoff = int(cutoff)
        self.cutoff = cutoff

    def params(self) -> dict:
        out = {"alpha": self.alpha}
        if self.cutoff is not None:
            out["cutoff"] = self.cutoff
        return out

    @property
    def support_size(self):
        return self.cutoff

    def _zeta_tail(self, j: int) -> float:
        # sum_{i > j} i^-alpha
        return float(special.zeta(self.alpha, j + 1))

    def _raw_mass(self):
        total = float(special.zeta(self.alpha, 1))
        if self.cutoff is not None:
            total -= self._zeta_tail(self.cutoff)
        return total

    def _raw_freq(self, j):
        return float(j) ** -self.alpha

    def _raw_log_freq(self, j):
        return -self.alpha * math.log(j)

    def _raw_log_freqs(self, js):
        return -self.alpha * np.log(js.astype(float))

    def tail_bracket(self, j: int) -> tuple[float, float]:
        """Integral bounds (lower, upper) on sum_{i>j} i^-alpha (no cutoff)."""
        b = self.alpha - 1.0
        lower = (j + 1.0) ** -b / b
        upper = float(j) ** -b / b if j >= 1 else math.inf
        return lower, upper

    def _raw_tail(self, j):
        v = self._zeta_tail(j)
        if self.cutoff is not None:
            v -= self._zeta_tail(self.cutoff)
            return v, 1e-15 * self.raw_mass
        lower, upper = self.tail_bracket(j)
        return v, min(upper - v, 1e-13 * v + 1e-300)

    def tail_upper(self, j):
        if self.cutoff is None and j >= 1:
            return self.scale * self.tail_bracket(j)[1]
        return super().tail_upper(j)

    def tail_ratio(self, j):
        j = _check_index(j)
        return self._raw_tail(j)[0] * float(j) ** self.alpha

    def kernel_sum(self, kernel, eps=1e-12, max_atoms=MAX_ATOMS):
        if kernel.lip == 0:
            return 0.0, ZERO_CERT
        s, a = self.scale, self.alpha
        if self.cutoff is not None and self.cutoff <= max_atoms:
            total = 0.0
            for start in range(1, self.cutoff + 1, 1 << 20):
                js = np.arange(start, min(self.cutoff, start + (1 << 20) - 1) + 1, dtype=float)
                total += float(np.sum(kernel(s * js**-a)))
            return total, TruncationCertificate(self.cutoff, 0.0, 0.0)
        J = math.ceil((kernel.lip * s / self._EM_CUT) ** (1.0 / a))
        J = int(min(max(J, 4096), max_atoms))
        head = 0.0
        for start in range(1, J + 1, 1 << 20):
            js = np.arange(start, min(J, start + (1 << 20) - 1) + 1, dtype=float)
            head += float(np.sum(kernel(s * js**-a)))

        def g(u):
            return kernel(s * np.asarray(u, dtype=float) ** -a)

        b = a - 1.0

        def h(w):
            u = J * w ** (-1.0 / b)
            return float(g(u)) * J / b * w ** (-a / b)

        with warnings.catch_warnings():
            # quad's own error estimate goes into the bound below
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            integral, qerr = integrate.quad(
                h, 0.0, 1.0, epsabs=1e-16 * max(abs(head), 1.0), epsrel=1e-13, limit=400
            )
        gJ = float(g(J))
        dg = float(g(J + 1.0) - g(J - 1.0)) / 2.0
        tail = integral - gJ / 2.0 - dg / 12.0
        rem = s * self._zeta_tail(J)
        if self.cutoff is not None:
            rem -= s * self._zeta_tail(self.cutoff)
        bound = abs(dg) / 12.0 + 1e-12 * abs(integral) + qerr
        return head + tail, TruncationCertificate(J, rem, bound)


class _RatioFamily(FrequencyModel):
    """Families with p_{j+1}/p_j = ratio(j) monotone in j, tending to ``limit``."""

    limit: float

    @abstractmethod
    def _log_coef(self, js: np.ndarray) -> np.ndarray:
        """Unnormalized log p_j, vectorized over float indices."""

    @abstractmethod
    def _ratio(self, j: float) -> float:
        """p_{j+1} / p_j."""

    def _validate_monotone(self) -> None:
        logs = self._log_coef(np.arange(1, _MONOTONE_PROBE + 2, dtype=float))
        rise = np.diff(logs)
        tol = 1e-12 * np.maximum(1.0, np.abs(logs[1:]))
        if np.any(rise > tol):
            j = int(np.argmax(rise > tol)) + 1
            raise ModelError(
                f"{self.kind} with {self.params()} is not non-increasing "
                f"(p_{j + 1} > p_{j}); choose parameters with p_2 <= p_1"
            )

    def _raw_log_freq(self, j):
        return float(self._log_coef(np.array([float(j)]))[0])

    def _raw_log_freqs(self, js):
        return self._log_coef(js.astype(float))

    def tail_ratio(self, j):
        return self._rel_tail(_check_index(j))[0]

    def _rel_tail(self, j: int) -> tuple[float, float]:
        """(sum_{i>j} p_i / p_j, error bound), summed in ratio space."""
        base = self._raw_log_freq(j)
        total = 0.0
        m = j + 1
        while True:
            js = np.arange(m, m + _CHUNK, dtype=float)
            terms = np.exp(self._log_coef(js) - base)
            total += float(np.sum(terms))
            last = m + _CHUNK - 1
            r = max(self._ratio(last), self.limit)
            rem = float(terms[-1]) * r / (1.0 - r)
            if rem <= 1e-17 * total or terms[-1] == 0.0:
                return total + rem, rem + 1e-16 * total
            m += _CHUNK

    def _raw_tail(self, j):
        rho, err = self._rel_tail(j)
        p = self._raw_freq(j)
        return p * rho, p * err


class PoissonWeights(_RatioFamily):
    """p_j = lambda**j / j!  (j >= 1)."""

    kind = "poisson_weights"
    limit = 0.0

    def __init__(self, lam: float, *, normalized: bool = False) -> None:
        super().__init__(normalized=normalized)
        self.lam = _positive("lambda", lam)
        self._validate_monotone()

    def params(self):
        return {"lambda": self.lam}

    def _raw_mass(self):
        return math.expm1(self.lam)

    def _log_coef(self, js):
        return js * math.log(self.lam) - special.gammaln(js + 1.0)

    def _ratio(self, j):
        return self.lam / (j + 1.0)


class NegativeBinomial(_RatioFamily):
    """p_j = binom(lambda + j - 1, j) q**j  (j >= 1)."""

    kind = "negative_binomial"

    def __init__(self, lam: float, q: float, *, normalized: bool = False) -> None:
        super().__init__(normalized=normalized)
        self.lam = _positive("lambda", lam)
        self.q = _ratio("q", q)
        self.limit = self.q
        self._validate_monotone()

    def params(self):
        return {"lambda": self.lam, "q": self.q}

    def _raw_mass(self):
        return math.expm1(-self.lam * math.log1p(-self.q))

    def _log_coef(self, js):
        return (
            special.gammaln(self.lam + js)
            - special.gammaln(self.lam)
            - special.gammaln(js + 1.0)
            + js * math.log(self.q)
        )

    def _ratio(self, j):
        return self.q * (self.lam + j) / (j + 1.0)


class QuasiBinomial(_RatioFamily):
    """p_j = prod_{i<j} (lambda + i q) / j!  (j >= 1); q = 0 is Poisson."""

    kind = "quasi_binomial"

    def __init__(self, lam: float, q: float, *, normalized: bool = False) -> None:
        super().__init__(normalized=normalized)
        self.lam = _positive("lambda", lam)
        self.q = _ratio("q", q, lo_open=False)
        self.limit = self.q
        self._validate_monotone()

    def params(self):
        return {"lambda": self.lam, "q": self.q}

    def _raw_mass(self):
        if self.q == 0:
            return math.expm1(self.lam)
        return math.expm1(-(self.lam / self.q) * math.log1p(-self.q))

    def _log_coef(self, js):
        if self.q == 0:
            return js * math.log(self.lam) - special.gammaln(js + 1.0)
        a = self.lam / self.q
        return (
            js * math.log(self.q)
            + special.gammaln(a + js)
            - special.gammaln(a)
            - special.gammaln(js + 1.0)
        )

    def _ratio(self, j):
        return (self.lam + j * self.q) / (j + 1.0)


class _BlockModel(FrequencyModel):
    """Models made of blocks b = b0, b0+1, ... of equal frequencies.

    Subclasses give the block value, its size and the first block; the index
    bookkeeping below uses exact Python integers.
    """

    first_block: ClassVar[int]

    @abstractmethod
    def _block_log_value(self, b: int) -> float: ...

    @abstractmethod
    def _block_size(self, b: int) -> int: ...

    @abstractmethod
    def _mass_from_block(self, b: int) -> float:
        """Total raw mass of blocks b, b+1, ..."""

    @abstractmethod
    def _mass_from_block_rel(self, b: int, ref_block: int) -> float:
        """Mass of blocks b, b+1, ... divided by the value of ``ref_block``."""

    def _block_value(self, b: int) -> float:
        return math.exp(self._block_log_value(b))

    def _locate(self, j: int) -> tuple[int, int]:
        """(block, number of boxes of that block at indices > j)."""
        b = self.first_block
        end = self._block_size(b)
        while end < j:
            b += 1
            end += self._block_size(b)
        return b, end - j

    def _raw_freq(self, j):
        return self._block_value(self._locate(j)[0])

    def _raw_log_freq(self, j):
        return self._block_log_value(self._locate(j)[0])

    def _raw_log_freqs(self, js):
        out = np.empty(js.shape)
        order = np.argsort(js)
        b = self.first_block
        end = self._block_size(b)
        for pos in order:
            j = int(js[pos])
            while end < j:
                b += 1
                end += self._block_size(b)
            out[pos] = self._block_log_value(b)
        return out

    def _raw_mass(self):
        return self._mass_from_block(self.first_block)

    def _raw_tail(self, j):
        b, rest = self._locate(j)
        v = rest * self._block_value(b) + self._mass_from_block(b + 1)
        return v, 1e-15 * v

    def tail_ratio(self, j):
        b, rest = self._locate(_check_index(j))
        return rest + self._mass_from_block_rel(b + 1, b)

    def count_greater(self, y, outer=1.0):
        if not y > 0:
            raise ValueError(f"threshold must be positive, got {y}")
        total = 0
        b = self.first_block
        while self._block_gt(b, y, outer):
            total += self._block_size(b)
            b += 1
        return total

    def _block_gt(self, b: int, y: float, outer: float) -> bool:
        if y >= _TINY:
            return outer * (self.scale * self._block_value(b)) > y
        return math.log(outer) + self._log_scale + self._block_log_value(b) > math.log(y)

    def _raw_atoms_above(self, y):
        vals, mults = [], []
        b = self.first_block
        while True:
            v = self._block_value(b)
            if not v > y or v == 0.0:
                break
            vals.append(v)
            mults.append(float(self._block_size(b)))
            b += 1
        return np.array(vals), np.array(mults)


class RepeatedGeometric(_BlockModel):
    """The value q**i repeated i times, i = 1, 2, ..."""

    kind = "repeated_geometric"
    first_block = 1

    def __init__(self, q: float, *, normalized: bool = False) -> None:
        super().__init__(normalized=normalized)
        self.q = _ratio("q", q)
        self._logq = math.log(self.q)

    def params(self):
        return {"q": self.q}

    def _block_log_value(self, b):
        return b * self._logq

    def _block_value(self, b):
        return self.q**b

    def _block_size(self, b):
        return b

    def _locate(self, j):
        # block i holds indices i(i-1)/2 + 1 .. i(i+1)/2
        i = (math.isqrt(8 * j + 1) - 1) // 2
        if i * (i + 1) // 2 < j:
            i += 1
        return i, i * (i + 1) // 2 - j

    def _raw_log_freqs(self, js):
        js = js.astype(float)
        i = np.ceil((np.sqrt(8.0 * js + 1.0) - 1.0) / 2.0 - 1e-9)
        return i * self._logq

    def _sum_from(self, m: int) -> float:
        # sum_{l >= m} l q^l
        q = self.q
        return q**m * (m * (1.0 - q) + q) / (1.0 - q) ** 2

    def _mass_from_block(self, b):
        return self._sum_from(b)

    def _mass_from_block_rel(self, b, ref_block):
        q = self.q
        return q ** (b - ref_block) * (b * (1.0 - q) + q) / (1.0 - q) ** 2


class DoublingBlocks(_BlockModel):
    """Block i (i >= 0) holds k_i boxes of frequency 1/k_{i+1}, k_i = 2**(2**i).

    Values are formed as exp2(-2**(i+1)) so k_i never has to exist as a
    float; ``levels`` blocks are materialized when enumerating atoms and the
    rest of the measure (mass sum_{i >= levels} 1/k_i) is carried as a
    certified remainder.
    """

    kind = "doubling_blocks"
    first_block = 0
    _MAX_LEVELS = 9

    def __init__(self, levels: int = 7, *, normalized: bool = False) -> None:
        super().__init__(normalized=normalized)
        if int(levels) != levels or not 1 <= levels <= self._MAX_LEVELS:
            raise ModelError(
                f"field 'levels': must be an integer in [1, {self._MAX_LEVELS}], got {levels}"
            )
        self.levels = int(levels)

    def params(self):
        return {"levels": self.levels}

    @staticmethod
    def k(i: int) -> int:
        return 1 << (1 << i)

    def _block_log_value(self, b):
        return -float(1 << (b + 1)) * math.log(2.0)

    def _block_value(self, b):
        return math.ldexp(1.0, -(1 << (b + 1))) if b < 10 else 0.0

    def _block_size(self, b):
        return 1 << (1 << b)

    def _mass_from_block(self, b):
        # block i carries k_i / k_{i+1} = 1/k_i = 2^-(2^i)
        total = 0.0
        i = b
        while i < 11:
            total += math.ldexp(1.0, -(1 << i))
            i += 1
        return total

    def _mass_from_block_rel(self, b, ref_block):
        ref = 1 << (ref_block + 1)
        total = 0.0
        for i in range(b, b + 8):
            e = ref - (1 << i)
            if e < -1100:
                break
            total += math.ldexp(1.0, e)
        return total

    def _raw_atoms_above(self, y):
        vals, mults = super()._raw_atoms_above(y)
        return vals[: self.levels], mults[: self.levels]

    def mass_leq(self, y, outer=1.0):
        # Blocks past the last materialized level count as remainder even when
        # above y, so atoms_above(y) plus mass_leq(y) always covers the measure.
        # The two agree with the exact measure whenever y >= 2**-(2**(levels+1)).
        n_above = 0
        while n_above < self.levels and self._block_gt(n_above, y, outer):
            n_above += 1
        return self.scale * self._mass_from_block(n_above)


class Explicit(FrequencyModel):
    """A finite non-increasing list, optionally followed by another model."""

    kind = "explicit"

    def __init__(
        self,
        values: Sequence[float],
        tail: FrequencyModel | None = None,
        *,
        normalized: bool = False,
    ) -> None:
        super().__init__(normalized=normalized)
        vals = np.asarray([float(v) for v in values], dtype=float)
        if vals.size and (np.any(~np.isfinite(vals)) or np.any(vals <= 0)):
            raise ModelError("field 'values': frequencies must be positive and finite")
        if vals.size > 1 and np.any(np.diff(vals) > 0):
            raise ModelError("field 'values': frequencies must be non-increasing")
        if tail is not None and not isinstance(tail, FrequencyModel):
            raise ModelError("field 'tail': must be a frequency model")
        if tail is not None and vals.size and tail.freq(1) > vals[-1]:
            raise ModelError("field 'tail': its first frequency exceeds the last listed value")
        self.values = vals
        self.tail = tail
        self._neg = (-vals).tolist()
        # suffix sums, exact enough via fsum on the reversed list
        self._suffix = np.array(
            [math.fsum(vals[i:]) for i in range(vals.size + 1)], dtype=float
        )

    def params(self):
        out = {"values": self.values.tolist()}
        if self.tail is not None:
            out["tail"] = self.tail.to_spec()
        return out

    @property
    def support_size(self):
        return self.values.size if self.tail is None else None

    def _raw_mass(self):
        return float(self._suffix[0]) + (self.tail.mass if self.tail is not None else 0.0)

    def _raw_freq(self, j):
        n = self.values.size
        return float(self.values[j - 1]) if j <= n else self.tail.freq(j - n)

    def _raw_log_freq(self, j):
        n = self.values.size
        return math.log(self.values[j - 1]) if j <= n else self.tail.log_freq(j - n)

    def _raw_log_freqs(self, js):
        n = self.values.size
        out = np.empty(js.shape)
        head = js <= n
        out[head] = np.log(self.values[js[head] - 1])
        if (~head).any():
            out[~head] = self.tail.log_freqs(js[~head] - n)
        return out

    def freq(self, j):
        j = _check_index(j)
        n = self.values.size
        if j > n and self.tail is None:
            raise IndexError(f"index {j} beyond the {n} frequencies of this explicit model")
        if j > n:
            return self.scale * self.tail.freq(j - n)
        return self.scale * float(self.values[j - 1])

    def _raw_tail(self, j):
        n = self.values.size
        if j >= n:
            v, e = self.tail.tail_sum_bounded(j - n)
            return v, e
        extra = self.tail.mass if self.tail is not None else 0.0
        v = float(self._suffix[j]) + extra
        return v, 1e-16 * v

    def tail_ratio(self, j):
        j = _check_index(j)
        n = self.values.size
        if j > n:
            if self.tail is None:
                raise IndexError(f"index {j} beyond the {n} frequencies")
            return self.tail.tail_ratio(j - n)
        return self._raw_tail(j)[0] / float(self.values[j - 1])

    def count_greater(self, y, outer=1.0):
        if not y > 0:
            raise ValueError(f"threshold must be positive, got {y}")
        s = outer * self.scale
        n = int(np.count_nonzero(outer * (self.scale * self.values) > y))
        if self.tail is not None and n == self.values.size:
            n += self.tail.count_greater(y, s)
        return n

    def _raw_atoms_above(self, y):
        vals = self.values[self.values > y]
        uniq, counts = np.unique(vals, return_counts=True)
        uniq, counts = uniq[::-1], counts[::-1].astype(float)
        if self.tail is not None:
            tv, tm = self.tail.atoms_above(y)
            uniq = np.concatenate([uniq, tv])
            counts = np.concatenate([counts, tm])
        return uniq, counts

    def kernel_sum(self, kernel, eps=1e-12, max_atoms=MAX_ATOMS):
        k = kernel.scaled(self.scale)
        head = float(np.sum(k(self.values))) if self.values.size else 0.0
        if self.tail is None:
            return head, TruncationCertificate(self.values.size, 0.0, 0.0)
        tv, cert = self.tail.kernel_sum(k, eps, max_atoms)
        return head + tv, TruncationCertificate(
            cert.index + self.values.size, self.scale * cert.tail_bound, cert.purpose_bound
        )


class Merged(FrequencyModel):
    """Sorted union of several models' frequency multisets.

    The merged raw frequencies are the parts' exposed (possibly normalized)
    frequencies.  Index access materializes the sorted prefix lazily with a
    k-way merge and caches it under a lock; measure access is additive over
    the parts and never touches the prefix.
    """

    kind = "merged"

    def __init__(self, parts: Sequence[FrequencyModel], *, normalized: bool = False) -> None:
        super().__init__(normalized=normalized)
        parts = list(parts)
        if not parts:
            raise ModelError("field 'parts': at least one part is required")
        for p in parts:
            if not isinstance(p, FrequencyModel):
                raise ModelError("field 'parts': every part must be a frequency model")
        self.parts = parts
        self._lock = threading.Lock()
        self._prefix_n = 0
        self._p_logs = np.empty(0)
        self._p_part = np.empty(0, dtype=np.int64)
        self._p_local = np.empty(0, dtype=np.int64)

    def params(self):
        return {"parts": [p.to_spec() for p in self.parts]}

    @cached_property
    def support_size(self):
        sizes = [p.support_size for p in self.parts]
        return None if any(s is None for s in sizes) else sum(sizes)

    def _raw_mass(self):
        return math.fsum(p.mass for p in self.parts)

    def _prefix(self, n: int):
        """Return (logs, part ids, local indices) covering at least n entries."""
        with self._lock:
            if self._prefix_n < n:
                m = max(n, 2 * self._prefix_n, 64)
                logs, ids, local = [], [], []
                for pid, part in enumerate(self.parts):
                    size = part.support_size
                    k = m if size is None else min(m, size)
                    if k <= 0:
                        continue
                    js = np.arange(1, k + 1, dtype=np.int64)
                    logs.append(part.log_freqs(js))
                    ids.append(np.full(k, pid, dtype=np.int64))
                    local.append(js)
                logs_a = np.concatenate(logs)
                ids_a = np.concatenate(ids)
                local_a = np.concatenate(local)
                order = np.lexsort((ids_a, -logs_a))[:m]
                self._p_logs = logs_a[order]
                self._p_part = ids_a[order]
                self._p_local = local_a[order]
                self._prefix_n = m
            return self._p_logs, self._p_part, self._p_local

    def _entry(self, j: int) -> tuple[FrequencyModel, int]:
        if j > MAX_ATOMS:
            raise ModelError(f"merged index {j} exceeds the materialization limit")
        _, part, local = self._prefix(j)
        return self.parts[int(part[j - 1])], int(local[j - 1])

    def _raw_freq(self, j):
        part, local = self._entry(j)
        return part.freq(local)

    def _raw_log_freq(self, j):
        part, local = self._entry(j)
        return part.log_freq(local)

    def _raw_log_freqs(self, js):
        if js.size == 0:
            return np.empty(0)
        logs, _, _ = self._prefix(int(js.max()))
        return logs[js - 1]

    def _part_counts(self, j: int) -> np.ndarray:
        _, part, _ = self._prefix(j)
        return np.bincount(part[:j], minlength=len(self.parts))

    def _raw_tail(self, j):
        counts = self._part_counts(j)
        v = e = 0.0
        for part, c in zip(self.parts, counts):
            pv, pe = part.tail_sum_bounded(int(c))
            v += pv
            e += pe
        return v, e

    def tail_ratio(self, j):
        j = _check_index(j)
        counts = self._part_counts(j)
        log_pj = self._raw_log_freq(j)
        total = 0.0
        for part, c in zip(self.parts, counts):
            c = int(c)
            size = part.support_size
            if size is not None and c >= size:
                continue
            if c == 0:
                log_tail = math.log(part.mass)
            else:
                log_tail = part.log_freq(c) + math.log(part.tail_ratio(c))
            total += math.exp(log_tail - log_pj)
        return total

    def count_greater(self, y, outer=1.0):
        if not y > 0:
            raise ValueError(f"threshold must be positive, got {y}")
        return sum(p.count_greater(y, outer * self.scale) for p in self.parts)

    def mass_leq(self, y, outer=1.0):
        s = outer * self.scale
        return self.scale * math.fsum(p.mass_leq(y, s) for p in self.parts)

    def _raw_atoms_above(self, y):
        vals, mults = [], []
        for p in self.parts:
            v, m = p.atoms_above(y)
            vals.append(v)
            mults.append(m)
        v = np.concatenate(vals)
        m = np.concatenate(mults)
        order = np.argsort(-v, kind="stable")
        return v[order], m[order]

    def kernel_sum(self, kernel, eps=1e-12, max_atoms=MAX_ATOMS):
        k = kernel.scaled(self.scale)
        total = 0.0
        cert = ZERO_CERT
        share = eps / len(self.parts)
        for p in self.parts:
            v, c = p.kernel_sum(k, share, max_atoms)
            total += v
            cert = cert.combine(
                TruncationCertificate(c.index, self.scale * c.tail_bound, c.purpose_bound)
            )
        return total, cert


# -- module-level operations ---------------------------------------------------


def freq(model: FrequencyModel, j: int) -> float:
    """p_j of ``model`` (normalized value when the model is normalized)."""
    return model.freq(j)


def tail_sum(model: FrequencyModel, j: int) -> float:
    """sum_{i>j} p_i; j = 0 returns the total mass."""
    return model.tail_sum(j)


def mass_and_normalizer(model: FrequencyModel) -> tuple[float, float]:
    """(raw family mass, normalizing constant c = 1/mass)."""
    m = model.raw_mass
    if not m > 0:
        raise ModelError("model has zero mass")
    return m, 1.0 / m


def merge(parts: Sequence[FrequencyModel], *, normalized: bool = False) -> Merged:
    """Merge frequency sequences into one non-increasing sequence.

    Zero-mass parts (an empty explicit list) are dropped.
    """
    parts = list(parts)
    if not parts:
        raise ModelError("merge needs at least one part")
    kept = [p for p in parts if not (p.support_size == 0)]
    if not kept:
        raise ModelError("merge needs at least one part with positive mass")
    return Merged(kept, normalized=normalized)


def truncation_index(model: FrequencyModel, t: float, eps: float) -> TruncationCertificate:
    """Least J with t * (certified tail after J) <= eps."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return TruncationCertificate(0, model.tail_upper(0), 0.0)

    def ok(J: int) -> bool:
        return t * model.tail_upper(J) <= eps

    if ok(0):
        return TruncationCertificate(0, model.tail_upper(0), t * model.tail_upper(0))
    size = model.support_size
    lo, hi = 0, 1
    while not ok(hi):
        lo = hi
        hi *= 2
        if size is not None and hi >= size:
            hi = size
            break
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    tb = model.tail_upper(hi)
    return TruncationCertificate(hi, tb, t * tb)


def catalog(normalized: bool = True) -> dict[str, FrequencyModel]:
    """Representative instances of every infinite-support family."""
    return {
        "geometric_1/2": Geometric(0.5, normalized=normalized),
        "geometric_2^-1/2": Geometric(2 ** -0.5, normalized=normalized),
        "geometric_0.7": Geometric(0.7, normalized=normalized),
        "geometric_0.6": Geometric(0.6, normalized=normalized),
        "poisson_1": PoissonWeights(1.0, normalized=normalized),
        "poisson_2": PoissonWeights(2.0, normalized=normalized),
        "negative_binomial_2_0.5": NegativeBinomial(2.0, 0.5, normalized=normalized),
        "quasi_binomial_1_0.3": QuasiBinomial(1.0, 0.3, normalized=normalized),
        "power_law_2": PowerLaw(2.0, normalized=normalized),
        "repeated_geometric_0.6": RepeatedGeometric(0.6, normalized=normalized),
        "repeated_geometric_0.3": RepeatedGeometric(0.3, normalized=normalized),
        "doubling_blocks": DoublingBlocks(normalized=normalized),
        "merged_3x_geometric_1/2": Merged([Geometric(0.5)] * 3, normalized=normalized),
    }
