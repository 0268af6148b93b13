"""Monte Carlo simulation of the occupancy process.

Balls are drawn from an alias table over the first J boxes; the remaining
probability mass (at most ``eps``) is a "deep tail" outcome that sends the
ball to a fresh box of its own.  That overstates K_n by at most n * eps in
expectation.

Replicates are grouped in blocks of a size that depends only on the ball
count.  Each block draws from its own Philox stream keyed by (seed, block),
so summaries are bit-for-bit reproducible whatever the number of threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .models import FrequencyModel, NormalizationError

__all__ = [
    "AliasSampler",
    "OccupancySample",
    "SimulationSummary",
    "build_sampler",
    "sample_occupancy",
    "simulate_fixed_n",
    "simulate_poissonized",
]

_MAX_TABLE = 1 << 24
_AUTO_TABLE = 1 << 20
_EPS_TARGET = 1e-9
_EPS_CEILING = 1e-6
_DRAWS_PER_BLOCK = 1 << 22
_BINCOUNT_CELLS = 1 << 23


@dataclass(frozen=True)
class AliasSampler:
    """Vose alias table over boxes 0..J-1 plus a deep-tail outcome J."""

    prob: np.ndarray
    alias: np.ndarray
    n_boxes: int
    deep_tail: float
    mass: float = 1.0

    @property
    def n_outcomes(self) -> int:
        return self.prob.size

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Outcome indices; value ``n_boxes`` is the deep tail."""
        col = rng.integers(0, self.n_outcomes, size=size)
        u = rng.random(size)
        return np.where(u < self.prob[col], col, self.alias[col])


def _vose(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = p.size
    scaled = p * (m / p.sum())
    prob = np.ones(m)
    alias = np.arange(m)
    small = [i for i in range(m) if scaled[i] < 1.0]
    large = [i for i in range(m) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    # leftovers are 1 up to rounding
    for i in small + large:
        prob[i] = 1.0
    return prob, alias


def _sampler_size(model: FrequencyModel, eps: float, mass: float, cap: int | None = None) -> int:
    """Least J with tail_sum(J) <= eps * mass (or ``cap`` if that comes first)."""
    size = model.support_size
    target = eps * mass
    if size is not None and model.tail_sum(0) <= target:
        return 0
    lo, hi = 0, 1
    while model.tail_sum(hi) > target:
        lo, hi = hi, 2 * hi
        if size is not None and hi >= size:
            hi = size
            break
        if cap is not None and hi >= cap:
            return cap
        if hi > _MAX_TABLE:
            raise ValueError(f"more than {_MAX_TABLE} boxes needed for eps={eps:g}; raise eps")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if model.tail_sum(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def build_sampler(
    model: FrequencyModel, eps: float | None = None, *, allow_unnormalized: bool = False
) -> AliasSampler:
    """Alias sampler over the first J boxes with tail_sum(J) <= eps.

    Parameters
    ----------
    model : FrequencyModel
        Must be a probability model unless ``allow_unnormalized``; the
        frequencies are then divided by the mass.
    eps : float, optional
        Deep-tail probability budget, in (0, 1e-6].  By default the budget
        is 1e-9, relaxed for heavy tails so that the table stays below
        2**20 boxes, but never beyond 1e-6.
    """
    if not (model.is_probability() or allow_unnormalized):
        raise NormalizationError("the sampler needs a normalized model (set normalized=true)")
    mass = model.mass
    if eps is None:
        J = _sampler_size(model, _EPS_CEILING, mass)
        if J <= _AUTO_TABLE:
            J = max(J, min(_sampler_size(model, _EPS_TARGET, mass, _AUTO_TABLE), _AUTO_TABLE))
    else:
        if not (0 < eps <= _EPS_CEILING):
            raise ValueError(f"eps must lie in (0, 1e-6], got {eps}")
        J = _sampler_size(model, eps, mass)
    p = model.freqs(np.arange(1, J + 1)) / mass if J else np.empty(0)
    deep = max(model.tail_sum(J) / mass, 0.0) if model.infinite or J < (model.support_size or 0) else 0.0
    outcomes = np.append(p, deep) if deep > 0 else p
    if outcomes.size == 0:
        raise ValueError("model has no mass to sample from")
    prob, alias = _vose(outcomes)
    return AliasSampler(prob, alias, J, deep, mass)


@dataclass
class OccupancySample:
    """One allocation of balls to boxes.

    ``histogram[r]`` is the number of boxes holding exactly r balls,
    ``max_index`` the largest occupied box (1-based; deep-tail boxes are
    numbered after the table) and ``tie_first`` whether that box holds a
    single ball.
    """

    balls: int
    k_total: int
    histogram: dict[int, int]
    max_index: int
    tie_first: bool


def sample_occupancy(sampler: AliasSampler, n: int, rng: np.random.Generator) -> OccupancySample:
    """Throw n balls once and record the full occupancy pattern."""
    draws = sampler.sample(rng, n)
    deep = int(np.count_nonzero(draws == sampler.n_boxes))
    boxes, counts = np.unique(draws[draws < sampler.n_boxes], return_counts=True)
    hist: dict[int, int] = {}
    for c in counts.tolist():
        hist[c] = hist.get(c, 0) + 1
    if deep:
        hist[1] = hist.get(1, 0) + deep
    k = int(boxes.size) + deep
    if deep:
        max_index, tie = sampler.n_boxes + deep, True
    elif boxes.size:
        max_index, tie = int(boxes[-1]) + 1, bool(counts[-1] == 1)
    else:
        max_index, tie = 0, False
    return OccupancySample(int(n), k, hist, max_index, tie)


@dataclass
class SimulationSummary:
    """Replicate statistics of K (and K_r) with standard errors."""

    mode: str
    argument: float
    replicates: int
    seed: int
    mean_k: float
    var_k: float
    tie_prob: float
    histogram_mean: dict[int, float]
    se: dict[str, float]
    deep_tail: float
    k: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "argument": self.argument,
            "replicates": self.replicates,
            "seed": self.seed,
            "mean_k": self.mean_k,
            "var_k": self.var_k,
            "tie_prob": self.tie_prob,
            "se": dict(self.se),
            "histogram_mean": {str(r): v for r, v in self.histogram_mean.items()},
            "deep_tail": self.deep_tail,
        }


def _tally(sampler: AliasSampler, balls: np.ndarray, rng: np.random.Generator, r_max: int):
    """K, K_1..K_rmax and tie flags for one block of replicates."""
    rows = balls.size
    total = int(balls.sum())
    J = sampler.n_boxes
    draws = sampler.sample(rng, total)
    row_of = np.repeat(np.arange(rows), balls)
    is_deep = draws == J
    deep = np.bincount(row_of[is_deep], minlength=rows)
    keep = ~is_deep
    hist = np.zeros((rows, r_max), dtype=np.int64)
    if rows * J <= _BINCOUNT_CELLS:
        counts = np.bincount(row_of[keep] * J + draws[keep], minlength=rows * J).reshape(rows, J)
        k = np.count_nonzero(counts, axis=1)
        for r in range(1, r_max + 1):
            hist[:, r - 1] = np.count_nonzero(counts == r, axis=1)
        occupied = counts > 0
        last = J - 1 - np.argmax(occupied[:, ::-1], axis=1)
        tie = occupied.any(axis=1) & (counts[np.arange(rows), last] == 1)
    else:
        key = np.sort(row_of[keep].astype(np.int64) * J + draws[keep])
        if key.size:
            starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
            run = np.diff(np.r_[starts, key.size])
            run_row = key[starts] // J
        else:
            run = run_row = np.empty(0, dtype=np.int64)
        k = np.bincount(run_row, minlength=rows)
        for r in range(1, r_max + 1):
            hist[:, r - 1] = np.bincount(run_row[run == r], minlength=rows)
        tie = np.zeros(rows, dtype=bool)
        if run_row.size:
            is_last = np.r_[run_row[1:] != run_row[:-1], True]
            tie[run_row[is_last]] = run[is_last] == 1
    k = k + deep
    hist[:, 0] += deep
    tie = tie | (deep > 0)
    return k, hist, tie


def _jackknife_var_se(x: np.ndarray) -> float:
    n = x.size
    if n < 3:
        return float("nan")
    y = x - x.mean()
    s1, s2 = y.sum(), np.dot(y, y)
    loo = (s2 - y**2 - (s1 - y) ** 2 / (n - 1)) / (n - 2)
    return float(math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def _run(
    model: FrequencyModel,
    mode: str,
    argument: float,
    replicates: int,
    seed: int,
    eps: float,
    threads: int,
    r_max: int,
) -> SimulationSummary:
    if isinstance(replicates, bool) or int(replicates) != replicates or replicates < 2:
        raise ValueError(f"replicates must be an integer >= 2, got {replicates}")
    replicates = int(replicates)
    sampler = build_sampler(model, eps, allow_unnormalized=(mode == "poissonized"))
    expected = argument if mode == "fixed_n" else argument * sampler.mass
    block = int(max(1, min(4096, _DRAWS_PER_BLOCK // max(1.0, expected))))
    n_blocks = -(-replicates // block)

    def work(b: int):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, b])))
        rows = min(block, replicates - b * block)
        if mode == "fixed_n":
            balls = np.full(rows, int(argument), dtype=np.int64)
        else:
            balls = rng.poisson(argument * sampler.mass, size=rows)
        return _tally(sampler, balls, rng, r_max)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(n_blocks)))
    else:
        parts = [work(b) for b in range(n_blocks)]
    k = np.concatenate([p[0] for p in parts]).astype(float)
    hist = np.concatenate([p[1] for p in parts]).astype(float)
    tie = np.concatenate([p[2] for p in parts])
    mean_k = float(k.mean())
    var_k = float(np.var(k, ddof=1))
    tie_prob = float(tie.mean())
    root = math.sqrt(replicates)
    se = {
        "mean_k": float(np.std(k, ddof=1) / root),
        "var_k": _jackknife_var_se(k),
        "tie_prob": math.sqrt(tie_prob * (1 - tie_prob) / replicates),
    }
    for r in range(1, r_max + 1):
        se[f"k{r}"] = float(np.std(hist[:, r - 1], ddof=1) / root)
    hmean = {r: float(hist[:, r - 1].mean()) for r in range(1, r_max + 1)}
    return SimulationSummary(
        mode, argument, replicates, int(seed), mean_k, var_k, tie_prob, hmean, se, sampler.deep_tail, k
    )


def simulate_fixed_n(
    model: FrequencyModel,
    n: int,
    replicates: int,
    seed: int = 0,
    eps: float | None = None,
    threads: int = 1,
    r_max: int = 5,
) -> SimulationSummary:
    """Throw n balls ``replicates`` times and summarize K_n."""
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    return _run(model, "fixed_n", int(n), replicates, seed, eps, threads, r_max)


def simulate_poissonized(
    model: FrequencyModel,
    t: float,
    replicates: int,
    seed: int = 0,
    eps: float | None = None,
    threads: int = 1,
    r_max: int = 5,
) -> SimulationSummary:
    """Throw Poisson(t * mass) balls per replicate and summarize K(t).

    For an unnormalized model the frequencies act as Poisson rates, which is
    the same as a normalized model run for time t * mass.
    """
    t = float(t)
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    return _run(model, "poissonized", t, replicates, seed, eps, threads, r_max)
