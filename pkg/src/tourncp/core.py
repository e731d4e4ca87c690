"""Set algebra, conformal quantiles and the tournament counting rule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Products such as (1 - alpha) * (n + 1) are snapped to the nearest integer
# when within this distance, so 0.9 * 10 is treated as exactly 9.
_LEVEL_SNAP = 1e-9


@dataclass(frozen=True)
class Interval:
    """Closed interval ``[lo, hi]``; either end may be infinite."""

    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval endpoints must not be NaN")
        if self.lo > self.hi:
            raise ValueError(f"interval has lo > hi: [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def __contains__(self, y: float) -> bool:
        return self.lo <= y <= self.hi


class PredictionSet:
    """A finite union of disjoint, non-touching closed intervals.

    Build instances through :func:`normalize_union` (or the ``empty`` /
    ``everything`` constructors); the constructor assumes its input is
    already normalized.
    """

    __slots__ = ("intervals",)

    def __init__(self, intervals: Sequence[Interval] = ()):
        self.intervals: tuple[Interval, ...] = tuple(intervals)

    @classmethod
    def empty(cls) -> "PredictionSet":
        return cls(())

    @classmethod
    def everything(cls) -> "PredictionSet":
        return cls((Interval(-math.inf, math.inf),))

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def is_everything(self) -> bool:
        return (len(self.intervals) == 1 and self.intervals[0].lo == -math.inf
                and self.intervals[0].hi == math.inf)

    @property
    def length(self) -> float:
        return float(sum(iv.length for iv in self.intervals))

    @property
    def bounds(self) -> tuple[float, float] | None:
        if not self.intervals:
            return None
        return self.intervals[0].lo, self.intervals[-1].hi

    def contains(self, y: float) -> bool:
        # intervals are sorted and disjoint: bisect on the left endpoints
        los = [iv.lo for iv in self.intervals]
        k = int(np.searchsorted(los, y, side="right")) - 1
        return k >= 0 and y <= self.intervals[k].hi

    __contains__ = contains

    def contains_many(self, ys) -> np.ndarray:
        ys = np.asarray(ys, dtype=float)
        if not self.intervals:
            return np.zeros(ys.shape, dtype=bool)
        los = np.array([iv.lo for iv in self.intervals])
        his = np.array([iv.hi for iv in self.intervals])
        k = np.searchsorted(los, ys, side="right") - 1
        ok = k >= 0
        out = np.zeros(ys.shape, dtype=bool)
        out[ok] = ys[ok] <= his[k[ok]]
        return out

    def issubset(self, other: "PredictionSet", tol: float = 0.0) -> bool:
        """True when every interval of ``self`` lies inside one of ``other``'s."""
        for iv in self.intervals:
            if not any(o.lo - tol <= iv.lo and iv.hi <= o.hi + tol
                       for o in other.intervals):
                return False
        return True

    def __eq__(self, other):
        if not isinstance(other, PredictionSet):
            return NotImplemented
        return self.intervals == other.intervals

    def __hash__(self):
        return hash(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self):
        return len(self.intervals)

    def __repr__(self):
        body = " U ".join(f"[{iv.lo:.6g}, {iv.hi:.6g}]" for iv in self.intervals)
        return f"PredictionSet({body or 'empty'})"


def normalize_union(raw: Iterable[Interval | tuple[float, float]]) -> PredictionSet:
    """Sort, merge overlapping or touching intervals, and return a PredictionSet."""
    items = []
    for iv in raw:
        if not isinstance(iv, Interval):
            iv = Interval(float(iv[0]), float(iv[1]))
        items.append(iv)
    if not items:
        return PredictionSet.empty()
    items.sort(key=lambda iv: (iv.lo, iv.hi))
    merged = [items[0]]
    for iv in items[1:]:
        last = merged[-1]
        if iv.lo <= last.hi:
            if iv.hi > last.hi:
                merged[-1] = Interval(last.lo, iv.hi)
        else:
            merged.append(iv)
    return PredictionSet(merged)


@dataclass(frozen=True)
class ConformalConfig:
    """Miscoverage level and training size."""

    alpha: float
    n: int

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")

    @property
    def tau(self) -> float:
        return (1.0 - self.alpha) * (1.0 + 1.0 / self.n)

    @property
    def rank(self) -> int:
        """Order-statistic index ``ceil(tau * n)`` used by the quantile."""
        return math.ceil(_snap((1.0 - self.alpha) * (self.n + 1)))

    @property
    def win_threshold(self) -> float:
        """A candidate is rejected once its win count reaches this value."""
        return _snap((1.0 - self.alpha) * (self.n + 1))


def _snap(v: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) < _LEVEL_SNAP else v


def conformal_quantile(values, config: ConformalConfig) -> float:
    """The ``ceil((1-alpha)(n+1))``-th smallest value, or ``+inf`` past the end."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty score list")
    if v.size != config.n:
        raise ValueError(f"config.n={config.n} but {v.size} values were given")
    k = config.rank
    if k > v.size:
        return math.inf
    if k < 1:
        return -math.inf
    return float(np.partition(v, k - 1)[k - 1])


def tournament_accepts(test_scores_exceed, config: ConformalConfig) -> bool:
    """Accept a candidate iff it wins fewer than ``(1-alpha)(n+1)`` games."""
    wins = int(np.count_nonzero(np.asarray(test_scores_exceed, dtype=bool)))
    return wins < config.win_threshold


class TournamentMatrix:
    """Square 0/1 matrix with a zero diagonal and ``A[i,j] + A[j,i] <= 1``."""

    def __init__(self, entries):
        a = np.asarray(entries)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("tournament matrix must be square")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("tournament matrix entries must be 0 or 1")
        a = a.astype(np.int8)
        if np.any(np.diag(a) != 0):
            raise ValueError("tournament matrix must have a zero diagonal")
        if np.any(a + a.T > 1):
            raise ValueError("A[i,j] and A[j,i] cannot both be 1")
        self.entries = a

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_scores(cls, scores) -> "TournamentMatrix":
        """``A[i,j] = 1{S[i,j] > S[j,i]}`` for a score matrix ``S``."""
        s = np.array(scores, dtype=float)
        np.fill_diagonal(s, np.inf)
        a = (s > s.T).astype(np.int8)
        np.fill_diagonal(a, 0)
        return cls(a)


def tournament_bound_check(A: TournamentMatrix | np.ndarray, alpha: float) -> int:
    """Number of rows winning at least ``(1-alpha)`` of the ``size`` games.

    For any valid tournament this never exceeds ``2 * alpha * size``.
    """
    if not isinstance(A, TournamentMatrix):
        A = TournamentMatrix(A)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    m = A.size
    thr = _snap((1.0 - alpha) * m)
    return int(np.count_nonzero(A.entries.sum(axis=1) >= thr))
