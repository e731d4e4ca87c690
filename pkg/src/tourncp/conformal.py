"""Prediction-set engines for the approximate and tournament-corrected methods.

Both variants are written in count form: a candidate ``y`` is rejected once
the test point wins at least ``(1 - alpha)(n + 1)`` of its ``n`` games, where
game ``i`` is won when the test score exceeds the ``i``-th comparison score
by more than ``2 * epsilon``. For the approximate variant every game uses the
same fitted model; for the tournament variant game ``i`` treats both the
test point and training point ``i`` approximately.

For the deletion, one-step and rounding families each score is ``|A y + B|``
for coefficients that depend only on the data (within one rounding cell), so
the win count is piecewise constant between finitely many breakpoints and the
set is computed exactly. The Bayesian family is evaluated pointwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .bayes import (BayesConfig, conjugate_posterior, log_likelihood, loo_posterior_draws,
                    sample_posterior, shared_rejection_loo_draws)
from .core import ConformalConfig, Interval, PredictionSet, conformal_quantile, normalize_union
from .models import PINV_RTOL, DataPoint, Dataset, fit_ols_pinv, loo_coefficients
from .scores import ScoreFamily, build_rounding_grid
from .seeding import int_seed

VARIANTS = ("approximate", "tournament")
EVALUATORS = ("exact-breakpoints", "grid-cells", "adaptive-search")
DEFAULT_EVALUATOR = {
    "deletion": "exact-breakpoints",
    "one-step": "exact-breakpoints",
    "rounding": "grid-cells",
    "bayes-ppd": "adaptive-search",
}

# relative gap below which two breakpoints are treated as one
BREAKPOINT_DEDUP_RTOL = 1e-12


@dataclass(frozen=True)
class EngineSpec:
    family: ScoreFamily
    variant: str = "tournament"
    inflation_epsilon: float = 0.0
    evaluator: Optional[str] = None
    alpha: float = 0.1
    seed: int = 0  # randomized (Bayesian) scores only

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.inflation_epsilon < 0:
            raise ValueError("inflation_epsilon must be nonnegative")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        kind = self.family.kind
        if kind not in DEFAULT_EVALUATOR:
            raise ValueError(f"family {kind!r} has no prediction-set engine")
        ev = self.evaluator or DEFAULT_EVALUATOR[kind]
        if ev not in EVALUATORS:
            raise ValueError(f"unknown evaluator {ev!r}")
        if ev != DEFAULT_EVALUATOR[kind]:
            raise ValueError(f"evaluator {ev!r} is incompatible with the {kind} family")
        object.__setattr__(self, "evaluator", ev)

    @property
    def margin(self) -> float:
        return 2.0 * self.inflation_epsilon

    def config(self, n: int) -> ConformalConfig:
        return ConformalConfig(self.alpha, n)


@dataclass(frozen=True)
class Breakpoint:
    location: float
    source: int  # game index, -1 for a cell boundary


@dataclass
class BayesSetEstimate:
    """Pointwise membership plus the adaptive-search interval estimate."""

    membership: Callable = field(repr=False)
    length: float
    endpoints: Optional[Interval]

    def contains(self, y: float) -> bool:
        return bool(self.membership(np.array([y]))[0])

    __contains__ = contains


def affine_breakpoints(A, B, C, D, margin: float = 0.0, dedupe: bool = True) -> np.ndarray:
    """Sorted points where ``|A y + B| - |C y + D| - margin`` can change sign.

    Roots of each of the four sign patterns plus the kinks of both absolute
    values; zero denominators are skipped.
    """
    A, B, C, D = (np.asarray(v, dtype=float) for v in (A, B, C, D))
    parts = []
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            den = s1 * A - s2 * C
            num = margin - s1 * B + s2 * D
            ok = den != 0
            parts.append(num[ok] / den[ok])
    for lin, off in ((A, B), (C, D)):
        ok = lin != 0
        parts.append(-off[ok] / lin[ok])
    pts = np.concatenate(parts) if parts else np.zeros(0)
    pts = np.sort(pts[np.isfinite(pts)])
    return dedupe_sorted(pts) if dedupe else pts


def dedupe_sorted(pts: np.ndarray, rtol: float = BREAKPOINT_DEDUP_RTOL) -> np.ndarray:
    if pts.size < 2:
        return pts
    gap = np.diff(pts)
    keep = np.concatenate([[True], gap > rtol * np.maximum(1.0, np.abs(pts[1:]))])
    return pts[keep]


class AffineGames:
    """Games with test score ``|A y + B|`` and comparison score ``|C y + D|``.

    The real line is split at ``cuts`` into segments ``(cut[s-1], cut[s]]``;
    each segment has its own coefficient arrays of length ``n``.
    """

    def __init__(self, cuts, coeffs, margin: float, config: ConformalConfig):
        self.cuts = np.asarray(cuts, dtype=float)
        self.coeffs = [tuple(np.ascontiguousarray(c, dtype=float) for c in cf) for cf in coeffs]
        if len(self.coeffs) != self.cuts.size + 1:
            raise ValueError("need one coefficient set per segment")
        self.margin = float(margin)
        self.config = config

    def _segment_wins(self, s: int, ys) -> np.ndarray:
        A, B, C, D = self.coeffs[s]
        return kernels.count_affine_wins(A, B, C, D, np.asarray(ys, dtype=float), self.margin)

    def wins(self, ys) -> np.ndarray:
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        seg = np.searchsorted(self.cuts, ys, side="left")
        out = np.empty(ys.size, dtype=np.int64)
        for s in np.unique(seg):
            idx = seg == s
            out[idx] = self._segment_wins(int(s), ys[idx])
        return out

    def accepts(self, ys) -> np.ndarray:
        return self.wins(ys) < self.config.win_threshold

    def segment_bounds(self, s: int) -> tuple[float, float]:
        lo = -math.inf if s == 0 else float(self.cuts[s - 1])
        hi = math.inf if s == self.cuts.size else float(self.cuts[s])
        return lo, hi

    def breakpoints(self) -> list[Breakpoint]:
        out = [Breakpoint(float(c), -1) for c in self.cuts]
        for s, (A, B, C, D) in enumerate(self.coeffs):
            lo, hi = self.segment_bounds(s)
            for i in range(A.size):
                sl = slice(i, i + 1)
                for b in affine_breakpoints(A[sl], B[sl], C[sl], D[sl], self.margin):
                    if lo < b < hi:
                        out.append(Breakpoint(float(b), i))
        out.sort(key=lambda bp: bp.location)
        return out

    def breakpoint_locations(self) -> np.ndarray:
        pts = [self.cuts]
        for s, (A, B, C, D) in enumerate(self.coeffs):
            lo, hi = self.segment_bounds(s)
            b = affine_breakpoints(A, B, C, D, self.margin)
            pts.append(b[(b > lo) & (b < hi)])
        return dedupe_sorted(np.sort(np.concatenate(pts)))

    def prediction_set(self) -> PredictionSet:
        thr = self.config.win_threshold
        pieces: list[Interval] = []
        for s, (A, B, C, D) in enumerate(self.coeffs):
            lo, hi = self.segment_bounds(s)
            b = affine_breakpoints(A, B, C, D, self.margin)
            inner = b[(b > lo) & (b < hi)]
            nodes = list(inner)
            if math.isfinite(lo):
                nodes.insert(0, lo)
            if math.isfinite(hi):
                nodes.append(hi)
            if not nodes:
                # no breakpoints on an unbounded segment: constant count
                if self._segment_wins(s, [0.0])[0] < thr:
                    pieces.append(Interval(lo, hi))
                continue
            nodes = np.asarray(nodes)
            probes = [0.5 * (nodes[:-1] + nodes[1:])]
            cells = [(float(a), float(c)) for a, c in zip(nodes[:-1], nodes[1:])]
            if not math.isfinite(lo):
                probes.insert(0, [nodes[0] - _exterior_step(nodes[0])])
                cells.insert(0, (-math.inf, float(nodes[0])))
            if not math.isfinite(hi):
                probes.append([nodes[-1] + _exterior_step(nodes[-1])])
                cells.append((float(nodes[-1]), math.inf))
            probe = np.concatenate([np.asarray(p, dtype=float) for p in probes])
            ok = self._segment_wins(s, probe) < thr
            pieces.extend(Interval(a, c) for (a, c), good in zip(cells, ok) if good)
            # isolated accepted points (e.g. a zero-width set at a breakpoint);
            # probe every raw root since deduplication may drop the accepted one
            raw = affine_breakpoints(A, B, C, D, self.margin, dedupe=False)
            raw = raw[(raw > lo) & (raw < hi)]
            own = raw if not math.isfinite(hi) else np.append(raw, hi)
            if own.size:
                at = self._segment_wins(s, own) < thr
                pieces.extend(Interval(float(x), float(x)) for x in own[at])
        return normalize_union(pieces)


def _exterior_step(x: float) -> float:
    return max(1.0, 1e-3 * abs(x))


class LikelihoodGames:
    """Monte Carlo PPD games; see :func:`tourncp.kernels.count_lse_wins`."""

    def __init__(self, mu, loglik, sigma_lik: float, weights, margin: float,
                 config: ConformalConfig, train_y):
        self.mu = np.ascontiguousarray(mu, dtype=float)
        self.loglik = np.ascontiguousarray(loglik, dtype=float)
        self.sigma_lik = float(sigma_lik)
        self.weights = tuple(float(w) for w in weights)
        self.margin = float(margin)
        self.config = config
        self.train_y = np.asarray(train_y, dtype=float)

    def wins(self, ys) -> np.ndarray:
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        return kernels.count_lse_wins(self.mu, self.loglik, ys, self.sigma_lik,
                                      *self.weights, self.margin)

    def accepts(self, ys) -> np.ndarray:
        return self.wins(ys) < self.config.win_threshold

    def estimate(self) -> BayesSetEstimate:
        length, ends = adaptive_length(self.accepts, self.train_y)
        return BayesSetEstimate(self.accepts, length, ends)


def _hat_matrix(X: np.ndarray) -> np.ndarray:
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    r = s > PINV_RTOL * s[0] if s.size else s.astype(bool)
    Ur = U[:, r]
    return Ur @ Ur.T


def _loo_betas(data: Dataset, cache: Optional[dict]) -> np.ndarray:
    if cache is not None and "loo_betas" in cache:
        return cache["loo_betas"]
    betas = loo_coefficients(data)
    if cache is not None:
        cache["loo_betas"] = betas
    return betas


def _deletion_games(spec, data, x_new, cache):
    n = data.n
    cfg = spec.config(n)
    one = np.ones(n)
    if spec.variant == "approximate":
        beta = fit_ols_pinv(data).beta
        d = float(x_new @ beta)
        e = data.y - data.X @ beta
        coeffs = (one, -d * one, np.zeros(n), e)
    else:
        betas = _loo_betas(data, cache)
        d = betas @ x_new
        r = data.y - np.einsum("ij,ij->i", data.X, betas)
        coeffs = (one, -d, np.zeros(n), r)
    return AffineGames([], [coeffs], spec.margin, cfg)


def _onestep_games(spec, data, x_new, cache):
    n = data.n
    cfg = spec.config(n)
    step = spec.family.onestep.eta / (n + 1)
    one = np.ones(n)
    if spec.variant == "approximate":
        beta = fit_ols_pinv(data).beta
        d = float(x_new @ beta)
        e = data.y - data.X @ beta
        kap = step * (data.X @ x_new)
        kap_test = step * float(x_new @ x_new)
        # test |(1 - kap_test)(y - d)|, training |e_i - kap_i (y - d)|
        coeffs = ((1 - kap_test) * one, -(1 - kap_test) * d * one, -kap, e + kap * d)
    else:
        betas = _loo_betas(data, cache)
        d = betas @ x_new
        r = data.y - np.einsum("ij,ij->i", data.X, betas)
        a = step * (data.X @ x_new)
        g = step * np.einsum("ij,ij->i", data.X, data.X)
        b = step * float(x_new @ x_new)
        # test |(1-b)(y-d_i) - a_i r_i|, training |(1-g_i) r_i - a_i (y-d_i)|
        coeffs = ((1 - b) * one, -(1 - b) * d - a * r, -a, (1 - g) * r + a * d)
    return AffineGames([], [coeffs], spec.margin, cfg)


def _rounding_games(spec, data, x_new, cache):
    n = data.n
    cfg = spec.config(n)
    fam = spec.family
    grid = fam.grid if fam.grid is not None else build_rounding_grid(
        data.y, fam.grid_size, fam.pad_frac)
    Xf = np.vstack([data.X, x_new[None, :]])
    P = _hat_matrix(Xf)
    Y0 = np.append(data.y, 0.0)
    base = P @ Y0
    g = grid.points
    one = np.ones(n)
    coeffs = []
    if spec.variant == "approximate":
        for gm in g:
            fitted = base + P[:, n] * gm
            coeffs.append((one, -fitted[n] * one, np.zeros(n), data.y - fitted[:n]))
    else:
        delta = grid.round(data.y) - data.y
        idx = np.arange(n)
        for gm in g:
            c = base[n] + P[n, :n] * delta + P[n, n] * gm
            fit_i = base[:n] + P[idx, idx] * delta + P[:n, n] * gm
            coeffs.append((one, -c, np.zeros(n), data.y - fit_i))
    return AffineGames(grid.cell_boundaries, coeffs, spec.margin, cfg)


def _bayes_games(spec, data, x_new, cache):
    n = data.n
    cfg = spec.config(n)
    bc: BayesConfig = spec.family.bayes or BayesConfig()
    prior = bc.prior(data.p)
    s = bc.sigma_lik
    if spec.variant == "approximate":
        post = conjugate_posterior(prior, data)
        draws = sample_posterior(post, bc.K, int_seed(spec.seed, "approx-draws"))
        th = draws.thetas
        mu = np.broadcast_to(th @ x_new, (n, bc.K))
        ll = np.stack([log_likelihood(th, data.X[i], data.y[i], s) for i in range(n)])
        weights = (2.0, 0.0, 1.0, 1.0)
    else:
        if bc.sampler == "direct":
            per_i = loo_posterior_draws(data, prior, bc.K, spec.seed)
        else:
            per_i = shared_rejection_loo_draws(data, prior, bc.K, None, spec.seed,
                                               bc.max_proposals, bc.region_radius).draws
        mu = np.stack([d.thetas @ x_new for d in per_i])
        ll = np.stack([log_likelihood(d.thetas, data.X[i], data.y[i], s)
                       for i, d in enumerate(per_i)])
        weights = (2.0, 1.0, 2.0, 1.0)
    return LikelihoodGames(mu, ll, s, weights, spec.margin, cfg, data.y)


_BUILDERS = {
    "deletion": _deletion_games,
    "one-step": _onestep_games,
    "rounding": _rounding_games,
    "bayes-ppd": _bayes_games,
}


def build_games(spec: EngineSpec, data: Dataset, x_new, cache: Optional[dict] = None):
    """The game system for ``spec`` on ``data`` at test features ``x_new``.

    ``cache`` may be shared between specs evaluated on the same data so the
    leave-one-out fits are computed once.
    """
    x_new = np.asarray(x_new, dtype=float).ravel()
    if x_new.size != data.p:
        raise ValueError(f"x_new has dimension {x_new.size}, data has p={data.p}")
    if data.n < 2:
        raise ValueError("need at least two training points")
    return _BUILDERS[spec.family.kind](spec, data, x_new, cache)


def prediction_set(spec: EngineSpec, data: Dataset, x_new, cache=None):
    games = build_games(spec, data, x_new, cache)
    if isinstance(games, LikelihoodGames):
        return games.estimate()
    return games.prediction_set()


def approx_set(spec: EngineSpec, data: Dataset, x_new, cache=None):
    if spec.variant != "approximate":
        raise ValueError("approx_set needs variant='approximate'")
    return prediction_set(spec, data, x_new, cache)


def tournament_set(spec: EngineSpec, data: Dataset, x_new, cache=None):
    if spec.variant != "tournament":
        raise ValueError("tournament_set needs variant='tournament'")
    return prediction_set(spec, data, x_new, cache)


def coverage_check(spec: EngineSpec, data: Dataset, test: DataPoint, cache=None) -> bool:
    """Whether the acceptance condition holds at the true test response."""
    games = build_games(spec, data, test.x, cache)
    return bool(games.accepts([test.y])[0])


def split_conformal_set(train_half: Dataset, cal_half: Dataset, x_new, alpha: float) -> PredictionSet:
    if train_half.n == 0 or cal_half.n == 0:
        raise ValueError("both halves must be non-empty")
    model = fit_ols_pinv(train_half)
    resid = np.abs(cal_half.y - cal_half.X @ model.beta)
    q = conformal_quantile(resid, ConformalConfig(alpha, cal_half.n))
    if math.isinf(q):
        return PredictionSet.everything()
    c = float(np.asarray(x_new, dtype=float) @ model.beta)
    return normalize_union([Interval(c - q, c + q)])


def adaptive_length(membership: Callable, train_y=None, *, search_range=None,
                    resolution: float = 0.1, shrink: float = 10.0,
                    pad_frac: float = 0.02, max_coarse: int = 100):
    """Estimate the extent of an accepted region by coarse-to-fine grid search.

    ``membership`` maps an array of candidates to a boolean array. Returns
    ``(length, Interval or None)``; ``(0.0, None)`` when nothing in the range
    is accepted.
    """
    if search_range is None:
        y = np.asarray(train_y, dtype=float)
        r = float(y.max() - y.min())
        lo, hi = float(y.min()) - pad_frac * r, float(y.max()) + pad_frac * r
    else:
        lo, hi = map(float, search_range)
    span = hi - lo
    if span <= 0:
        ok = bool(np.asarray(membership(np.array([lo])))[0])
        return (0.0, Interval(lo, lo)) if ok else (0.0, None)
    step = resolution
    while span / step > max_coarse:
        step *= shrink
    grid = lo + step * np.arange(int(math.floor(span / step + 1e-9)) + 1)
    if hi - grid[-1] > 1e-9 * step:
        grid = np.append(grid, hi)
    acc = np.asarray(membership(grid), dtype=bool)
    hits = np.flatnonzero(acc)
    if hits.size == 0:
        return 0.0, None
    first, last = int(hits[0]), int(hits[-1])
    left = _refine(membership, grid[first - 1] if first > 0 else None, grid[first],
                   step, resolution, shrink, toward_left=True)
    right = _refine(membership, grid[last + 1] if last + 1 < grid.size else None, grid[last],
                    step, resolution, shrink, toward_left=False)
    return right - left, Interval(left, right)


def _refine(membership, outside, inside, step, resolution, shrink, toward_left):
    """Move the accepted endpoint ``inside`` toward the rejected point ``outside``."""
    if outside is None:
        return float(inside)
    while step > resolution * (1 + 1e-9):
        step /= shrink
        k = int(round(abs(inside - outside) / step))
        if k <= 1:
            continue
        direction = 1.0 if toward_left else -1.0
        pts = outside + direction * step * np.arange(1, k)
        acc = np.asarray(membership(pts), dtype=bool)
        hits = np.flatnonzero(acc)
        if hits.size:
            j = int(hits[0])
            inside = float(pts[j])
            if j > 0:
                outside = float(pts[j - 1])
        elif pts.size:
            outside = float(pts[-1])
    return float(inside)
