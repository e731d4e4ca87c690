"""Approximate score families.

A two-slot score ``s(z; D + {z'})`` treats the extra point ``z'``
approximately; a three-slot score ``s(z; D + {z', z''})`` does so for two
extra points and must be symmetric in them. Bayesian scores live in
:mod:`tourncp.bayes` because they need posterior draws.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .models import DataPoint, Dataset, LinearModel, OneStepConfig, fit_ols_pinv, one_step_update

KINDS = ("deletion", "rounding", "one-step", "bayes-ppd", "custom")


@dataclass(frozen=True)
class RoundingGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 2 or np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing, at least two")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def M(self) -> int:
        return self.points.size

    @property
    def cell_boundaries(self) -> np.ndarray:
        return 0.5 * (self.points[1:] + self.points[:-1])

    def index(self, y):
        """Index of the nearest grid point; a midpoint goes to the lower one."""
        return np.searchsorted(self.cell_boundaries, y, side="left")

    def round(self, y):
        idx = self.index(y)
        out = self.points[idx]
        return float(out) if np.ndim(out) == 0 else out

    def cell(self, m: int) -> tuple[float, float]:
        """The Voronoi cell of point ``m`` as ``(lo, hi]``; extreme cells are unbounded."""
        b = self.cell_boundaries
        lo = -np.inf if m == 0 else float(b[m - 1])
        hi = np.inf if m == self.M - 1 else float(b[m])
        return lo, hi


def build_rounding_grid(train_y, M: int = 10, pad_frac: float = 0.02) -> RoundingGrid:
    """``M`` equally spaced points spanning the padded training response range."""
    y = np.asarray(train_y, dtype=float)
    if M < 2:
        raise ValueError("grid needs at least two points")
    if y.size == 0:
        raise ValueError("empty response list")
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise ValueError("degenerate response range")
    r = hi - lo
    return RoundingGrid(np.linspace(lo - pad_frac * r, hi + pad_frac * r, M))


@dataclass(frozen=True)
class ScoreFamily:
    """Which approximation to use and its parameters.

    ``grid`` is only set on a rounding family that has been bound to a
    training set with :meth:`bound_to`.
    """

    kind: str
    grid_size: int = 10
    pad_frac: float = 0.02
    onestep: OneStepConfig = field(default_factory=OneStepConfig)
    grid: Optional[RoundingGrid] = None
    bayes: Optional[object] = None  # tourncp.bayes.BayesConfig
    two_slot: Optional[Callable] = field(default=None, compare=False)
    three_slot: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown score family {self.kind!r}")
        if self.kind == "custom" and (self.two_slot is None or self.three_slot is None):
            raise ValueError("custom family needs two_slot and three_slot callables")

    @classmethod
    def deletion(cls) -> "ScoreFamily":
        return cls("deletion")

    @classmethod
    def rounding(cls, M: int = 10, pad_frac: float = 0.02) -> "ScoreFamily":
        return cls("rounding", grid_size=M, pad_frac=pad_frac)

    @classmethod
    def one_step(cls, eta: float = 10.0) -> "ScoreFamily":
        return cls("one-step", onestep=OneStepConfig(eta))

    @classmethod
    def bayes_ppd(cls, config=None) -> "ScoreFamily":
        from .bayes import BayesConfig
        return cls("bayes-ppd", bayes=config if config is not None else BayesConfig())

    @classmethod
    def custom(cls, two_slot: Callable, three_slot: Callable) -> "ScoreFamily":
        return cls("custom", two_slot=two_slot, three_slot=three_slot)

    def bound_to(self, data: Dataset) -> "ScoreFamily":
        """Fix the data-dependent rounding grid from ``data``'s responses."""
        if self.kind != "rounding":
            return self
        return replace(self, grid=build_rounding_grid(data.y, self.grid_size, self.pad_frac))

    def _require_grid(self) -> RoundingGrid:
        if self.grid is None:
            raise ValueError("rounding family has no grid; call bound_to(training data) first")
        return self.grid


def residual_score(model: LinearModel, z: DataPoint) -> float:
    if z.x.size != model.p:
        raise ValueError(f"point has dimension {z.x.size}, model has {model.p}")
    return abs(z.y - float(z.x @ model.beta))


def score_two_slot(family: ScoreFamily, z: DataPoint, base: Dataset,
                   z_prime: DataPoint) -> float:
    """``s_approx(z; base + {z_prime})``, refitting from scratch."""
    kind = family.kind
    if kind == "deletion":
        return residual_score(fit_ols_pinv(base), z)
    if kind == "rounding":
        g = family._require_grid()
        aug = base.augment(DataPoint(z_prime.x, g.round(z_prime.y)))
        return residual_score(fit_ols_pinv(aug), z)
    if kind == "one-step":
        model = one_step_update(fit_ols_pinv(base), base.n + 1, z_prime, family.onestep)
        return residual_score(model, z)
    if kind == "custom":
        return float(family.two_slot(z, base, z_prime))
    raise ValueError("bayes-ppd scores need posterior draws; use tourncp.bayes.ppd_score_two")


def score_three_slot(family: ScoreFamily, z: DataPoint, base: Dataset,
                     z_prime: DataPoint, z_dprime: DataPoint) -> float:
    """``s_approx(z; base + {z_prime, z_dprime})``, symmetric in the two extra points."""
    kind = family.kind
    if kind == "deletion":
        return residual_score(fit_ols_pinv(base), z)
    if kind == "rounding":
        g = family._require_grid()
        # fixed row order so that swapping the two points is bit-identical
        a, b = sorted((z_prime, z_dprime), key=_point_key)
        aug = base.augment(DataPoint(a.x, g.round(a.y)), DataPoint(b.x, g.round(b.y)))
        return residual_score(fit_ols_pinv(aug), z)
    if kind == "one-step":
        a, b = sorted((z_prime, z_dprime), key=_point_key)
        model = one_step_update(fit_ols_pinv(base), base.n + 2, (a, b), family.onestep)
        return residual_score(model, z)
    if kind == "custom":
        return float(family.three_slot(z, base, z_prime, z_dprime))
    raise ValueError("bayes-ppd scores need posterior draws; use tourncp.bayes.ppd_score_three")


def _point_key(pt: DataPoint):
    return (pt.y, tuple(pt.x))
