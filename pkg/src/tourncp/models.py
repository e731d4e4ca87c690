"""Datasets, least-squares fits, one-step updates and the synthetic data law."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .seeding import rng_for

# Singular values below PINV_RTOL * sigma_max are treated as zero.
PINV_RTOL = 1e-10


@dataclass(frozen=True)
class DataPoint:
    x: np.ndarray
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).ravel())
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True)
class Dataset:
    """Rows ``(X[i], y[i])``. Arrays are copied and made read-only."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        y = np.array(self.y, dtype=float, copy=True).ravel()
        if X.ndim == 1:
            X = X.reshape(-1, 1) if y.size != 1 else X.reshape(1, -1)
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ValueError(f"X has shape {X.shape} but y has {y.size} entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls, p: int) -> "Dataset":
        return cls(np.zeros((0, p)), np.zeros(0))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i: int) -> DataPoint:
        return DataPoint(self.X[i], self.y[i])

    def points(self) -> list[DataPoint]:
        return [self[i] for i in range(self.n)]

    def drop(self, i: int) -> "Dataset":
        if not 0 <= i < self.n:
            raise IndexError(f"row index {i} out of range for n={self.n}")
        keep = np.arange(self.n) != i
        return Dataset(self.X[keep], self.y[keep])

    def augment(self, *points: DataPoint) -> "Dataset":
        if not points:
            return self
        X = np.vstack([self.X] + [pt.x.reshape(1, -1) for pt in points])
        y = np.concatenate([self.y, [pt.y for pt in points]])
        return Dataset(X, y)

    def permuted(self, order: Sequence[int]) -> "Dataset":
        order = np.asarray(order)
        return Dataset(self.X[order], self.y[order])


@dataclass(frozen=True)
class LinearModel:
    beta: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float).ravel()
        if not np.all(np.isfinite(b)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "beta", b)

    @property
    def p(self) -> int:
        return self.beta.size

    def predict(self, x):
        return np.asarray(x, dtype=float) @ self.beta


@dataclass(frozen=True)
class OneStepConfig:
    eta: float = 10.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"step size must be positive, got {self.eta}")


@dataclass(frozen=True)
class SimConfig:
    n: int = 100
    p: int = 20
    alpha: float = 0.1
    trials: int = 100
    beta_star_norm: float = math.sqrt(10.0)
    noise_sd: float = 1.0
    master_seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.p < 1:
            raise ValueError("p must be at least 1")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.beta_star_norm < 0 or self.noise_sd < 0:
            raise ValueError("beta_star_norm and noise_sd must be nonnegative")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class Trial:
    data: Dataset
    test: DataPoint
    beta_star: np.ndarray = field(repr=False)
    index: int = 0


def fit_ols_pinv(dataset: Dataset) -> LinearModel:
    """Minimum-norm least squares ``X^+ y`` without an intercept."""
    if dataset.n == 0:
        raise ValueError("cannot fit an empty dataset")
    X, y = dataset.X, dataset.y
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("dataset contains non-finite values")
    beta, *_ = np.linalg.lstsq(X, y, rcond=PINV_RTOL)
    return LinearModel(beta)


def loo_fit(dataset: Dataset, i: int) -> LinearModel:
    """Refit with row ``i`` removed."""
    if dataset.n < 2:
        raise ValueError("leave-one-out needs at least two rows")
    return fit_ols_pinv(dataset.drop(i))


def loo_coefficients(dataset: Dataset) -> np.ndarray:
    """All leave-one-out coefficient vectors stacked as an ``(n, p)`` array."""
    return np.vstack([loo_fit(dataset, i).beta for i in range(dataset.n)])


def one_step_update(base: LinearModel, train_size_for_denominator: int,
                    added: DataPoint | Sequence[DataPoint],
                    cfg: OneStepConfig) -> LinearModel:
    """One gradient step on the squared loss after adding one or two points.

    ``train_size_for_denominator`` is ``|D| + len(added)``, the size of the
    dataset the step is averaged over.
    """
    if isinstance(added, DataPoint):
        added = (added,)
    added = tuple(added)
    if len(added) not in (1, 2):
        raise ValueError(f"one_step_update takes 1 or 2 points, got {len(added)}")
    if train_size_for_denominator < len(added):
        raise ValueError("denominator smaller than the number of added points")
    grad = np.zeros(base.p)
    for pt in added:
        grad = grad + pt.x * (pt.y - pt.x @ base.beta)
    return LinearModel(base.beta + cfg.eta / train_size_for_denominator * grad)


def generate_trial(cfg: SimConfig, trial_index: int) -> Trial:
    """Draw ``n`` training rows and one test row from the Gaussian linear model.

    Each trial gets a fresh ``beta_star`` on the sphere of radius
    ``cfg.beta_star_norm``.
    """
    rng = rng_for(cfg.master_seed, trial_index, "data")
    g = rng.standard_normal(cfg.p)
    nrm = np.linalg.norm(g)
    beta_star = g / nrm * cfg.beta_star_norm if nrm > 0 else g
    X = rng.standard_normal((cfg.n + 1, cfg.p))
    y = X @ beta_star + cfg.noise_sd * rng.standard_normal(cfg.n + 1)
    return Trial(Dataset(X[:-1], y[:-1]), DataPoint(X[-1], y[-1]), beta_star,
                 trial_index)
