"""Empirical stability curves.

Three perturbations are measured at the true test point:

* ``tournament``: the test score when training point ``i`` is treated
  approximately alongside the test point, against the score when only the
  test point is;
* ``approx-test``: the approximate test score against the exact score
  refit on all ``n + 1`` points;
* ``approx-train``: the same comparison at a training point.

Bayesian scores are compared on the PPD scale, that is with the
importance weights normalized, so that scores built from different numbers
of likelihood factors are commensurable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .bayes import BayesConfig, PosteriorDraws, conjugate_posterior, log_likelihood, sample_posterior
from .models import DataPoint, Dataset, SimConfig, Trial, fit_ols_pinv, generate_trial
from .scores import ScoreFamily, residual_score, score_three_slot, score_two_slot
from .seeding import int_seed, rng_for

CONDITIONS = ("tournament", "approx-test", "approx-train")
BAYES_DEFAULT_INDICES = 10


@dataclass(frozen=True)
class StabilityCurve:
    sorted_deltas: np.ndarray
    condition_tag: str

    def __post_init__(self):
        if self.condition_tag not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition_tag!r}")

    def epsilon(self, nu: float) -> float:
        """Smallest epsilon with at least a ``1 - nu`` fraction of deltas at or below it."""
        if not 0.0 <= nu <= 1.0:
            raise ValueError("nu must lie in [0, 1]")
        d = self.sorted_deltas
        k = math.ceil((1.0 - nu) * d.size - 1e-9)
        if k <= 0:
            return 0.0
        return float(d[k - 1])

    def sample(self, nus: Iterable[float]) -> list[tuple[float, float]]:
        return [(float(nu), self.epsilon(nu)) for nu in nus]


def stability_curve(deltas: Sequence[float], condition: str = "tournament") -> StabilityCurve:
    d = np.asarray(deltas, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("empty delta list")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("deltas must be finite and nonnegative")
    return StabilityCurve(np.sort(d), condition)


def _ppd(draws: PosteriorDraws, z: DataPoint, weight_points: Sequence[DataPoint],
         sigma: float) -> float:
    """Negative importance-weighted PPD of ``z`` (weights from ``weight_points``)."""
    lw = np.zeros(draws.K)
    for pt in weight_points:
        lw = lw + log_likelihood(draws.thetas, pt.x, pt.y, sigma)
    lf = log_likelihood(draws.thetas, z.x, z.y, sigma)
    return -math.exp(float(logsumexp(lf + lw) - logsumexp(lw)))


def _bayes_draws(bc: BayesConfig, data: Dataset, seed: int) -> PosteriorDraws:
    return sample_posterior(conjugate_posterior(bc.prior(data.p), data), bc.K, seed)


def trial_tournament_deltas(family: ScoreFamily, trial: Trial, indices: Sequence[int],
                            seed: int = 0) -> np.ndarray:
    data, test = trial.data, trial.test
    if family.kind == "bayes-ppd":
        bc = family.bayes or BayesConfig()
        s = bc.sigma_lik
        ref = _ppd(_bayes_draws(bc, data, int_seed(seed, "approx")), test, (test,), s)
        out = []
        for i in indices:
            draws = _bayes_draws(bc, data.drop(i), int_seed(seed, "loo", i))
            out.append(abs(_ppd(draws, test, (data[i], test), s) - ref))
        return np.asarray(out)
    fam = family.bound_to(data)
    ref = score_two_slot(fam, test, data, test)
    return np.asarray([abs(score_three_slot(fam, test, data.drop(i), data[i], test) - ref)
                       for i in indices])


def trial_approx_deltas(family: ScoreFamily, trial: Trial, i: int,
                        seed: int = 0) -> tuple[float, float]:
    data, test = trial.data, trial.test
    full = data.augment(test)
    zi = data[i]
    if family.kind == "bayes-ppd":
        bc = family.bayes or BayesConfig()
        s = bc.sigma_lik
        approx = _bayes_draws(bc, data, int_seed(seed, "approx"))
        exact = _bayes_draws(bc, full, int_seed(seed, "exact"))
        t = abs(_ppd(approx, test, (test,), s) - _ppd(exact, test, (), s))
        r = abs(_ppd(approx, zi, (test,), s) - _ppd(exact, zi, (), s))
        return t, r
    fam = family.bound_to(data)
    model = fit_ols_pinv(full)
    t = abs(score_two_slot(fam, test, data, test) - residual_score(model, test))
    r = abs(score_two_slot(fam, zi, data, test) - residual_score(model, zi))
    return t, r


def _indices_for(family: ScoreFamily, cfg: SimConfig, trial: int,
                 per_trial_indices: Optional[int]) -> np.ndarray:
    n = cfg.n
    if per_trial_indices is None:
        per_trial_indices = BAYES_DEFAULT_INDICES if family.kind == "bayes-ppd" else n
    if not 1 <= per_trial_indices <= n:
        raise ValueError("per_trial_indices must lie in [1, n]")
    if per_trial_indices == n:
        return np.arange(n)
    rng = rng_for(cfg.master_seed, trial, "stability-indices")
    return np.sort(rng.choice(n, size=per_trial_indices, replace=False))


def stability_deltas_tournament(family: ScoreFamily, cfg: SimConfig,
                                per_trial_indices: Optional[int] = None) -> np.ndarray:
    out = []
    for t in range(cfg.trials):
        trial = generate_trial(cfg, t)
        idx = _indices_for(family, cfg, t, per_trial_indices)
        out.append(trial_tournament_deltas(family, trial, idx,
                                           int_seed(cfg.master_seed, t, "stability-bayes")))
    return np.concatenate(out)


def stability_deltas_approx(family: ScoreFamily, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    tests, trains = [], []
    for t in range(cfg.trials):
        trial = generate_trial(cfg, t)
        i = int(rng_for(cfg.master_seed, t, "stability-train-index").integers(cfg.n))
        a, b = trial_approx_deltas(family, trial, i,
                                   int_seed(cfg.master_seed, t, "stability-bayes"))
        tests.append(a)
        trains.append(b)
    return np.asarray(tests), np.asarray(trains)
