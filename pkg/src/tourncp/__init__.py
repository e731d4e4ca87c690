"""Tournament-corrected approximations to full conformal prediction."""
from .core import (ConformalConfig, Interval, PredictionSet, TournamentMatrix,
                   conformal_quantile, normalize_union, tournament_accepts,
                   tournament_bound_check)
from .models import (DataPoint, Dataset, LinearModel, OneStepConfig, SimConfig,
                     fit_ols_pinv, generate_trial, loo_fit, one_step_update)
from .scores import (RoundingGrid, ScoreFamily, build_rounding_grid, residual_score,
                     score_three_slot, score_two_slot)
from .conformal import (EngineSpec, adaptive_length, approx_set, coverage_check,
                        split_conformal_set, tournament_set)
from .kernels import BACKEND

__version__ = "0.1.0"
