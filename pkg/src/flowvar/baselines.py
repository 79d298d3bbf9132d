"""Sampling-based uncertainty baselines: deep-ensemble variance and
MC-dropout variance of the posterior mean.

Both report the population variance (divide by the number of members or
passes, not by count minus one): the member/pass counts are protocol
constants, not samples whose variance needs unbiasing. The unbiased variant
stays available behind a flag for ablation.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .models import MlpVelocity, ModelField
from .numerics import RngState
from .uq import posterior_mean_from_velocity

__all__ = [
    "BaselineEstimate",
    "BaselineError",
    "ensemble_uq",
    "mc_dropout_uq",
]


class BaselineError(ValueError):
    pass


@dataclass(frozen=True)
class BaselineEstimate:
    """Per-pixel variance of the posterior mean across members or passes."""

    variance: np.ndarray  # (d,), >= 0
    scalar: float  # sum of per-pixel variances
    count: int  # members or passes
    seconds: float

    @property
    def dim(self) -> int:
        return self.variance.shape[0]


def _finish(means, count, t0, population):
    ddof = 0 if population else 1
    var = np.var(np.stack(means), axis=0, ddof=ddof)
    return BaselineEstimate(
        variance=var,
        scalar=float(var.sum()),
        count=count,
        seconds=time.perf_counter() - t0,
    )


def ensemble_uq(models, xt, t: float, population: bool = True) -> BaselineEstimate:
    """Variance of the posterior mean across independently trained models.

    ``models`` holds at least two velocity fields (counting handles or bare
    models); each contributes one forward evaluation.
    """
    if len(models) < 2:
        raise BaselineError("ensemble variance needs at least 2 members")
    xt = np.asarray(xt, dtype=np.float64).reshape(-1)
    t0 = time.perf_counter()
    means = [
        posterior_mean_from_velocity(xt, t, m.velocity(xt, t)) for m in models
    ]
    return _finish(means, len(models), t0, population)


def mc_dropout_uq(model, xt, t: float, passes: int, rng: RngState,
                  population: bool = True) -> BaselineEstimate:
    """Variance of the posterior mean across stochastic dropout passes.

    Each pass draws its masks from a fresh child stream of ``rng``, so the
    estimate is reproducible and distinct call sites never share masks. With
    dropout rate zero every pass coincides and the variance is zero.
    """
    if passes < 2:
        raise BaselineError("need at least 2 dropout passes")
    xt = np.asarray(xt, dtype=np.float64).reshape(-1)
    t0 = time.perf_counter()
    means = []
    for p in range(passes):
        pass_rng = rng.split(p)
        if isinstance(model, ModelField):
            if model.model.arch.dropout > 0.0:
                v = model.with_dropout(pass_rng).velocity(xt, t)
            else:
                v = model.velocity(xt, t)
        elif isinstance(model, MlpVelocity):
            v = model.velocity(xt, t, dropout_rng=pass_rng)
        else:
            raise BaselineError("mc dropout needs an MLP model or its handle")
        means.append(posterior_mean_from_velocity(xt, t, v))
    return _finish(means, passes, t0, population)
