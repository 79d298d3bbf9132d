"""Agreement metrics between uncertainty and error, and the corruption
consistency protocol.

Rank metrics follow the usual conventions: Spearman is the Pearson
correlation of average ranks, and HitRate@K is the overlap fraction of the
top-K percent sets. A constant input has no ranking, so the correlation is
reported as missing rather than silently coerced to zero; degenerate late-t
baseline maps then show up as gaps in the tables instead of fake zeros.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .baselines import ensemble_uq, mc_dropout_uq
from .numerics import RngState, draw_rademacher
from .uq import cov_closed_form, one_step_cov, posterior_mean_from_velocity

__all__ = [
    "MetricsError",
    "ConsistencyRow",
    "spearman",
    "hitrate_at_k",
    "corrupt",
    "consistency_protocol",
    "error_correlation",
    "tweedie_method",
    "one_step_method",
    "ensemble_method",
    "dropout_method",
]

DEFAULT_HITRATE_PERCENT = 30.0


class MetricsError(ValueError):
    pass


def _ranks(x) -> np.ndarray:
    return rankdata(np.asarray(x, dtype=np.float64), method="average")


def spearman(u, e) -> float:
    """Rank correlation with average-rank ties; raises on constant input."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    if u.shape != e.shape or u.shape[0] < 2:
        raise MetricsError("need two equal-length sequences of length >= 2")
    ru, re = _ranks(u), _ranks(e)
    du, de = ru - ru.mean(), re - re.mean()
    su, se = np.sqrt((du * du).sum()), np.sqrt((de * de).sum())
    if su == 0.0 or se == 0.0:
        raise MetricsError("undefined correlation: constant input")
    return float((du * de).sum() / (su * se))


def hitrate_at_k(u, e, k_percent: float = DEFAULT_HITRATE_PERCENT) -> float:
    """Overlap fraction of the top-k-percent sets of two maps.

    The set size is floor(N * k / 100), at least 1. Ties are broken by
    ascending index among equal values (stable sort on descending value).
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    if u.shape != e.shape or u.shape[0] < 1:
        raise MetricsError("need two equal-length nonempty maps")
    if not 0.0 < k_percent < 100.0:
        raise MetricsError("k_percent must lie in (0, 100)")
    n = u.shape[0]
    kc = max(1, int(np.floor(n * k_percent / 100.0)))
    top_u = np.argsort(-u, kind="stable")[:kc]
    top_e = np.argsort(-e, kind="stable")[:kc]
    return len(np.intersect1d(top_u, top_e)) / kc


def corrupt(x1, noise_level: float, rng: RngState) -> np.ndarray:
    """Convex mixing with unit Gaussian noise: (1-lam) x1 + lam n."""
    if not 0.0 <= noise_level <= 1.0:
        raise MetricsError("noise_level must lie in [0, 1]")
    x1 = np.asarray(x1, dtype=np.float64)
    if noise_level == 0.0:
        return x1.copy()
    n = rng.generator().standard_normal(x1.shape)
    return (1.0 - noise_level) * x1 + noise_level * n


# ---- method adapters --------------------------------------------------------
# A "method" maps (xt, t, rng) to (per-pixel map, scalar score). The adapters
# below wrap the estimators; tests inject stubs with the same shape.


def tweedie_method(field, n_probes: int):
    def run(xt, t, rng):
        probes = draw_rademacher(rng, xt.shape[0], n_probes)
        est = cov_closed_form(field, xt, t, probes)
        return est.diag, est.u

    return run


def one_step_method(field, n_probes: int, epsilon: float):
    """One-step uncertainty ignores t: it always reads the generator input."""

    def run(xt, t, rng):
        probes = draw_rademacher(rng, xt.shape[0], n_probes)
        est = one_step_cov(field, xt, epsilon, probes)
        return est.diag, est.u

    return run


def ensemble_method(models):
    def run(xt, t, rng):
        est = ensemble_uq(models, xt, t)
        return est.variance, est.scalar

    return run


def dropout_method(model, passes: int):
    def run(xt, t, rng):
        est = mc_dropout_uq(model, xt, t, passes, rng)
        return est.variance, est.scalar

    return run


@dataclass(frozen=True)
class ConsistencyRow:
    """One (time, method) cell of the corruption-consistency table.

    Metrics are None when undefined for every sample (or, for the sample-level
    correlation, when either score sequence is constant). ``n_missing`` counts
    samples whose pixel metrics were undefined.
    """

    t: float
    method: str
    pixel_spearman: float | None
    hitrate: float | None
    sample_spearman: float | None
    n_samples: int
    n_missing: int


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def consistency_protocol(reference, methods, task, t_grid, noise_level: float,
                         rng: RngState, n_samples: int = 64,
                         k_percent: float = DEFAULT_HITRATE_PERCENT):
    """Corrupt data, embed it at each t, and score every method against the
    reconstruction error of the reference field.

    For each sample the clean pair (x0, x1) is drawn from the task, x1 is
    mixed with noise at ``noise_level``, the interpolant state is built from
    the corrupted x1, and the per-pixel error map is the squared difference
    between the reference posterior mean and the clean x1. Returns one
    ConsistencyRow per (t, method).
    """
    if n_samples < 2:
        raise MetricsError("need at least 2 samples")
    x0s, x1s = task.sample_pairs(rng.split(0), n_samples)
    noise_rng = rng.split(1)
    x1_corr = np.stack([
        corrupt(x1s[i], noise_level, noise_rng.split(i)) for i in range(n_samples)
    ])

    rows = []
    for ti, t in enumerate(t_grid):
        xts = t * x1_corr + (1.0 - t) * x0s
        vhat = np.atleast_2d(reference.velocity(xts, t))
        x1_hat = posterior_mean_from_velocity(xts, t, vhat)
        err_maps = (x1_hat - x1s) ** 2
        err_scalars = err_maps.sum(axis=1)
        for mi, (name, method) in enumerate(methods.items()):
            method_rng = rng.split(2 + mi).split(ti)
            pix, hits, scalars = [], [], []
            for i in range(n_samples):
                umap, uscalar = method(xts[i], t, method_rng.split(i))
                scalars.append(uscalar)
                try:
                    pix.append(spearman(umap, err_maps[i]))
                except MetricsError:
                    pix.append(None)
                    hits.append(None)
                    continue
                hits.append(hitrate_at_k(umap, err_maps[i], k_percent))
            try:
                samp = spearman(scalars, err_scalars)
            except MetricsError:
                samp = None
            rows.append(ConsistencyRow(
                t=float(t), method=name,
                pixel_spearman=_mean_or_none(pix),
                hitrate=_mean_or_none(hits),
                sample_spearman=samp,
                n_samples=n_samples,
                n_missing=sum(1 for v in pix if v is None),
            ))
    return rows


def error_correlation(reference, methods, task, t: float, n_samples: int,
                      rng: RngState):
    """Sample-level Spearman between each method's scalar score and the
    squared prediction error of the reference posterior mean, on clean data.
    """
    if n_samples < 8:
        raise MetricsError("need at least 8 samples")
    x0s, x1s = task.sample_pairs(rng.split(0), n_samples)
    xts = t * x1s + (1.0 - t) * x0s
    vhat = np.atleast_2d(reference.velocity(xts, t))
    x1_hat = posterior_mean_from_velocity(xts, t, vhat)
    err_scalars = ((x1_hat - x1s) ** 2).sum(axis=1)

    out = {}
    for mi, (name, method) in enumerate(methods.items()):
        method_rng = rng.split(100 + mi)
        scalars = [
            method(xts[i], t, method_rng.split(i))[1] for i in range(n_samples)
        ]
        try:
            out[name] = spearman(scalars, err_scalars)
        except MetricsError:
            out[name] = None
    return out
