"""Choosing the number of components by BIC."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .em import EmConfig, MixtureFit, grow_start, run_em
from .model import Dataset, DegenerateFitError, MCDCError, NumericalError, Transformation

logger = logging.getLogger(__name__)


def param_count(g: int, d: int) -> int:
    """Free parameters: g-1 weights, g untransformed-probabilities, means, covariances."""
    if g < 1 or d < 1:
        raise MCDCError("g and d must be >= 1")
    return (g - 1) + g + g * d + g * d * (d + 1) // 2


def bic(fit: MixtureFit, n: int, d: int) -> float:
    """``2 loglik - p log n``; larger is better."""
    return bic_value(fit.loglik, fit.g, n, d)


def bic_value(loglik: float, g: int, n: int, d: int) -> float:
    return 2.0 * loglik - param_count(g, d) * np.log(n)


@dataclass(frozen=True)
class Selection:
    fit: MixtureFit
    g: int
    bic_table: dict  # g -> BIC, only for g that produced a fit
    fits: dict


def _seed_for(seed: int, g: int) -> int:
    return int(np.random.SeedSequence([seed, g]).generate_state(1, np.uint64)[0])


def argmax_bic(table: dict) -> int:
    """Index of the largest BIC; ties go to the smaller g."""
    best = None
    for g in sorted(table):
        if best is None or table[g] > table[best]:
            best = g
    return best


def select_model(data: Dataset, t: Transformation, g_max: int = 9,
                 config: EmConfig = EmConfig(), patience: int | None = None) -> Selection:
    """Fit g = 1..g_max components and keep the fit with the largest BIC.

    Values of g for which every restart degenerates are left out of the
    table. Each g uses its own seed derived from ``config.seed``. Besides
    the random restarts, every g > 1 is also started from the (g - 1) fit
    with one component added on its worst-fitting points.

    Parameters
    ----------
    data : Dataset
    t : Transformation
    g_max : int
    config : EmConfig
    patience : int, optional
        Stop the sweep once this many consecutive fitted g fail to beat the
        best BIC so far. ``None`` fits every g up to ``g_max``.
    """
    if g_max < 1:
        raise MCDCError("g_max must be >= 1")
    n, d = data.n, data.dimension
    if patience is not None and patience < 1:
        raise MCDCError("patience must be >= 1")
    table, fits = {}, {}
    stale = 0
    for g in range(1, g_max + 1):
        if n < g * (d + 1):
            break
        cfg = replace(config, seed=_seed_for(config.seed, g))
        # also try growing the previous fit by one component
        extra = [grow_start(data, fits[g - 1], t, ridge=config.ridge)] if g - 1 in fits else []
        try:
            fit = run_em(data, g, t, cfg, extra_inits=extra)
        except (DegenerateFitError, NumericalError) as exc:
            logger.debug("g=%d skipped: %s", g, exc)
            continue
        fits[g] = fit
        table[g] = bic(fit, n, d)
        stale = 0 if argmax_bic(table) == g else stale + 1
        if patience is not None and stale >= patience:
            break
    if not table:
        raise DegenerateFitError("no number of components produced a non-degenerate fit")
    g_best = argmax_bic(table)
    return Selection(fits[g_best], g_best, table, fits)
