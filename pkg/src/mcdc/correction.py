"""Reverting transformed points and estimating the main-cluster mean."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .em import MixtureFit
from .model import Dataset, Transformation

FLIP_THRESHOLD = 0.5


@dataclass(frozen=True)
class CorrectionReport:
    chosen_g: int
    bic_table: tuple  # ((g, bic), ...)
    flipped_ids: tuple
    largest_cluster: int
    expression_estimate: np.ndarray
    cluster_sizes: tuple
    pi: tuple

    def to_dict(self) -> dict:
        return {
            "chosen_g": int(self.chosen_g),
            "bic_table": [[int(g), float(b)] for g, b in self.bic_table],
            "pi": [float(p) for p in self.pi],
            "cluster_sizes": [float(s) for s in self.cluster_sizes],
            "largest_cluster": int(self.largest_cluster),
            "expression_estimate": [float(v) for v in self.expression_estimate],
            "flipped_ids": list(self.flipped_ids),
        }


def largest_cluster(fit: MixtureFit) -> int:
    # np.argmax returns the first maximum, so ties go to the smaller index
    return int(np.argmax(fit.cluster_sizes))


def estimate_expression(fit: MixtureFit) -> np.ndarray:
    """Mean of the component carrying the most responsibility mass."""
    return fit.components[largest_cluster(fit)].mu.copy()


def correct_dataset(data: Dataset, fit: MixtureFit, t: Transformation,
                    bic_table=None) -> tuple[Dataset, CorrectionReport]:
    """Replace every point with ``xi < 0.5`` by ``T^-1 y``.

    Parameters
    ----------
    data : Dataset
        The data ``fit`` was estimated on.
    fit : MixtureFit
    t : Transformation
    bic_table : dict or sequence of (g, bic), optional
        Copied into the report.

    Returns
    -------
    corrected : Dataset
        Same ids and order as ``data``.
    report : CorrectionReport
    """
    flipped = fit.resp.xi < FLIP_THRESHOLD
    values = data.values.copy()
    if flipped.any():
        values[flipped] = t.apply(values[flipped], "inverse")
    if bic_table is None:
        bic_table = ()
    elif isinstance(bic_table, dict):
        bic_table = tuple(sorted(bic_table.items()))
    report = CorrectionReport(
        chosen_g=fit.g,
        bic_table=tuple(bic_table),
        flipped_ids=tuple(i for i, f in zip(data.ids, flipped) if f),
        largest_cluster=largest_cluster(fit),
        expression_estimate=estimate_expression(fit),
        cluster_sizes=tuple(float(s) for s in fit.cluster_sizes),
        pi=tuple(c.pi for c in fit.components),
    )
    return data.with_values(values), report
