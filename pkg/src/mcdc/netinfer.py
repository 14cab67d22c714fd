"""
Knockdown-based regulatory edge scoring and evaluation.

Knockdown profiles are z-standardized against untreated controls on the
same plate. For each regulator ``r`` and candidate target ``t`` the target's
z-values are regressed on the regulator's z-values across all experiments
knocking down ``r``; the BIC difference between the slope and intercept-only
models gives a Bayes factor, which is combined with a prior edge probability.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit, logit
from scipy.stats import binom

from .pipeline import ExpressionMatrix, ValidationError, _parse_float, read_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KnockdownSet:
    """Knockdown experiments: one row per experiment over a common gene set."""

    experiments: tuple
    plates: tuple
    knockdown_genes: tuple
    genes: tuple
    values: np.ndarray
    skipped: tuple = ()  # (plate, gene) combinations left as NaN by standardize()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        n = len(self.experiments)
        if values.shape != (n, len(self.genes)):
            raise ValidationError(f"values shape {values.shape} != ({n}, {len(self.genes)})")
        if len(self.plates) != n or len(self.knockdown_genes) != n:
            raise ValidationError("plates and knockdown_genes must have one entry per experiment")
        gene_set = set(self.genes)
        for exp, plate, kd in zip(self.experiments, self.plates, self.knockdown_genes):
            if not plate:
                raise ValidationError(f"experiment {exp!r} has an empty plate id")
            if kd not in gene_set:
                raise ValidationError(f"experiment {exp!r} knocks down unknown gene {kd!r}")
        object.__setattr__(self, "experiments", tuple(self.experiments))
        object.__setattr__(self, "plates", tuple(self.plates))
        object.__setattr__(self, "knockdown_genes", tuple(self.knockdown_genes))
        object.__setattr__(self, "genes", tuple(self.genes))
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, order=True)
class EdgeScore:
    regulator: str
    target: str
    posterior: float
    degenerate: bool = field(default=False, compare=False)


# ---------------------------------------------------------------------------
# Standardization and scoring
# ---------------------------------------------------------------------------

def standardize(knockdowns: KnockdownSet, controls: ExpressionMatrix) -> KnockdownSet:
    """z-values against same-plate controls, per gene per plate.

    Uses the sample standard deviation (n - 1 divisor). A gene with zero
    control variance on a plate is set to NaN for that plate's knockdowns
    and listed in ``skipped``.
    """
    if controls.plates is None:
        raise ValidationError("controls need a plate_id column")
    cols = [controls.column(g) for g in knockdowns.genes]
    ctrl_plates = np.asarray(controls.plates)
    z = np.empty_like(knockdowns.values)
    skipped = []
    kd_plates = np.asarray(knockdowns.plates)
    for plate in dict.fromkeys(knockdowns.plates):
        ctrl = controls.values[ctrl_plates == plate][:, cols]
        if ctrl.shape[0] < 2:
            raise ValidationError(f"plate {plate!r} has {ctrl.shape[0]} control experiments; need >= 2")
        mean = ctrl.mean(axis=0)
        sd = ctrl.std(axis=0, ddof=1)
        rows = kd_plates == plate
        zero = ~(sd > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            block = (knockdowns.values[rows] - mean) / sd
        block[:, zero] = np.nan
        z[rows] = block
        for j in np.flatnonzero(zero):
            logger.warning("gene %s has zero control variance on plate %s; skipped",
                           knockdowns.genes[j], plate)
            skipped.append((plate, knockdowns.genes[j]))
    return replace(knockdowns, values=z, skipped=tuple(skipped))


def _ols_bic(x, y):
    """BIC (n log(SSR/n) + p log n) for intercept-only and slope models."""
    n = x.size
    yc = y - y.mean()
    ssr0 = yc @ yc
    xc = x - x.mean()
    sxx = xc @ xc
    ssr1 = max(ssr0 - (xc @ yc) ** 2 / sxx, 0.0)
    tiny = np.finfo(float).tiny
    bic0 = n * np.log(max(ssr0, tiny) / n) + 1 * np.log(n)
    bic1 = n * np.log(max(ssr1, tiny) / n) + 2 * np.log(n)
    return bic0, bic1


def edge_posterior(regulator: str, target: str, x, y, prior: float = 0.5) -> EdgeScore:
    """Posterior probability of an edge ``regulator -> target``.

    Parameters
    ----------
    x, y : array_like
        Regulator and target z-values over the experiments knocking down
        the regulator. Pairs with a NaN in either are dropped.
    prior : float
        Prior edge probability.
    """
    if regulator == target:
        raise ValidationError("regulator and target must differ")
    if not 0.0 < prior < 1.0:
        raise ValidationError(f"prior must lie in (0, 1), got {prior}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if x.size < 3:
        raise ValidationError(
            f"{x.size} usable experiments for {regulator}->{target}; need >= 3")
    if not np.ptp(x) > 0 or not np.ptp(y) > 0:
        return EdgeScore(regulator, target, prior, degenerate=True)
    bic0, bic1 = _ols_bic(x, y)
    log_bf = 0.5 * (bic0 - bic1)
    return EdgeScore(regulator, target, float(expit(logit(prior) + log_bf)))


def rank_edges(scores: Iterable[EdgeScore]) -> list[EdgeScore]:
    """Descending posterior; ties by (regulator, target)."""
    return sorted(scores, key=lambda s: (-s.posterior, s.regulator, s.target))


def score_edges(z: KnockdownSet, prior: float = 0.5, min_experiments: int = 3) -> list[EdgeScore]:
    """Score every (regulator, other gene) pair for regulators knocked down often enough.

    All knockdown experiments of a regulator are pooled into one regression.
    The scored pairs form the candidate universe.
    """
    col = {g: j for j, g in enumerate(z.genes)}
    kd = np.asarray(z.knockdown_genes)
    scores = []
    for reg in sorted(set(z.knockdown_genes)):
        rows = z.values[kd == reg]
        if rows.shape[0] < min_experiments:
            logger.info("regulator %s has %d knockdowns; not scored", reg, rows.shape[0])
            continue
        x = rows[:, col[reg]]
        for tgt in z.genes:
            if tgt == reg:
                continue
            try:
                scores.append(edge_posterior(reg, tgt, x, rows[:, col[tgt]], prior))
            except ValidationError as exc:
                logger.info("edge %s->%s not scored: %s", reg, tgt, exc)
    return rank_edges(scores)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def binomial_pvalue(tp: int, n_called: int, n_true: int, n_universe: int) -> float:
    """P(X >= tp) for X ~ Binomial(n_called, n_true / n_universe)."""
    if n_called == 0:
        return 1.0
    return float(binom.sf(tp - 1, n_called, n_true / n_universe))


@dataclass(frozen=True)
class EdgeTable:
    """2x2 table of called vs true edges over the candidate universe."""

    cutoff: float
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n_called(self) -> int:
        return self.tp + self.fp

    @property
    def n_true(self) -> int:
        return self.tp + self.fn

    @property
    def n_universe(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        return self.tp / self.n_called if self.n_called else float("nan")

    @property
    def p_value(self) -> float:
        return binomial_pvalue(self.tp, self.n_called, self.n_true, self.n_universe)

    @classmethod
    def from_counts(cls, tp, n_called, n_true, n_universe, cutoff=float("nan")) -> "EdgeTable":
        return cls(cutoff, tp, n_called - tp, n_true - tp, n_universe - n_called - n_true + tp)

    def to_dict(self) -> dict:
        return {"cutoff": self.cutoff, "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "tn": self.tn, "precision": self.precision if self.n_called else None,
                "p_value": self.p_value}


def _edge_key(e):
    return (e.regulator, e.target) if isinstance(e, EdgeScore) else tuple(e)


def evaluate_edges(scores: Sequence[EdgeScore], truth: Iterable, cutoff: float,
                   universe: Iterable | None = None) -> EdgeTable:
    """Count called (posterior >= cutoff) vs true edges.

    ``universe`` defaults to the scored pairs; truth edges outside it are
    ignored.
    """
    universe = {_edge_key(s) for s in scores} if universe is None else {tuple(e) for e in universe}
    truth = {tuple(e) for e in truth} & universe
    called = {_edge_key(s) for s in scores if s.posterior >= cutoff} & universe
    tp = len(called & truth)
    return EdgeTable.from_counts(tp, len(called), len(truth), len(universe), cutoff)


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    tp: np.ndarray
    random_precision: float  # expected precision of a random ordering


def precision_recall(scores: Sequence[EdgeScore], truth: Iterable) -> PRCurve:
    """Precision and recall at every prefix of the ranked edge list."""
    truth = {tuple(e) for e in truth}
    if not truth:
        raise ValidationError("truth edge set is empty")
    ranked = rank_edges(scores)
    hits = np.array([(s.regulator, s.target) in truth for s in ranked], dtype=int)
    tp = np.cumsum(hits)
    k = np.arange(1, len(ranked) + 1)
    universe = {(s.regulator, s.target) for s in ranked}
    base = len(truth & universe) / len(universe) if universe else float("nan")
    return PRCurve(tp / len(truth), tp / k, tp, base)


def found_ranks(scores: Sequence[EdgeScore], truth: Iterable, n: int = 5) -> list[int]:
    """1-based ranks at which the first ``n`` true edges appear."""
    truth = {tuple(e) for e in truth}
    ranks = [i + 1 for i, s in enumerate(rank_edges(scores)) if (s.regulator, s.target) in truth]
    return ranks[:n]


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def read_knockdowns(path) -> KnockdownSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["experiment_id", "plate_id", "knockdown_gene"]:
            raise ValidationError(f"{path}: line 1: header must start with experiment_id,plate_id,knockdown_gene")
        genes = header[3:]
        exps, plates, kds, rows = [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
            exps.append(row[0])
            plates.append(row[1])
            kds.append(row[2])
            rows.append([_parse_float(v, path, line, g) for v, g in zip(row[3:], genes)])
    try:
        return KnockdownSet(tuple(exps), tuple(plates), tuple(kds), tuple(genes),
                            np.array(rows).reshape(len(rows), len(genes)))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_knockdowns(ks: KnockdownSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment_id", "plate_id", "knockdown_gene", *ks.genes])
        for i in range(len(ks.experiments)):
            w.writerow([ks.experiments[i], ks.plates[i], ks.knockdown_genes[i],
                        *(repr(float(v)) for v in ks.values[i])])


def apply_corrections(ks: KnockdownSet, corrected: ExpressionMatrix) -> KnockdownSet:
    """Overwrite knockdown values with corrected values for matching experiment ids."""
    rows = {e: i for i, e in enumerate(corrected.experiments)}
    shared = [g for g in ks.genes if g in corrected._index]
    kcols = [ks.genes.index(g) for g in shared]
    ccols = [corrected.column(g) for g in shared]
    values = ks.values.copy()
    for i, e in enumerate(ks.experiments):
        if e in rows:
            values[i, kcols] = corrected.values[rows[e], ccols]
    return replace(ks, values=values)


def apply_matrix_corrections(m: ExpressionMatrix, corrected: ExpressionMatrix) -> ExpressionMatrix:
    rows = {e: i for i, e in enumerate(corrected.experiments)}
    shared = [g for g in m.genes if g in corrected._index]
    mcols = [m.column(g) for g in shared]
    ccols = [corrected.column(g) for g in shared]
    values = m.values.copy()
    for i, e in enumerate(m.experiments):
        if e in rows:
            values[i, mcols] = corrected.values[rows[e], ccols]
    return m.with_values(values)


def write_edges(scores: Sequence[EdgeScore], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["regulator", "target", "posterior"])
        for s in rank_edges(scores):
            w.writerow([s.regulator, s.target, repr(float(s.posterior))])


def read_edges(path) -> list[EdgeScore]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["regulator", "target", "posterior"]:
            raise ValidationError(f"{path}: line 1: header must be regulator,target,posterior")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}: line {line}: expected 3 fields, got {len(row)}")
            p = _parse_float(row[2], path, line, "posterior")
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{path}: line {line}: posterior {p} outside [0, 1]")
            out.append(EdgeScore(row[0], row[1], p))
    return out


def read_truth(path) -> set:
    out = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["regulator", "target"]:
            raise ValidationError(f"{path}: line 1: header must be regulator,target")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}: line {line}: expected 2 fields, got {len(row)}")
            out.add((row[0], row[1]))
    return out


def run_infer(knockdowns_path, controls_path, out_path, prior=0.5, corrected_dir=None) -> list:
    """File-to-file driver behind ``mcdc infer-edges``."""
    ks = read_knockdowns(knockdowns_path)
    controls = read_matrix(controls_path)
    if corrected_dir is not None:
        corrected = read_matrix(os.path.join(corrected_dir, "corrected_matrix.csv"))
        ks = apply_corrections(ks, corrected)
        controls = apply_matrix_corrections(controls, corrected)
    scores = score_edges(standardize(ks, controls), prior)
    write_edges(scores, out_path)
    return scores


def run_evaluate(edges_path, truth_path, out_path, cutoffs=(0.5, 0.95)) -> dict:
    """File-to-file driver behind ``mcdc evaluate``.

    Writes a JSON file with one 2x2 table per cutoff plus the top found
    ranks, and ``<out stem>_pr.csv`` with the precision-recall curve.
    """
    scores = read_edges(edges_path)
    truth = read_truth(truth_path)
    result = {
        "n_edges": len(scores),
        "n_true_in_universe": len(truth & {(s.regulator, s.target) for s in scores}),
        "tables": [evaluate_edges(scores, truth, c).to_dict() for c in cutoffs],
        "found_ranks": found_ranks(scores, truth),
    }
    curve = precision_recall(scores, truth)
    result["random_precision"] = curve.random_precision
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=1, sort_keys=True)
        fh.write("\n")
    stem = os.path.splitext(out_path)[0]
    ranked = rank_edges(scores)
    with open(stem + "_pr.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "regulator", "target", "posterior", "tp", "precision", "recall"])
        for i, s in enumerate(ranked):
            w.writerow([i + 1, s.regulator, s.target, repr(float(s.posterior)), int(curve.tp[i]),
                        repr(float(curve.precision[i])), repr(float(curve.recall[i]))])
    return result
