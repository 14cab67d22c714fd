"""
Bulk correction of paired-gene expression data.

File formats (CSV, UTF-8, header row required):

* expression matrix: ``experiment_id[,plate_id][,perturbation],<gene>...``
* pair map: ``pair_id,gene_a,gene_b``
* baseline: ``gene_id,value``
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .correction import correct_dataset
from .em import EmConfig
from .model import Dataset, MCDCError, Transformation
from .select import select_model

logger = logging.getLogger(__name__)

META_COLUMNS = ("plate_id", "perturbation")


class ValidationError(MCDCError):
    """Malformed or inconsistent input files."""


@dataclass(frozen=True, eq=False)
class ExpressionMatrix:
    experiments: tuple
    genes: tuple
    values: np.ndarray
    plates: tuple | None = None
    perturbations: tuple | None = None
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (len(self.experiments), len(self.genes)):
            raise ValidationError(
                f"values shape {values.shape} != ({len(self.experiments)}, {len(self.genes)})")
        if len(set(self.genes)) != len(self.genes):
            raise ValidationError("gene ids must be unique")
        if len(set(self.experiments)) != len(self.experiments):
            raise ValidationError("experiment ids must be unique")
        for name in ("plates", "perturbations"):
            col = getattr(self, name)
            if col is not None and len(col) != len(self.experiments):
                raise ValidationError(f"{name} has {len(col)} entries for {len(self.experiments)} experiments")
        object.__setattr__(self, "experiments", tuple(self.experiments))
        object.__setattr__(self, "genes", tuple(self.genes))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_index", {g: j for j, g in enumerate(self.genes)})

    def column(self, gene) -> int:
        try:
            return self._index[gene]
        except KeyError:
            raise ValidationError(f"unknown gene {gene!r}") from None

    def with_values(self, values) -> "ExpressionMatrix":
        return replace(self, values=values, _index=None)


@dataclass(frozen=True)
class GenePair:
    pair_id: str
    gene_a: str
    gene_b: str


def validate_pairs(pairs: Sequence[GenePair], matrix: ExpressionMatrix | None = None) -> None:
    seen_ids, seen_genes = set(), {}
    for p in pairs:
        if p.pair_id in seen_ids:
            raise ValidationError(f"duplicate pair id {p.pair_id!r}")
        seen_ids.add(p.pair_id)
        if p.gene_a == p.gene_b:
            raise ValidationError(f"pair {p.pair_id!r} uses gene {p.gene_a!r} twice")
        for gene in (p.gene_a, p.gene_b):
            if gene in seen_genes:
                raise ValidationError(
                    f"gene {gene!r} appears in pairs {seen_genes[gene]!r} and {p.pair_id!r}")
            seen_genes[gene] = p.pair_id
            if matrix is not None and gene not in matrix._index:
                raise ValidationError(f"pair {p.pair_id!r} references gene {gene!r} not in the matrix")


# ---------------------------------------------------------------------------
# Reading and writing
# ---------------------------------------------------------------------------

def _parse_float(text, path, line, column):
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(
            f"{path}: line {line}, column {column!r}: non-numeric value {text!r}") from None
    if not np.isfinite(value):
        raise ValidationError(f"{path}: line {line}, column {column!r}: non-finite value {text!r}")
    return value


def read_matrix(path) -> ExpressionMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if not header or header[0] != "experiment_id":
            raise ValidationError(f"{path}: line 1: first column must be 'experiment_id'")
        meta = [c for c in header[1:3] if c in META_COLUMNS]
        genes = header[1 + len(meta):]
        if not genes:
            raise ValidationError(f"{path}: no gene columns")
        exps, plates, perts, rows = [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
            exps.append(row[0])
            m = dict(zip(meta, row[1:1 + len(meta)]))
            plates.append(m.get("plate_id"))
            perts.append(m.get("perturbation"))
            rows.append([_parse_float(v, path, line, g) for v, g in zip(row[1 + len(meta):], genes)])
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    try:
        return ExpressionMatrix(
            tuple(exps), tuple(genes), np.array(rows),
            plates=tuple(plates) if "plate_id" in meta else None,
            perturbations=tuple(perts) if "perturbation" in meta else None,
        )
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_matrix(matrix: ExpressionMatrix, path) -> None:
    header = ["experiment_id"]
    if matrix.plates is not None:
        header.append("plate_id")
    if matrix.perturbations is not None:
        header.append("perturbation")
    header.extend(matrix.genes)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, exp in enumerate(matrix.experiments):
            row = [exp]
            if matrix.plates is not None:
                row.append(matrix.plates[i])
            if matrix.perturbations is not None:
                row.append(matrix.perturbations[i])
            row.extend(repr(float(v)) for v in matrix.values[i])
            w.writerow(row)


def _read_table(path, columns):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(columns):
            raise ValidationError(f"{path}: line 1: header must be {','.join(columns)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise ValidationError(f"{path}: line {line}: expected {len(columns)} fields, got {len(row)}")
            yield line, row


def read_pairs(path) -> list[GenePair]:
    pairs = [GenePair(*row) for _, row in _read_table(path, ("pair_id", "gene_a", "gene_b"))]
    try:
        validate_pairs(pairs)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return pairs


def write_pairs(pairs: Sequence[GenePair], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "gene_a", "gene_b"])
        for p in pairs:
            w.writerow([p.pair_id, p.gene_a, p.gene_b])


def read_baseline(path) -> dict:
    table = {}
    for line, (gene, value) in _read_table(path, ("gene_id", "value")):
        if gene in table:
            raise ValidationError(f"{path}: line {line}: duplicate gene {gene!r}")
        table[gene] = _parse_float(value, path, line, "value")
    return table


def write_baseline(table: Mapping, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gene_id", "value"])
        for gene, value in table.items():
            w.writerow([gene, repr(float(value))])


def load_inputs(matrix_path, pairs_path, baseline_path=None):
    """Read and cross-validate the matrix, pair map and optional baseline."""
    matrix = read_matrix(matrix_path)
    pairs = read_pairs(pairs_path)
    validate_pairs(pairs, matrix)
    baseline = read_baseline(baseline_path) if baseline_path is not None else None
    logger.info("loaded %d experiments x %d genes, %d pairs", len(matrix.experiments),
                len(matrix.genes), len(pairs))
    return matrix, pairs, baseline


# ---------------------------------------------------------------------------
# Correction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairReport:
    pair_id: str
    gene_a: str
    gene_b: str
    report: object = None  # CorrectionReport, None when the fit failed
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.report is not None

    def to_dict(self) -> dict:
        d = {"pair_id": self.pair_id, "gene_a": self.gene_a, "gene_b": self.gene_b}
        if self.report is None:
            d.update(chosen_g=None, bic_table=[], pi=[], cluster_sizes=[],
                     expression_estimate=None, flipped_ids=[], error=self.error)
        else:
            d.update(self.report.to_dict())
        return d


def _correct_pair(args):
    pair_id, gene_a, gene_b, ids, block, g_max, config, patience = args
    t = Transformation.swap()
    data = Dataset(block, ids)
    try:
        sel = select_model(data, t, g_max, config, patience)
    except MCDCError as exc:
        return block, PairReport(pair_id, gene_a, gene_b, error=str(exc))
    corrected, report = correct_dataset(data, sel.fit, t, sel.bic_table)
    return corrected.values, PairReport(pair_id, gene_a, gene_b, report)


def correct_all_pairs(matrix: ExpressionMatrix, pairs: Sequence[GenePair],
                      config: EmConfig = EmConfig(), g_max: int = 9, n_jobs: int = 1,
                      patience: int | None = None):
    """Run model selection and correction on every gene pair independently.

    Returns the corrected matrix (same shape and order; genes outside any
    pair are untouched) and one PairReport per pair, in pair order. A pair
    whose fit fails keeps its original values and carries the error text.
    ``patience`` is passed to :func:`select_model`.
    """
    validate_pairs(pairs, matrix)
    tasks = []
    for p in pairs:
        ja, jb = matrix.column(p.gene_a), matrix.column(p.gene_b)
        block = matrix.values[:, [ja, jb]]
        tasks.append((p.pair_id, p.gene_a, p.gene_b, matrix.experiments, block, g_max, config, patience))
    if n_jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_correct_pair, tasks, chunksize=max(1, len(tasks) // (4 * n_jobs))))
    else:
        results = [_correct_pair(task) for task in tasks]
    values = matrix.values.copy()
    reports = []
    for p, (block, rep) in zip(pairs, results):
        values[:, matrix.column(p.gene_a)] = block[:, 0]
        values[:, matrix.column(p.gene_b)] = block[:, 1]
        if not rep.ok:
            logger.warning("pair %s left uncorrected: %s", p.pair_id, rep.error)
        reports.append(rep)
    return matrix.with_values(values), reports


def write_reports(reports: Sequence[PairReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Expression estimates and baseline comparison
# ---------------------------------------------------------------------------

def unaltered_estimates(matrix: ExpressionMatrix) -> dict:
    """Per-gene mean across all experiments."""
    return dict(zip(matrix.genes, matrix.values.mean(axis=0)))


def corrected_estimates(matrix: ExpressionMatrix, reports: Sequence[PairReport]) -> dict:
    """Largest-cluster means for paired genes; column means for the rest and for failed pairs."""
    est = unaltered_estimates(matrix)
    for r in reports:
        if r.ok:
            est[r.gene_a] = float(r.report.expression_estimate[0])
            est[r.gene_b] = float(r.report.expression_estimate[1])
    return est


@dataclass(frozen=True)
class BaselineFit:
    mse: float
    n_genes: int
    slope: float
    intercept: float


def baseline_mse(estimates: Mapping, baseline: Mapping) -> BaselineFit:
    """Residual MSE (SSR / n) of regressing baseline values on the estimates."""
    genes = [g for g in estimates if g in baseline]
    if len(genes) < 3:
        raise ValidationError(f"only {len(genes)} genes in common with the baseline; need >= 3")
    x = np.array([estimates[g] for g in genes], dtype=float)
    y = np.array([baseline[g] for g in genes], dtype=float)
    xc = x - x.mean()
    sxx = xc @ xc
    if not sxx > 0:
        raise ValidationError("expression estimates have zero variance")
    slope = (xc @ (y - y.mean())) / sxx
    intercept = y.mean() - slope * x.mean()
    resid = y - (intercept + slope * x)
    return BaselineFit(float(resid @ resid / len(genes)), len(genes), float(slope), float(intercept))


def write_estimates(unaltered: Mapping, corrected: Mapping, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gene_id", "unaltered", "mcdc"])
        for gene in unaltered:
            w.writerow([gene, repr(float(unaltered[gene])), repr(float(corrected[gene]))])


def run_correct(matrix_path, pairs_path, out_dir, baseline_path=None, g_max=9,
                config: EmConfig = EmConfig(), n_jobs=1, patience=None) -> dict:
    """File-to-file driver behind ``mcdc correct``."""
    matrix, pairs, baseline = load_inputs(matrix_path, pairs_path, baseline_path)
    corrected, reports = correct_all_pairs(matrix, pairs, config, g_max, n_jobs, patience)
    os.makedirs(out_dir, exist_ok=True)
    write_matrix(corrected, os.path.join(out_dir, "corrected_matrix.csv"))
    write_reports(reports, os.path.join(out_dir, "reports.json"))
    before = unaltered_estimates(matrix)
    after = corrected_estimates(matrix, reports)
    write_estimates(before, after, os.path.join(out_dir, "expression_estimates.csv"))
    summary = {
        "n_experiments": len(matrix.experiments),
        "n_genes": len(matrix.genes),
        "n_pairs": len(pairs),
        "n_failed_pairs": sum(not r.ok for r in reports),
        "n_flipped": sum(len(r.report.flipped_ids) for r in reports if r.ok),
    }
    if baseline is not None:
        summary["baseline"] = {
            name: vars(baseline_mse(est, baseline))
            for name, est in (("unaltered", before), ("mcdc", after))
        }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary
