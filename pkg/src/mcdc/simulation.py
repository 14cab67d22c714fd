"""
Simulation studies with known ground truth.

Three designs are provided:

1. one Gaussian cluster, each point swapped with probability ``flip_prob``;
2. a primary cluster (probability ``tau``) plus a tight cluster on the
   diagonal, with swapping as in 1;
3. three clusters, each point rotated 120 degrees counter-clockwise and
   scaled by 2 with a cluster-specific probability.

Replicates use common random numbers across cells: replicate ``r`` draws the
same latent points and the same uniforms in every cell, and a point is
corrupted when its uniform falls below the cell's probability. Corruption
sets are therefore nested as the probability grows.

A synthetic paired-gene corpus generator for the bulk pipeline lives here
as well.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .correction import estimate_expression
from .em import EmConfig
from .model import Dataset, MCDCError, Transformation
from .pipeline import ExpressionMatrix, GenePair
from .select import select_model

logger = logging.getLogger(__name__)

FLIP_GRID = tuple(round(0.05 * i, 2) for i in range(1, 10))
TAU_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(1, 10))

STUDY3_MAP = Transformation.rotation_scale(120.0, 2.0)


@dataclass(frozen=True)
class SimSpec:
    """Design of one simulation study.

    The generating parameters are not given in the source study; the
    defaults below are chosen so that the unaltered-mean error grows like
    the published study-1 values (about 4.26 x flip probability).
    """

    study: int
    n: int
    replicates: int
    flip_probs: tuple = FLIP_GRID
    taus: tuple = ()
    seed: int = 0
    g_max: int = 9
    mean: tuple = (6.0, 10.25)
    cov: tuple = ((0.5, 0.1), (0.1, 0.5))
    diag_mean: tuple = (7.5, 7.5)
    diag_cov: tuple = ((0.05, 0.0), (0.0, 0.05))
    cluster_means: tuple = ((4.0, 8.0), (8.0, 4.0), (10.0, 10.0))
    cluster_covs: tuple = (((1.0, 0.0), (0.0, 1.0)),) * 3
    cluster_weights: tuple = (0.5, 0.3, 0.2)
    cluster_flip_probs: tuple = (0.1, 0.2, 0.3)

    def __post_init__(self):
        if self.study not in (1, 2, 3):
            raise MCDCError(f"study must be 1, 2 or 3, got {self.study}")
        if self.n <= 0 or self.replicates <= 0:
            raise MCDCError("n and replicates must be positive")
        probs = self.cluster_flip_probs if self.study == 3 else self.flip_probs
        if not probs or any(not 0.0 <= p <= 0.5 for p in probs):
            raise MCDCError(f"flip probabilities must lie in [0, 0.5], got {probs}")
        if self.study == 2 and (not self.taus or any(not 0.5 < t < 1.0 for t in self.taus)):
            raise MCDCError(f"study 2 needs tau values in (0.5, 1), got {self.taus}")
        if self.study == 3 and abs(sum(self.cluster_weights) - 1.0) > 1e-12:
            raise MCDCError("cluster_weights must sum to 1")

    @classmethod
    def default(cls, study: int, **overrides) -> "SimSpec":
        if study not in (1, 2, 3):
            raise MCDCError(f"study must be 1, 2 or 3, got {study}")
        base = {
            1: dict(n=300, replicates=100),
            2: dict(n=400, replicates=100, taus=TAU_GRID),
            3: dict(n=1000, replicates=1),
        }[study]
        base.update(overrides)
        return cls(study=study, **base)

    @property
    def transformation(self) -> Transformation:
        return STUDY3_MAP if self.study == 3 else Transformation.swap()

    @property
    def true_g(self) -> int:
        return self.study

    def cells(self) -> list[dict]:
        if self.study == 1:
            return [{"flip_prob": p} for p in self.flip_probs]
        if self.study == 2:
            return [{"tau": t, "flip_prob": p} for t in self.taus for p in self.flip_probs]
        return [{"flip_probs": tuple(self.cluster_flip_probs)}]


@dataclass(frozen=True)
class SimData:
    data: Dataset
    latent: np.ndarray
    transformed: np.ndarray  # bool, True where the observed point is T x
    labels: np.ndarray  # generating cluster of each point
    true_mean: np.ndarray  # mean the estimate is scored against
    scored: np.ndarray  # bool mask of points used for flip-classification scoring


def _replicate_rng(spec: SimSpec, replicate: int):
    return np.random.default_rng(np.random.SeedSequence([spec.seed, spec.study, replicate]))


def generate(spec: SimSpec, cell: dict, replicate: int) -> SimData:
    """Draw one dataset for ``cell`` (an element of ``spec.cells()``)."""
    rng = _replicate_rng(spec, replicate)
    n = spec.n
    t = spec.transformation
    if spec.study == 1:
        latent = rng.multivariate_normal(spec.mean, spec.cov, size=n)
        u = rng.random(n)
        transformed = u < cell["flip_prob"]
        labels = np.zeros(n, dtype=int)
        true_mean = np.array(spec.mean, dtype=float)
        scored = np.ones(n, dtype=bool)
    elif spec.study == 2:
        primary = rng.multivariate_normal(spec.mean, spec.cov, size=n)
        diag = rng.multivariate_normal(spec.diag_mean, spec.diag_cov, size=n)
        in_primary = rng.random(n) < cell["tau"]
        u = rng.random(n)
        latent = np.where(in_primary[:, None], primary, diag)
        transformed = u < cell["flip_prob"]
        labels = np.where(in_primary, 0, 1)
        true_mean = np.array(spec.mean, dtype=float)
        # a swap of a point on the diagonal is unidentifiable, so only primary points are scored
        scored = in_primary
    else:
        weights = np.asarray(spec.cluster_weights, dtype=float)
        labels = np.searchsorted(np.cumsum(weights), rng.random(n), side="right")
        labels = np.minimum(labels, len(weights) - 1)
        draws = np.stack([rng.multivariate_normal(m, c, size=n)
                          for m, c in zip(spec.cluster_means, spec.cluster_covs)])
        latent = draws[labels, np.arange(n)]
        u = rng.random(n)
        transformed = u < np.asarray(cell["flip_probs"])[labels]
        true_mean = np.array(spec.cluster_means[int(np.argmax(weights))], dtype=float)
        scored = np.ones(n, dtype=bool)
    observed = latent.copy()
    if transformed.any():
        observed[transformed] = t.apply(latent[transformed], "forward")
    return SimData(Dataset(observed), latent, transformed, labels, true_mean, scored)


# ---------------------------------------------------------------------------
# Study runner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicateResult:
    cell: int
    replicate: int
    ok: bool
    chosen_g: int
    mae_unaltered: float
    mae_mcdc: float
    n_errors: int
    frac_correct: float


@dataclass(frozen=True)
class CellResult:
    params: dict
    n_ok: int
    n_failed: int
    mae_unaltered: float
    mae_mcdc: float
    mae_ratio: float
    frac_correct_g: float
    frac_points_correct: float
    frac_perfect: float
    max_errors: int


@dataclass(frozen=True)
class SimResult:
    spec: SimSpec
    cells: tuple
    replicates: tuple = field(repr=False)


def _replicate_seed(config_seed: int, cell: int, replicate: int) -> int:
    ss = np.random.SeedSequence([config_seed, cell, replicate])
    return int(ss.generate_state(1, np.uint64)[0])


def _run_one(args):
    spec, config, ci, cell, r = args
    sim = generate(spec, cell, r)
    mae_raw = float(np.mean(np.abs(sim.data.values.mean(axis=0) - sim.true_mean)))
    cfg = replace(config, seed=_replicate_seed(config.seed, ci, r))
    try:
        sel = select_model(sim.data, spec.transformation, spec.g_max, cfg)
    except MCDCError as exc:
        logger.warning("cell %d replicate %d failed: %s", ci, r, exc)
        return ReplicateResult(ci, r, False, 0, mae_raw, np.nan, -1, np.nan)
    est = estimate_expression(sel.fit)
    predicted = sel.fit.resp.xi < 0.5
    errors = int(np.sum((predicted != sim.transformed) & sim.scored))
    n_scored = int(sim.scored.sum())
    return ReplicateResult(
        ci, r, True, sel.g, mae_raw,
        float(np.mean(np.abs(est - sim.true_mean))),
        errors, 1.0 - errors / n_scored if n_scored else np.nan,
    )


def _summarize(spec, ci, cell, reps) -> CellResult:
    ok = [r for r in reps if r.ok]
    raw = float(np.mean([r.mae_unaltered for r in reps]))
    if not ok:
        return CellResult(cell, 0, len(reps), raw, np.nan, np.nan, np.nan, np.nan, np.nan, -1)
    mcdc = float(np.mean([r.mae_mcdc for r in ok]))
    return CellResult(
        params=cell,
        n_ok=len(ok),
        n_failed=len(reps) - len(ok),
        mae_unaltered=raw,
        mae_mcdc=mcdc,
        mae_ratio=raw / mcdc if mcdc > 0 else np.inf,
        frac_correct_g=float(np.mean([r.chosen_g == spec.true_g for r in ok])),
        frac_points_correct=float(np.mean([r.frac_correct for r in ok])),
        frac_perfect=float(np.mean([r.n_errors == 0 for r in ok])),
        max_errors=int(max(r.n_errors for r in ok)),
    )


def run_study(spec: SimSpec, config: EmConfig = EmConfig(), n_jobs: int = 1) -> SimResult:
    """Fit every replicate of every cell and aggregate errors per cell.

    Each replicate runs BIC selection over ``1..spec.g_max`` components.
    Fit failures are recorded as failed replicates rather than raised.
    Results are independent of ``n_jobs``.
    """
    cells = spec.cells()
    tasks = [(spec, config, ci, cell, r) for ci, cell in enumerate(cells)
             for r in range(spec.replicates)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            reps = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (8 * n_jobs))))
    else:
        reps = [_run_one(task) for task in tasks]
    summaries = tuple(
        _summarize(spec, ci, cell, [r for r in reps if r.cell == ci])
        for ci, cell in enumerate(cells)
    )
    return SimResult(spec, summaries, tuple(reps))


def _cell_columns(spec):
    return {1: ["flip_prob"], 2: ["tau", "flip_prob"], 3: ["flip_probs"]}[spec.study]


def _fmt(v):
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(result: SimResult, out_dir) -> None:
    """Write ``cells.csv``, ``replicates.csv``, ``mae_long.csv`` and ``summary.json``."""
    os.makedirs(out_dir, exist_ok=True)
    keys = _cell_columns(result.spec)
    stats = [f for f in CellResult.__dataclass_fields__ if f != "params"]
    with open(os.path.join(out_dir, "cells.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + stats)
        for c in result.cells:
            w.writerow([_fmt(c.params[k]) for k in keys] + [_fmt(getattr(c, s)) for s in stats])
    with open(os.path.join(out_dir, "mae_long.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ["method", "mae"])
        for c in result.cells:
            for method, v in (("unaltered", c.mae_unaltered), ("mcdc", c.mae_mcdc)):
                w.writerow([_fmt(c.params[k]) for k in keys] + [method, _fmt(v)])
    rep_fields = list(ReplicateResult.__dataclass_fields__)
    with open(os.path.join(out_dir, "replicates.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(rep_fields)
        for r in result.replicates:
            w.writerow([_fmt(getattr(r, f)) for f in rep_fields])
    spec = asdict(result.spec)
    summary = {
        "spec": spec,
        "n_cells": len(result.cells),
        "n_datasets": len(result.replicates),
        "n_failed": sum(not r.ok for r in result.replicates),
        "frac_correct_g": float(np.mean([r.chosen_g == result.spec.true_g
                                         for r in result.replicates if r.ok])),
        "cells": [
            {**{k: c.params[k] for k in keys},
             **{s: (None if isinstance(getattr(c, s), float) and not np.isfinite(getattr(c, s))
                    else getattr(c, s)) for s in stats}}
            for c in result.cells
        ],
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Synthetic paired-gene corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Corpus:
    matrix: ExpressionMatrix
    pairs: list
    baseline: dict
    true_levels: dict
    injected: dict  # pair_id -> set of swapped experiment ids


def expression_corpus(n_pairs: int = 500, n_experiments: int = 2000, swap_prob: float = 0.10,
                      diag_prob: float = 0.03, n_plates: int = 20, seed: int = 0,
                      noise: float = 0.3, baseline_noise: float = 0.3) -> Corpus:
    """Synthetic paired-gene matrix with injected swaps and a linear baseline.

    Each pair has true log2 levels ``a`` and ``b`` at least 2 apart, so that
    a swap moves a point across the diagonal. Rows are bivariate normal
    around ``(a, b)`` with per-coordinate variance ``noise``. A fraction
    ``diag_prob`` of rows per pair is replaced by a tight cluster at the
    pair's midpoint on the diagonal, and each remaining row is swapped with
    probability ``swap_prob``. The baseline is ``1.3 * level + 0.5`` plus
    Gaussian noise with standard deviation ``baseline_noise``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    experiments = tuple(f"exp{i:05d}" for i in range(n_experiments))
    plates = tuple(f"plate{i % n_plates:03d}" for i in range(n_experiments))
    genes, pairs, cols = [], [], []
    true_levels, injected = {}, {}
    cov = noise * np.array([[1.0, 0.2], [0.2, 1.0]])
    for p in range(n_pairs):
        a = rng.uniform(5.0, 12.0)
        b = a + rng.choice([-1.0, 1.0]) * rng.uniform(2.0, 4.0)
        ga, gb, pid = f"g{2 * p:04d}", f"g{2 * p + 1:04d}", f"pair{p:04d}"
        block = rng.multivariate_normal([a, b], cov, size=n_experiments)
        diag = rng.random(n_experiments) < diag_prob
        mid = 0.5 * (a + b)
        block[diag] = mid + rng.normal(0.0, 0.1, size=(int(diag.sum()), 1)) \
            + rng.normal(0.0, 0.02, size=(int(diag.sum()), 2))
        swap = (~diag) & (rng.random(n_experiments) < swap_prob)
        block[swap] = block[swap][:, ::-1]
        genes += [ga, gb]
        pairs.append(GenePair(pid, ga, gb))
        cols.append(block)
        true_levels[ga], true_levels[gb] = a, b
        injected[pid] = {experiments[i] for i in np.flatnonzero(swap)}
    values = np.hstack(cols)
    matrix = ExpressionMatrix(experiments, tuple(genes), values, plates=plates)
    baseline = {g: 1.3 * v + 0.5 + rng.normal(0.0, baseline_noise) for g, v in true_levels.items()}
    return Corpus(matrix, pairs, baseline, true_levels, injected)
