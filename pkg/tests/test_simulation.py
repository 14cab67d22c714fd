import json
import os

import numpy as np
import pytest

from mcdc import EmConfig, MCDCError
from mcdc.simulation import SimSpec, expression_corpus, generate, run_study, write_results


def test_zero_flip_returns_latent():
    spec = SimSpec.default(1, flip_probs=(0.0,))
    sim = generate(spec, spec.cells()[0], 0)
    np.testing.assert_array_equal(sim.data.values, sim.latent)
    assert not sim.transformed.any()


def test_study1_flip_fraction():
    spec = SimSpec.default(1, flip_probs=(0.3,))
    sim = generate(spec, spec.cells()[0], 4)
    assert abs(sim.transformed.mean() - 0.3) <= 3 * np.sqrt(0.3 * 0.7 / 300)
    np.testing.assert_array_equal(sim.data.values[sim.transformed], sim.latent[sim.transformed][:, ::-1])


def test_study3_cluster_sizes():
    spec = SimSpec.default(3)
    sim = generate(spec, spec.cells()[0], 0)
    counts = np.bincount(sim.labels, minlength=3)
    for c, w in zip(counts, (0.5, 0.3, 0.2)):
        assert abs(c - 1000 * w) <= 3 * np.sqrt(1000 * w * (1 - w))
    t = spec.transformation
    np.testing.assert_allclose(t.apply(sim.data.values[sim.transformed], "inverse"),
                               sim.latent[sim.transformed], atol=1e-12)


def test_study2_scores_primary_only():
    spec = SimSpec.default(2, taus=(0.7,), flip_probs=(0.2,))
    sim = generate(spec, spec.cells()[0], 0)
    np.testing.assert_array_equal(sim.scored, sim.labels == 0)
    assert abs(sim.scored.mean() - 0.7) < 0.1


def test_cells_nested_across_flip_probabilities():
    # the same replicate reuses its draws, so a point flipped at 0.1 is flipped at 0.2
    spec = SimSpec.default(1)
    a = generate(spec, {"flip_prob": 0.1}, 7)
    b = generate(spec, {"flip_prob": 0.2}, 7)
    np.testing.assert_array_equal(a.latent, b.latent)
    assert np.all(b.transformed[a.transformed])


def test_spec_validation():
    with pytest.raises(MCDCError):
        SimSpec.default(1, flip_probs=(0.6,))
    with pytest.raises(MCDCError):
        SimSpec.default(2, taus=(0.4,))
    with pytest.raises(MCDCError):
        SimSpec.default(4)
    with pytest.raises(MCDCError):
        SimSpec.default(1, n=0)
    with pytest.raises(MCDCError):
        SimSpec.default(3, cluster_weights=(0.5, 0.5, 0.5))


def test_run_study_deterministic_and_parallel_safe(tmp_path):
    spec = SimSpec.default(1, replicates=3, flip_probs=(0.1, 0.3), g_max=2)
    a = run_study(spec, EmConfig(seed=2))
    b = run_study(spec, EmConfig(seed=2), n_jobs=2)
    assert a.replicates == b.replicates
    write_results(a, tmp_path / "a")
    write_results(b, tmp_path / "b")
    for name in ("cells.csv", "mae_long.csv", "replicates.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["n_datasets"] == 6 and len(summary["cells"]) == 2
    lines = (tmp_path / "a" / "mae_long.csv").read_text().splitlines()
    assert lines[0] == "flip_prob,method,mae" and len(lines) == 5


def test_unaltered_mae_grows_with_flip_probability():
    spec = SimSpec.default(1, replicates=4, g_max=1)
    res = run_study(spec)
    raw = [c.mae_unaltered for c in res.cells]
    assert np.all(np.diff(raw) > 0)
    for c in res.cells:
        assert 0.0 <= c.frac_points_correct <= 1.0 and c.mae_mcdc >= 0.0


def test_zero_flip_mae_is_sampling_error():
    spec = SimSpec.default(1, replicates=5, flip_probs=(0.0,), g_max=2)
    (cell,) = run_study(spec).cells
    # sd of a coordinate mean is sqrt(0.5 / 300); the mean absolute value is about 0.8 of that
    expected = np.sqrt(2 / np.pi) * np.sqrt(0.5 / 300)
    assert cell.mae_unaltered == pytest.approx(expected, rel=0.6)
    assert cell.mae_mcdc == pytest.approx(cell.mae_unaltered, abs=0.01)


def test_expression_corpus_layout():
    c = expression_corpus(n_pairs=3, n_experiments=200, seed=1)
    assert c.matrix.values.shape == (200, 6)
    assert len(c.pairs) == 3 and len(c.baseline) == 6
    assert len(set(c.matrix.plates)) == 20
    for p in c.pairs:
        inj = c.injected[p.pair_id]
        assert 5 < len(inj) < 40
        a, b = c.true_levels[p.gene_a], c.true_levels[p.gene_b]
        assert 2.0 <= abs(a - b) <= 4.0
    again = expression_corpus(n_pairs=3, n_experiments=200, seed=1)
    np.testing.assert_array_equal(c.matrix.values, again.matrix.values)
