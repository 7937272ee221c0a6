import dataclasses

import numpy as np
import pytest

from altermoma_lab.altermoma.lib import deci, kept_count
from altermoma_lab.baselines import BASELINES
from altermoma_lab.baselines.lib import (imp_prune, magnitude_scores, random_scores, run_baseline, snip_scores,
                                         synflow_scores)
from altermoma_lab.synth_data.lib import batches
from altermoma_lab.utils.reports import read_csv


def test_snip_equals_deci(trained_model, small_splits):
    eval_batches = batches(small_splits[0], 32, 3, 4)
    snip = snip_scores(trained_model, eval_batches)
    reference = deci(trained_model, eval_batches)
    assert list(snip.index) == list(reference.index)
    np.testing.assert_allclose(snip.to_numpy(), reference.to_numpy(), rtol=0, atol=1e-12)


def test_magnitude_scores(small_model):
    scores = magnitude_scores(small_model)
    weight = small_model.parameters['camera/l0/weight'].values.data
    assert scores['camera/l0/weight[000008]'] == abs(weight[1, 2])

    channels = magnitude_scores(small_model, structured=True)
    bias = small_model.parameters['camera/l0/bias'].values.data
    expected = np.sqrt(np.sum(weight[:, 2] ** 2) + bias[2] ** 2)
    assert channels['camera/l0/ch0002'] == pytest.approx(expected, rel=1e-12)
    assert len(channels) == 6 + 3 + 6 + 3 + 5


def test_random_scores(small_model):
    a = random_scores(small_model, seed=4)
    np.testing.assert_array_equal(a.to_numpy(), random_scores(small_model, seed=4).to_numpy())
    assert ((a >= 0) & (a < 1)).all()
    assert len(random_scores(small_model, seed=4, structured=True)) == 23


def test_synflow_is_data_free_and_non_negative(small_model):
    before = {name: p.values.data.copy() for name, p in small_model.parameters.items()}
    scores = synflow_scores(small_model, iterations=1)
    assert len(scores) == small_model.n_parameters()
    assert (scores >= 0).all()
    for name, p in small_model.parameters.items():
        np.testing.assert_array_equal(p.values.data, before[name])
        assert np.all(p.mask == 1)


def test_synflow_iterative_pruning(small_model):
    scores = synflow_scores(small_model, iterations=4, rho=0.8)
    # entries masked before the last iteration score 0
    assert (scores == 0).sum() >= len(scores) - kept_count(len(scores), 1 - (1 - 0.8) ** (3 / 4))
    with pytest.raises(ValueError):
        synflow_scores(small_model, iterations=0)


def test_imp_prune(trained_model, small_splits):
    train, val = small_splits
    theta_init = {name: p.values.data.copy() for name, p in trained_model.parameters.items()}
    model, ledger, report = imp_prune(trained_model, train, val, rho=0.8, rounds=3, batch_size=32)

    k = kept_count(model.n_parameters(), 0.8)
    assert report.kept == report.n_unmasked == k
    assert ledger.method == 'imp'
    for name, p in model.parameters.items():
        np.testing.assert_array_equal(p.values.data, theta_init[name] * p.mask)


def test_imp_ledger_marks_earlier_removals_as_nan(trained_model, small_splits, tmp_path):
    train, val = small_splits
    _, ledger, _ = imp_prune(trained_model, train, val, rho=0.8, rounds=3, batch_size=32)

    n = len(ledger)
    scores = ledger.scores()
    assert scores.isna().sum() == n - kept_count(n, 1 - (1 - 0.8) ** (2 / 3))
    assert not ledger.table.loc[scores.isna(), 'kept'].any()
    assert np.isfinite(scores.dropna()).all()

    ledger.write(tmp_path / 'imp.csv', tmp_path / 'imp.json', 'hash')
    written = read_csv(tmp_path / 'imp.csv')
    assert written['score'].dtype == np.float64
    assert not np.isinf(written['score']).any()


@pytest.mark.parametrize('method', BASELINES)
@pytest.mark.parametrize('structured', [False, True])
def test_run_baseline_keeps_exactly_k(method, structured, trained_model, small_splits, small_prune_config):
    train, val = small_splits
    cfg = dataclasses.replace(small_prune_config, structured=structured)
    model, ledger, report = run_baseline(method, trained_model, train, val, cfg)

    assert report.method == method
    assert report.kept == report.k == kept_count(len(ledger), cfg.rho)
    assert ledger.structured == structured
    assert ledger.table['partition'].notna().all()


def test_unknown_baseline(trained_model, small_splits, small_prune_config):
    with pytest.raises(ValueError, match='magnitude'):
        run_baseline('obd', trained_model, *small_splits, small_prune_config)
