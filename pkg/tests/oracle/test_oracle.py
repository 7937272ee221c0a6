import dataclasses

import numpy as np
import pandas as pd
import pytest
from conftest import SMALL_ARCH

from altermoma_lab.altermoma.lib import deci
from altermoma_lab.fusion_model.lib import build
from altermoma_lab.fusion_model.models.partition import ModalityMasks
from altermoma_lab.oracle.lib import (TINY_ARCH, TINY_DATA, TOY_ARCH, TOY_DATA, exact_mask_delta, exact_mask_deltas,
                                      fd_gradient_check, quadratic_objective, reactivation_trajectory_error,
                                      relative_error, run_verification, spearman, trajectory_error)
from altermoma_lab.oracle.models.verify_config import VerifyConfig
from altermoma_lab.synth_data.lib import batches, generate
from altermoma_lab.utils.exceptions import LedgerError, MaskingError, ModelTooLargeError


def toy(seed: int):
    return build(dataclasses.replace(TOY_ARCH, seed=seed)), generate(TOY_DATA, seed)


def test_exact_mask_delta():
    model, train = toy(0)
    eval_batches = batches(train, 32, 0, 2)
    base = np.mean([model.loss(b) for b in eval_batches])
    weight = model.parameters['fusion/l0/weight']
    original = weight.values.data.copy()

    delta = exact_mask_delta(model, 'fusion/l0/weight[000005]', eval_batches)
    weight.values.data.reshape(-1)[5] = 0.0
    expected = abs(base - np.mean([model.loss(b) for b in eval_batches]))
    weight.values.data[...] = original
    assert delta == expected

    deltas = exact_mask_deltas(model, eval_batches)
    assert len(deltas) == model.n_parameters()
    assert deltas['fusion/l0/weight[000005]'] == delta
    np.testing.assert_array_equal(weight.values.data, original)


@pytest.mark.parametrize('element_id', ['fusion/l0/weight[999999]', 'fusion/l9/weight[000000]', 'garbage'])
def test_exact_mask_delta_unknown_id(element_id):
    model, train = toy(0)
    with pytest.raises(LedgerError):
        exact_mask_delta(model, element_id, batches(train, 32, 0, 1))


def test_exact_mask_delta_needs_the_unmasked_model():
    model, train = toy(0)
    model.modality_masks = ModalityMasks(camera=0)
    with pytest.raises(MaskingError):
        exact_mask_deltas(model, batches(train, 32, 0, 1))


@pytest.mark.parametrize('seed', range(10))
def test_gradient_check(seed):
    model, train = toy(seed)
    assert fd_gradient_check(model, train.subset(np.arange(8))) < 1e-5


def test_gradient_check_step():
    model, train = toy(0)
    with pytest.raises(ValueError):
        fd_gradient_check(model, train.subset(np.arange(8)), step=0.0)


def test_relative_error():
    assert relative_error(1.0, 1.0 + 1e-9) == 0.0
    assert relative_error(2.0, 1.0) == 0.5


def test_deci_ranks_like_the_exact_deltas():
    correlations = []
    for seed in range(10):
        model, train = toy(seed)
        eval_batches = batches(train, 32, seed, 4)
        correlations.append(spearman(deci(model, eval_batches), exact_mask_deltas(model, eval_batches)))
    assert np.mean(correlations) >= 0.8


def test_spearman():
    a = pd.Series([1.0, 2.0, 3.0, 4.0], index=list('abcd'))
    assert spearman(a, a ** 3) == pytest.approx(1.0)
    assert spearman(a, -a) == pytest.approx(-1.0)
    # aligned on the index
    assert spearman(a, pd.Series([4.0, 3.0, 2.0, 1.0], index=list('dcba'))) == pytest.approx(1.0)


@pytest.mark.parametrize('theta0, lr', [(0.5, 0.1), (-1.0, 0.05), (2.0, 0.01)])
def test_trajectory_error_quadratic_closed_form(theta0, lr):
    objective, quadratic_batches = quadratic_objective(theta0)
    expected = lr * theta0 * (1 - lr) * abs(theta0)
    assert trajectory_error(objective, quadratic_batches, lr) == pytest.approx(abs(expected), abs=1e-8)
    # the parameters are left at their initial value
    assert objective.parameters()['w'].data[0, 0] == theta0


def test_trajectory_error_without_steps():
    objective, _ = quadratic_objective(1.0)
    assert trajectory_error(objective, [], 0.1) == 0.0


def test_trajectory_error_refuses_large_models():
    model, train = build(SMALL_ARCH), generate(TOY_DATA, 0)
    with pytest.raises(ModelTooLargeError):
        reactivation_trajectory_error(model, train, 2, 1e-2)


def test_trajectory_error_shrinks_with_the_learning_rate():
    cfg = VerifyConfig()
    monotone = 0
    for seed in range(cfg.seeds):
        model, train = build(dataclasses.replace(TINY_ARCH, seed=seed)), generate(TINY_DATA, seed)
        errors = [reactivation_trajectory_error(model, train, cfg.trajectory_batches, lr, seed=seed)
                  for lr in cfg.trajectory_lrs]
        monotone += all(later < earlier for earlier, later in zip(errors[:-1], errors[1:]))
    assert monotone >= cfg.trajectory_pass_fraction * cfg.seeds


def test_run_verification():
    results = run_verification(VerifyConfig(seeds=2))
    assert list(results.columns) == ['check', 'seed', 'value', 'threshold', 'passed']
    assert set(results['seed']) == {'0', '1', 'all'}
    expected_to_pass = ['gradient_check', 'mask_absorption', 'deci_rank_correlation_per_seed', 'snip_identity',
                        'normalization', 'kept_count[rho=0.8]', 'kept_count[rho=0.85]',
                        'kept_count[rho=0.9]', 'trajectory_error_quadratic']
    for check in expected_to_pass:
        rows = results[results['check'] == check]
        assert len(rows) > 0
        assert rows['passed'].all(), check


def test_rank_correlation_is_checked_per_seed():
    results = run_verification(VerifyConfig(seeds=2, rank_threshold=1.0))
    per_seed = results[results['check'] == 'deci_rank_correlation_per_seed']
    assert list(per_seed['seed']) == ['0', '1']
    assert (per_seed['threshold'] == 1.0).all()
    assert (per_seed['passed'] == (per_seed['value'] >= 1.0)).all()
    assert not per_seed['passed'].any()
