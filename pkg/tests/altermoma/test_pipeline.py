import dataclasses

import numpy as np
import pandas as pd
import pytest

from altermoma_lab.altermoma.lib import (apply_keep_mask, deci, finetune, kept_count, reactivate,
                                         reactivate_objective, reri, run_altermoma)
from altermoma_lab.altermoma.models.prune_config import PruneConfig
from altermoma_lab.fusion_model.lib import channel_map, evaluate
from altermoma_lab.fusion_model.models.partition import ModalityMasks, Partition
from altermoma_lab.oracle.lib import quadratic_objective
from altermoma_lab.synth_data.lib import batches
from altermoma_lab.synth_data.planted import CAMERA_ONLY_CHANNELS, DUPLICATE_CHANNEL, planted_setup
from altermoma_lab.tensor_core.lib import average_gradients
from altermoma_lab.utils.exceptions import MaskingError


def test_deci_is_the_taylor_term(trained_model, small_splits):
    train, _ = small_splits
    eval_batches = batches(train, 32, 0, 2)
    _, grads = average_gradients(trained_model.objective(), eval_batches)
    expected = np.abs(trained_model.parameters['camera/l0/weight'].values.data * grads['camera/l0/weight'])
    indicator = deci(trained_model, eval_batches)
    assert len(indicator) == trained_model.n_parameters()
    np.testing.assert_allclose(indicator[[f'camera/l0/weight[{i:06d}]' for i in range(36)]].to_numpy(),
                               expected.reshape(-1), rtol=0, atol=0)


def test_deci_needs_the_unmasked_model(trained_model, small_splits):
    trained_model.modality_masks = ModalityMasks(lidar=0)
    with pytest.raises(MaskingError):
        deci(trained_model, batches(small_splits[0], 32, 0, 1))


def test_reactivation_without_steps_has_no_redundancy(trained_model, small_splits):
    eval_batches = batches(small_splits[0], 32, 0, 2)
    objective = trained_model.objective(ModalityMasks(lidar=0), [Partition.CAMERA, Partition.FUSION])
    result = reactivate_objective(objective, eval_batches, [], lr=0.1)
    for name, g in result.grad_start.items():
        np.testing.assert_array_equal(g, result.grad_end[name])
    assert result.losses == []


def test_reactivation_of_a_quadratic():
    objective, _ = quadratic_objective(1.0)
    batch = {'x': np.ones((2, 1)), 't': np.zeros((2, 1))}  # L(θ) = θ²
    result = reactivate_objective(objective, [batch], [batch], lr=0.1)

    assert result.grad_start['w'][0, 0] == pytest.approx(2.0)
    assert objective.parameters()['w'].data[0, 0] == pytest.approx(0.8)
    assert result.grad_end['w'][0, 0] == pytest.approx(1.6)
    assert result.losses == [pytest.approx(1.0)]
    redundancy = reri({'w': np.ones((1, 1))}, result.grad_start, result.grad_end)
    assert redundancy['w'][0, 0] == pytest.approx(0.4)


def test_reactivate_leaves_the_masked_backbone_alone(trained_model, small_splits, small_prune_config):
    lidar = {p.id: p.values.data.copy() for p in trained_model.partition_parameters(Partition.LIDAR)}
    result = reactivate(trained_model, Partition.LIDAR, small_splits[0], small_prune_config)

    assert trained_model.modality_masks == ModalityMasks(lidar=0)
    assert len(result.losses) == small_prune_config.reactivation_batches
    assert not any(name.startswith('lidar/') for name in result.grad_start)
    for p in trained_model.partition_parameters(Partition.LIDAR):
        np.testing.assert_array_equal(p.values.data, lidar[p.id])
    with pytest.raises(ValueError):
        reactivate(trained_model, Partition.FUSION, small_splits[0], small_prune_config)


def test_run_altermoma(trained_model, small_splits, small_prune_config):
    train, _ = small_splits
    theta_init = {name: p.values.data.copy() for name, p in trained_model.parameters.items()}
    model, ledger, report = run_altermoma(trained_model, train, small_prune_config)

    n = model.n_parameters()
    assert report.n == len(ledger) == n
    assert report.kept == report.k == report.n_unmasked == kept_count(n, 0.5)
    assert len(ledger.kept_ids()) == report.k
    assert model.modality_masks.is_unmasked()
    for name, p in model.parameters.items():
        np.testing.assert_array_equal(p.values.data, theta_init[name] * p.mask)
    assert set(ledger.table['partition']) == {'lidar', 'camera', 'fusion'}
    assert ledger.table['deci'].notna().all() and ledger.table['score'].notna().all()
    assert not np.isnan(report.mask_lidar_loss_first)


def test_run_altermoma_is_deterministic(trained_model, small_splits, small_prune_config):
    train, _ = small_splits
    _, first, _ = run_altermoma(trained_model.clone(), train, small_prune_config)
    _, second, _ = run_altermoma(trained_model.clone(), train, small_prune_config)
    np.testing.assert_array_equal(first.scores().to_numpy(), second.scores().to_numpy())
    assert first.kept_ids() == second.kept_ids()


def test_run_altermoma_structured(trained_model, small_splits, small_prune_config):
    train, _ = small_splits
    cfg = dataclasses.replace(small_prune_config, structured=True)
    model, ledger, report = run_altermoma(trained_model, train, cfg)

    assert ledger.structured
    assert len(ledger) == 6 + 3 + 6 + 3 + 5
    assert report.kept == kept_count(len(ledger), 0.5)
    assert report.macs_after < report.macs_before
    cmap = channel_map(model)
    kept = set(ledger.kept_ids())
    for parameter in model.parameters.values():
        for element, flag in zip(parameter.element_ids(), parameter.mask.reshape(-1)):
            channel = cmap[element]
            assert flag == (1.0 if channel is None or channel in kept else 0.0)


def test_structured_mac_reduction_matches_the_removed_channels(trained_model, small_splits, small_prune_config):
    cfg = dataclasses.replace(small_prune_config, structured=True)
    model, ledger, report = run_altermoma(trained_model, small_splits[0], cfg)

    kept = set(ledger.kept_ids())
    outputs, dense, remaining = {}, 0, 0
    for layer in model.layers():
        channels = [layer.channel_id(c) for c in range(layer.fan_out)]
        outputs[layer.name] = layer.fan_out if layer.is_output else len(kept.intersection(channels))
        inputs = layer.fan_in if layer.sources is None else sum(outputs[s] for s in layer.sources)
        dense += layer.fan_in * layer.fan_out
        remaining += inputs * outputs[layer.name]
    assert report.mac_reduction == pytest.approx(1.0 - remaining / dense, abs=0.01)


def test_finetune_keeps_the_mask(trained_model, small_splits, small_prune_config):
    train, val = small_splits
    model, _, _ = run_altermoma(trained_model, train, small_prune_config)
    masks = {name: p.mask.copy() for name, p in model.parameters.items()}
    history = finetune(model, train, val, epochs=2, lr=0.05, batch_size=32)

    assert len(history) == 2
    assert np.isfinite(evaluate(model, val))
    for name, p in model.parameters.items():
        np.testing.assert_array_equal(p.mask, masks[name])
        assert np.all(p.values.data[masks[name] == 0] == 0.0)


def test_apply_keep_mask_without_snapshot(small_model):
    keep = {i: i.endswith('[000000]') for i in small_model.element_ids()}
    apply_keep_mask(small_model, pd.Series(keep))
    weight = small_model.parameters['lidar/l0/weight']
    assert weight.mask.reshape(-1)[0] == 1.0 and weight.mask.sum() == 1.0
    assert np.all(weight.values.data.reshape(-1)[1:] == 0.0)


PLANTED_CONFIG = PruneConfig(rho=0.5, reactivation_batches=32, reactivation_lr=1e-2, eval_batches=8,
                             batch_size=64, literal_reri_end=False)


def planted_redundancy(seed: int, structured: bool):
    model, train, _ = planted_setup(seed)
    _, ledger, _ = run_altermoma(model, train, dataclasses.replace(PLANTED_CONFIG, structured=structured))
    return ledger.table


def test_planted_duplicate_carries_the_redundancy():
    wins = 0
    for seed in range(5):
        table = planted_redundancy(seed, structured=False)
        cmap = channel_map(planted_setup(seed)[0])
        camera = table[table['partition'] == 'camera'].assign(channel=cmap)
        means = camera.groupby('channel')['reri'].mean()
        wins += all(means[DUPLICATE_CHANNEL] > means[c] for c in CAMERA_ONLY_CHANNELS)
    assert wins >= 4


def test_planted_duplicate_is_the_most_redundant_channel():
    wins = 0
    for seed in range(5):
        table = planted_redundancy(seed, structured=True)
        wins += all(table.loc[DUPLICATE_CHANNEL, 'reri'] > table.loc[c, 'reri'] for c in CAMERA_ONLY_CHANNELS)
    assert wins >= 4


def test_planted_duplicate_is_pruned_first():
    wins = 0
    for seed in range(5):
        model, train, _ = planted_setup(seed)
        cfg = dataclasses.replace(PLANTED_CONFIG, rho=1 / 32, structured=True)
        _, ledger, report = run_altermoma(model, train, cfg)
        assert (report.n, report.kept) == (32, 31)
        wins += set(ledger.ids) - set(ledger.kept_ids()) == {DUPLICATE_CHANNEL}
    assert wins >= 4
