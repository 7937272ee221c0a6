import dataclasses

import numpy as np
import pytest
from conftest import SMALL_ARCH

from altermoma_lab.fusion_model.lib import (build, channel_map, compact, evaluate, mac_count, masked_loss,
                                            pretrain_backbone, restore, snapshot, train_fusion)
from altermoma_lab.fusion_model.models.arch import ArchConfig
from altermoma_lab.fusion_model.models.partition import ModalityMasks, Partition
from altermoma_lab.utils.exceptions import GraphStateError, MaskingError


def values_of(model, partition):
    return {p.id: p.values.data.copy() for p in model.partition_parameters(partition)}


def assert_same_values(a, b):
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])


def test_build_counts_and_determinism():
    model = build(SMALL_ARCH)
    assert model.n_parameters() == SMALL_ARCH.n_parameters()
    assert len(model.element_ids()) == SMALL_ARCH.n_parameters()
    again = build(SMALL_ARCH)
    for name, p in model.parameters.items():
        np.testing.assert_array_equal(p.values.data, again.parameters[name].values.data)
        assert np.all(p.mask == 1)


def test_build_different_seeds():
    a = build(SMALL_ARCH)
    b = build(dataclasses.replace(SMALL_ARCH, seed=99))
    assert not np.array_equal(a.parameters['lidar/l0/weight'].values.data,
                              b.parameters['lidar/l0/weight'].values.data)


def test_arch_validation():
    with pytest.raises(ValueError):
        ArchConfig(hidden=0)
    with pytest.raises(ValueError):
        ArchConfig(loss='hinge')
    assert ArchConfig(hidden=12).fusion_hidden == 12


def test_masked_loss_all_zero(small_model, small_splits):
    train, _ = small_splits
    with pytest.raises(MaskingError):
        masked_loss(small_model, train.subset(np.arange(8)), 0, 0, 0)


def test_modality_masks_are_functional(small_model, small_splits):
    train, _ = small_splits
    batch = train.subset(np.arange(16))
    masked = masked_loss(small_model, batch, 0, 1, 1)

    zeroed = small_model.clone()
    for p in zeroed.partition_parameters(Partition.LIDAR):
        p.values.data[...] = 0.0
    assert masked == zeroed.loss(batch)
    # the parameters themselves are untouched
    assert np.any(small_model.parameters['lidar/l0/weight'].values.data != 0)
    assert masked_loss(small_model, batch, 1, 1, 1) == small_model.loss(batch)


def test_modality_masks_validation():
    with pytest.raises(ValueError):
        ModalityMasks(lidar=2)
    assert ModalityMasks().masking(Partition.CAMERA) == ModalityMasks(camera=0)


def test_pretrain_moves_only_its_backbone(small_model, small_splits):
    train, _ = small_splits
    camera, fusion = values_of(small_model, Partition.CAMERA), values_of(small_model, Partition.FUSION)
    lidar = values_of(small_model, Partition.LIDAR)
    _, history = pretrain_backbone(small_model, Partition.LIDAR, train, epochs=3, lr=0.05, batch_size=32)

    assert list(history.columns) == ['epoch', 'loss']
    assert len(history) == 3
    assert history['loss'].iloc[-1] < history['loss'].iloc[0]
    assert_same_values(values_of(small_model, Partition.CAMERA), camera)
    assert_same_values(values_of(small_model, Partition.FUSION), fusion)
    assert any(not np.array_equal(v, values_of(small_model, Partition.LIDAR)[k]) for k, v in lidar.items())


def test_pretrain_edge_cases(small_model, small_splits):
    train, _ = small_splits
    before = values_of(small_model, Partition.CAMERA)
    _, history = pretrain_backbone(small_model, Partition.CAMERA, train, epochs=0, lr=0.05)
    assert len(history) == 0
    assert_same_values(values_of(small_model, Partition.CAMERA), before)
    with pytest.raises(ValueError):
        pretrain_backbone(small_model, Partition.FUSION, train, epochs=1, lr=0.05)
    with pytest.raises(ValueError):
        pretrain_backbone(small_model, Partition.CAMERA, train, epochs=-1, lr=0.05)
    with pytest.raises(ValueError):
        pretrain_backbone(small_model, Partition.CAMERA, train, epochs=1, lr=-0.05)


def test_train_fusion_moves_only_the_head(small_model, small_splits):
    train, val = small_splits
    lidar, camera = values_of(small_model, Partition.LIDAR), values_of(small_model, Partition.CAMERA)
    start = evaluate(small_model, val)
    history = train_fusion(small_model, train, val, epochs=4, lr=0.05, batch_size=32)

    assert list(history.columns) == ['epoch', 'train_loss', 'val_loss']
    assert history['val_loss'].iloc[-1] < start
    assert_same_values(values_of(small_model, Partition.LIDAR), lidar)
    assert_same_values(values_of(small_model, Partition.CAMERA), camera)


def test_masked_entries_stay_zero(small_model, small_splits):
    train, val = small_splits
    weight = small_model.parameters['camera/l0/weight']
    weight.mask[0, :] = 0.0
    weight.values.data[0, :] = 0.0
    train_fusion(small_model, train, val, epochs=2, lr=0.05, batch_size=32, train_backbones=True)
    assert np.all(weight.values.data[0, :] == 0.0)
    assert np.any(weight.values.data[1, :] != 0.0)


def test_evaluate_matches_whole_dataset_loss(small_model, small_splits):
    _, val = small_splits
    assert evaluate(small_model, val) == pytest.approx(small_model.loss(val.whole()), rel=1e-12)


def test_snapshot_and_restore(small_model, small_splits):
    train, val = small_splits
    with pytest.raises(GraphStateError):
        restore(small_model)
    snapshot(small_model)
    before = values_of(small_model, Partition.FUSION)
    train_fusion(small_model, train, val, epochs=1, lr=0.05, batch_size=32)
    restore(small_model)
    assert_same_values(values_of(small_model, Partition.FUSION), before)


def test_channel_map(small_model):
    cmap = channel_map(small_model)
    assert len(cmap) == small_model.n_parameters()
    assert cmap['camera/l0/bias[000002]'] == 'camera/l0/ch0002'
    # weight (6, 6): flat index 8 is row 1, column 2
    assert cmap['camera/l0/weight[000008]'] == 'camera/l0/ch0002'
    assert cmap[[i for i in cmap.index if i.startswith('fusion/l1/')]].isna().all()
    assert cmap.dropna().nunique() == 6 + 3 + 6 + 3 + 5


def mask_channel(model, layer: str, channel: int):
    weight, bias = model.parameters[f'{layer}/weight'], model.parameters[f'{layer}/bias']
    weight.mask[:, channel] = 0.0
    bias.mask[channel] = 0.0
    weight.values.data[:, channel] = 0.0
    bias.values.data[channel] = 0.0


def test_compact_is_exact(small_model, small_splits):
    _, val = small_splits
    assert mac_count(small_model) == 136
    mask_channel(small_model, 'camera/l0', 2)
    mask_channel(small_model, 'lidar/l1', 0)
    compacted = compact(small_model)

    assert compacted.parameters['camera/l0/weight'].values.shape == (6, 5)
    assert compacted.parameters['camera/l1/weight'].values.shape == (5, 3)
    assert compacted.parameters['fusion/l0/weight'].values.shape == (5, 5)
    batch = val.subset(np.arange(32))
    np.testing.assert_array_equal(small_model.predict(batch), compacted.predict(batch))
    assert mac_count(small_model) == mac_count(compacted) == 136 - 6 - 3 - 6 - 5


def test_compact_refuses_an_empty_layer(small_model):
    for channel in range(3):
        mask_channel(small_model, 'lidar/l1', channel)
    with pytest.raises(ValueError):
        compact(small_model)
