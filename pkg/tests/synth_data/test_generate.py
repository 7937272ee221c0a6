import dataclasses

import numpy as np
import pytest
from conftest import SMALL_DATA

from altermoma_lab.synth_data.lib import (batches, export_csv, generate, generate_splits, mixing_matrices,
                                          redundancy_certificate)
from altermoma_lab.synth_data.models.config import GenConfig


def test_generate_is_deterministic():
    a, b = generate(SMALL_DATA, 3), generate(SMALL_DATA, 3)
    for name in ['x_l', 'x_c', 'y', 'z_s', 'z_c']:
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.x_l, generate(SMALL_DATA, 4).x_l)


def test_shapes():
    ds = generate(SMALL_DATA, 0)
    assert ds.n == SMALL_DATA.n_samples
    assert ds.x_l.shape == (256, 4)
    assert ds.x_c.shape == (256, 6)
    assert ds.y.shape == (256, 2)
    assert ds.y_l_aux.shape == (256, 3)
    assert ds.y_c_aux.shape == (256, 5)
    np.testing.assert_array_equal(ds.y_l_aux, ds.z_s)


def test_splits_are_independent_draws():
    train, val = generate_splits(SMALL_DATA, 0)
    assert (train.n, val.n) == (256, 64)
    assert not np.array_equal(train.z_s[:64], val.z_s)


def test_mixing_matrices_are_orthonormal():
    a, b = mixing_matrices(SMALL_DATA)
    np.testing.assert_allclose(a.T @ a, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(b.T @ b, np.eye(5), atol=1e-12)


def test_noiseless_lidar_sees_the_shared_latent_exactly():
    cfg = dataclasses.replace(SMALL_DATA, sigma_l=0.0)
    a, _ = mixing_matrices(cfg)
    ds = generate(cfg, 1)
    np.testing.assert_allclose(ds.x_l @ a, ds.z_s, atol=1e-12)


def test_redundancy_certificate_orders_the_modalities():
    lidar_mse, camera_mse = redundancy_certificate(generate(SMALL_DATA, 0))
    assert 0 <= lidar_mse < camera_mse


def test_classification_targets_are_one_hot():
    ds = generate(dataclasses.replace(SMALL_DATA, task='classification'), 0)
    np.testing.assert_array_equal(ds.y.sum(axis=1), np.ones(ds.n))
    assert set(np.unique(ds.y)) == {0.0, 1.0}


@pytest.mark.parametrize('kwargs', [
    {'d_l': 0},
    {'sigma_c': -1.0},
    {'sigma_l': 0.3, 'sigma_c': 0.3},
    {'d_l': 2},
    {'d_c': 4},
    {'task': 'ranking'},
])
def test_gen_config_validation(kwargs):
    with pytest.raises(ValueError):
        dataclasses.replace(SMALL_DATA, **kwargs)


def test_noiseless_config_is_allowed():
    assert GenConfig(sigma_l=0.0, sigma_c=0.0).sigma_c == 0.0


def test_batches():
    ds = generate(SMALL_DATA, 0)
    drawn = batches(ds, 100, seed=5, count=5)
    assert [len(b) for b in drawn] == [100] * 5
    again = batches(ds, 100, seed=5, count=5)
    for a, b in zip(drawn, again):
        np.testing.assert_array_equal(a.x_l, b.x_l)
    # two batches per epoch, the 56 remaining samples are dropped
    first_epoch = np.vstack([drawn[0].x_l, drawn[1].x_l])
    assert len(np.unique(first_epoch, axis=0)) == 200
    assert batches(ds, 10, seed=0, count=0) == []


@pytest.mark.parametrize('batch_size, count', [(0, 1), (257, 1), (10, -1)])
def test_batches_validation(batch_size, count):
    with pytest.raises(ValueError):
        batches(generate(SMALL_DATA, 0), batch_size, 0, count)


def test_export_csv(tmp_path):
    ds = generate(SMALL_DATA, 0)
    path = tmp_path / 'out' / 'train.csv'
    export_csv(ds, path)
    lines = path.read_text().splitlines()
    assert len(lines) == ds.n + 1
    assert lines[0].split(',') == [f'x_l_{j}' for j in range(4)] + [f'x_c_{j}' for j in range(6)] + ['y_0', 'y_1']
