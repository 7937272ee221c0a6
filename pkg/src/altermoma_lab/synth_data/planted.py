"""Planted-redundancy setup

A shared latent s is observed without noise by both modalities, two latents c1, c2 only by the camera. The
backbones are hand-wired: every hidden unit pair computes relu(u), relu(-u) so that the linear feature layer can
expose u exactly. The LiDAR backbone exposes s on its feature channel 0, the camera backbone exposes a copy of s
(channel 0), c1 (channel 1) and c2 (channel 2).

The target is y = (a_l + a_c)·s + b1·c1 + b2·c2 and the fusion head reads s from both copies, a_l from the LiDAR
one and a_c from the camera one. Once the LiDAR backbone is masked the camera copy of s is the only way left to
recover the a_l share of the target, so camera channel 0 carries the cross-modality redundancy while c1, c2 only
carry their own contribution. The head is scaled by 1 - `UNDERFIT`: the fused model leaves a small residual
proportional to y, which keeps every first-order contribution of the unmasked model away from zero.
"""
from typing import Tuple

import numpy as np

from altermoma_lab.fusion_model.models.arch import ArchConfig
from altermoma_lab.fusion_model.models.model import FusionModel
from altermoma_lab.fusion_model.models.parameter import Parameter
from altermoma_lab.fusion_model.models.partition import Partition
from altermoma_lab.synth_data.models.dataset import MultiModalDataset

PLANTED_ARCH = ArchConfig(in_l=1, in_c=3, hidden=6, n_hidden=2, feat=3, fusion_hidden=2, out=1)
DUPLICATE_CHANNEL = 'camera/l2/ch0000'
CAMERA_ONLY_CHANNELS = ('camera/l2/ch0001', 'camera/l2/ch0002')
UNDERFIT = 0.02


def _pair_encoder(n_inputs: int) -> np.ndarray:
    """(n_inputs, 6) weights sending input i to the units 2i (positive part) and 2i+1 (negative part)."""
    w = np.zeros((n_inputs, 6))
    for i in range(n_inputs):
        w[i, 2 * i], w[i, 2 * i + 1] = 1.0, -1.0
    return w


def _pair_decoder(n_signals: int) -> np.ndarray:
    """(6, 3) weights giving back u_i = relu(u_i) - relu(-u_i) on feature channel i."""
    return _pair_encoder(n_signals).T @ np.eye(n_signals, 3)


def _backbone(partition: Partition, n_inputs: int):
    name = partition.value
    return [
        Parameter.new(f'{name}/l0/weight', partition, _pair_encoder(n_inputs)),
        Parameter.new(f'{name}/l0/bias', partition, np.zeros(6)),
        Parameter.new(f'{name}/l1/weight', partition, np.eye(6)),
        Parameter.new(f'{name}/l1/bias', partition, np.zeros(6)),
        Parameter.new(f'{name}/l2/weight', partition, _pair_decoder(n_inputs)),
        Parameter.new(f'{name}/l2/bias', partition, np.zeros(3)),
    ]


def planted_coefficients(seed: int) -> np.ndarray:
    """(a_l, a_c, b1, b2).

    a_l has a magnitude in [0.6, 0.8] and a_c in [0.9, 1.1], both with the same random sign; b1, b2 are ±1.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    sign_s = rng.choice([-1.0, 1.0])
    a_l, a_c = sign_s * rng.uniform(0.6, 0.8), sign_s * rng.uniform(0.9, 1.1)
    b1, b2 = rng.choice([-1.0, 1.0], 2)
    return np.array([a_l, a_c, b1, b2])


def planted_model(seed: int) -> FusionModel:
    a_l, a_c, b1, b2 = planted_coefficients(seed)
    # fusion input columns: lidar features 0..2 then camera features 0..2
    v = (1.0 - UNDERFIT) * np.array([a_l, 0.0, 0.0, a_c, b1, b2])
    fusion = [
        Parameter.new('fusion/l0/weight', Partition.FUSION, np.stack([v, -v], axis=1)),
        Parameter.new('fusion/l0/bias', Partition.FUSION, np.zeros(2)),
        Parameter.new('fusion/l1/weight', Partition.FUSION, np.array([[1.0], [-1.0]])),
        Parameter.new('fusion/l1/bias', Partition.FUSION, np.zeros(1)),
    ]
    return FusionModel(_backbone(Partition.LIDAR, 1) + _backbone(Partition.CAMERA, 3) + fusion, 'mse')


def _planted_dataset(seed: int, n: int, stream: int, target_noise: float) -> MultiModalDataset:
    a_l, a_c, b1, b2 = planted_coefficients(seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, stream]))
    latents = rng.standard_normal((n, 3))
    s, c = latents[:, :1], latents[:, 1:]
    y = latents @ np.array([[a_l + a_c], [b1], [b2]]) + target_noise * rng.standard_normal((n, 1))
    return MultiModalDataset(x_l=s.copy(), x_c=latents.copy(), y=y, y_l_aux=s.copy(), y_c_aux=latents.copy(),
                             z_s=s.copy(), z_c=c.copy(), seed=seed)


def planted_setup(
    seed: int,
    n_samples: int = 2048,
    n_val: int = 512,
    target_noise: float = 0.0,
) -> Tuple[FusionModel, MultiModalDataset, MultiModalDataset]:
    """The planted model with its training and validation sets.

    With `target_noise` = 0 the only error left is the `UNDERFIT` residual, a mean squared error of
    `UNDERFIT`² · E[y²].
    """
    return (planted_model(seed),
            _planted_dataset(seed, n_samples, 0, target_noise),
            _planted_dataset(seed, n_val, 1, target_noise))
