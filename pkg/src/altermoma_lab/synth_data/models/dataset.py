from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from altermoma_lab.fusion_model import INPUT_CAMERA, INPUT_LIDAR, TARGET
from altermoma_lab.fusion_model.models.partition import Partition
from altermoma_lab.synth_data.models.config import GenConfig

# array fields, in file order
ARRAYS = ('x_l', 'x_c', 'y', 'y_l_aux', 'y_c_aux', 'z_s', 'z_c')


@dataclass
class Batch:
    x_l: np.ndarray
    x_c: np.ndarray
    y: np.ndarray
    y_l_aux: np.ndarray
    y_c_aux: np.ndarray

    def __len__(self) -> int:
        return self.x_l.shape[0]

    def as_inputs(self) -> Dict[str, np.ndarray]:
        """Bindings of the fusion graph inputs."""
        return {INPUT_LIDAR: self.x_l, INPUT_CAMERA: self.x_c, TARGET: self.y}

    def aux_inputs(self, modality: Partition) -> Dict[str, np.ndarray]:
        """Bindings of a single-modal pretraining graph (`x`, `y`)."""
        if modality == Partition.LIDAR:
            return {'x': self.x_l, 'y': self.y_l_aux}
        if modality == Partition.CAMERA:
            return {'x': self.x_c, 'y': self.y_c_aux}
        raise ValueError('Only the backbones have a single-modal task.')


@dataclass
class MultiModalDataset:
    x_l: np.ndarray
    x_c: np.ndarray
    y: np.ndarray
    y_l_aux: np.ndarray
    y_c_aux: np.ndarray
    # latents, kept for the redundancy certificate
    z_s: np.ndarray
    z_c: np.ndarray
    gen_config: Optional[GenConfig] = None
    seed: Optional[int] = None

    def __post_init__(self):
        lengths = {name: getattr(self, name).shape[0] for name in ARRAYS}
        if len(set(lengths.values())) != 1:
            raise ValueError(f'Every array of a dataset must have the same number of rows ({lengths}).')
        for name in ARRAYS:
            if getattr(self, name).ndim != 2:
                raise ValueError(f'The array `{name}` must be a matrix.')

    @property
    def n(self) -> int:
        return self.x_l.shape[0]

    def subset(self, indices: np.ndarray) -> Batch:
        return Batch(self.x_l[indices], self.x_c[indices], self.y[indices],
                     self.y_l_aux[indices], self.y_c_aux[indices])

    def whole(self) -> Batch:
        return self.subset(np.arange(self.n))
