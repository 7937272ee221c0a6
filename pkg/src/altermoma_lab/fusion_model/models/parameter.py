from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from altermoma_lab.fusion_model.models.partition import Partition
from altermoma_lab.tensor_core.models.tensor import Tensor


@dataclass
class Parameter:
    """One trainable tensor of a fusion model.

    The output channel of an entry is its index along the last axis: a column of a (fan_in, fan_out) weight
    matrix, an entry of a bias vector.
    """
    id: str         # partition/layer/kind, e.g. 'camera/l1/weight'
    partition: Partition
    values: Tensor
    mask: np.ndarray

    def __post_init__(self):
        if self.mask.shape != self.values.shape:
            raise ValueError(f'The mask of {self.id} has the shape {self.mask.shape} instead of {self.values.shape}.')
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError(f'The mask of {self.id} is not binary.')

    @classmethod
    def new(cls, id: str, partition: Partition, values: np.ndarray) -> Parameter:
        return cls(id, partition, Tensor(values), np.ones(values.shape))

    @property
    def layer(self) -> str:
        return self.id.rsplit('/', 1)[0]

    @property
    def kind(self) -> str:
        return self.id.rsplit('/', 1)[1]

    @property
    def size(self) -> int:
        return self.values.size

    def element_ids(self) -> List[str]:
        return [f'{self.id}[{i:06d}]' for i in range(self.size)]

    def channels(self) -> np.ndarray:
        """Output channel of every flat entry."""
        return np.arange(self.size) % self.values.shape[-1]

    def copy(self) -> Parameter:
        return Parameter(self.id, self.partition, self.values.copy(), self.mask.copy())


@dataclass
class LayerSpec:
    """A linear layer of the fusion graph, derived from its parameters' shapes."""
    name: str       # e.g. 'lidar/l0'
    partition: Partition
    index: int
    fan_in: int
    fan_out: int
    relu: bool
    # prediction layer of the fusion head: its output channels are never pruned
    is_output: bool = False
    # producing layers of the input columns, in column order (None for a backbone input layer)
    sources: Optional[List[str]] = None

    @property
    def weight(self) -> str:
        return f'{self.name}/weight'

    @property
    def bias(self) -> str:
        return f'{self.name}/bias'

    def channel_id(self, channel: int) -> str:
        return f'{self.name}/ch{channel:04d}'
