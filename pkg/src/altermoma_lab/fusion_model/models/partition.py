from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import List


class Partition(Enum):
    LIDAR = 'lidar'
    CAMERA = 'camera'
    FUSION = 'fusion'

    @classmethod
    def from_str(cls, name: str) -> Partition:
        """Convert a string into a `Partition`, case insensitive.

        Raises
        ------
        ValueError
            If the given name is not one of the partitions.
        """
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f'The given partition is invalid ({name}), use one of {[p.value for p in cls]}.')

    @classmethod
    def backbones(cls) -> List[Partition]:
        return [cls.LIDAR, cls.CAMERA]

    @property
    def code(self) -> int:
        """Byte used by the checkpoint format."""
        return list(Partition).index(self)

    @classmethod
    def from_code(cls, code: int) -> Partition:
        return list(cls)[code]

    def opposite(self) -> Partition:
        if self == Partition.FUSION:
            raise ValueError('The fusion partition has no opposite backbone.')
        return Partition.CAMERA if self == Partition.LIDAR else Partition.LIDAR


@dataclass(frozen=True)
class ModalityMasks:
    """The modality-level masks μ_l, μ_c, μ_f."""
    lidar: int = 1
    camera: int = 1
    fusion: int = 1

    def __post_init__(self):
        for p in Partition:
            if self.of(p) not in (0, 1):
                raise ValueError(f'A modality mask is binary ({p.value}={self.of(p)} given).')

    def of(self, partition: Partition) -> int:
        return getattr(self, partition.value)

    def masking(self, partition: Partition) -> ModalityMasks:
        """A copy of these masks with the given partition silenced."""
        return replace(self, **{partition.value: 0})

    def is_unmasked(self) -> bool:
        return all(self.of(p) == 1 for p in Partition)

    def all_zero(self) -> bool:
        return all(self.of(p) == 0 for p in Partition)
