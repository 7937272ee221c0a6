from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

LOSSES = ('mse', 'cross_entropy')


@dataclass
class ArchConfig:
    """Widths of the default fusion architecture.

    Both backbones are `n_hidden`-hidden-layer ReLU MLPs ending on a linear feature layer of width `feat`; the
    fusion head is a 2-layer MLP on the concatenated features.
    """
    in_l: int = 16
    in_c: int = 24
    hidden: int = 32
    n_hidden: int = 2
    feat: int = 16
    fusion_hidden: Optional[int] = None
    out: int = 4
    seed: int = 7
    loss: str = 'mse'

    def __post_init__(self):
        if self.fusion_hidden is None:
            self.fusion_hidden = self.hidden
        for name in ['in_l', 'in_c', 'hidden', 'n_hidden', 'feat', 'fusion_hidden', 'out']:
            value = getattr(self, name)
            if value <= 0:
                raise ValueError(f'The architecture dimension `{name}` must be positive ({value} given).')
        if self.loss not in LOSSES:
            raise ValueError(f'The given `loss` is invalid ({self.loss}), use one of {LOSSES}.')

    def backbone_widths(self, input_dim: int) -> List[int]:
        return [input_dim] + [self.hidden] * self.n_hidden + [self.feat]

    def fusion_widths(self) -> List[int]:
        return [2 * self.feat, self.fusion_hidden, self.out]

    def n_parameters(self) -> int:
        """Closed-form count of weights and biases."""
        def count(widths: List[int]) -> int:
            return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))

        return (count(self.backbone_widths(self.in_l))
                + count(self.backbone_widths(self.in_c))
                + count(self.fusion_widths()))
