from __future__ import annotations

from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[float, Sequence, np.ndarray]


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    The data is a C-ordered (row-major) numpy array, so `data.ravel()` is the flat storage and a flat index
    `i` is stable across the code base (ledger ids, channel maps, checkpoints).
    """
    data: np.ndarray
    grad: Optional[np.ndarray]

    def __init__(self, data: ArrayLike, shape: Optional[Iterable[int]] = None):
        array = np.array(data, dtype=np.float64, order='C')
        if shape is not None:
            shape = tuple(int(d) for d in shape)
            if any(d <= 0 for d in shape):
                raise ValueError(f'Every dimension of a tensor must be positive ({shape} given).')
            if int(np.prod(shape)) != array.size:
                raise ValueError(f'Cannot lay {array.size} values out with the shape {shape}.')
            array = array.reshape(shape)
        self.data = array
        self.grad = None

    @classmethod
    def zeros(cls, shape: Iterable[int]) -> Tensor:
        shape = tuple(shape)
        return cls(np.zeros(shape), shape)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def flat(self) -> np.ndarray:
        """Row-major flat view of the data (writes go through)."""
        return self.data.reshape(-1)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def copy(self) -> Tensor:
        clone = Tensor(self.data.copy())
        clone.grad = None if self.grad is None else self.grad.copy()
        return clone

    def __repr__(self) -> str:
        return f'Tensor(shape={self.shape})'
