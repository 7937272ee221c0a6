from __future__ import annotations

from dataclasses import dataclass

TASKS = ('regression', 'classification')


@dataclass
class GenConfig:
    """Generation parameters of a `MultiModalDataset`.

    The sample seed is not part of the configuration, it is given to `generate`.
    """
    n_samples: int = 4096
    n_val: int = 512
    d_shared: int = 8
    d_cam_only: int = 4
    d_l: int = 16
    d_c: int = 24
    sigma_l: float = 0.05
    sigma_c: float = 0.3
    d_y: int = 4
    target_hidden: int = 32
    target_noise: float = 0.0
    task: str = 'regression'
    mixing_seed: int = 11
    target_seed: int = 13

    def __post_init__(self):
        for name in ['n_samples', 'n_val', 'd_shared', 'd_cam_only', 'd_l', 'd_c', 'd_y', 'target_hidden']:
            value = getattr(self, name)
            if value <= 0:
                raise ValueError(f'The generation parameter `{name}` must be positive ({value} given).')
        if self.sigma_l < 0 or self.sigma_c < 0 or self.target_noise < 0:
            raise ValueError('Noise levels cannot be negative.')
        # the noiseless case is the only one where both levels may be equal
        if self.sigma_l >= self.sigma_c and not (self.sigma_l == 0 and self.sigma_c == 0):
            raise ValueError(f'The LiDAR noise must be below the camera noise ({self.sigma_l} >= {self.sigma_c}).')
        if self.d_l < self.d_shared:
            raise ValueError(f'd_l ({self.d_l}) cannot be smaller than d_shared ({self.d_shared}).')
        if self.d_c < self.d_shared + self.d_cam_only:
            raise ValueError(f'd_c ({self.d_c}) cannot be smaller than d_shared + d_cam_only.')
        if self.task not in TASKS:
            raise ValueError(f'The given `task` is invalid ({self.task}), use one of {TASKS}.')
