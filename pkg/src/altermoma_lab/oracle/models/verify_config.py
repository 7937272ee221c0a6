from dataclasses import dataclass, field
from typing import List


@dataclass
class VerifyConfig:
    seeds: int = 10
    grad_step: float = 1e-5
    grad_tolerance: float = 1e-5
    rank_threshold: float = 0.8
    trajectory_lrs: List[float] = field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    trajectory_batches: int = 1  # one step keeps ε·λ well below 1 at the largest rate
    trajectory_pass_fraction: float = 0.9
    rhos: List[float] = field(default_factory=lambda: [0.8, 0.85, 0.9])
    structured_rho: float = 0.25
    equivalence_inputs: int = 100

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError(f'At least one seed is needed ({self.seeds} given).')
        if self.grad_step <= 0:
            raise ValueError(f'The finite-difference step must be positive ({self.grad_step} given).')
        if self.trajectory_batches < 0:
            raise ValueError(f'trajectory_batches cannot be negative ({self.trajectory_batches} given).')
        if sorted(self.trajectory_lrs, reverse=True) != list(self.trajectory_lrs) or not self.trajectory_lrs:
            raise ValueError('trajectory_lrs must be a non-empty decreasing list.')
