from dataclasses import dataclass


@dataclass
class PruneConfig:
    rho: float = 0.8                    # pruning ratio, k = round((1 - rho) * N) entries survive
    alpha: float = 1.0                  # weight of the deactivated contribution
    beta: float = 1.0                   # weight of the reactivated redundancy
    reactivation_batches: int = 32      # B
    reactivation_lr: float = 1e-3       # ε
    eval_batches: int = 8               # E, batches standing in for the whole dataset
    batch_size: int = 64
    structured: bool = False
    literal_reri_end: bool = True       # end gradient on the last reactivation batch only
    seed: int = 0
    finetune_epochs: int = 5
    finetune_lr: float = 0.05
    imp_rounds: int = 5
    imp_epochs_per_round: int = 1
    synflow_iterations: int = 100

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise ValueError(f'The pruning ratio must be in [0, 1) ({self.rho} given).')
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f'The score weights cannot be negative (alpha={self.alpha}, beta={self.beta}).')
        if self.reactivation_batches < 0:
            raise ValueError(f'The number of reactivation batches cannot be negative ({self.reactivation_batches}).')
        if self.reactivation_batches > 0 and self.reactivation_lr <= 0:
            raise ValueError(f'The reactivation learning rate must be positive ({self.reactivation_lr} given).')
        if self.eval_batches <= 0 or self.batch_size <= 0:
            raise ValueError('eval_batches and batch_size must be positive.')
        if self.finetune_epochs < 0 or self.finetune_lr < 0:
            raise ValueError('The fine-tuning epochs and learning rate cannot be negative.')
        if self.imp_rounds < 1 or self.imp_epochs_per_round < 0 or self.synflow_iterations < 1:
            raise ValueError('imp_rounds and synflow_iterations must be at least 1.')
