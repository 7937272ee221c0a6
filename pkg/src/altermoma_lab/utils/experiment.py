"""Experiment configuration

One TOML file, one section per configuration dataclass. Missing keys take the dataclass defaults (listed in the
readme), unknown sections and keys are rejected.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import tomli
from dataclass_wizard import fromdict
from dataclass_wizard.errors import JSONWizardError

from altermoma_lab.altermoma.models.prune_config import PruneConfig
from altermoma_lab.fusion_model.models.arch import ArchConfig
from altermoma_lab.oracle.models.verify_config import VerifyConfig
from altermoma_lab.synth_data.models.config import GenConfig


@dataclass
class TrainConfig:
    seed: int = 0                   # data samples and batch order
    pretrain_epochs: int = 5
    pretrain_lr: float = 0.05
    epochs: int = 20
    lr: float = 0.05
    batch_size: int = 64
    train_backbones: bool = False

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.epochs < 0:
            raise ValueError('The number of epochs cannot be negative.')
        if self.pretrain_lr < 0 or self.lr < 0:
            raise ValueError('The learning rates cannot be negative.')
        if self.batch_size <= 0:
            raise ValueError(f'The batch size must be positive ({self.batch_size} given).')


@dataclass
class AblationConfig:
    grid: List[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0, 2.0, 4.0])   # β/α
    seeds: int = 3
    rho: float = 0.8
    planted: bool = True

    def __post_init__(self):
        if not self.grid or any(ratio < 0 for ratio in self.grid):
            raise ValueError(f'The β/α grid must be a non-empty list of non-negative ratios ({self.grid} given).')
        if self.seeds < 1:
            raise ValueError(f'At least one seed is needed ({self.seeds} given).')
        if not 0 <= self.rho < 1:
            raise ValueError(f'The pruning ratio must be in [0, 1) ({self.rho} given).')


@dataclass
class ExperimentConfig:
    data: GenConfig = field(default_factory=GenConfig)
    model: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)

    def __post_init__(self):
        dims = [(self.model.in_l, self.data.d_l, 'in_l', 'd_l'), (self.model.in_c, self.data.d_c, 'in_c', 'd_c'),
                (self.model.out, self.data.d_y, 'out', 'd_y')]
        for model_dim, data_dim, model_key, data_key in dims:
            if model_dim != data_dim:
                raise ValueError(f'[model].{model_key} ({model_dim}) must equal [data].{data_key} ({data_dim}).')
        expected_loss = 'cross_entropy' if self.data.task == 'classification' else 'mse'
        if self.model.loss != expected_loss:
            raise ValueError(f'The {self.data.task} task needs [model].loss = "{expected_loss}".')

    def with_overrides(
        self,
        seed: Optional[int] = None,
        rho: Optional[float] = None,
        structured: Optional[bool] = None,
    ) -> ExperimentConfig:
        """Apply the command line overrides; `seed` replaces the data, model and pruning seeds, `rho` the pruning
        and ablation ratios."""
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=seed),
                                      model=dataclasses.replace(cfg.model, seed=seed),
                                      prune=dataclasses.replace(cfg.prune, seed=seed))
        if rho is not None:
            cfg = dataclasses.replace(cfg, prune=dataclasses.replace(cfg.prune, rho=rho),
                                      ablation=dataclasses.replace(cfg.ablation, rho=rho))
        if structured is not None:
            cfg = dataclasses.replace(cfg, prune=dataclasses.replace(cfg.prune, structured=structured))
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def md5(self, salt: str = '') -> str:
        import hashlib

        md5_hash = hashlib.md5(f'{self.to_json()}{salt}'.encode('utf-8'))
        return md5_hash.hexdigest()


SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(ExperimentConfig)}


def _section(name: str, values: Dict[str, Any]) -> Any:
    cls = SECTIONS[name]
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f'Unknown keys in [{name}]: {unknown}. Valid keys are {sorted(known)}.')
    try:
        return fromdict(cls, values)
    except JSONWizardError as e:
        raise ValueError(f'Invalid value in [{name}]: {e}')


def experiment_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ValueError(f'Unknown configuration sections: {unknown}. Valid sections are {sorted(SECTIONS)}.')
    return ExperimentConfig(**{name: _section(name, raw.get(name, {})) for name in SECTIONS})


def load_experiment(path: Optional[Path] = None) -> ExperimentConfig:
    """Read an experiment file, the defaults when no path is given.

    Raises
    ------
    ValueError
        If the file is not valid TOML, or has an unknown section or key, or an invalid value.
    """
    if path is None:
        return ExperimentConfig()
    with path.open('rb') as f:
        try:
            raw = tomli.load(f)
        except tomli.TOMLDecodeError as e:
            raise ValueError(f'{path} is not a valid TOML file: {e}')
    return experiment_from_dict(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    """md5 of the canonical JSON of the fully resolved configuration."""
    return cfg.md5()
