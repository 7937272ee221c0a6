import dataclasses
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from altermoma_lab import config, log
from altermoma_lab.altermoma.lib import element_series, finetune, run_altermoma, taylor_terms
from altermoma_lab.altermoma.models.ledger import ImportanceLedger
from altermoma_lab.altermoma.models.prune_config import PruneConfig
from altermoma_lab.altermoma.models.report import PruneReport
from altermoma_lab.baselines.lib import run_baseline
from altermoma_lab.experiments import METHODS
from altermoma_lab.fusion_model.lib import build, evaluate, pretrain_backbone, train_fusion
from altermoma_lab.fusion_model.models.model import FusionModel
from altermoma_lab.fusion_model.models.partition import ModalityMasks, Partition
from altermoma_lab.synth_data.lib import batches, generate_splits
from altermoma_lab.synth_data.models.dataset import MultiModalDataset
from altermoma_lab.synth_data.planted import planted_setup
from altermoma_lab.synth_data.storage import load_dataset
from altermoma_lab.utils.experiment import ExperimentConfig, TrainConfig


def val_path(train_path: Path) -> Path:
    """The validation file written next to a training dataset file."""
    return train_path.with_name(f'{train_path.stem}.val{train_path.suffix}')


def load_splits(cfg: ExperimentConfig, data: Optional[Path] = None) -> Tuple[MultiModalDataset, MultiModalDataset]:
    """The training and validation sets, read from `data` (and its validation sibling) or generated."""
    if data is None:
        return generate_splits(cfg.data, cfg.train.seed)
    return load_dataset(data), load_dataset(val_path(data))


#
# TRAINING
#
# <editor-fold desc="TRAINING">

def pretrain(model: FusionModel, train: MultiModalDataset, cfg: TrainConfig) -> pd.DataFrame:
    """Pretrain both backbones on their single-modal tasks.

    Returns
    -------
    pd.DataFrame
        The per-epoch losses (`modality`, `epoch`, `loss`).
    """
    histories = []
    for modality in Partition.backbones():
        _, history = pretrain_backbone(model, modality, train, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.batch_size,
                                       cfg.seed + modality.code)
        histories.append(history.assign(modality=modality.value))
    return pd.concat(histories, ignore_index=True)[['modality', 'epoch', 'loss']]


def fit(model: FusionModel, train: MultiModalDataset, val: MultiModalDataset, cfg: TrainConfig) -> pd.DataFrame:
    return train_fusion(model, train, val, cfg.epochs, cfg.lr, cfg.batch_size, cfg.seed, cfg.train_backbones)


def prepare_model(
    cfg: ExperimentConfig,
    train: MultiModalDataset,
    val: MultiModalDataset,
) -> Tuple[FusionModel, pd.DataFrame]:
    """Build, pretrain both backbones and train the fusion model."""
    model = build(cfg.model)
    pretrain(model, train, cfg.train)
    return model, fit(model, train, val, cfg.train)


def masked_val_losses(model: FusionModel, val: MultiModalDataset) -> Dict[str, float]:
    """Validation loss of the fused model and of each single-modality model."""
    return {
        'fusion': evaluate(model, val),
        'lidar_only': evaluate(model, val, ModalityMasks(camera=0)),
        'camera_only': evaluate(model, val, ModalityMasks(lidar=0)),
    }
# </editor-fold>


#
# PRUNING
#
# <editor-fold desc="PRUNING">

def prune_method(
    method: str,
    model: FusionModel,
    train: MultiModalDataset,
    val: MultiModalDataset,
    cfg: PruneConfig,
) -> Tuple[FusionModel, ImportanceLedger, PruneReport]:
    """Run one of `METHODS` on a trained model.

    Raises
    ------
    ValueError
        If the method is unknown.
    """
    if method not in METHODS:
        raise ValueError(f'Unknown pruning method "{method}", use one of {METHODS}.')
    if method == 'altermoma':
        return run_altermoma(model, train, cfg)
    return run_baseline(method, model, train, val, cfg)


def prune_and_finetune(
    method: str,
    model: FusionModel,
    train: MultiModalDataset,
    val: MultiModalDataset,
    cfg: PruneConfig,
) -> Tuple[FusionModel, ImportanceLedger, PruneReport, pd.DataFrame]:
    """Prune, record the validation loss right after masking, fine-tune and record it again."""
    model, ledger, report = prune_method(method, model, train, val, cfg)
    masked = evaluate(model, val)
    history = finetune(model, train, val, cfg.finetune_epochs, cfg.finetune_lr, cfg.batch_size, cfg.seed)
    report = report.with_losses(masked, evaluate(model, val))
    log.info(f'{method}: validation loss {report.val_loss_masked:.6g} after masking, '
             f'{report.val_loss_finetuned:.6g} after fine-tuning.')
    return model, ledger, report, history
# </editor-fold>


#
# ABLATION
#
# <editor-fold desc="ABLATION">

def _ablation_base(cfg: ExperimentConfig, seed: int) -> Tuple[FusionModel, MultiModalDataset, MultiModalDataset]:
    if cfg.ablation.planted:
        return planted_setup(seed, target_noise=cfg.data.target_noise)
    seeded = cfg.with_overrides(seed=seed)
    train, val = generate_splits(seeded.data, seed)
    model, _ = prepare_model(seeded, train, val)
    return model, train, val


def ablate(cfg: ExperimentConfig, workers: Optional[int] = None) -> pd.DataFrame:
    """Validation loss after pruning and fine-tuning for every β/α of the grid and every seed.

    Each seed prepares one model, every grid point prunes its own clone. Rows are ordered by seed, then by grid
    point, whatever the number of workers.

    Returns
    -------
    pd.DataFrame
        The columns `beta_over_alpha`, `seed`, `rho`, `val_loss`.
    """
    workers = config.runtime.workers if workers is None else workers
    if workers < 1:
        raise ValueError(f'The number of workers must be at least 1 ({workers} given).')
    seeds = list(range(cfg.ablation.seeds))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        bases = dict(zip(seeds, pool.map(lambda s: _ablation_base(cfg, s), seeds)))

        def point(job: Tuple[int, float]) -> dict:
            seed, ratio = job
            model, train, val = bases[seed]
            prune_cfg = dataclasses.replace(cfg.prune, rho=cfg.ablation.rho, beta=ratio * cfg.prune.alpha, seed=seed)
            _, _, report, _ = prune_and_finetune('altermoma', model.clone(), train, val, prune_cfg)
            log.info(f'ablation seed {seed}, beta/alpha={ratio:g}: val_loss={report.val_loss_finetuned:.6g}')
            return {'beta_over_alpha': ratio, 'seed': seed, 'rho': cfg.ablation.rho,
                    'val_loss': report.val_loss_finetuned}

        rows = list(pool.map(point, [(seed, ratio) for seed in seeds for ratio in cfg.ablation.grid]))
    return pd.DataFrame(rows, columns=['beta_over_alpha', 'seed', 'rho', 'val_loss'])
# </editor-fold>


def graddiff_report(model: FusionModel, ds: MultiModalDataset, cfg: PruneConfig) -> pd.DataFrame:
    """Saliency |θ·ḡ| of every camera-backbone element under the camera-only loss and under the fusion loss.

    The ratio is camera-only over fusion, 1 when both are 0.

    Returns
    -------
    pd.DataFrame
        The columns `id`, `camera_only`, `full_fusion`, `ratio`.
    """
    eval_batches = batches(ds, cfg.batch_size, cfg.seed, cfg.eval_batches)
    camera_only = element_series(model, taylor_terms(
        model.objective(ModalityMasks(lidar=0), [Partition.CAMERA]), eval_batches)).abs()
    full = element_series(model, taylor_terms(
        model.objective(ModalityMasks(), [Partition.CAMERA]), eval_batches)).abs()
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where((camera_only == 0) & (full == 0), 1.0, camera_only / full)
    return pd.DataFrame({'id': camera_only.index, 'camera_only': camera_only.to_numpy(),
                         'full_fusion': full.to_numpy(), 'ratio': ratio})
