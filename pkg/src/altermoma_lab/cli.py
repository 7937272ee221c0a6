"""Definition of the available CLI"""
import dataclasses
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple

import click
import pandas as pd

from altermoma_lab import config, log
from altermoma_lab.experiments import METHODS
from altermoma_lab.experiments.lib import (ablate, fit, graddiff_report, load_splits, masked_val_losses, pretrain,
                                           prune_and_finetune, val_path)
from altermoma_lab.fusion_model.checkpoint import infer_arch, load_checkpoint, save_checkpoint
from altermoma_lab.fusion_model.lib import build, mac_count
from altermoma_lab.fusion_model.models.model import FusionModel
from altermoma_lab.fusion_model.models.partition import Partition
from altermoma_lab.oracle.lib import run_verification
from altermoma_lab.synth_data.lib import export_csv, generate_splits, redundancy_certificate
from altermoma_lab.synth_data.planted import planted_setup
from altermoma_lab.synth_data.storage import load_dataset, save_dataset
from altermoma_lab.utils.exceptions import VerificationFailure
from altermoma_lab.utils.experiment import ExperimentConfig, config_hash, load_experiment
from altermoma_lab.utils.internal import add_file_handler
from altermoma_lab.utils.reports import pretty_table, write_csv

config_option = click.option('-c', '--config', 'config_path', type=click.Path(exists=True, path_type=Path),
                             help='The TOML experiment file. (Default values when omitted)')
seed_option = click.option('-s', '--seed', type=int, help='Override the data, model and pruning seeds.')
rho_option = click.option('-r', '--rho', type=float, help='Override the pruning ratio.')
structured_option = click.option('--structured/--unstructured', default=None,
                                 help='Override the pruning granularity.')
data_option = click.option('-d', '--data', type=click.Path(exists=True, path_type=Path),
                           help='A training dataset written by gen-data, its validation set is read next to it. '
                                '(Generated from the configuration when omitted)')
workers_option = click.option('-w', '--workers', type=int,
                              help=f'Worker threads. (Default is env {config.env.workers})')
log_file_option = click.option('--log-file', type=click.Path(path_type=Path),
                               help='Also write the log to this file.')


def _setup(
    config_path: Optional[Path],
    log_file: Optional[Path],
    seed: Optional[int] = None,
    rho: Optional[float] = None,
    structured: Optional[bool] = None,
) -> Tuple[ExperimentConfig, str]:
    if log_file is not None:
        add_file_handler(log, log_file, config.log.level)
    cfg = load_experiment(config_path).with_overrides(seed, rho, structured)
    cfg_hash = config_hash(cfg)
    log.debug(f'configuration hash: {cfg_hash}')
    return cfg, cfg_hash


def _sibling(path: Path, tag: str, suffix: Optional[str] = None) -> Path:
    return path.with_name(f'{path.stem}.{tag}{path.suffix if suffix is None else suffix}')


def _load_model(path: Path, cfg: ExperimentConfig) -> FusionModel:
    """Read a checkpoint whose inputs, outputs and loss match the configured model."""
    fusion_model = load_checkpoint(path)
    arch = infer_arch(fusion_model, cfg.model.seed)
    found = {'in_l': arch.in_l, 'in_c': arch.in_c, 'out': arch.out, 'loss': arch.loss}
    expected = {name: getattr(cfg.model, name) for name in found}
    if found != expected:
        raise click.BadParameter(f'The checkpoint {path} has {found}, the configuration expects {expected}.',
                                 param_hint="'-m' / '--model'")
    return fusion_model


#
# DATA CLI
#
# <editor-fold desc="DATA">

@click.group()
def data():
    pass


@data.command
@config_option
@seed_option
@log_file_option
@click.option('-o', '--out', type=click.Path(path_type=Path), required=True,
              help='The training dataset file, the validation set is written next to it (<name>.val<ext>).')
def gen_data(out: Path, config_path: Optional[Path] = None, seed: Optional[int] = None,
             log_file: Optional[Path] = None) -> None:
    """Generate the synthetic LiDAR/camera datasets and print their redundancy certificate."""
    cfg, _ = _setup(config_path, log_file, seed)
    train, val = generate_splits(cfg.data, cfg.train.seed)
    save_dataset(train, out)
    save_dataset(val, val_path(out))

    lidar_mse, camera_mse = redundancy_certificate(train)
    click.echo(pretty_table(pd.DataFrame([
        {'modality': 'lidar', 'shared_latent_recovery_mse': lidar_mse},
        {'modality': 'camera', 'shared_latent_recovery_mse': camera_mse},
    ])))


@data.command(name='export-csv')
@log_file_option
@click.option('-d', '--data', 'data_path', type=click.Path(exists=True, path_type=Path), required=True,
              help='The dataset file.')
@click.option('-o', '--out', type=click.Path(path_type=Path), required=True, help='The CSV file.')
def export_csv_command(data_path: Path, out: Path, log_file: Optional[Path] = None) -> None:
    """Export a dataset file to CSV (one row per sample)."""
    _setup(None, log_file)
    export_csv(load_dataset(data_path), out)
# </editor-fold>


#
# MODEL CLI
#
# <editor-fold desc="MODEL">

@click.group()
def model():
    pass


@model.command(name='pretrain')
@config_option
@seed_option
@data_option
@log_file_option
@click.option('-m', '--model', 'model_in', type=click.Path(exists=True, path_type=Path),
              help='A checkpoint to start from. (Freshly initialised model when omitted)')
@click.option('-o', '--out', type=click.Path(path_type=Path), required=True, help='The output checkpoint.')
def pretrain_command(out: Path, config_path: Optional[Path] = None, seed: Optional[int] = None,
                     data: Optional[Path] = None, model_in: Optional[Path] = None,
                     log_file: Optional[Path] = None) -> None:
    """Pretrain both backbones on their single-modal tasks. Prints the per-epoch losses as CSV."""
    cfg, _ = _setup(config_path, log_file, seed)
    train, _ = load_splits(cfg, data)
    fusion_model = build(cfg.model) if model_in is None else _load_model(model_in, cfg)
    history = pretrain(fusion_model, train, cfg.train)
    save_checkpoint(fusion_model, out)
    click.echo(history.to_csv(index=False, float_format='%.17g'), nl=False)


@model.command
@config_option
@seed_option
@data_option
@log_file_option
@click.option('-m', '--model', 'model_in', type=click.Path(exists=True, path_type=Path),
              help='A checkpoint with pretrained backbones. (Built and pretrained here when omitted)')
@click.option('-o', '--out', type=click.Path(path_type=Path), required=True, help='The output checkpoint.')
def train_fusion(out: Path, config_path: Optional[Path] = None, seed: Optional[int] = None,
                 data: Optional[Path] = None, model_in: Optional[Path] = None,
                 log_file: Optional[Path] = None) -> None:
    """Train the fusion model. Prints the per-epoch train and validation losses as CSV."""
    cfg, _ = _setup(config_path, log_file, seed)
    train, val = load_splits(cfg, data)
    if model_in is None:
        fusion_model = build(cfg.model)
        pretrain(fusion_model, train, cfg.train)
    else:
        fusion_model = _load_model(model_in, cfg)
    history = fit(fusion_model, train, val, cfg.train)
    save_checkpoint(fusion_model, out)

    losses = masked_val_losses(fusion_model, val)
    log.info(', '.join(f'{name} val_loss={value:.6g}' for name, value in losses.items()))
    if losses['fusion'] >= min(losses['lidar_only'], losses['camera_only']):
        log.warning('The fused model does not beat a single-modality model on the validation set.')
    click.echo(history.to_csv(index=False, float_format='%.17g'), nl=False)


@model.command
@config_option
@log_file_option
@click.option('-m', '--model', 'model_in', type=click.Path(exists=True, path_type=Path), required=True,
              help='The checkpoint.')
def summary(model_in: Path, config_path: Optional[Path] = None, log_file: Optional[Path] = None) -> None:
    """Per-partition parameter counts, kept counts and multiply-accumulate count of a checkpoint."""
    cfg, _ = _setup(config_path, log_file)
    fusion_model = _load_model(model_in, cfg)
    rows = []
    for partition in Partition:
        parameters = fusion_model.partition_parameters(partition)
        rows.append({'partition': partition.value,
                     'parameters': sum(p.size for p in parameters),
                     'kept': sum(int(p.mask.sum()) for p in parameters)})
    table = pd.DataFrame(rows)
    table = pd.concat([table, pd.DataFrame([{'partition': 'total', 'parameters': table['parameters'].sum(),
                                             'kept': table['kept'].sum()}])], ignore_index=True)
    click.echo(pretty_table(table))
    click.echo(f'Multiply-accumulates per sample (live channels): {mac_count(fusion_model)}')
# </editor-fold>


#
# PRUNING CLI
#
# <editor-fold desc="PRUNING">

@click.group()
def pruning():
    pass


@pruning.command
@config_option
@seed_option
@rho_option
@structured_option
@data_option
@workers_option
@log_file_option
@click.option('-m', '--model', 'model_in', type=click.Path(exists=True, path_type=Path), required=True,
              help='The trained checkpoint.')
@click.option('-M', '--method', type=click.Choice(METHODS), multiple=True, default=['altermoma'],
              show_default=True, help='The pruning method(s). Each one prunes its own copy of the model.')
@click.option('-o', '--out', type=click.Path(path_type=Path), required=True,
              help='The pruned checkpoint (<name>.<method><ext> when several methods are given).')
def prune(model_in: Path, method: List[str], out: Path, config_path: Optional[Path] = None,
          seed: Optional[int] = None, rho: Optional[float] = None, structured: Optional[bool] = None,
          data: Optional[Path] = None, workers: Optional[int] = None, log_file: Optional[Path] = None) -> None:
    """Prune a trained model, fine-tune it and write the checkpoint, the ledger and a summary row.

    The ledger is written next to the checkpoint (<name>.ledger.csv and .json), the summary rows to
    <name>.summary.csv.
    """
    cfg, cfg_hash = _setup(config_path, log_file, seed, rho, structured)
    methods = list(dict.fromkeys(method))
    workers = config.runtime.workers if workers is None else workers
    if workers < 1:
        raise click.BadParameter(f'at least 1 worker is needed ({workers} given).', param_hint='--workers')
    train, val = load_splits(cfg, data)
    trained = _load_model(model_in, cfg)

    def run(name: str):
        target = out if len(methods) == 1 else _sibling(out, name)
        pruned, ledger, report, _ = prune_and_finetune(name, trained.clone(), train, val, cfg.prune)
        save_checkpoint(pruned, target)
        ledger.write(_sibling(target, 'ledger', '.csv'), _sibling(target, 'ledger', '.json'), cfg_hash)
        return report.to_frame()

    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = pd.concat(list(pool.map(run, methods)), ignore_index=True)
    write_csv(reports, _sibling(out, 'summary', '.csv'), cfg_hash)
    click.echo(pretty_table(reports[['method', 'rho', 'structured', 'n', 'k', 'kept', 'val_loss_masked',
                                     'val_loss_finetuned', 'mac_reduction']]))


@pruning.command(name='ablate')
@config_option
@rho_option
@structured_option
@workers_option
@log_file_option
@click.option('-o', '--out', type=click.Path(path_type=Path), required=True, help='The CSV report.')
def ablate_command(out: Path, config_path: Optional[Path] = None, rho: Optional[float] = None,
                   structured: Optional[bool] = None, workers: Optional[int] = None,
                   log_file: Optional[Path] = None) -> None:
    """Sweep β/α over the configured grid at a fixed pruning ratio, for every seed."""
    cfg, cfg_hash = _setup(config_path, log_file, rho=rho, structured=structured)
    results = ablate(cfg, workers)
    write_csv(results, out, cfg_hash)
    means = results.groupby('beta_over_alpha', as_index=False)['val_loss'].mean()
    click.echo(pretty_table(means.rename(columns={'val_loss': 'mean_val_loss'})))


@pruning.command(name='graddiff-report')
@config_option
@seed_option
@data_option
@log_file_option
@click.option('-m', '--model', 'model_in', type=click.Path(exists=True, path_type=Path),
              help='The trained checkpoint. (The planted-redundancy model and data when omitted)')
@click.option('-o', '--out', type=click.Path(path_type=Path), required=True, help='The CSV report.')
def graddiff_report_command(out: Path, config_path: Optional[Path] = None, seed: Optional[int] = None,
                            data: Optional[Path] = None, model_in: Optional[Path] = None,
                            log_file: Optional[Path] = None) -> None:
    """Saliency of every camera-backbone parameter under the camera-only loss and under the fusion loss."""
    cfg, cfg_hash = _setup(config_path, log_file, seed)
    if model_in is None:
        fusion_model, train, _ = planted_setup(cfg.train.seed)
    else:
        fusion_model = _load_model(model_in, cfg)
        train, _ = load_splits(cfg, data)
    report = graddiff_report(fusion_model, train, cfg.prune)
    write_csv(report, out, cfg_hash)
    click.echo(f'{len(report)} camera parameters, median ratio {report["ratio"].median():.6g}.')
# </editor-fold>


#
# VERIFY CLI
#
# <editor-fold desc="VERIFY">

@click.group()
def oracle():
    pass


@oracle.command
@config_option
@log_file_option
@click.option('-o', '--out', type=click.Path(path_type=Path), help='Also write the check table to this CSV.')
def verify(config_path: Optional[Path] = None, out: Optional[Path] = None, log_file: Optional[Path] = None) -> None:
    """Run the verification suite, exit with code 2 if a check fails."""
    cfg, cfg_hash = _setup(config_path, log_file)
    results = run_verification(cfg.verify)
    if out is not None:
        write_csv(results, out, cfg_hash)
    click.echo(pretty_table(results))

    failed = results[~results['passed']]
    if len(failed) > 0:
        log.error(f'{len(failed)} of {len(results)} checks failed: {sorted(set(failed["check"]))}')
        raise VerificationFailure(f'{len(failed)} verification check(s) failed.')
    click.echo(f'All {len(results)} checks passed.')
# </editor-fold>


#
# ENV CLI
#
# <editor-fold desc="ENV">

@click.group()
def env():
    pass


@env.command
def list_env():
    """List the configurable environment variables."""
    click.echo('The available environment variables are:')
    click.echo('\n'.join([f'\t- {n}' for n in dataclasses.asdict(config.env).values()]))
# </editor-fold>
