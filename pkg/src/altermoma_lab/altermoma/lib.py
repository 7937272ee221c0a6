from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from altermoma_lab import log
from altermoma_lab.altermoma.models.ledger import INDICATORS, SIGNED, ImportanceLedger
from altermoma_lab.altermoma.models.prune_config import PruneConfig
from altermoma_lab.altermoma.models.report import PruneReport, quartile_means
from altermoma_lab.fusion_model.lib import channel_map, mac_count, train_fusion
from altermoma_lab.fusion_model.models.model import FusionModel
from altermoma_lab.fusion_model.models.partition import ModalityMasks, Partition
from altermoma_lab.synth_data.lib import batches
from altermoma_lab.synth_data.models.dataset import Batch, MultiModalDataset
from altermoma_lab.tensor_core.lib import Gradients, Objective, average_gradients, train_steps
from altermoma_lab.utils.exceptions import LedgerError, MaskingError


def element_series(model: FusionModel, arrays: Mapping[str, np.ndarray]) -> pd.Series:
    """Flatten per-parameter arrays into a Series indexed by element id (parameters absent from `arrays` are
    skipped)."""
    ids, values = [], []
    for parameter in model.parameters.values():
        if parameter.id in arrays:
            ids.extend(parameter.element_ids())
            values.append(np.asarray(arrays[parameter.id], dtype=np.float64).reshape(-1))
    return pd.Series(np.concatenate(values) if values else np.zeros(0), index=ids, dtype=np.float64)


def element_partitions(model: FusionModel) -> pd.Series:
    ids, partitions = [], []
    for parameter in model.parameters.values():
        ids.extend(parameter.element_ids())
        partitions.extend([parameter.partition.value] * parameter.size)
    return pd.Series(partitions, index=ids, dtype=object)


#
# INDICATORS
#
# <editor-fold desc="INDICATORS">

def taylor_terms(objective: Objective, eval_batches: Iterable) -> Dict[str, np.ndarray]:
    """θ·ḡ for every parameter of the objective, ḡ being the gradient averaged over the batches."""
    _, grads = average_gradients(objective, eval_batches)
    return {name: tensor.data * grads[name] for name, tensor in objective.parameters().items()}


def deci_terms(model: FusionModel, eval_batches: Sequence[Batch]) -> pd.Series:
    """Signed deactivated-contribution terms θ·ḡ on the unmasked model, indexed by element id."""
    if not model.modality_masks.is_unmasked():
        raise MaskingError('The deactivated contribution is defined on the unmasked model.')
    return element_series(model, taylor_terms(model.objective(), eval_batches))


def deci(model: FusionModel, eval_batches: Sequence[Batch]) -> pd.Series:
    """Deactivated contribution |θ·ḡ| of every element of the three partitions.

    Parameters
    ----------
    model : FusionModel
        The model, with every modality mask at 1.
    eval_batches : Sequence[Batch]
        The batches whose mean gradient stands in for the gradient on the whole dataset.

    Returns
    -------
    pd.Series
        The indicator of every element, indexed by element id.

    Raises
    ------
    MaskingError
        If a modality mask is 0.
    """
    return deci_terms(model, eval_batches).abs()


@dataclass
class Reactivation:
    grad_start: Gradients
    grad_end: Gradients
    model: object
    losses: List[float]


def reactivate_objective(
    objective: Objective,
    eval_batches: Sequence,
    train_batches: Sequence,
    lr: float,
    literal_end: bool = True,
) -> Reactivation:
    """Gradients before and after a few masked SGD steps.

    `grad_start` is the mean gradient over `eval_batches` at the current parameters. After one step per training
    batch, `grad_end` is the gradient on the last training batch (`literal_end`) or the mean over `eval_batches`.
    Without training batches both gradients are computed on `eval_batches` and are equal.
    """
    if train_batches and lr <= 0:
        raise ValueError(f'The reactivation learning rate must be positive ({lr} given).')
    names = list(objective.parameters())
    _, start = average_gradients(objective, eval_batches)
    losses = train_steps(objective, train_batches, lr)
    end_batches = [train_batches[-1]] if literal_end and train_batches else eval_batches
    _, end = average_gradients(objective, end_batches)
    return Reactivation({n: start[n] for n in names}, {n: end[n] for n in names}, objective, losses)


def reactivate(
    model: FusionModel,
    masked_modality: Partition,
    ds: MultiModalDataset,
    cfg: PruneConfig,
    eval_batches: Optional[Sequence[Batch]] = None,
) -> Reactivation:
    """Mask one backbone and train the rest of the model for `cfg.reactivation_batches` steps.

    The model's modality masks are left with `masked_modality` at 0. The gradients cover the parameters of the
    non-masked backbone and of the fusion partition; the masked partition is never updated.
    """
    if masked_modality not in Partition.backbones():
        raise ValueError(f'Only a backbone can be masked ({masked_modality.value} given).')
    if cfg.reactivation_batches > 0 and cfg.reactivation_lr <= 0:
        raise ValueError(f'The reactivation learning rate must be positive ({cfg.reactivation_lr} given).')

    masks = ModalityMasks().masking(masked_modality)
    model.modality_masks = masks
    if eval_batches is None:
        eval_batches = batches(ds, cfg.batch_size, cfg.seed, cfg.eval_batches)
    train_batches = batches(ds, cfg.batch_size, cfg.seed + 1 + masked_modality.code, cfg.reactivation_batches)

    log.info(f'{masked_modality.value} masked, reactivating for {len(train_batches)} batches.')
    objective = model.objective(masks, [p for p in Partition if p != masked_modality])
    result = reactivate_objective(objective, eval_batches, train_batches, cfg.reactivation_lr, cfg.literal_reri_end)
    result.model = model
    first, last = quartile_means(result.losses)
    log.debug(f'reactivation loss: first quartile {first:.6g}, last quartile {last:.6g}')
    return result


def reri_terms(
    theta_init: Mapping[str, np.ndarray],
    grad_start: Mapping[str, np.ndarray],
    grad_end: Mapping[str, np.ndarray],
) -> Dict[str, np.ndarray]:
    """Signed reactivated-redundancy terms θ·g_start − θ·g_end, both products taken at the initial values."""
    if not set(theta_init) == set(grad_start) == set(grad_end):
        mismatch = set(theta_init) ^ set(grad_start) | set(theta_init) ^ set(grad_end)
        raise LedgerError(f'The parameter sets differ on {sorted(mismatch)}.')
    return {name: theta_init[name] * grad_start[name] - theta_init[name] * grad_end[name] for name in theta_init}


def reri(
    theta_init: Mapping[str, np.ndarray],
    grad_start: Mapping[str, np.ndarray],
    grad_end: Mapping[str, np.ndarray],
) -> Dict[str, np.ndarray]:
    """Reactivated redundancy |θ·g_start − θ·g_end| per parameter.

    Raises
    ------
    LedgerError
        If the three mappings do not share their keys.
    """
    return {name: np.abs(term) for name, term in reri_terms(theta_init, grad_start, grad_end).items()}
# </editor-fold>


#
# SCORES
#
# <editor-fold desc="SCORES">

_REQUIRED = {
    Partition.LIDAR.value: ['deci', 'reri'],
    Partition.CAMERA.value: ['deci', 'reri'],
    Partition.FUSION.value: ['deci', 'reri_mu_l0', 'reri_mu_c0'],
}


def normalized_shares(ledger: ImportanceLedger) -> pd.DataFrame:
    """Every indicator divided by its sum over the entry's partition.

    A partition whose sum is 0 gets a share of 0 for all its entries. Columns are the indicator names.
    """
    table = ledger.table
    shares = pd.DataFrame(index=table.index)
    for indicator in INDICATORS:
        totals = table.groupby('partition')[indicator].transform('sum')
        present = table[indicator].notna()
        for partition in table.loc[present & (totals == 0), 'partition'].unique():
            log.warning(f'The {indicator} of the {partition} partition sums to 0, its normalised term is 0.')
        shares[indicator] = (table[indicator] / totals).mask(totals == 0, 0.0).where(present)
    return shares


def assemble_scores(ledger: ImportanceLedger, alpha: float, beta: float) -> pd.Series:
    """Assemble the final score of every entry and store it in the ledger.

    Backbone entries: S = α·deci/Σdeci − β·reri/Σreri. Fusion entries: S = α·deci/Σdeci
    − (β/2)·reri_mu_l0/Σreri_mu_l0 − (β/2)·reri_mu_c0/Σreri_mu_c0. Sums run over the entry's partition.

    Raises
    ------
    LedgerError
        If an entry lacks one of the indicators its partition needs.
    """
    table = ledger.table
    missing = []
    for partition, columns in _REQUIRED.items():
        rows = table[table['partition'] == partition]
        missing.extend(rows.index[rows[columns].isna().any(axis=1)].tolist())
    if missing:
        raise LedgerError(f'Incomplete ledger entries ({len(missing)}): {missing[:10]}.')

    shares = normalized_shares(ledger)
    fusion = table['partition'] == Partition.FUSION.value
    redundancy = pd.Series(np.where(
        fusion,
        beta / 2 * shares['reri_mu_l0'].fillna(0.0) + beta / 2 * shares['reri_mu_c0'].fillna(0.0),
        beta * shares['reri'].fillna(0.0),
    ), index=table.index)
    scores = alpha * shares['deci'] - redundancy
    ledger.set_scores(scores)
    return scores


def kept_count(n: int, rho: float) -> int:
    if not 0 <= rho < 1:
        raise ValueError(f'The pruning ratio must be in [0, 1) ({rho} given).')
    return int(round((1 - rho) * n))


def top_k(scores: pd.Series, k: int) -> pd.Series:
    """Boolean keep flags of the k highest scores, ties broken by ascending id. NaN scores rank last."""
    order = pd.DataFrame({'score': scores.fillna(-np.inf).to_numpy(dtype=np.float64),
                          'id': scores.index.astype(str)})
    order = order.sort_values(['score', 'id'], ascending=[False, True], kind='mergesort')
    keep = np.zeros(len(scores), dtype=bool)
    keep[order.index[:k].to_numpy()] = True
    return pd.Series(keep, index=scores.index, name='kept')


def global_threshold(scores: pd.Series, rho: float) -> pd.Series:
    """Keep exactly k = round((1 − ρ)·N) entries, the highest scores across every partition."""
    k = kept_count(len(scores), rho)
    log.info(f'Keeping {k} of {len(scores)} entries (rho={rho}).')
    return top_k(scores, k)


def structured_aggregate(ledger: ImportanceLedger, cmap: pd.Series) -> ImportanceLedger:
    """Group element entries into output channels, summing the signed terms of each channel.

    Elements whose channel is missing (the prediction layer) are left out of the channel ledger.

    Raises
    ------
    LedgerError
        If an element of the ledger is not in the channel map.
    """
    unmapped = ledger.ids.difference(cmap.index)
    if len(unmapped):
        raise LedgerError(f'Elements without channel: {unmapped.tolist()[:10]} ({len(unmapped)} in total).')

    channels = cmap.reindex(ledger.ids)
    mapped = channels.notna()
    grouped = ledger.table.loc[mapped, SIGNED + ['partition']].assign(channel=channels[mapped]).groupby('channel')
    table = grouped[SIGNED].sum(min_count=1)
    table['partition'] = grouped['partition'].first()
    table = table.rename_axis('id').reset_index()

    aggregated = ImportanceLedger(table, ledger.method, structured=True)
    aggregated.refresh_indicators()
    return aggregated
# </editor-fold>


#
# MASKING
#
# <editor-fold desc="MASKING">

def element_keep(model: FusionModel, keep: pd.Series, structured: bool, cmap: Optional[pd.Series] = None) -> pd.Series:
    """Keep flag of every element from element-level or channel-level flags."""
    if not structured:
        flags = keep.reindex(model.element_ids())
        if flags.isna().any():
            raise LedgerError(f'No keep flag for {flags.index[flags.isna()].tolist()[:10]}.')
        return flags.astype(bool)

    cmap = channel_map(model) if cmap is None else cmap
    unknown = set(cmap.dropna()) - set(keep.index)
    if unknown:
        raise LedgerError(f'No keep flag for the channels {sorted(unknown)[:10]}.')
    flags = cmap.map(keep)
    return flags.where(cmap.notna(), True).astype(bool)


def apply_keep_mask(
    model: FusionModel,
    keep: pd.Series,
    structured: bool = False,
    cmap: Optional[pd.Series] = None,
) -> FusionModel:
    """Set every per-parameter mask from the keep flags and reset the values to μ ⊙ θ_init.

    θ_init is the model's snapshot when it has one, its current values otherwise.
    """
    flags = element_keep(model, keep, structured, cmap)
    if model.init_snapshot is not None:
        model.restore()
    model.modality_masks = ModalityMasks()
    for parameter in model.parameters.values():
        mask = flags.loc[parameter.element_ids()].to_numpy(dtype=np.float64).reshape(parameter.values.shape)
        parameter.mask = mask
        np.copyto(parameter.values.data, parameter.values.data * mask)
    return model


def n_unmasked(model: FusionModel) -> int:
    return int(sum(p.mask.sum() for p in model.parameters.values()))


def prune_with_ledger(
    model: FusionModel,
    ledger: ImportanceLedger,
    rho: float,
    macs_before: int,
    cmap: Optional[pd.Series] = None,
    curves: Optional[Dict[Partition, List[float]]] = None,
) -> PruneReport:
    """Threshold the ledger scores, record the keep flags and mask the model. Shared by every method."""
    keep = global_threshold(ledger.scores(), rho)
    ledger.set_kept(keep)
    apply_keep_mask(model, keep, ledger.structured, cmap)

    curves = curves or {}
    lidar_first, lidar_last = quartile_means(curves.get(Partition.LIDAR, []))
    camera_first, camera_last = quartile_means(curves.get(Partition.CAMERA, []))
    report = PruneReport(
        method=ledger.method,
        rho=rho,
        structured=ledger.structured,
        n=len(ledger),
        k=kept_count(len(ledger), rho),
        kept=int(keep.sum()),
        n_parameters=model.n_parameters(),
        n_unmasked=n_unmasked(model),
        macs_before=macs_before,
        macs_after=mac_count(model),
        mask_lidar_loss_first=lidar_first,
        mask_lidar_loss_last=lidar_last,
        mask_camera_loss_first=camera_first,
        mask_camera_loss_last=camera_last,
    )
    log.info(f'{report.method}: kept {report.kept} of {report.n} entries, {report.n_unmasked} parameters unmasked.')
    return report
# </editor-fold>


def run_altermoma(
    model: FusionModel,
    ds: MultiModalDataset,
    cfg: PruneConfig,
) -> Tuple[FusionModel, ImportanceLedger, PruneReport]:
    """Score, threshold and mask a trained fusion model.

    The current parameter values are taken as θ_init (a snapshot is taken). The deactivated contribution is
    measured once on the unmasked model; then each backbone is masked in turn, the rest of the model is reactivated
    and the redundancy of the other backbone and of the fusion partition is measured before θ_init is restored.
    The assembled scores are thresholded globally and the masks applied to θ_init. Fine-tuning is left to
    `finetune`.

    Parameters
    ----------
    model : FusionModel
        The trained model, masked in place.
    ds : MultiModalDataset
        The data providing the evaluation and reactivation batches.
    cfg : PruneConfig
        The pruning parameters.

    Returns
    -------
    Tuple[FusionModel, ImportanceLedger, PruneReport]
        The pruned model, the ledger (per element, or per channel in structured mode) and the summary.
    """
    model.snapshot()
    model.modality_masks = ModalityMasks()
    macs_before = mac_count(model)
    eval_batches = batches(ds, cfg.batch_size, cfg.seed, cfg.eval_batches)

    log.info(f'Measuring the deactivated contribution of {model.n_parameters()} parameters.')
    signed_deci = deci_terms(model, eval_batches)

    stages: Dict[Partition, pd.Series] = {}
    curves: Dict[Partition, List[float]] = {}
    for masked in Partition.backbones():
        result = reactivate(model, masked, ds, cfg, eval_batches)
        theta = {name: model.init_snapshot[name] for name in result.grad_start}
        stages[masked] = element_series(model, reri_terms(theta, result.grad_start, result.grad_end))
        curves[masked] = result.losses
        model.restore()
        model.modality_masks = ModalityMasks()

    ledger = ImportanceLedger.from_terms(element_partitions(model), signed_deci,
                                         reri_mu_l0_terms=stages[Partition.LIDAR],
                                         reri_mu_c0_terms=stages[Partition.CAMERA])
    cmap = None
    if cfg.structured:
        cmap = channel_map(model)
        ledger = structured_aggregate(ledger, cmap)
    assemble_scores(ledger, cfg.alpha, cfg.beta)
    report = prune_with_ledger(model, ledger, cfg.rho, macs_before, cmap, curves)
    return model, ledger, report


def finetune(
    model: FusionModel,
    train: MultiModalDataset,
    val: MultiModalDataset,
    epochs: int,
    lr: float,
    batch_size: int = 64,
    seed: int = 0,
) -> pd.DataFrame:
    """Masked SGD on the fusion loss over all partitions; pruned entries stay exactly 0.

    Returns
    -------
    pd.DataFrame
        The per-epoch history of `fusion_model.lib.train_fusion`.
    """
    return train_fusion(model, train, val, epochs, lr, batch_size, seed, train_backbones=True)
