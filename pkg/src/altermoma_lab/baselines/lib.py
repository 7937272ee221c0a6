from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from altermoma_lab import log
from altermoma_lab.altermoma.lib import (apply_keep_mask, element_keep, element_partitions, element_series,
                                         kept_count, prune_with_ledger, top_k)
from altermoma_lab.altermoma.models.ledger import ImportanceLedger
from altermoma_lab.altermoma.models.prune_config import PruneConfig
from altermoma_lab.altermoma.models.report import PruneReport
from altermoma_lab.baselines import BASELINES
from altermoma_lab.fusion_model.lib import channel_map, mac_count, train_fusion
from altermoma_lab.fusion_model.models.model import FusionModel
from altermoma_lab.fusion_model.models.partition import ModalityMasks
from altermoma_lab.synth_data.lib import batches
from altermoma_lab.synth_data.models.dataset import Batch, MultiModalDataset
from altermoma_lab.tensor_core.lib import Binding, backward, backward_from, forward
from altermoma_lab.tensor_core.models.graph import Graph


def _by_channel(model: FusionModel, scores: pd.Series, how: str) -> pd.Series:
    """Reduce element scores to channel scores ('sum' or 'l2'); the prediction layer is left out."""
    cmap = channel_map(model).reindex(scores.index)
    if how == 'l2':
        return np.sqrt((scores ** 2).groupby(cmap).sum())
    return scores.groupby(cmap).sum()


def score_ledger(model: FusionModel, scores: pd.Series, method: str, structured: bool) -> ImportanceLedger:
    """A ledger holding only scores (element or channel ids), with the partition of every entry."""
    partitions = element_partitions(model)
    if structured:
        partitions = partitions.groupby(channel_map(model).reindex(partitions.index)).first()
    table = pd.DataFrame({'id': scores.index, 'partition': partitions.reindex(scores.index).to_numpy(),
                          'score': scores.to_numpy(dtype=np.float64)})
    return ImportanceLedger(table, method, structured)


def magnitude_scores(model: FusionModel, structured: bool = False) -> pd.Series:
    """|θ| per element, the L2 norm of the weights and bias of each channel in structured mode."""
    magnitudes = element_series(model, model.values()).abs()
    return _by_channel(model, magnitudes, 'l2') if structured else magnitudes


def snip_scores(model: FusionModel, eval_batches: Sequence[Batch], structured: bool = False) -> pd.Series:
    """Connection sensitivity |θ·g|, g being the gradient of the unmasked loss averaged over the batches."""
    running: Dict[str, np.ndarray] = {name: np.zeros(p.values.shape) for name, p in model.parameters.items()}
    for batch in eval_batches:
        model.loss(batch, ModalityMasks())
        for name, grad in backward(model.graph).items():
            running[name] += grad
    count = len(eval_batches)
    saliency = {name: np.abs(model.parameters[name].values.data * (total / count)) for name, total in running.items()}
    scores = element_series(model, saliency)
    return _by_channel(model, scores, 'sum') if structured else scores


def synflow_saliency(graph: Graph, output: str, inputs: Binding) -> Dict[str, np.ndarray]:
    """θ·∂R/∂θ with R the sum of `output`, after replacing every parameter of the graph by its absolute value
    (in place)."""
    for tensor in graph.parameters.values():
        np.abs(tensor.data, out=tensor.data)
    forward(graph, inputs)
    grads = backward_from(graph, output, np.ones_like(graph.values[output]))
    return {name: tensor.data * grads[name] for name, tensor in graph.parameters.items()}


def _ones_batch(model: FusionModel) -> Batch:
    in_l = model.layer('lidar/l0').fan_in
    in_c = model.layer('camera/l0').fan_in
    out = model.layers()[-1].fan_out
    return Batch(np.ones((1, in_l)), np.ones((1, in_c)), np.zeros((1, out)), np.zeros((1, 1)), np.zeros((1, 1)))


def synflow_scores(model: FusionModel, iterations: int = 100, rho: float = 0.0, structured: bool = False) -> pd.Series:
    """Data-free synaptic-flow saliency, pruned iteratively towards ρ.

    The scores are computed on a clone whose parameters are replaced by their absolute values, fed with an
    all-ones input on both modalities. At iteration i the lowest scores are masked so that
    round(N·(1 − ρ)^(i / iterations)) entries survive. The returned scores are those of the last iteration;
    entries masked before it score 0.
    """
    if iterations < 1:
        raise ValueError(f'SynFlow needs at least one iteration ({iterations} given).')
    clone = model.clone()
    clone.modality_masks = ModalityMasks()
    cmap = channel_map(clone) if structured else None
    inputs = _ones_batch(clone).as_inputs()

    alive: Optional[pd.Series] = None
    scores = pd.Series(dtype=np.float64)
    for i in range(1, iterations + 1):
        if alive is not None:
            flags = element_keep(clone, alive, structured, cmap)
            for parameter in clone.parameters.values():
                parameter.mask = flags.loc[parameter.element_ids()].to_numpy(dtype=np.float64).reshape(
                    parameter.values.shape)
        clone.bind_masks()
        elements = element_series(clone, synflow_saliency(clone.graph, clone.prediction_output, inputs))
        scores = _by_channel(clone, elements, 'sum') if structured else elements
        target = kept_count(len(scores), 1 - (1 - rho) ** (i / iterations))
        candidates = scores if alive is None else scores.where(alive.reindex(scores.index), -np.inf)
        alive = top_k(candidates, target)
        log.log(5, f'synflow iteration {i}: {int(alive.sum())} entries alive')
    return scores


def random_scores(model: FusionModel, seed: int, structured: bool = False) -> pd.Series:
    """Uniform draws in [0, 1), one per element (or per channel)."""
    ids = model.element_ids()
    if structured:
        ids = sorted(channel_map(model).dropna().unique())
    return pd.Series(np.random.default_rng(seed).uniform(0.0, 1.0, len(ids)), index=ids, dtype=np.float64)


def imp_prune(
    model: FusionModel,
    train: MultiModalDataset,
    val: MultiModalDataset,
    rho: float,
    rounds: int = 5,
    epochs_per_round: int = 1,
    lr: float = 0.05,
    batch_size: int = 64,
    seed: int = 0,
    structured: bool = False,
) -> Tuple[FusionModel, ImportanceLedger, PruneReport]:
    """Iterative magnitude pruning with rewinding.

    The current values are taken as the rewind point. Each round trains every partition for `epochs_per_round`
    epochs, keeps the round(N·(1 − ρ)^(r / rounds)) largest magnitudes among the survivors (exactly k at the
    last round) and rewinds the survivors to the rewind point. Masks are cumulative; the ledger score of an entry
    removed in an earlier round is NaN.
    """
    if rounds < 1:
        raise ValueError(f'IMP needs at least one round ({rounds} given).')
    model.snapshot()
    model.modality_masks = ModalityMasks()
    macs_before = mac_count(model)
    cmap = channel_map(model) if structured else None

    alive: Optional[pd.Series] = None
    scores = pd.Series(dtype=np.float64)
    for r in range(1, rounds + 1):
        train_fusion(model, train, val, epochs_per_round, lr, batch_size, seed + r, train_backbones=True)
        scores = magnitude_scores(model, structured)
        if alive is not None:
            scores = scores.where(alive.reindex(scores.index))
        target = kept_count(len(scores), rho) if r == rounds else kept_count(len(scores), 1 - (1 - rho) ** (r / rounds))
        alive = top_k(scores, target)
        apply_keep_mask(model, alive, structured, cmap)
        log.info(f'IMP round {r}: {int(alive.sum())} of {len(alive)} entries kept.')

    ledger = score_ledger(model, scores, 'imp', structured)
    return model, ledger, prune_with_ledger(model, ledger, rho, macs_before, cmap)


def run_baseline(
    method: str,
    model: FusionModel,
    train: MultiModalDataset,
    val: MultiModalDataset,
    cfg: PruneConfig,
) -> Tuple[FusionModel, ImportanceLedger, PruneReport]:
    """Score a trained model with one of `BASELINES` and mask it like `run_altermoma` does.

    Raises
    ------
    ValueError
        If the method is unknown.
    """
    if method not in BASELINES:
        raise ValueError(f'Unknown pruning method "{method}", use one of {BASELINES}.')
    if method == 'imp':
        return imp_prune(model, train, val, cfg.rho, cfg.imp_rounds, cfg.imp_epochs_per_round, cfg.finetune_lr,
                         cfg.batch_size, cfg.seed, cfg.structured)

    model.snapshot()
    model.modality_masks = ModalityMasks()
    macs_before = mac_count(model)
    if method == 'magnitude':
        scores = magnitude_scores(model, cfg.structured)
    elif method == 'snip':
        scores = snip_scores(model, batches(train, cfg.batch_size, cfg.seed, cfg.eval_batches), cfg.structured)
    elif method == 'synflow':
        scores = synflow_scores(model, cfg.synflow_iterations, cfg.rho, cfg.structured)
    else:
        scores = random_scores(model, cfg.seed, cfg.structured)

    cmap = channel_map(model) if cfg.structured else None
    ledger = score_ledger(model, scores, method, cfg.structured)
    return model, ledger, prune_with_ledger(model, ledger, cfg.rho, macs_before, cmap)
