import dataclasses
import re
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from altermoma_lab import log
from altermoma_lab.altermoma.lib import (deci, global_threshold, kept_count, normalized_shares,
                                         run_altermoma)
from altermoma_lab.altermoma.models.ledger import INDICATORS
from altermoma_lab.altermoma.models.prune_config import PruneConfig
from altermoma_lab.baselines.lib import snip_scores
from altermoma_lab.fusion_model.lib import build, compact, mac_count
from altermoma_lab.fusion_model.models.arch import ArchConfig
from altermoma_lab.fusion_model.models.model import FusionModel
from altermoma_lab.fusion_model.models.parameter import Parameter
from altermoma_lab.fusion_model.models.partition import ModalityMasks, Partition
from altermoma_lab.oracle.models.verify_config import VerifyConfig
from altermoma_lab.synth_data.lib import batches, generate
from altermoma_lab.synth_data.models.config import GenConfig
from altermoma_lab.synth_data.models.dataset import Batch, MultiModalDataset
from altermoma_lab.tensor_core.lib import GraphObjective, Objective, train_steps
from altermoma_lab.tensor_core.models.graph import Graph, OpType
from altermoma_lab.tensor_core.models.tensor import Tensor
from altermoma_lab.utils.exceptions import LedgerError, MaskingError, ModelTooLargeError

_ELEMENT_ID = re.compile(r'^(?P<parameter>.+)\[(?P<index>\d+)\]$')

# the trajectory error replays training once per perturbed entry
MAX_TRAJECTORY_PARAMETERS = 50
TRAJECTORY_STEP = 1e-6
ABSOLUTE_FLOOR = 1e-8

TOY_ARCH = ArchConfig(in_l=2, in_c=2, hidden=4, n_hidden=1, feat=2, fusion_hidden=4, out=2)
TOY_DATA = GenConfig(n_samples=256, n_val=64, d_shared=1, d_cam_only=1, d_l=2, d_c=2, d_y=2, target_hidden=8)
TINY_ARCH = ArchConfig(in_l=1, in_c=2, hidden=2, n_hidden=1, feat=1, fusion_hidden=2, out=1)
TINY_DATA = GenConfig(n_samples=128, n_val=32, d_shared=1, d_cam_only=1, d_l=1, d_c=2, d_y=1, target_hidden=4)
STRUCTURED_ARCH = ArchConfig(in_l=2, in_c=2, hidden=8, n_hidden=1, feat=4, fusion_hidden=8, out=2)


#
# MASKING DELTAS
#
# <editor-fold desc="MASKING DELTAS">

def _locate(model: FusionModel, element_id: str) -> Tuple[Parameter, int]:
    match = _ELEMENT_ID.match(element_id)
    parameter = model.parameters.get(match.group('parameter')) if match else None
    if parameter is None or int(match.group('index')) >= parameter.size:
        raise LedgerError(f'Unknown element id "{element_id}".')
    return parameter, int(match.group('index'))


def _mean_loss(model: FusionModel, eval_batches: Sequence[Batch]) -> float:
    return float(np.mean([model.loss(batch) for batch in eval_batches]))


def _delta(model: FusionModel, parameter: Parameter, index: int, eval_batches: Sequence[Batch], base: float) -> float:
    flat = parameter.values.flat()
    original = flat[index]
    flat[index] = 0.0
    try:
        return abs(base - _mean_loss(model, eval_batches))
    finally:
        flat[index] = original


def _check_unmasked(model: FusionModel) -> None:
    if not model.modality_masks.is_unmasked():
        raise MaskingError('Exact masking deltas are measured on the unmasked model.')


def exact_mask_delta(model: FusionModel, element_id: str, eval_batches: Sequence[Batch]) -> float:
    """|L − L(θ_i = 0)| with both losses averaged over the batches. Forward passes only.

    Raises
    ------
    LedgerError
        If the element id does not exist in the model.
    """
    _check_unmasked(model)
    parameter, index = _locate(model, element_id)
    return _delta(model, parameter, index, eval_batches, _mean_loss(model, eval_batches))


def exact_mask_deltas(model: FusionModel, eval_batches: Sequence[Batch]) -> pd.Series:
    """`exact_mask_delta` of every element, indexed by element id."""
    _check_unmasked(model)
    base = _mean_loss(model, eval_batches)
    deltas = {}
    for parameter in model.parameters.values():
        for index, element_id in enumerate(parameter.element_ids()):
            deltas[element_id] = _delta(model, parameter, index, eval_batches, base)
    return pd.Series(deltas, dtype=np.float64)
# </editor-fold>


#
# GRADIENTS
#
# <editor-fold desc="GRADIENTS">

def relative_error(analytic: float, numeric: float) -> float:
    """|a − n| / max(|a|, |n|), 0 when |a − n| is below the absolute floor."""
    difference = abs(analytic - numeric)
    if difference < ABSOLUTE_FLOOR:
        return 0.0
    return difference / max(abs(analytic), abs(numeric))


def fd_gradient_check(model: Union[FusionModel, Objective], batch, step: float = 1e-5) -> float:
    """Largest relative error between the autodiff gradient and central finite differences.

    Parameters
    ----------
    model : Union[FusionModel, Objective]
        A fusion model (checked unmasked on every partition) or any objective.
    batch
        The batch on which both gradients are computed.
    step : float, optional
        The finite-difference step, by default 1e-5.

    Returns
    -------
    float
        The maximum over every parameter entry.
    """
    if step <= 0:
        raise ValueError(f'The finite-difference step must be positive ({step} given).')
    objective = model.objective() if isinstance(model, FusionModel) else model
    _, grads = objective.loss_and_grad(batch)
    grads = {name: g.copy() for name, g in grads.items()}

    worst = 0.0
    for name, tensor in objective.parameters().items():
        flat, analytic = tensor.flat(), grads[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = objective.loss(batch)
            flat[i] = original - step
            minus = objective.loss(batch)
            flat[i] = original
            worst = max(worst, relative_error(analytic[i], (plus - minus) / (2 * step)))
    return worst
# </editor-fold>


#
# TRAJECTORY ERROR
#
# <editor-fold desc="TRAJECTORY ERROR">

def _load(objective: Objective, theta: dict) -> None:
    for name, tensor in objective.parameters().items():
        np.copyto(tensor.data, theta[name])


def _replay(objective: Objective, theta: dict, train_batches: Sequence, lr: float) -> float:
    _load(objective, theta)
    train_steps(objective, train_batches, lr)
    return objective.loss(train_batches[-1])


def trajectory_error(
    objective: Objective,
    train_batches: Sequence,
    lr: float,
    step: float = TRAJECTORY_STEP,
) -> float:
    """Error of evaluating the end gradient at the initial values.

    Measures || θ_0 ⊙ dL_B/dθ_0 − θ_0 ⊙ ∂L_B/∂θ_B ||, where L_B is the loss on the last batch
    after one SGD step per batch. The total derivative through the training steps is computed by central
    differences on every initial entry, replaying the whole trajectory each time. The parameters are left at θ_0.

    Raises
    ------
    ModelTooLargeError
        If the objective has more than `MAX_TRAJECTORY_PARAMETERS` entries.
    """
    params = objective.parameters()
    size = sum(tensor.size for tensor in params.values())
    if size > MAX_TRAJECTORY_PARAMETERS:
        raise ModelTooLargeError(f'The trajectory error replays training per entry, {size} entries is too many '
                                 f'(at most {MAX_TRAJECTORY_PARAMETERS}).')
    if not train_batches:
        return 0.0

    theta0 = {name: tensor.data.copy() for name, tensor in params.items()}
    _load(objective, theta0)
    train_steps(objective, train_batches, lr)
    _, grads = objective.loss_and_grad(train_batches[-1])
    approximation = {name: grads[name].copy() for name in params}

    squared = 0.0
    for name, initial in theta0.items():
        for i in range(initial.size):
            perturbed = {key: value.copy() for key, value in theta0.items()}
            perturbed[name].reshape(-1)[i] += step
            plus = _replay(objective, perturbed, train_batches, lr)
            perturbed[name].reshape(-1)[i] -= 2 * step
            minus = _replay(objective, perturbed, train_batches, lr)
            total = (plus - minus) / (2 * step)
            theta = initial.reshape(-1)[i]
            squared += (theta * total - theta * approximation[name].reshape(-1)[i]) ** 2
    _load(objective, theta0)
    return float(np.sqrt(squared))


def reactivation_trajectory_error(
    model: FusionModel,
    ds: MultiModalDataset,
    n_batches: int,
    lr: float,
    masked_modality: Partition = Partition.LIDAR,
    batch_size: int = 16,
    seed: int = 0,
) -> float:
    """`trajectory_error` of a reactivation: `masked_modality` masked, the other partitions trained."""
    if model.n_parameters() > MAX_TRAJECTORY_PARAMETERS:
        raise ModelTooLargeError(f'The model has {model.n_parameters()} parameters '
                                 f'(at most {MAX_TRAJECTORY_PARAMETERS}).')
    objective = model.objective(ModalityMasks().masking(masked_modality),
                                [p for p in Partition if p != masked_modality])
    return trajectory_error(objective, batches(ds, batch_size, seed, n_batches), lr)


def quadratic_objective(theta0: float) -> Tuple[GraphObjective, List[dict]]:
    """L(θ) = θ²/2 as a one-weight graph, with the single batch producing it."""
    graph = Graph()
    graph.add_input('x')
    graph.add_input('t')
    graph.add_parameter('w', Tensor(np.array([[theta0]])))
    graph.add_node(OpType.MATMUL, ['x', 'w'], 'y')
    graph.set_loss(graph.add_node(OpType.MSE, ['y', 't'], 'loss'))
    return GraphObjective(graph), [{'x': np.array([[1.0], [0.0]]), 't': np.zeros((2, 1))}]
# </editor-fold>


def spearman(a: pd.Series, b: pd.Series) -> float:
    """Rank correlation of two series aligned on their index (Pearson correlation of the average ranks)."""
    a, b = a.align(b, join='inner')
    return float(a.rank().corr(b.rank()))


#
# VERIFICATION SUITE
#
# <editor-fold desc="VERIFICATION SUITE">

def _random_batch(arch: ArchConfig, rng: np.random.Generator, n: int) -> Batch:
    return Batch(rng.standard_normal((n, arch.in_l)), rng.standard_normal((n, arch.in_c)),
                 rng.standard_normal((n, arch.out)), np.zeros((n, 1)), np.zeros((n, 1)))


def _seeded(arch: ArchConfig, seed: int) -> FusionModel:
    return build(dataclasses.replace(arch, seed=seed))


def _toy_prune_config(rho: float, structured: bool = False) -> PruneConfig:
    return PruneConfig(rho=rho, reactivation_batches=4, reactivation_lr=1e-2, eval_batches=4, batch_size=32,
                       structured=structured)


def _row(check: str, seed, value: float, threshold: float, passed: bool) -> dict:
    return {'check': check, 'seed': str(seed), 'value': float(value), 'threshold': float(threshold),
            'passed': bool(passed)}


def _gradient_rows(cfg: VerifyConfig, seed: int) -> List[dict]:
    model = _seeded(TOY_ARCH, seed)
    error = fd_gradient_check(model, _random_batch(TOY_ARCH, np.random.default_rng(seed), 8), cfg.grad_step)
    return [_row('gradient_check', seed, error, cfg.grad_tolerance, error < cfg.grad_tolerance)]


def _absorption_rows(seed: int) -> List[dict]:
    model = _seeded(TOY_ARCH, seed)
    batch = _random_batch(TOY_ARCH, np.random.default_rng(seed), 8)
    worst = 0.0
    for partition in Partition:
        masked = model.loss(batch, ModalityMasks().masking(partition))
        zeroed = model.clone()
        for parameter in zeroed.partition_parameters(partition):
            parameter.values.data[...] = 0.0
        worst = max(worst, abs(masked - zeroed.loss(batch)))
    return [_row('mask_absorption', seed, worst, 0.0, worst == 0.0)]


def _scoring_rows(cfg: VerifyConfig, seed: int) -> Tuple[List[dict], float]:
    model = _seeded(TOY_ARCH, seed)
    train = generate(TOY_DATA, seed)
    eval_batches = batches(train, 32, seed, 4)

    first_order = deci(model, eval_batches)
    correlation = spearman(first_order, exact_mask_deltas(model, eval_batches))
    snip_gap = float(np.max(np.abs(snip_scores(model, eval_batches) - first_order)))
    rows = [
        _row('deci_rank_correlation_per_seed', seed, correlation, cfg.rank_threshold,
             correlation >= cfg.rank_threshold),
        _row('snip_identity', seed, snip_gap, 1e-12, snip_gap <= 1e-12),
    ]

    _, ledger, _ = run_altermoma(model, train, _toy_prune_config(cfg.rhos[0]))
    shares = normalized_shares(ledger)
    gaps = [abs(total - 1.0)
            for indicator in INDICATORS
            for total in shares[indicator].groupby(ledger.table['partition']).sum(min_count=1).dropna()
            if total != 0.0]
    worst = max(gaps, default=0.0)
    rows.append(_row('normalization', seed, worst, 1e-9, worst <= 1e-9))
    for rho in cfg.rhos:
        kept = int(global_threshold(ledger.scores(), rho).sum())
        gap = abs(kept - kept_count(len(ledger), rho))
        rows.append(_row(f'kept_count[rho={rho:g}]', seed, gap, 0, gap == 0))
    return rows, correlation


def _trajectory_rows(cfg: VerifyConfig, seed: int) -> Tuple[List[dict], bool]:
    errors = []
    for lr in cfg.trajectory_lrs:
        model = _seeded(TINY_ARCH, seed)
        errors.append(reactivation_trajectory_error(model, generate(TINY_DATA, seed), cfg.trajectory_batches, lr,
                                                    seed=seed))
    rows = [_row(f'trajectory_error[lr={lr:g}]', seed, e, float('nan'), True)
            for lr, e in zip(cfg.trajectory_lrs, errors)]
    return rows, all(later < earlier for earlier, later in zip(errors[:-1], errors[1:]))


def _structured_rows(cfg: VerifyConfig, seed: int) -> List[dict]:
    model = _seeded(STRUCTURED_ARCH, seed)
    train = generate(TOY_DATA, seed)
    model, _, report = run_altermoma(model, train, _toy_prune_config(cfg.structured_rho, structured=True))
    try:
        compacted = compact(model)
    except ValueError as e:
        log.error(f'Structured equivalence cannot be checked for seed {seed}: {e}')
        return [_row('structured_equivalence', seed, float('nan'), 0.0, False)]
    batch = _random_batch(STRUCTURED_ARCH, np.random.default_rng(seed), cfg.equivalence_inputs)
    gap = float(np.max(np.abs(model.predict(batch) - compacted.predict(batch))))
    mac_gap = abs(report.macs_after - mac_count(compacted))
    return [_row('structured_equivalence', seed, gap, 0.0, gap == 0.0),
            _row('structured_macs', seed, mac_gap, 0, mac_gap == 0)]


def run_verification(cfg: VerifyConfig) -> pd.DataFrame:
    """Run every brute-force check over `cfg.seeds` seeds.

    Returns
    -------
    pd.DataFrame
        One row per check and seed (`check`, `seed`, `value`, `threshold`, `passed`); the aggregated checks use
        the seed `all`.
    """
    rows: List[dict] = []
    correlations, monotone = [], []
    for seed in range(cfg.seeds):
        log.info(f'Verification, seed {seed}.')
        rows.extend(_gradient_rows(cfg, seed))
        rows.extend(_absorption_rows(seed))
        scoring, correlation = _scoring_rows(cfg, seed)
        rows.extend(scoring)
        correlations.append(correlation)
        trajectory, decreasing = _trajectory_rows(cfg, seed)
        rows.extend(trajectory)
        monotone.append(decreasing)
        rows.extend(_structured_rows(cfg, seed))

    mean_correlation = float(np.mean(correlations))
    rows.append(_row('deci_rank_correlation', 'all', mean_correlation, cfg.rank_threshold,
                     mean_correlation >= cfg.rank_threshold))
    fraction = float(np.mean(monotone))
    rows.append(_row('trajectory_error_monotone', 'all', fraction, cfg.trajectory_pass_fraction,
                     fraction >= cfg.trajectory_pass_fraction))

    theta0, lr = 0.5, 0.1
    objective, quadratic_batches = quadratic_objective(theta0)
    expected = lr * theta0 * (1 - lr) * abs(theta0)
    gap = abs(trajectory_error(objective, quadratic_batches, lr) - expected)
    rows.append(_row('trajectory_error_quadratic', 'all', gap, 1e-10, gap <= 1e-10))
    return pd.DataFrame(rows, columns=['check', 'seed', 'value', 'threshold', 'passed'])
# </editor-fold>
