from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from altermoma_lab import log
from altermoma_lab.fusion_model.models.arch import ArchConfig
from altermoma_lab.fusion_model.models.model import FusionModel
from altermoma_lab.fusion_model.models.parameter import LayerSpec, Parameter
from altermoma_lab.fusion_model.models.partition import ModalityMasks, Partition
from altermoma_lab.synth_data.lib import batches
from altermoma_lab.synth_data.models.dataset import Batch, MultiModalDataset
from altermoma_lab.tensor_core.lib import GraphObjective, train_steps
from altermoma_lab.tensor_core.models.graph import Graph, OpType
from altermoma_lab.tensor_core.models.tensor import Tensor

EVAL_CHUNK = 512


def _uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, shape)


def build(arch: ArchConfig) -> FusionModel:
    """Seeded fusion model, every weight and bias drawn uniformly in [-s, s] with s = sqrt(6 / (fan_in + fan_out)).

    Parameters are drawn partition by partition (LiDAR, camera, fusion), layer by layer, weight then bias.
    """
    rng = np.random.default_rng(arch.seed)
    parameters: List[Parameter] = []
    widths = {
        Partition.LIDAR: arch.backbone_widths(arch.in_l),
        Partition.CAMERA: arch.backbone_widths(arch.in_c),
        Partition.FUSION: arch.fusion_widths(),
    }
    for partition in [Partition.LIDAR, Partition.CAMERA, Partition.FUSION]:
        chain = widths[partition]
        for i, (fan_in, fan_out) in enumerate(zip(chain[:-1], chain[1:])):
            name = f'{partition.value}/l{i}'
            parameters.append(Parameter.new(f'{name}/weight', partition,
                                            _uniform(rng, fan_in, fan_out, (fan_in, fan_out))))
            parameters.append(Parameter.new(f'{name}/bias', partition, _uniform(rng, fan_in, fan_out, (fan_out,))))

    model = FusionModel(parameters, arch.loss)
    log.debug(f'Built a fusion model of {model.n_parameters()} parameters (seed {arch.seed}).')
    return model


def masked_loss(model: FusionModel, batch: Batch, mu_l: int, mu_c: int, mu_f: int) -> float:
    """Loss with every partition multiplied by its modality mask, parameters untouched.

    Raises
    ------
    MaskingError
        If the three masks are 0.
    """
    return model.loss(batch, ModalityMasks(lidar=mu_l, camera=mu_c, fusion=mu_f))


def evaluate(model: FusionModel, ds: MultiModalDataset, masks: Optional[ModalityMasks] = None) -> float:
    """Mean loss over the whole dataset, computed in chunks of `EVAL_CHUNK` samples."""
    total = 0.0
    for start in range(0, ds.n, EVAL_CHUNK):
        chunk = ds.subset(np.arange(start, min(start + EVAL_CHUNK, ds.n)))
        total += model.loss(chunk, masks) * len(chunk)
    return total / ds.n


def _epochs(ds: MultiModalDataset, epochs: int, batch_size: int, seed: int) -> List[List[Batch]]:
    per_epoch = ds.n // batch_size
    flat = batches(ds, batch_size, seed, epochs * per_epoch)
    return [flat[e * per_epoch:(e + 1) * per_epoch] for e in range(epochs)]


def _check_training(epochs: int, lr: float) -> None:
    if epochs < 0:
        raise ValueError(f'The number of epochs cannot be negative ({epochs} given).')
    if lr < 0:
        raise ValueError(f'The learning rate must be non-negative ({lr} given).')


#
# PRETRAINING
#
# <editor-fold desc="PRETRAINING">

def _pretraining_graph(
    model: FusionModel, modality: Partition, aux_dim: int, seed: int
) -> Tuple[Graph, Dict[str, np.ndarray]]:
    graph = Graph()
    h = graph.add_input('x')
    graph.add_input('y')
    masks = {}
    for layer in model.layers(modality):
        for name in [layer.weight, layer.bias]:
            graph.add_parameter(name, model.parameters[name].values)
            masks[name] = model.parameters[name].mask
        h = graph.add_node(OpType.MATMUL, [h, layer.weight], f'{layer.name}/matmul')
        h = graph.add_node(OpType.BIAS_ADD, [h, layer.bias], f'{layer.name}/z')
        if layer.relu:
            h = graph.add_node(OpType.RELU, [h], f'{layer.name}/a')

    feat = model.layers(modality)[-1].fan_out
    rng = np.random.default_rng(seed)
    graph.add_parameter('aux/weight', Tensor(_uniform(rng, feat, aux_dim, (feat, aux_dim))))
    graph.add_parameter('aux/bias', Tensor(_uniform(rng, feat, aux_dim, (aux_dim,))))
    h = graph.add_node(OpType.MATMUL, [h, 'aux/weight'], 'aux/matmul')
    h = graph.add_node(OpType.BIAS_ADD, [h, 'aux/bias'], 'aux/z')
    graph.set_loss(graph.add_node(OpType.MSE, [h, 'y'], 'aux/loss'))
    return graph, masks


def pretrain_backbone(
    model: FusionModel,
    modality: Partition,
    ds: MultiModalDataset,
    epochs: int,
    lr: float,
    batch_size: int = 64,
    seed: int = 0,
) -> Tuple[FusionModel, pd.DataFrame]:
    """Train one backbone on its single-modal regression task.

    A temporary linear head maps the backbone features to the auxiliary target (`y_l_aux` or `y_c_aux`); it is
    trained with the backbone and thrown away afterwards. Only the parameters of `modality` change.

    Parameters
    ----------
    model : FusionModel
        The model, updated in place.
    modality : Partition
        `Partition.LIDAR` or `Partition.CAMERA`.
    ds : MultiModalDataset
        The training data.
    epochs : int
        The number of passes over the data. 0 leaves the model unchanged.
    lr : float
        The SGD learning rate.
    batch_size : int, optional
        by default 64
    seed : int, optional
        Seed of the batch order and of the auxiliary head, by default 0

    Returns
    -------
    Tuple[FusionModel, pd.DataFrame]
        The model and the per-epoch mean training loss (`epoch`, `loss`).
    """
    if modality not in Partition.backbones():
        raise ValueError(f'Only a backbone can be pretrained ({modality.value} given).')
    _check_training(epochs, lr)

    aux_dim = (ds.y_l_aux if modality == Partition.LIDAR else ds.y_c_aux).shape[1]
    graph, masks = _pretraining_graph(model, modality, aux_dim, seed)
    objective = GraphObjective(graph, masks)
    rows = []
    for epoch, epoch_batches in enumerate(_epochs(ds, epochs, batch_size, seed)):
        losses = train_steps(objective, [b.aux_inputs(modality) for b in epoch_batches], lr)
        rows.append({'epoch': epoch, 'loss': float(np.mean(losses))})
        log.debug(f'{modality.value} pretraining, epoch {epoch}: loss={rows[-1]["loss"]:.6g}')
    log.info(f'{modality.value} backbone pretrained for {epochs} epochs.')
    return model, pd.DataFrame(rows, columns=['epoch', 'loss'])
# </editor-fold>


def train_fusion(
    model: FusionModel,
    train: MultiModalDataset,
    val: MultiModalDataset,
    epochs: int,
    lr: float,
    batch_size: int = 64,
    seed: int = 0,
    train_backbones: bool = False,
    masks: Optional[ModalityMasks] = None,
) -> pd.DataFrame:
    """Minimise the fusion loss with masked SGD.

    Only the fusion partition moves unless `train_backbones` is set. Entries whose mask is 0 are never updated.

    Returns
    -------
    pd.DataFrame
        One row per epoch: `epoch`, `train_loss` (mean of the per-batch losses) and `val_loss`.
    """
    _check_training(epochs, lr)
    partitions = list(Partition) if train_backbones else [Partition.FUSION]
    objective = model.objective(masks, partitions)
    rows = []
    for epoch, epoch_batches in enumerate(_epochs(train, epochs, batch_size, seed)):
        losses = train_steps(objective, epoch_batches, lr)
        rows.append({'epoch': epoch, 'train_loss': float(np.mean(losses)), 'val_loss': evaluate(model, val, masks)})
        log.debug(f'epoch {epoch}: train_loss={rows[-1]["train_loss"]:.6g} val_loss={rows[-1]["val_loss"]:.6g}')
    return pd.DataFrame(rows, columns=['epoch', 'train_loss', 'val_loss'])


def snapshot(model: FusionModel) -> None:
    model.snapshot()


def restore(model: FusionModel) -> None:
    model.restore()


#
# STRUCTURE
#
# <editor-fold desc="STRUCTURE">

def channel_map(model: FusionModel) -> pd.Series:
    """Output channel of every element, indexed by element id.

    Biases follow their channel. The elements of the prediction layer are never pruned in structured mode: their
    channel is missing (NaN).
    """
    index, channels = [], []
    for layer in model.layers():
        for name in [layer.weight, layer.bias]:
            parameter = model.parameters[name]
            index.extend(parameter.element_ids())
            if layer.is_output:
                channels.extend([None] * parameter.size)
            else:
                channels.extend(layer.channel_id(c) for c in parameter.channels())
    return pd.Series(channels, index=index, name='channel', dtype=object)


def live_channels(model: FusionModel, layer: LayerSpec) -> np.ndarray:
    """Boolean flag per output channel: False when the whole weight column and the bias entry are masked."""
    weight, bias = model.parameters[layer.weight].mask, model.parameters[layer.bias].mask
    return (weight.sum(axis=0) + bias) > 0


def _live_outputs(model: FusionModel) -> Dict[str, np.ndarray]:
    return {layer.name: np.ones(layer.fan_out, dtype=bool) if layer.is_output else live_channels(model, layer)
            for layer in model.layers()}


def _live_inputs(model: FusionModel, layer: LayerSpec, live: Dict[str, np.ndarray]) -> np.ndarray:
    if layer.sources is None:
        return np.ones(layer.fan_in, dtype=bool)
    return np.concatenate([live[source] for source in layer.sources])


def mac_count(model: FusionModel) -> int:
    """Multiply-accumulate operations per sample, counting only live channels."""
    live = _live_outputs(model)
    return int(sum(_live_inputs(model, layer, live).sum() * live[layer.name].sum() for layer in model.layers()))


def compact(model: FusionModel) -> FusionModel:
    """A new model in which the dead channels are physically removed.

    The columns of the producing layer, the entries of its bias and the rows of every consuming layer are
    deleted. The outputs of the compact model equal those of the masked one exactly.

    Raises
    ------
    ValueError
        If a layer has no live channel left.
    """
    live = _live_outputs(model)
    for name, flags in live.items():
        if not flags.any():
            raise ValueError(f'The layer {name} has no live channel, it cannot be compacted.')

    parameters = []
    for layer in model.layers():
        rows = _live_inputs(model, layer, live)
        cols = live[layer.name]
        weight, bias = model.parameters[layer.weight], model.parameters[layer.bias]
        w_mask = weight.mask[np.ix_(rows, cols)]
        b_mask = bias.mask[cols]
        parameters.append(Parameter(weight.id, weight.partition,
                                    Tensor(weight.values.data[np.ix_(rows, cols)] * w_mask), w_mask.copy()))
        parameters.append(Parameter(bias.id, bias.partition, Tensor(bias.values.data[cols] * b_mask), b_mask.copy()))

    compacted = FusionModel(parameters, model.loss_kind)
    compacted.modality_masks = model.modality_masks
    log.debug(f'Compacted {model.n_parameters()} parameters into {compacted.n_parameters()}.')
    return compacted
# </editor-fold>
