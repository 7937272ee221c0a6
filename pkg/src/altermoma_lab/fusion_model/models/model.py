from __future__ import annotations

import re
from collections import OrderedDict
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from altermoma_lab.fusion_model import INPUT_CAMERA, INPUT_LIDAR, LOSS, TARGET
from altermoma_lab.fusion_model.models.arch import LOSSES
from altermoma_lab.fusion_model.models.parameter import LayerSpec, Parameter
from altermoma_lab.fusion_model.models.partition import ModalityMasks, Partition
from altermoma_lab.tensor_core.lib import Gradients, backward, forward
from altermoma_lab.tensor_core.models.graph import Graph, OpType
from altermoma_lab.tensor_core.models.tensor import Tensor
from altermoma_lab.utils.exceptions import GraphStateError, MaskingError

_PARAMETER_ID = re.compile(r'^(lidar|camera|fusion)/l(\d+)/(weight|bias)$')


class FusionModel:
    """The triple (F_l, F_c, F_f) as one differentiable graph.

    The structure is derived from the parameters: for each partition, the layers `l0, l1, ...` are chained,
    every layer but the last of a partition is followed by a ReLU, the last backbone layers are concatenated
    (LiDAR first) and fed to the fusion head. Masking is functional: the graph multiplies every parameter by
    a constant mask (per-parameter mask times modality mask) which is refreshed before each pass.
    """
    parameters: Dict[str, Parameter]
    loss_kind: str
    modality_masks: ModalityMasks
    init_snapshot: Optional[Dict[str, np.ndarray]]
    graph: Graph

    def __init__(self, parameters: Iterable[Parameter], loss_kind: str = 'mse'):
        if loss_kind not in LOSSES:
            raise ValueError(f'The given loss is invalid ({loss_kind}), use one of {LOSSES}.')
        self.parameters = OrderedDict((p.id, p) for p in parameters)
        self.loss_kind = loss_kind
        self.modality_masks = ModalityMasks()
        self.init_snapshot = None
        self._layers = self._derive_layers()
        self.graph = self._build_graph()

    #
    # STRUCTURE
    #
    # <editor-fold desc="STRUCTURE">

    def _derive_layers(self) -> List[LayerSpec]:
        found: Dict[Partition, Dict[int, Dict[str, Parameter]]] = {p: {} for p in Partition}
        for parameter in self.parameters.values():
            match = _PARAMETER_ID.match(parameter.id)
            if match is None:
                raise ValueError(f'Unexpected parameter id "{parameter.id}".')
            partition, index, kind = Partition(match.group(1)), int(match.group(2)), match.group(3)
            if partition != parameter.partition:
                raise ValueError(f'The parameter {parameter.id} is tagged {parameter.partition.value}.')
            found[partition].setdefault(index, {})[kind] = parameter

        layers: List[LayerSpec] = []
        for partition in [Partition.LIDAR, Partition.CAMERA, Partition.FUSION]:
            indices = sorted(found[partition])
            if not indices or indices != list(range(len(indices))):
                raise ValueError(f'The {partition.value} partition must have the layers l0..lN ({indices} found).')
            for index in indices:
                pair = found[partition][index]
                if set(pair) != {'weight', 'bias'}:
                    raise ValueError(f'The layer {partition.value}/l{index} needs a weight and a bias.')
                weight, bias = pair['weight'].values, pair['bias'].values
                if len(weight.shape) != 2 or bias.shape != (weight.shape[1],):
                    raise ValueError(f'Inconsistent shapes for {partition.value}/l{index}: '
                                     f'{weight.shape} and {bias.shape}.')
                last = index == indices[-1]
                layers.append(LayerSpec(
                    name=f'{partition.value}/l{index}',
                    partition=partition,
                    index=index,
                    fan_in=weight.shape[0],
                    fan_out=weight.shape[1],
                    relu=not last,
                    is_output=partition == Partition.FUSION and last,
                ))

        by_name = {layer.name: layer for layer in layers}
        for layer in layers:
            if layer.index > 0:
                layer.sources = [f'{layer.partition.value}/l{layer.index - 1}']
            elif layer.partition == Partition.FUSION:
                layer.sources = [self._last_layer(layers, Partition.LIDAR).name,
                                 self._last_layer(layers, Partition.CAMERA).name]
            expected = layer.fan_in if layer.sources is None else sum(by_name[s].fan_out for s in layer.sources)
            if expected != layer.fan_in:
                raise ValueError(f'The layer {layer.name} expects {layer.fan_in} inputs but receives {expected}.')
        return layers

    @staticmethod
    def _last_layer(layers: List[LayerSpec], partition: Partition) -> LayerSpec:
        return [layer for layer in layers if layer.partition == partition][-1]

    def _build_graph(self) -> Graph:
        graph = Graph()
        entry = {
            Partition.LIDAR: graph.add_input(INPUT_LIDAR),
            Partition.CAMERA: graph.add_input(INPUT_CAMERA),
        }
        graph.add_input(TARGET)

        for parameter in self.parameters.values():
            graph.add_parameter(parameter.id, parameter.values)
            graph.add_constant(f'mask:{parameter.id}', Tensor(parameter.mask.copy()))
            graph.add_node(OpType.MUL, [parameter.id, f'mask:{parameter.id}'], f'effective:{parameter.id}')

        outputs: Dict[str, str] = {}
        for layer in self._layers:
            if layer.sources is None:
                h = entry[layer.partition]
            elif len(layer.sources) == 1:
                h = outputs[layer.sources[0]]
            else:
                h = graph.add_node(OpType.CONCAT, [outputs[s] for s in layer.sources], 'fusion/input')
            z = graph.add_node(OpType.MATMUL, [h, f'effective:{layer.weight}'], f'{layer.name}/matmul')
            z = graph.add_node(OpType.BIAS_ADD, [z, f'effective:{layer.bias}'], f'{layer.name}/z')
            outputs[layer.name] = graph.add_node(OpType.RELU, [z], f'{layer.name}/a') if layer.relu else z

        prediction = outputs[self._last_layer(self._layers, Partition.FUSION).name]
        loss_op = OpType.MSE if self.loss_kind == 'mse' else OpType.SOFTMAX_CE
        graph.set_loss(graph.add_node(loss_op, [prediction, TARGET], LOSS))
        self._prediction = prediction
        return graph

    @property
    def prediction_output(self) -> str:
        """Graph name of the prediction (output of the fusion head)."""
        return self._prediction

    def layers(self, partition: Optional[Partition] = None) -> List[LayerSpec]:
        return [layer for layer in self._layers if partition is None or layer.partition == partition]

    def layer(self, name: str) -> LayerSpec:
        return next(layer for layer in self._layers if layer.name == name)

    def partition_parameters(self, partition: Partition) -> List[Parameter]:
        return [p for p in self.parameters.values() if p.partition == partition]

    def n_parameters(self, partition: Optional[Partition] = None) -> int:
        return sum(p.size for p in self.parameters.values() if partition is None or p.partition == partition)

    def element_ids(self) -> List[str]:
        return [i for p in self.parameters.values() for i in p.element_ids()]

    def flat(self, arrays: Mapping[str, np.ndarray], partitions: Optional[Iterable[Partition]] = None) -> np.ndarray:
        """Concatenate per-parameter arrays in the element order of `element_ids`."""
        partitions = set(partitions or Partition)
        return np.concatenate([np.asarray(arrays[p.id]).reshape(-1)
                               for p in self.parameters.values() if p.partition in partitions])

    def values(self) -> Dict[str, np.ndarray]:
        return {name: p.values.data for name, p in self.parameters.items()}
    # </editor-fold>

    #
    # EVALUATION
    #
    # <editor-fold desc="EVALUATION">

    def effective_masks(self, masks: Optional[ModalityMasks] = None) -> Dict[str, np.ndarray]:
        masks = self.modality_masks if masks is None else masks
        return {name: p.mask * masks.of(p.partition) for name, p in self.parameters.items()}

    def bind_masks(self, masks: Optional[ModalityMasks] = None) -> None:
        """Refresh the mask constants of the graph (per-parameter mask times modality mask)."""
        masks = self.modality_masks if masks is None else masks
        if masks.all_zero():
            raise MaskingError('All three modality masks are zero, the model has no trainable path.')
        for name, mask in self.effective_masks(masks).items():
            np.copyto(self.graph.constants[f'mask:{name}'].data, mask)

    def loss(self, batch, masks: Optional[ModalityMasks] = None) -> float:
        """Loss on a batch, with the given modality masks (the model's own masks by default)."""
        self.bind_masks(masks)
        return forward(self.graph, batch.as_inputs())

    def loss_and_grad(self, batch, masks: Optional[ModalityMasks] = None) -> Tuple[float, Gradients]:
        loss = self.loss(batch, masks)
        return loss, backward(self.graph)

    def predict(self, batch, masks: Optional[ModalityMasks] = None) -> np.ndarray:
        self.loss(batch, masks)
        return self.graph.values[self._prediction].copy()

    def objective(
        self,
        masks: Optional[ModalityMasks] = None,
        partitions: Optional[Iterable[Partition]] = None,
    ) -> FusionObjective:
        return FusionObjective(self, masks, partitions)
    # </editor-fold>

    #
    # STATE
    #
    # <editor-fold desc="STATE">

    def snapshot(self) -> None:
        """Store a deep copy of every parameter value (masks are not part of the snapshot)."""
        self.init_snapshot = {name: p.values.data.copy() for name, p in self.parameters.items()}

    def restore(self) -> None:
        if self.init_snapshot is None:
            raise GraphStateError('Cannot restore a model that has no snapshot.')
        for name, p in self.parameters.items():
            np.copyto(p.values.data, self.init_snapshot[name])

    def clone(self) -> FusionModel:
        clone = FusionModel([p.copy() for p in self.parameters.values()], self.loss_kind)
        clone.modality_masks = self.modality_masks
        if self.init_snapshot is not None:
            clone.init_snapshot = {name: v.copy() for name, v in self.init_snapshot.items()}
        return clone
    # </editor-fold>


class FusionObjective:
    """`tensor_core.lib.Objective` view of a fusion model under fixed modality masks.

    Only the parameters of `partitions` are exposed for training; inside them, entries whose per-parameter
    or modality mask is 0 are never updated.
    """

    def __init__(
        self,
        model: FusionModel,
        masks: Optional[ModalityMasks] = None,
        partitions: Optional[Iterable[Partition]] = None,
    ):
        self.model = model
        self.modality_masks = model.modality_masks if masks is None else masks
        self.partitions = set(partitions or Partition)

    def parameters(self) -> Dict[str, Tensor]:
        return {name: p.values for name, p in self.model.parameters.items() if p.partition in self.partitions}

    def masks(self) -> Dict[str, np.ndarray]:
        masks = self.model.effective_masks(self.modality_masks)
        return {name: masks[name] for name in self.parameters()}

    def loss(self, batch) -> float:
        return self.model.loss(batch, self.modality_masks)

    def loss_and_grad(self, batch) -> Tuple[float, Gradients]:
        return self.model.loss_and_grad(batch, self.modality_masks)
