from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from altermoma_lab.tensor_core.models.tensor import Tensor
from altermoma_lab.utils.exceptions import GraphStateError


class OpType(Enum):
    MATMUL = 'matmul'           # (n, a) x (a, b) -> (n, b)
    BIAS_ADD = 'bias_add'       # (n, b) + (b,) -> (n, b)
    RELU = 'relu'
    MUL = 'mul'                 # elementwise, same shapes
    CONCAT = 'concat'           # along the feature axis
    MSE = 'mse'                 # mean over every element, scalar
    SOFTMAX_CE = 'softmax_ce'   # mean over rows, scalar

    @classmethod
    def losses(cls) -> Set[OpType]:
        return {cls.MSE, cls.SOFTMAX_CE}


@dataclass(frozen=True)
class Node:
    op: OpType
    inputs: Tuple[str, ...]
    output: str
    index: int

    def describe(self) -> str:
        return f'node #{self.index} {self.op.value}({", ".join(self.inputs)}) -> {self.output}'


class Graph:
    """Ordered computation graph.

    Nodes can only be appended once all their inputs are known, so the node list is always a valid
    topological order. Parameters and constants are held by reference: updating a parameter tensor in place
    is seen by the next forward pass.
    """
    inputs: List[str]
    parameters: Dict[str, Tensor]
    constants: Dict[str, Tensor]
    nodes: List[Node]
    loss: Optional[str]
    # activations cached by the last forward pass
    values: Optional[Dict[str, np.ndarray]]

    def __init__(self):
        self.inputs = []
        self.parameters = {}
        self.constants = {}
        self.nodes = []
        self.loss = None
        self.values = None
        self._producers: Dict[str, int] = {}

    def _known(self) -> Set[str]:
        return set(self.inputs) | set(self.parameters) | set(self.constants) | set(self._producers)

    def _claim(self, name: str) -> None:
        if name in self._known():
            raise ValueError(f'The name "{name}" is already used in this graph.')

    def add_input(self, name: str) -> str:
        self._claim(name)
        self.inputs.append(name)
        return name

    def add_parameter(self, name: str, tensor: Tensor) -> str:
        self._claim(name)
        self.parameters[name] = tensor
        return name

    def add_constant(self, name: str, tensor: Tensor) -> str:
        self._claim(name)
        self.constants[name] = tensor
        return name

    def add_node(self, op: OpType, inputs: Sequence[str], output: str) -> str:
        known = self._known()
        missing = [i for i in inputs if i not in known]
        if missing:
            raise ValueError(f'Cannot add {op.value} -> {output}: unknown inputs {missing}.')
        self._claim(output)
        node = Node(op, tuple(inputs), output, len(self.nodes))
        self.nodes.append(node)
        self._producers[output] = node.index
        return output

    def set_loss(self, name: str) -> None:
        if name not in self._producers or self.nodes[self._producers[name]].op not in OpType.losses():
            raise ValueError(f'"{name}" is not the output of a loss node.')
        self.loss = name

    def producer(self, name: str) -> Node:
        if name not in self._producers:
            raise GraphStateError(f'"{name}" is not produced by any node of the graph.')
        return self.nodes[self._producers[name]]

    def requires_grad(self) -> Set[str]:
        """Names whose value depends on at least one parameter."""
        requires = set(self.parameters)
        for node in self.nodes:
            if any(i in requires for i in node.inputs):
                requires.add(node.output)
        return requires

    def n_parameters(self) -> int:
        return sum(t.size for t in self.parameters.values())
