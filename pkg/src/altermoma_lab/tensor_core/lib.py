from __future__ import annotations

from typing import (Callable, Dict, Iterable, List, Mapping, Optional, Protocol,
                    Sequence, Tuple, Union)

import numpy as np

from altermoma_lab import log
from altermoma_lab.tensor_core.models.graph import Graph, Node, OpType
from altermoma_lab.tensor_core.models.tensor import Tensor
from altermoma_lab.utils.exceptions import (GraphStateError, MissingInputError,
                                            ShapeMismatchError)

Gradients = Dict[str, np.ndarray]
Binding = Mapping[str, Union[Tensor, np.ndarray]]


#
# FORWARD RULES
#
# <editor-fold desc="FORWARD">

def _check(node: Node, condition: bool, detail: str) -> None:
    if not condition:
        raise ShapeMismatchError(f'Shape mismatch at {node.describe()}: {detail}')


def _matmul(node: Node, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    _check(node, x.ndim == 2 and w.ndim == 2, f'expected two matrices, got {x.shape} and {w.shape}')
    _check(node, x.shape[1] == w.shape[0], f'inner dimensions differ, {x.shape} vs {w.shape}')
    # fixed accumulation order over the inner dimension: a zeroed row adds exact zeros
    out = np.zeros((x.shape[0], w.shape[1]))
    for k in range(x.shape[1]):
        out += x[:, k, None] * w[k]
    return out


def _bias_add(node: Node, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check(node, x.ndim == 2 and b.ndim == 1 and x.shape[1] == b.shape[0],
           f'cannot add a bias of shape {b.shape} to {x.shape}')
    return x + b


def _relu(node: Node, x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _mul(node: Node, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check(node, a.shape == b.shape, f'elementwise product of {a.shape} and {b.shape}')
    return a * b


def _concat(node: Node, *parts: np.ndarray) -> np.ndarray:
    _check(node, all(p.ndim == 2 for p in parts), 'every part must be a matrix')
    _check(node, len({p.shape[0] for p in parts}) == 1, f'row counts differ: {[p.shape for p in parts]}')
    return np.concatenate(parts, axis=1)


def _mse(node: Node, y: np.ndarray, t: np.ndarray) -> np.ndarray:
    _check(node, y.shape == t.shape, f'prediction {y.shape} vs target {t.shape}')
    return np.asarray(np.mean((y - t) ** 2))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _softmax_ce(node: Node, z: np.ndarray, t: np.ndarray) -> np.ndarray:
    _check(node, z.ndim == 2 and z.shape == t.shape, f'logits {z.shape} vs target {t.shape}')
    return np.asarray(-np.mean(np.sum(t * _log_softmax(z), axis=1)))


_FORWARD: Dict[OpType, Callable[..., np.ndarray]] = {
    OpType.MATMUL: _matmul,
    OpType.BIAS_ADD: _bias_add,
    OpType.RELU: _relu,
    OpType.MUL: _mul,
    OpType.CONCAT: _concat,
    OpType.MSE: _mse,
    OpType.SOFTMAX_CE: _softmax_ce,
}
# </editor-fold>

#
# BACKWARD RULES
#
# <editor-fold desc="BACKWARD">
# Each rule receives the upstream gradient, the cached inputs, the cached output and a flag per input
# telling whether its gradient is needed. It returns one entry per input (None when not needed).

VjpRule = Callable[[np.ndarray, Sequence[np.ndarray], np.ndarray, Sequence[bool]], List[Optional[np.ndarray]]]


def _matmul_vjp(g, args, out, need):
    x, w = args
    return [g @ w.T if need[0] else None, x.T @ g if need[1] else None]


def _bias_add_vjp(g, args, out, need):
    return [g if need[0] else None, g.sum(axis=0) if need[1] else None]


def _relu_vjp(g, args, out, need):
    return [g * (args[0] > 0.0)]


def _mul_vjp(g, args, out, need):
    a, b = args
    return [g * b if need[0] else None, g * a if need[1] else None]


def _concat_vjp(g, args, out, need):
    grads, offset = [], 0
    for part, needed in zip(args, need):
        width = part.shape[1]
        grads.append(g[:, offset:offset + width] if needed else None)
        offset += width
    return grads


def _mse_vjp(g, args, out, need):
    y, t = args
    dy = g * 2.0 * (y - t) / y.size
    return [dy if need[0] else None, -dy if need[1] else None]


def _softmax_ce_vjp(g, args, out, need):
    z, t = args
    probabilities = np.exp(_log_softmax(z))
    dz = g * (probabilities * t.sum(axis=1, keepdims=True) - t) / z.shape[0]
    return [dz if need[0] else None, -g * _log_softmax(z) / z.shape[0] if need[1] else None]


_BACKWARD: Dict[OpType, VjpRule] = {
    OpType.MATMUL: _matmul_vjp,
    OpType.BIAS_ADD: _bias_add_vjp,
    OpType.RELU: _relu_vjp,
    OpType.MUL: _mul_vjp,
    OpType.CONCAT: _concat_vjp,
    OpType.MSE: _mse_vjp,
    OpType.SOFTMAX_CE: _softmax_ce_vjp,
}
# </editor-fold>


def forward(graph: Graph, inputs: Binding) -> float:
    """Evaluate the graph and cache every intermediate value for the backward pass.

    Parameters
    ----------
    graph : Graph
        The graph to evaluate. It must have a designated loss node.
    inputs : Mapping[str, Union[Tensor, np.ndarray]]
        A value for every name declared with `Graph.add_input`. Extra names are ignored.

    Returns
    -------
    float
        The scalar loss.

    Raises
    ------
    GraphStateError
        If the graph has no loss node.
    MissingInputError
        If a declared input is not bound.
    ShapeMismatchError
        If a node receives values violating its shape contract. The message names the node.
    """
    if graph.loss is None:
        raise GraphStateError('The graph has no loss node.')

    missing = [name for name in graph.inputs if name not in inputs]
    if missing:
        raise MissingInputError(f'The following graph inputs are not bound: {missing}.')

    values: Dict[str, np.ndarray] = {}
    for name in graph.inputs:
        value = inputs[name]
        values[name] = np.asarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)
    values.update({name: t.data for name, t in graph.parameters.items()})
    values.update({name: t.data for name, t in graph.constants.items()})

    for node in graph.nodes:
        values[node.output] = _FORWARD[node.op](node, *[values[i] for i in node.inputs])

    graph.values = values
    return float(values[graph.loss])


def backward_from(graph: Graph, output: str, seed: np.ndarray) -> Gradients:
    """Vector-Jacobian product of a cached node output with respect to every parameter.

    Parameters
    ----------
    graph : Graph
        A graph on which `forward` has been called.
    output : str
        The node output to differentiate.
    seed : np.ndarray
        The upstream gradient, same shape as the output.

    Returns
    -------
    Dict[str, np.ndarray]
        The gradient of every parameter (zeros for parameters the output does not depend on). The same
        arrays are stored in the `grad` attribute of the parameter tensors.
    """
    if graph.values is None:
        raise GraphStateError('backward cannot be called before forward.')

    last = graph.producer(output).index
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != graph.values[output].shape:
        raise ShapeMismatchError(f'The seed {seed.shape} does not match "{output}" {graph.values[output].shape}.')

    # gradients are never accumulated across calls
    for tensor in graph.parameters.values():
        tensor.zero_grad()

    requires = graph.requires_grad()
    grads: Gradients = {output: seed}
    for node in reversed(graph.nodes[:last + 1]):
        upstream = grads.pop(node.output, None)
        if upstream is None:
            continue
        need = [i in requires for i in node.inputs]
        args = [graph.values[i] for i in node.inputs]
        for name, g in zip(node.inputs, _BACKWARD[node.op](upstream, args, graph.values[node.output], need)):
            if g is None:
                continue
            grads[name] = g if name not in grads else grads[name] + g

    for name, tensor in graph.parameters.items():
        if name in grads:
            tensor.grad = np.array(grads[name], dtype=np.float64).reshape(tensor.shape)
    return {name: tensor.grad for name, tensor in graph.parameters.items()}


def backward(graph: Graph) -> Gradients:
    """Gradient of the scalar loss with respect to every parameter.

    Raises
    ------
    GraphStateError
        If `forward` has not been called first.
    """
    if graph.values is None:
        raise GraphStateError('backward cannot be called before forward.')
    return backward_from(graph, graph.loss, np.ones(()))


def sgd_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    lr: float,
    masks: Optional[Mapping[str, np.ndarray]] = None,
) -> None:
    """Plain gradient step, in place: θ ← θ − lr·grad where the mask is 1.

    Entries whose mask is 0 are left untouched bit for bit.

    Parameters
    ----------
    params : Mapping[str, Tensor]
        The tensors to update.
    grads : Mapping[str, np.ndarray]
        A gradient for every parameter that has at least one unmasked entry.
    lr : float
        The learning rate. 0 leaves every parameter unchanged.
    masks : Optional[Mapping[str, np.ndarray]], optional
        Binary masks, by default every entry is updated.
    """
    if lr < 0:
        raise ValueError(f'The learning rate must be non-negative ({lr} given).')
    masks = masks or {}

    for name, tensor in params.items():
        mask = masks.get(name)
        if mask is not None and not np.any(mask):
            continue
        if name not in grads or grads[name] is None:
            raise GraphStateError(f'No gradient has been provided for the parameter "{name}".')
        if lr == 0:
            continue
        updated = tensor.data - lr * grads[name]
        if mask is None:
            np.copyto(tensor.data, updated)
        else:
            np.copyto(tensor.data, updated, where=mask.astype(bool))


class Objective(Protocol):
    """Anything that can be trained with `sgd_step`: a loss over batches and a set of masked parameters."""

    def parameters(self) -> Dict[str, Tensor]:
        ...

    def masks(self) -> Dict[str, np.ndarray]:
        ...

    def loss(self, batch) -> float:
        ...

    def loss_and_grad(self, batch) -> Tuple[float, Gradients]:
        ...


class GraphObjective:
    """`Objective` over a bare graph whose batches are mappings of input names to arrays."""

    def __init__(self, graph: Graph, masks: Optional[Mapping[str, np.ndarray]] = None):
        self.graph = graph
        self._masks = dict(masks or {})

    def parameters(self) -> Dict[str, Tensor]:
        return self.graph.parameters

    def masks(self) -> Dict[str, np.ndarray]:
        return self._masks

    def loss(self, batch: Binding) -> float:
        return forward(self.graph, batch)

    def loss_and_grad(self, batch: Binding) -> Tuple[float, Gradients]:
        loss = forward(self.graph, batch)
        return loss, backward(self.graph)


def average_gradients(objective: Objective, batches: Iterable) -> Tuple[float, Gradients]:
    """Mean loss and mean gradient over the given batches (one backward pass per batch)."""
    losses, stacked = [], {}
    for batch in batches:
        loss, grads = objective.loss_and_grad(batch)
        losses.append(loss)
        for name, g in grads.items():
            stacked.setdefault(name, []).append(g.copy())
    if not losses:
        raise ValueError('At least one batch is required to average gradients.')
    return float(np.mean(losses)), {name: np.mean(gs, axis=0) for name, gs in stacked.items()}


def train_steps(objective: Objective, batches: Iterable, lr: float) -> List[float]:
    """One masked SGD step per batch.

    Returns
    -------
    List[float]
        The loss measured on each batch before its step.
    """
    losses = []
    for i, batch in enumerate(batches):
        loss, grads = objective.loss_and_grad(batch)
        sgd_step(objective.parameters(), grads, lr, objective.masks())
        losses.append(loss)
        log.log(5, f'step {i}: loss={loss:.6g}')
    return losses
