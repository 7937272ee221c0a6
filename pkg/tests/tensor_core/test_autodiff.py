import numpy as np
import pytest

from altermoma_lab.tensor_core.lib import (GraphObjective, average_gradients, backward, backward_from, forward,
                                           sgd_step, train_steps)
from altermoma_lab.tensor_core.models.graph import Graph, OpType
from altermoma_lab.tensor_core.models.tensor import Tensor
from altermoma_lab.utils.exceptions import GraphStateError, MissingInputError, ShapeMismatchError


def linear_graph(w, b, loss: OpType = OpType.MSE) -> Graph:
    graph = Graph()
    graph.add_input('x')
    graph.add_input('t')
    graph.add_parameter('w', Tensor(w))
    graph.add_parameter('b', Tensor(b))
    z = graph.add_node(OpType.MATMUL, ['x', 'w'], 'z')
    z = graph.add_node(OpType.BIAS_ADD, [z, 'b'], 'zb')
    graph.set_loss(graph.add_node(loss, [z, 't'], 'loss'))
    return graph


def numeric_gradient(graph: Graph, inputs: dict, name: str, h: float = 1e-6) -> np.ndarray:
    tensor = graph.parameters[name]
    grad = np.zeros_like(tensor.data)
    for i in range(tensor.size):
        original = tensor.flat()[i]
        tensor.flat()[i] = original + h
        plus = forward(graph, inputs)
        tensor.flat()[i] = original - h
        minus = forward(graph, inputs)
        tensor.flat()[i] = original
        grad.reshape(-1)[i] = (plus - minus) / (2 * h)
    return grad


def test_forward_linear_mse():
    graph = linear_graph([[2.0], [-1.0]], [0.5])
    loss = forward(graph, {'x': np.array([[1.0, 3.0]]), 't': np.array([[0.0]])})
    # 2 - 3 + 0.5 = -0.5
    assert loss == pytest.approx(0.25)


def test_backward_linear_mse():
    graph = linear_graph([[2.0], [-1.0]], [0.5])
    forward(graph, {'x': np.array([[1.0, 3.0]]), 't': np.array([[0.0]])})
    grads = backward(graph)
    np.testing.assert_allclose(grads['w'], [[-1.0], [-3.0]])
    np.testing.assert_allclose(grads['b'], [-1.0])


@pytest.mark.parametrize('seed', range(5))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    graph = Graph()
    graph.add_input('x')
    graph.add_input('t')
    graph.add_parameter('w1', Tensor(rng.normal(size=(3, 4))))
    graph.add_parameter('v', Tensor(rng.normal(size=(8, 3))))
    graph.add_constant('m', Tensor(rng.integers(0, 2, size=(8, 3)).astype(float)))
    h1 = graph.add_node(OpType.RELU, [graph.add_node(OpType.MATMUL, ['x', 'w1'], 'h1')], 'a1')
    h2 = graph.add_node(OpType.MATMUL, [graph.add_node(OpType.RELU, ['x'], 'rx'), 'w1'], 'h2')
    both = graph.add_node(OpType.CONCAT, [h1, h2], 'cat')
    masked = graph.add_node(OpType.MUL, ['v', 'm'], 'vm')
    out = graph.add_node(OpType.MATMUL, [both, masked], 'out')
    graph.set_loss(graph.add_node(OpType.SOFTMAX_CE, [out, 't'], 'loss'))

    targets = np.eye(3)[rng.integers(0, 3, size=5)]
    inputs = {'x': rng.normal(size=(5, 3)), 't': targets}
    forward(graph, inputs)
    grads = {name: g.copy() for name, g in backward(graph).items()}
    for name in graph.parameters:
        np.testing.assert_allclose(grads[name], numeric_gradient(graph, inputs, name), rtol=1e-5, atol=1e-8)


def test_gradients_are_not_accumulated():
    graph = linear_graph([[2.0], [-1.0]], [0.5])
    inputs = {'x': np.array([[1.0, 3.0]]), 't': np.array([[0.0]])}
    forward(graph, inputs)
    first = backward(graph)['w'].copy()
    forward(graph, inputs)
    np.testing.assert_array_equal(backward(graph)['w'], first)


def test_missing_input():
    graph = linear_graph([[1.0]], [0.0])
    with pytest.raises(MissingInputError):
        forward(graph, {'x': np.ones((1, 1))})


def test_backward_before_forward():
    graph = linear_graph([[1.0]], [0.0])
    with pytest.raises(GraphStateError):
        backward(graph)


def test_forward_without_loss():
    graph = Graph()
    graph.add_input('x')
    with pytest.raises(GraphStateError):
        forward(graph, {'x': np.ones((1, 1))})


def test_shape_mismatch_names_the_node():
    graph = linear_graph(np.ones((2, 1)), [0.0])
    with pytest.raises(ShapeMismatchError, match='matmul'):
        forward(graph, {'x': np.ones((1, 3)), 't': np.zeros((1, 1))})


def test_duplicate_names_and_unknown_inputs():
    graph = Graph()
    graph.add_input('x')
    with pytest.raises(ValueError):
        graph.add_input('x')
    with pytest.raises(ValueError):
        graph.add_node(OpType.RELU, ['y'], 'a')
    graph.add_node(OpType.RELU, ['x'], 'a')
    with pytest.raises(ValueError):
        graph.set_loss('a')


def test_backward_from_seed_shape():
    graph = linear_graph(np.ones((2, 1)), [0.0])
    forward(graph, {'x': np.ones((3, 2)), 't': np.zeros((3, 1))})
    with pytest.raises(ShapeMismatchError):
        backward_from(graph, 'zb', np.ones((2, 1)))
    grads = backward_from(graph, 'zb', np.ones((3, 1)))
    np.testing.assert_allclose(grads['w'], [[3.0], [3.0]])
    np.testing.assert_allclose(grads['b'], [3.0])


def test_matmul_zero_rows_add_exact_zeros():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    w_masked = w.copy()
    w_masked[1] = 0.0
    x_removed = x[:, [0, 2]]

    def prediction(inputs, weights):
        graph = linear_graph(weights, np.zeros(2))
        forward(graph, {'x': inputs, 't': np.zeros((4, 2))})
        return graph.values['zb']

    np.testing.assert_array_equal(prediction(x, w_masked), prediction(x_removed, w[[0, 2]]))


def test_sgd_step_respects_masks():
    params = {'w': Tensor([[1.0, 2.0], [3.0, 4.0]])}
    grads = {'w': np.ones((2, 2))}
    mask = np.array([[1.0, 0.0], [0.0, 1.0]])
    sgd_step(params, grads, 0.5, {'w': mask})
    np.testing.assert_array_equal(params['w'].data, [[0.5, 2.0], [3.0, 3.5]])


def test_sgd_step_learning_rate():
    params = {'w': Tensor([1.0])}
    sgd_step(params, {'w': np.array([10.0])}, 0.0)
    assert params['w'].data[0] == 1.0
    with pytest.raises(ValueError):
        sgd_step(params, {'w': np.array([10.0])}, -1.0)
    with pytest.raises(GraphStateError):
        sgd_step(params, {}, 0.1)


def test_fully_masked_parameter_needs_no_gradient():
    params = {'w': Tensor([1.0])}
    sgd_step(params, {}, 0.1, {'w': np.zeros(1)})
    assert params['w'].data[0] == 1.0


def test_objective_training_and_averaging():
    graph = linear_graph([[0.0]], [0.0])
    objective = GraphObjective(graph)
    batch = {'x': np.array([[1.0], [2.0]]), 't': np.array([[2.0], [4.0]])}
    losses = train_steps(objective, [batch] * 1000, 0.1)
    assert losses[-1] < losses[0]
    assert graph.parameters['w'].data[0, 0] == pytest.approx(2.0, abs=1e-3)

    with pytest.raises(ValueError):
        average_gradients(objective, [])
    loss, grads = average_gradients(objective, [batch, batch])
    assert loss == pytest.approx(objective.loss(batch))
    assert set(grads) == {'w', 'b'}


def test_tensor_shapes():
    assert Tensor([1, 2, 3, 4], shape=(2, 2)).shape == (2, 2)
    with pytest.raises(ValueError):
        Tensor([1, 2, 3], shape=(2, 2))
    with pytest.raises(ValueError):
        Tensor([], shape=(0,))
