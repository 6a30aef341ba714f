"""
Tape gradients against central finite differences, for the primitives and for
whole networks.
"""
import numpy as np
import pytest

from core import tensor as ops
from core.gradcheck import check_gradients, numerical_gradient, relative_error
from core.tensor import BatchNormStats, Tensor, backward
from networks import EpsilonNetwork, GuidanceClassifier

TOLERANCE = 1e-6
NETWORK_TOLERANCE = 1e-4
SEEDS = range(10)


def _leaf(rng, shape, positive=False, away_from_zero=False):
    data = rng.normal(size=shape)
    if positive:
        data = np.abs(data) + 0.5
    if away_from_zero:
        data = np.where(np.abs(data) < 0.1, data + np.sign(data + 1e-12) * 0.2, data)
    return Tensor(data, requires_grad=True)


# Each case is (fn, leaf shapes, leaf options). The scalar under test is a
# randomly weighted sum of fn's output.
PRIMITIVES = {
    'add': (lambda a, b: a + b, [(3, 4), (4,)], {}),
    'sub': (lambda a, b: a - b, [(3, 4), (3, 1)], {}),
    'mul': (lambda a, b: a * b, [(2, 3), (2, 3)], {}),
    'div': (lambda a, b: a / b, [(2, 3), (2, 3)], {'positive': True}),
    'pow': (lambda a: a ** 3, [(5,)], {}),
    'exp': (lambda a: a.exp(), [(2, 3)], {}),
    'log': (lambda a: a.log(), [(2, 3)], {'positive': True}),
    'sqrt': (lambda a: ops.sqrt(a), [(4,)], {'positive': True}),
    'relu': (lambda a: a.relu(), [(3, 3)], {'away_from_zero': True}),
    'softplus': (lambda a: ops.softplus(a), [(3, 3)], {}),
    'matmul': (lambda a, b: a @ b, [(2, 3), (3, 4)], {}),
    'batched_matmul': (lambda a, b: a @ b, [(2, 3, 4), (2, 4, 2)], {}),
    'reshape': (lambda a: a.reshape(3, 2) * a.reshape(3, 2), [(2, 3)], {}),
    'transpose': (lambda a: a.transpose(1, 0, 2), [(2, 3, 2)], {}),
    'sum_axis': (lambda a: a.sum(axis=1) ** 2, [(3, 4)], {}),
    'mean_keepdims': (lambda a: a * a.mean(axis=0, keepdims=True), [(3, 4)], {}),
    'index': (lambda a: a[1:, ::2] * 2.0, [(3, 4)], {}),
    'concat': (lambda a, b: ops.concat([a, b], axis=1) ** 2, [(2, 3), (2, 1)], {}),
    'softmax': (lambda a: ops.softmax(a, axis=-1), [(3, 4)], {}),
    'log_softmax': (lambda a: ops.log_softmax(a, axis=1), [(3, 4)], {}),
    'layer_norm': (lambda a, g, b: ops.layer_norm(a, g, b), [(3, 5), (5,), (5,)], {}),
    'conv2d': (lambda x, w, b: ops.conv2d(x, w, b, stride=2), [(2, 2, 4, 4), (3, 2, 2, 2), (3,)], {}),
}


class TestPrimitives:

    @pytest.mark.parametrize('name', sorted(PRIMITIVES))
    @pytest.mark.parametrize('seed', SEEDS)
    def test_primitive(self, name, seed):
        fn, shapes, kwargs = PRIMITIVES[name]
        rng = np.random.default_rng(seed)
        leaves = [_leaf(rng, shape, **kwargs) for shape in shapes]
        weight_rng = np.random.default_rng(1000 + seed)
        weights = Tensor(weight_rng.normal(size=fn(*leaves).shape))
        errors = check_gradients(lambda: (fn(*leaves) * weights).sum(), leaves)
        assert max(errors.values()) < TOLERANCE, errors

    @pytest.mark.parametrize('seed', SEEDS)
    def test_batch_norm_training(self, seed):
        rng = np.random.default_rng(seed)
        x, gamma, beta = _leaf(rng, (6, 3)), _leaf(rng, (3,)), _leaf(rng, (3,))
        weights = Tensor(rng.normal(size=(6, 3)))
        stats = BatchNormStats(3)
        errors = check_gradients(
            lambda: (ops.batch_norm(x, gamma, beta, stats, training=True) * weights).sum(), [x, gamma, beta])
        assert max(errors.values()) < TOLERANCE, errors

    @pytest.mark.parametrize('seed', SEEDS)
    def test_cross_entropy(self, seed):
        rng = np.random.default_rng(seed)
        logits = _leaf(rng, (5, 3))
        labels = rng.integers(0, 3, size=5)
        errors = check_gradients(lambda: ops.cross_entropy(logits, labels), [logits])
        assert errors[0] < TOLERANCE

    def test_take_rows_only_touches_used_rows(self):
        table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
        backward(ops.take_rows(table, [2, 2, 0]).sum())
        np.testing.assert_array_equal(table.grad[:, 0], [1.0, 0.0, 2.0, 0.0])


def _network_error(model, loss_fn) -> float:
    """Relative error of the full parameter gradient, taken as one vector."""
    params = model.trainable_parameters()
    model.zero_grad()
    backward(loss_fn())
    analytic = np.concatenate([
        (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1) for p in params])
    numeric = np.concatenate([numerical_gradient(loss_fn, p).reshape(-1) for p in params])
    return relative_error(analytic, numeric)


def _epsilon_case(seed: int, architecture: str):
    rng = np.random.default_rng(seed)
    net = EpsilonNetwork(architecture, (1, 4, 4), 2, 5, rng, hidden=8, embedding_dim=8,
                         patch=2, heads=2, blocks=2)
    net.train()
    w = Tensor(rng.uniform(size=(3, 1, 4, 4)))
    z_t = rng.normal(size=(3, 2))
    g = rng.dirichlet(np.ones(2), size=3)
    t = rng.integers(1, 6, size=3)
    weights = Tensor(rng.normal(size=(3, 2)))
    return net, lambda: (net(w, z_t, g, t) * weights).sum()


class TestNetworks:

    @pytest.mark.parametrize('seed', range(2))
    def test_linear_epsilon_network(self, seed):
        assert _network_error(*_epsilon_case(seed, 'linear')) < NETWORK_TOLERANCE

    @pytest.mark.slow
    @pytest.mark.parametrize('seed', SEEDS)
    def test_linear_epsilon_network_all_seeds(self, seed):
        assert _network_error(*_epsilon_case(seed, 'linear')) < NETWORK_TOLERANCE

    @pytest.mark.parametrize('seed', range(2))
    def test_attention_epsilon_network(self, seed):
        assert _network_error(*_epsilon_case(seed, 'attention')) < NETWORK_TOLERANCE

    def test_guidance_cross_entropy(self):
        rng = np.random.default_rng(4)
        model = GuidanceClassifier('attention', (1, 4, 4), 3, rng, hidden=8, patch=2, heads=2)
        images = Tensor(rng.uniform(size=(4, 1, 4, 4)))
        labels = np.array([0, 1, 2, 1])
        assert _network_error(model, lambda: ops.cross_entropy(model.logits(images), labels)) < NETWORK_TOLERANCE
