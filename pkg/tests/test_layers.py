"""
Test the parameterized layers, Adam and checkpoint files
"""

import numpy as np
import pytest

from mufen import tensor as T
from mufen.errors import InvalidArgumentError, ShapeError
from mufen.layers import (
    MLP,
    Adam,
    Attention,
    Conv2d,
    Linear,
    grid_to_tokens,
    load_checkpoint,
    per_site,
    save_checkpoint,
    tokens_to_grid,
    zero_init,
)
from mufen.tensor import Tensor, gradcheck


@pytest.fixture
def rng():
    return np.random.default_rng(3)


def test_linear_matches_matrix_product(float64, rng):
    layer = Linear(4, 3, rng)
    x = rng.normal(size=(5, 4))
    y = layer(Tensor(x)).data
    assert np.allclose(y, x @ layer.weight.data + layer.bias.data)
    assert layer(Tensor(x[0])).shape == (3,)
    with pytest.raises(ShapeError):
        layer(Tensor(np.zeros((2, 5))))


def test_linear_gradients(float64, rng):
    layer = Linear(4, 3, rng)
    x = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    assert gradcheck(lambda: (layer(x) * layer(x)).sum(), [x, layer.weight, layer.bias]) < 1e-6


def test_mlp_layout(rng):
    mlp = MLP([6, 8, 2], rng)
    names = [name for name, _ in mlp.named_parameters()]
    assert names == ["layers.0.weight", "layers.0.bias", "layers.1.weight", "layers.1.bias"]
    assert mlp.num_parameters() == 6 * 8 + 8 + 8 * 2 + 2
    assert mlp(Tensor(np.ones((3, 6)))).shape == (3, 2)
    with pytest.raises(InvalidArgumentError):
        MLP([4], rng)


def test_attention_weights_are_distributions(float64, rng):
    attention = Attention(8, rng)
    q = Tensor(rng.normal(size=(2, 5, 8)))
    ctx = Tensor(rng.normal(size=(2, 3, 8)))
    out, weights = attention(q, ctx)
    assert out.shape == (2, 5, 8)
    assert weights.shape == (2, 5, 3)
    assert np.allclose(weights.data.sum(axis=-1), 1.0)
    with pytest.raises(ShapeError):
        attention(q, Tensor(np.zeros((2, 3, 4))))


def test_attention_gradients(float64, rng):
    attention = Attention(4, rng)
    q = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
    ctx = Tensor(rng.normal(size=(1, 2, 4)), requires_grad=True)
    loss = lambda: (attention(q, ctx)[0] * attention(q, ctx)[0]).mean()
    assert gradcheck(loss, [q, ctx, attention.key.weight]) < 1e-6


def test_tokens_round_trip(rng):
    x = Tensor(rng.normal(size=(2, 3, 4, 5)))
    tokens = grid_to_tokens(x)
    assert tokens.shape == (2, 20, 3)
    assert np.array_equal(tokens_to_grid(tokens, 4, 5).data, x.data)
    with pytest.raises(ShapeError):
        tokens_to_grid(tokens, 3, 5)


def test_per_site_applies_over_channels(float64, rng):
    layer = Linear(3, 2, rng)
    x = rng.normal(size=(1, 3, 2, 2))
    y = per_site(layer, Tensor(x)).data
    assert y.shape == (1, 2, 2, 2)
    assert np.allclose(y[0, :, 1, 0], x[0, :, 1, 0] @ layer.weight.data + layer.bias.data)


def test_adam_minimizes_a_quadratic():
    p = Tensor([3.0, -2.0], requires_grad=True)
    opt = Adam([p], lr=0.1)
    initial = float((p.data ** 2).sum())
    for _ in range(200):
        opt.zero_grad()
        loss = (p * p).sum()
        loss.backward()
        opt.step()
    assert float((p.data ** 2).sum()) < 0.1 * initial
    assert opt.step_count == 200


def test_adam_skips_parameters_without_gradients():
    used = Tensor([1.0], requires_grad=True)
    unused = Tensor([5.0], requires_grad=True)
    opt = Adam([used, unused], lr=0.5)
    (used * used).sum().backward()
    opt.step()
    assert unused.data.tolist() == [5.0]
    assert used.data[0] < 1.0


def test_state_dict_round_trip_and_strictness(rng):
    a = MLP([3, 4, 1], rng)
    b = MLP([3, 4, 1], np.random.default_rng(11))
    b.load_state_dict(a.state_dict())
    for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert np.array_equal(pa.data, pb.data)

    partial = a.state_dict()
    partial.pop("layers.1.bias")
    with pytest.raises(InvalidArgumentError):
        b.load_state_dict(partial)
    b.load_state_dict(partial, strict=False)

    wrong = a.state_dict()
    wrong["layers.0.weight"] = np.zeros((2, 2))
    with pytest.raises(ShapeError):
        b.load_state_dict(wrong)


def test_checkpoint_round_trip_with_prefixes(tmp_path, rng):
    conv = Conv2d(2, 3, 3, rng, padding=1)
    mlp = MLP([4, 2], rng)
    save_checkpoint(conv, tmp_path, prefix="conv.")
    index = save_checkpoint(mlp, tmp_path, prefix="mlp.")
    assert index.name == "index.json"

    conv2 = load_checkpoint(Conv2d(2, 3, 3, np.random.default_rng(7), padding=1), tmp_path, prefix="conv.")
    mlp2 = load_checkpoint(MLP([4, 2], np.random.default_rng(7)), tmp_path, prefix="mlp.")
    assert np.allclose(conv2.weight.data, conv.weight.data, atol=1e-6)
    assert np.allclose(mlp2.layers[0].bias.data, mlp.layers[0].bias.data, atol=1e-6)
    assert (tmp_path / "conv.weight.muft").exists()


def test_zero_init(rng):
    layer = zero_init(Linear(3, 3, rng))
    assert all(not p.data.any() for p in layer.parameters())
    x = Tensor(rng.normal(size=(2, 3)))
    assert not layer(x).data.any()


def test_parameters_follow_the_default_dtype(rng):
    with T.default_dtype("float32"):
        layer = Linear(2, 2, rng)
    assert layer.weight.dtype == np.float32
