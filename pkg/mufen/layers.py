"""Parameterized building blocks, the Adam optimizer and checkpoint files."""

import json
import logging
import math
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import InvalidArgumentError, ShapeError
from .tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)


def parameter(rng, shape, fan_in):
    """Trainable tensor drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))"""
    bound = 1.0 / math.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())
    return Tensor(data, requires_grad=True)


def zeros_parameter(shape):
    return Tensor(np.zeros(shape, dtype=get_default_dtype()), requires_grad=True)


class Module:
    """Base class; parameters are discovered by walking attributes"""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            yield from _walk(f"{prefix}{name}", value)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise InvalidArgumentError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for name, value in state.items():
            if name not in params:
                continue
            p = params[name]
            value = np.asarray(value)
            if value.shape != p.shape:
                raise ShapeError(f"load_state_dict[{name}]", p.shape, value.shape)
            p.data = value.astype(p.data.dtype)


def _walk(name, value):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(f"{name}.{key}", item)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


def zero_init(module):
    """Set every parameter of `module` to zero"""
    for p in module.parameters():
        p.data = np.zeros_like(p.data)
    return module


class Identity(Module):
    def forward(self, x):
        return x


class Linear(Module):
    """y = x @ W + b over the last axis, W stored (in, out)"""

    def __init__(self, in_features, out_features, rng, bias=True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = parameter(rng, (in_features, out_features), in_features)
        self.bias = parameter(rng, (out_features,), in_features) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeError("linear", x.shape, self.weight.shape, "last axis must equal in_features")
        y = T.matmul(x, self.weight) if x.ndim >= 2 else T.reshape(T.matmul(T.reshape(x, (1, -1)), self.weight), (-1,))
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0):
        fan_in = in_channels * kernel_size * kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = parameter(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.bias = parameter(rng, (out_channels,), fan_in)

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class MLP(Module):
    """Linear layers with ReLU between them"""

    def __init__(self, sizes, rng):
        if len(sizes) < 2:
            raise InvalidArgumentError(f"MLP needs at least input and output sizes, got {sizes}")
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            if i:
                x = T.relu(x)
            x = layer(x)
        return x


def per_site(module, x):
    """Apply a last-axis module at every spatial site of an NCHW tensor"""
    y = module(T.transpose(x, (0, 2, 3, 1)))
    return T.transpose(y, (0, 3, 1, 2))


def grid_to_tokens(x):
    """NCHW grid to (N, H*W, C) tokens"""
    n, c, h, w = x.shape
    return T.transpose(T.reshape(x, (n, c, h * w)), (0, 2, 1))


def tokens_to_grid(tokens, height, width):
    n, length, c = tokens.shape
    if length != height * width:
        raise ShapeError("tokens_to_grid", tokens.shape, (height, width))
    return T.reshape(T.transpose(tokens, (0, 2, 1)), (n, c, height, width))


class Attention(Module):
    """Single-head scaled dot-product attention with input and output projections"""

    def __init__(self, width, rng):
        self.width = width
        self.query = Linear(width, width, rng)
        self.key = Linear(width, width, rng)
        self.value = Linear(width, width, rng)
        self.out = Linear(width, width, rng)

    def forward(self, queries, context):
        """Returns (output, weights); weights has shape (N, Lq, Lk) with rows summing to 1"""
        if queries.shape[-1] != self.width or context.shape[-1] != self.width:
            raise ShapeError("attention", queries.shape, context.shape, f"width must be {self.width}")
        q = self.query(queries)
        k = self.key(context)
        v = self.value(context)
        scores = T.matmul(q, T.transpose(k, (0, 2, 1))) / math.sqrt(self.width)
        weights = T.softmax(scores, axis=-1)
        return self.out(T.matmul(weights, v)), weights


class Adam:
    """Adam with bias correction; each step replaces parameter data"""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * p.grad * p.grad
            update = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)


INDEX_FILE = "index.json"


def save_checkpoint(module, directory, prefix=""):
    """Write every parameter as a MUFT file plus a JSON index {name: file}"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index_path = directory / INDEX_FILE
    index = json.loads(index_path.read_text()) if index_path.exists() else {}
    for name, p in module.named_parameters(prefix=prefix):
        filename = f"{name}.muft"
        T.save_tensor(directory / filename, p)
        index[name] = filename
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True))
    logger.info("checkpoint written to %s (%d tensors)", directory, len(index))
    return index_path


def load_checkpoint(module, directory, prefix=""):
    directory = Path(directory)
    index = json.loads((directory / INDEX_FILE).read_text())
    state = {
        name[len(prefix):]: T.load_tensor(directory / filename)
        for name, filename in index.items()
        if name.startswith(prefix)
    }
    module.load_state_dict(state)
    return module
