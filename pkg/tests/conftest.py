"""Shared fixtures: repository root on sys.path, cameras, synthetic hands, small meshes."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from mufen import tensor as T  # noqa: E402
from mufen.geometry import CameraPose, HandMesh, synth_hand  # noqa: E402
from mufen.tensor import Tensor, gradcheck  # noqa: E402


@pytest.fixture
def camera():
    return CameraPose()


@pytest.fixture
def open_hand():
    return synth_hand(7, [0.0] * 5)


@pytest.fixture
def fist():
    return synth_hand(7, [1.0] * 5)


@pytest.fixture
def float64():
    with T.default_dtype("float64"):
        yield


def quad(x0, y0, x1, y1, z=0.0):
    """Axis-aligned square in the plane z, two triangles"""
    vertices = np.array([[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]])
    return HandMesh(vertices=vertices, faces=np.array([[0, 1, 2], [0, 2, 3]]))


@pytest.fixture
def make_quad():
    return quad


def module_gradcheck(loss, module, inputs=(), samples=3, floor=1e-6):
    """gradcheck over `inputs` and every parameter of `module`.

    Parameters whose true gradient is zero (attention key biases under a
    softmax) are compared absolutely below `floor`.
    """
    return gradcheck(loss, [*inputs, *module.parameters()], samples=samples, floor=floor)


def weighted_mean(out, seed=3):
    """Scalar mean(out * w) with fixed random weights"""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return (out * Tensor(w)).mean()


@pytest.fixture
def check_gradients():
    return module_gradcheck


@pytest.fixture
def weighted_loss():
    return weighted_mean
