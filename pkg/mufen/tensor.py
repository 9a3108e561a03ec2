"""
Dense numpy-backed tensors with reverse-mode automatic differentiation.

Every op returns a new Tensor; nothing on a recorded graph is mutated in
place. A result remembers its parents and a closure mapping the upstream
gradient to one gradient per parent. `Tensor.backward` orders the graph with
an iterative depth-first search and walks it once in reverse.
"""

import logging
import struct
import threading
from contextlib import contextmanager
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .errors import InvalidArgumentError, NumericError, ShapeError, TensorFileError

logger = logging.getLogger(__name__)

_DTYPES = {"float32": np.float32, "float64": np.float64}


class _State(threading.local):
    """Per-thread grad mode, default dtype and branch-pattern log"""

    def __init__(self):
        self.dtype = np.float64
        self.grad_enabled = True
        self.pattern_log = None


_state = _State()


def _resolve_dtype(dtype):
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise InvalidArgumentError(f"unsupported dtype '{dtype}', expected one of {sorted(_DTYPES)}")
        return _DTYPES[dtype]
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise InvalidArgumentError(f"unsupported dtype {dtype}")
    return dtype


def get_default_dtype():
    return _state.dtype


def set_default_dtype(dtype):
    _state.dtype = _resolve_dtype(dtype)


@contextmanager
def default_dtype(dtype):
    previous = _state.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextmanager
def no_grad():
    """Run ops without recording them for backward"""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def record_patterns():
    """Collect the branch choices (relu masks, argmax picks, signs) made by ops"""
    previous = _state.pattern_log
    _state.pattern_log = log = []
    try:
        yield log
    finally:
        _state.pattern_log = previous


def _note_pattern(pattern):
    if _state.pattern_log is not None:
        _state.pattern_log.append(np.array(pattern, copy=True))


class Tensor:
    """n-dimensional array value with an optional gradient"""

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.array(data, dtype=_resolve_dtype(dtype) if dtype else _state.dtype)
        if not np.all(np.isfinite(self.data)):
            raise NumericError("tensor created with non-finite values")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise InvalidArgumentError(f"backward needs a scalar loss, got shape {self.shape}")
        Tape.from_loss(self).backward()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise InvalidArgumentError("division is only defined by plain numbers")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)


def _result(data, parents, backward, op):
    data = np.asarray(data)
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    track = _state.grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = backward if track else None
    return out


class Tape:
    """Topologically ordered nodes reachable from a loss, loss last"""

    def __init__(self, nodes):
        self.nodes = list(nodes)

    @classmethod
    def from_loss(cls, loss):
        order = []
        visited = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def backward(self):
        loss = self.nodes[-1]
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    g = np.asarray(g, dtype=node.data.dtype)
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else _state.dtype
    return Tensor(np.asarray(value, dtype=dtype), dtype=dtype)


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    return a, b


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape, "not broadcastable")


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`"""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _expand(g, shape, axis, keepdims):
    """Broadcast a reduced gradient back over the reduced axes"""
    axes = _axes(axis, len(shape))
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def add(a, b):
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape, "inner dimensions differ")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, "batch dimensions not broadcastable")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of NCHW input with OIkHkW weights, zero padding"""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", x.shape, weight.shape, "expected NCHW input and OIHW weight with matching channels")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError("conv2d", bias.shape, (weight.shape[0],), "bias must have one value per output channel")
    n, _, h, w = x.shape
    out_ch, _, kh, kw = weight.shape
    s, p = int(stride), int(padding)
    hp, wp = h + 2 * p, w + 2 * p
    if hp < kh or wp < kw:
        raise ShapeError("conv2d", x.shape, weight.shape, "kernel larger than padded input")
    ho, wo = (hp - kh) // s + 1, (wp - kw) // s + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data

    def window(i, j):
        return (slice(None), slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))

    out = np.zeros((n, out_ch, ho, wo), dtype=np.result_type(x.data, weight.data))
    for i in range(kh):
        for j in range(kw):
            out += np.moveaxis(np.tensordot(xp[window(i, j)], weight.data[:, :, i, j], axes=([1], [1])), 3, 1)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gxp = np.zeros_like(xp, dtype=g.dtype)
        gw = np.zeros_like(weight.data)
        for i in range(kh):
            for j in range(kw):
                gw[:, :, i, j] = np.tensordot(g, xp[window(i, j)], axes=([0, 2, 3], [0, 2, 3]))
                gxp[window(i, j)] += np.moveaxis(np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0])), 3, 1)
        gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        gb = None if bias is None else g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, "conv2d")


def relu(x):
    mask = x.data > 0
    _note_pattern(mask)

    def backward(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), backward, "relu")


def sigmoid(x):
    s = special.expit(x.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return _result(s, (x,), backward, "sigmoid")


def softmax(x, axis=-1):
    s = special.softmax(x.data, axis=axis)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _result(s, (x,), backward, "softmax")


def sum_(x, axis=None, keepdims=False):
    def backward(g):
        return (_expand(g, x.shape, axis, keepdims),)

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    count = int(np.prod([x.shape[a] for a in _axes(axis, x.ndim)]))

    def backward(g):
        return (_expand(g, x.shape, axis, keepdims) / count,)

    return _result(np.mean(x.data, axis=axis, keepdims=keepdims), (x,), backward, "mean")


def max_(x, axis=None, keepdims=False):
    """Maximum; tied maxima share the gradient equally"""
    peak = np.max(x.data, axis=axis, keepdims=True)
    mask = x.data == peak
    _note_pattern(mask)
    counts = mask.sum(axis=axis, keepdims=True)

    def backward(g):
        g = _expand(g, peak.shape, None, True) if keepdims else np.reshape(g, peak.shape)
        return (g * mask / counts,)

    out = peak if keepdims else np.squeeze(peak, axis=_axes(axis, x.ndim))
    return _result(out, (x,), backward, "max")


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise InvalidArgumentError("concat needs at least one tensor")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError("concat", ref.shape, t.shape, f"must match off axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def _pool_windows(x, kernel, stride):
    if x.ndim != 4:
        raise ShapeError("pool2d", x.shape, None, "expected NCHW input")
    k = int(kernel)
    s = int(stride) if stride else k
    h, w = x.shape[2:]
    if h < k or w < k:
        raise ShapeError("pool2d", x.shape, (k, k), "window larger than input")
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    return k, s, ho, wo


def avg_pool2d(x, kernel, stride=None):
    k, s, ho, wo = _pool_windows(x, kernel, stride)

    def window(i, j):
        return (slice(None), slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))

    out = np.zeros(x.shape[:2] + (ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += x.data[window(i, j)]
    out /= k * k

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gx[window(i, j)] += g / (k * k)
        return (gx,)

    return _result(out, (x,), backward, "avg_pool2d")


def max_pool2d(x, kernel, stride=None):
    k, s, ho, wo = _pool_windows(x, kernel, stride)
    windows = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    windows = windows.reshape(windows.shape[:4] + (k * k,))
    pick = windows.argmax(axis=-1)
    _note_pattern(pick)
    out = np.take_along_axis(windows, pick[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        for offset in range(k * k):
            i, j = divmod(offset, k)
            gx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += g * (pick == offset)
        return (gx,)

    return _result(out, (x,), backward, "max_pool2d")


@lru_cache(maxsize=64)
def _resize_matrix_cached(n_in, n_out):
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = min(max((o + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    m.setflags(write=False)
    return m


def resize_matrix(n_in, n_out, dtype=np.float64):
    """Half-pixel-center linear interpolation weights, shape (n_out, n_in)"""
    return _resize_matrix_cached(int(n_in), int(n_out)).astype(dtype)


def bilinear_resize(x, size):
    """Resize the last two axes to `size` with align_corners=False sampling"""
    if x.ndim < 2:
        raise ShapeError("bilinear_resize", x.shape, None, "need at least two spatial axes")
    out_h, out_w = (size, size) if isinstance(size, int) else size
    rh = resize_matrix(x.shape[-2], out_h, x.dtype)
    rw = resize_matrix(x.shape[-1], out_w, x.dtype)

    def backward(g):
        return (np.matmul(np.matmul(rh.T, g), rw),)

    return _result(np.matmul(np.matmul(rh, x.data), rw.T), (x,), backward, "bilinear_resize")


bilinear_upsample = bilinear_resize


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def l1_loss(pred, target):
    pred, target = _pair(pred, target)
    _check_same_shape("l1_loss", pred, target)
    diff = pred.data - target.data
    sign = np.sign(diff)
    _note_pattern(sign)
    n = diff.size

    def backward(g):
        gp = g * sign / n
        return gp, -gp

    return _result(np.mean(np.abs(diff)), (pred, target), backward, "l1_loss")


def mse_loss(pred, target):
    pred, target = _pair(pred, target)
    _check_same_shape("mse_loss", pred, target)
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        gp = g * 2.0 * diff / n
        return gp, -gp

    return _result(np.mean(diff * diff), (pred, target), backward, "mse_loss")


def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape))

    def backward(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), backward, "reshape")


def transpose(x, axes):
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError("transpose", x.shape, axes, "axes must permute every dimension")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _result(np.transpose(x.data, axes), (x,), backward, "transpose")


def broadcast_to(x, shape):
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", x.shape, tuple(shape))

    def backward(g):
        return (_unbroadcast(g, x.shape),)

    return _result(np.array(out), (x,), backward, "broadcast_to")


def _same_patterns(first, second):
    return len(first) == len(second) and all(np.array_equal(a, b) for a, b in zip(first, second))


def gradcheck(fn, inputs, eps=1e-4, samples=16, seed=0, floor=1e-12):
    """Largest relative error between analytic and central-difference gradients.

    `fn` takes no arguments and returns a scalar Tensor built from `inputs`.
    Up to `samples` coordinates per input are checked. A coordinate whose +eps
    and -eps evaluations take different branches (a relu flipping sign, a
    different max picked) is skipped, since no derivative exists across it.
    The error is ||a - n|| / max(||a||, ||n||, floor) per input; raising `floor`
    turns it into an absolute tolerance for inputs whose true gradient is ~0.
    """
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    skipped = 0
    for t, grad in zip(inputs, analytic):
        # perturbs leaf storage between independent forward passes only
        flat = t.data.reshape(-1)
        a_vals, n_vals = [], []
        for idx in rng.permutation(flat.size):
            if len(a_vals) >= samples:
                break
            orig = flat[idx]
            flat[idx] = orig + eps
            with no_grad(), record_patterns() as plus:
                f_plus = fn().item()
            flat[idx] = orig - eps
            with no_grad(), record_patterns() as minus:
                f_minus = fn().item()
            flat[idx] = orig
            if not _same_patterns(plus, minus):
                skipped += 1
                continue
            a_vals.append(grad.reshape(-1)[idx])
            n_vals.append((f_plus - f_minus) / (2.0 * eps))
        if not a_vals:
            continue
        a, n = np.array(a_vals), np.array(n_vals)
        err = np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor)
        worst = max(worst, float(err))
    if skipped:
        logger.debug("gradcheck skipped %d coordinates at branch boundaries", skipped)
    return worst


MUFT_MAGIC = b"MUFT"


def save_tensor(path, value):
    """Write a tensor as MUFT: magic, u32 rank, u64 dims, float32 little-endian data"""
    arr = np.asarray(value.data if isinstance(value, Tensor) else value).astype("<f4", copy=False)
    with open(path, "wb") as f:
        f.write(MUFT_MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes())


def load_tensor(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MUFT_MAGIC:
        raise TensorFileError(f"{path}: missing MUFT magic")
    if len(data) < 8:
        raise TensorFileError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", data, 4)
    header = 8 + 8 * rank
    if len(data) < header:
        raise TensorFileError(f"{path}: truncated shape for rank {rank}")
    dims = struct.unpack_from(f"<{rank}Q", data, 8)
    count = int(np.prod(dims)) if rank else 1
    if len(data) != header + 4 * count:
        raise TensorFileError(f"{path}: expected {count} values for shape {dims}")
    return np.frombuffer(data, dtype="<f4", count=count, offset=header).reshape(dims).astype(np.float32)
