"""Minimal reverse-mode autodiff over numpy arrays, plus the layers used here.

Just enough machinery for this project's encoders and denoiser: tensors with
a tape, broadcasting-aware elementwise ops, batched matmul, softmax, slicing
and concatenation, a same-padded 3-D convolution (replicate padding on the
time axis so time-constant inputs stay time-constant), and Adam. Analytic
gradients are validated against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


class Tensor:
    """A numpy array with an optional gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _bw=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._bw = _bw

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray, own: bool = False) -> None:
        """Add a gradient contribution.

        own=True tells us the caller hands over `g` exclusively (a freshly
        allocated array, or a view no other parent receives), so the first
        contribution can be kept by reference instead of copied.
        """
        if not (self.requires_grad or self._bw is not None):
            return
        if self.grad is None:
            if own and g.dtype == self.data.dtype:
                self.grad = g
            else:
                self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar tensor."""
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)

    # light operator sugar used by the layers below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _track(parents) -> bool:
    return any(p.requires_grad or p._bw is not None for p in parents)


def _wants(t: Tensor) -> bool:
    return t.requires_grad or t._bw is not None


def _make(data, parents, bw) -> Tensor:
    if _track(parents):
        return Tensor(data, _parents=tuple(parents), _bw=bw)
    return Tensor(data)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bw(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape), own=True)

    return _make(out_data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bw(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(-g, b.data.shape), own=True)

    return _make(out_data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bw(g):
        if _wants(a):
            a._accumulate(_unbroadcast(g * b.data, a.data.shape), own=True)
        if _wants(b):
            b._accumulate(_unbroadcast(g * a.data, b.data.shape), own=True)

    return _make(out_data, (a, b), bw)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data * s

    def bw(g):
        a._accumulate(g * s, own=True)

    return _make(out_data, (a,), bw)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data**p

    def bw(g):
        a._accumulate(g * p * a.data ** (p - 1.0), own=True)

    return _make(out_data, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def bw(g):
        if _wants(a):
            ga = g @ np.swapaxes(b.data, -1, -2)
            if a.data.ndim >= 2:
                a._accumulate(_unbroadcast(ga, a.data.shape), own=True)
            else:
                a._accumulate(ga.reshape(a.data.shape), own=True)
        if _wants(b):
            gb = np.swapaxes(a.data, -1, -2) @ g
            if b.data.ndim >= 2:
                b._accumulate(_unbroadcast(gb, b.data.shape), own=True)
            else:
                b._accumulate(gb.reshape(b.data.shape), own=True)

    return _make(out_data, (a, b), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bw(g):
        a._accumulate(g.reshape(a.data.shape), own=True)

    return _make(out_data, (a,), bw)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.transpose(axes)
    inv = np.argsort(axes)

    def bw(g):
        a._accumulate(g.transpose(inv), own=True)

    return _make(out_data, (a,), bw)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries starting at `start` along `axis`."""
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = a.data[idx]

    def bw(g):
        if not _wants(a):
            return
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full, own=True)

    return _make(out_data, (a,), bw)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, s, e in zip(tensors, offsets[:-1], offsets[1:]):
            if not _wants(t):
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(s), int(e))
            t._accumulate(g[tuple(idx)], own=True)

    return _make(out_data, tuple(tensors), bw)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy(), own=True)

    return _make(out_data, (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        a._accumulate(g * out_data * (1.0 - out_data), own=True)

    return _make(out_data, (a,), bw)


def silu(a) -> Tensor:
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * sig

    def bw(g):
        a._accumulate(g * sig * (1.0 + a.data * (1.0 - sig)), own=True)

    return _make(out_data, (a,), bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate((g - dot) * out_data, own=True)

    return _make(out_data, (a,), bw)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    out_data = weight.data[ids]

    def bw(g):
        if weight.grad is None:
            weight.grad = np.zeros_like(weight.data)
        np.add.at(weight.grad, ids, g)

    return _make(out_data, (weight,), bw)


# ---------------------------------------------------------------------------
# 3-D convolution (stride 1, same padding: replicate in time, zeros in space)
# ---------------------------------------------------------------------------


def _pad_dhw(x: np.ndarray, pt: int, ph: int, pw: int) -> np.ndarray:
    if pt:
        x = np.pad(x, ((0, 0), (0, 0), (pt, pt), (0, 0), (0, 0)), mode="edge")
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, 0), (ph, ph), (pw, pw)))
    return x


def _conv3d_1x1(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Pointwise conv fast path: a channel matmul, no padding or gathers."""
    b, c, d, h, w = x.data.shape
    cout = weight.data.shape[0]
    wmat = weight.data.reshape(cout, c)
    flat = np.moveaxis(x.data, 1, -1).reshape(-1, c)
    out = flat @ wmat.T + bias.data
    out_data = np.moveaxis(out.reshape(b, d, h, w, cout), -1, 1)

    def bw(g):
        g2 = np.moveaxis(g, 1, -1).reshape(-1, cout)
        if _wants(weight):
            weight._accumulate((g2.T @ flat).reshape(weight.data.shape), own=True)
        if _wants(bias):
            bias._accumulate(g2.sum(axis=0), own=True)
        if _wants(x):
            gx = (g2 @ wmat).reshape(b, d, h, w, c)
            x._accumulate(np.moveaxis(gx, -1, 1), own=True)

    return _make(out_data, (x, weight, bias), bw)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-size 3-D convolution of (B, C, D, H, W) input.

    Time axis uses replicate padding so a time-constant input yields a
    time-constant output; spatial axes use zero padding. The im2col/col2im
    gathers dispatch to numba kernels when enabled.
    """
    from .kernels import col2im3d, im2col3d

    x = as_tensor(x)
    b, c, d, h, w = x.data.shape
    cout, cin, kd, kh, kw = weight.data.shape
    if cin != c:
        raise DimensionError(f"conv3d channel mismatch: input {c}, weight expects {cin}")
    if kd == kh == kw == 1:
        return _conv3d_1x1(x, weight, bias)
    pt, ph, pw = kd // 2, kh // 2, kw // 2
    xp = _pad_dhw(x.data, pt, ph, pw)
    cols = im2col3d(xp, kd, kh, kw, d, h, w)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T + bias.data
    out_data = np.moveaxis(out.reshape(b, d, h, w, cout), -1, 1)

    def bw(g):
        g2 = np.ascontiguousarray(np.moveaxis(g, 1, -1)).reshape(-1, cout)
        if _wants(weight):
            weight._accumulate((g2.T @ cols).reshape(weight.data.shape), own=True)
        if _wants(bias):
            bias._accumulate(g2.sum(axis=0), own=True)
        if _wants(x):
            gcols = g2 @ wmat
            gxp = col2im3d(
                gcols, (b, c, d + 2 * pt, h + 2 * ph, w + 2 * pw), kd, kh, kw, d, h, w
            )
            gx = gxp[:, :, :, ph : ph + h, pw : pw + w]
            core = gx[:, :, pt : pt + d].copy()
            # replicate padding: edge pad slabs fold back onto the edges
            if pt:
                core[:, :, 0] += gx[:, :, :pt].sum(axis=2)
                core[:, :, -1] += gx[:, :, pt + d :].sum(axis=2)
            x._accumulate(core, own=True)

    return _make(out_data, (x, weight, bias), bw)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Linear:
    """Dense layer y = x @ W.T + b with optional LoRA delta."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32, zero_init: bool = False):
        if zero_init:
            w = np.zeros((out_features, in_features))
        else:
            std = 1.0 / np.sqrt(in_features)
            w = rng.normal(0.0, std, size=(out_features, in_features))
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)
        self.lora = None  # set by trainer.attach_lora

    def __call__(self, x: Tensor) -> Tensor:
        y = add(matmul(x, transpose2d(self.weight)), self.bias)
        if self.lora is not None:
            y = add(y, self.lora.delta(x))
        return y

    def named_params(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias
        if self.lora is not None:
            yield from self.lora.named_params(prefix)


def transpose2d(t: Tensor) -> Tensor:
    return transpose(t, (1, 0))


class LayerNorm:
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = tmean(x, axis=-1, keepdims=True)
        xc = sub(x, mu)
        var = tmean(mul(xc, xc), axis=-1, keepdims=True)
        inv = power(add(var, Tensor(np.asarray(self.eps, dtype=x.data.dtype))), -0.5)
        return add(mul(mul(xc, inv), self.gamma), self.beta)

    def named_params(self, prefix: str):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta


class Conv3dLayer:
    def __init__(self, cin: int, cout: int, kernel: tuple[int, int, int],
                 rng: np.random.Generator, dtype=np.float32, zero_init: bool = False):
        kd, kh, kw = kernel
        fan_in = cin * kd * kh * kw
        if zero_init:
            w = np.zeros((cout, cin, kd, kh, kw))
        else:
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(cout, cin, kd, kh, kw))
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias)

    def named_params(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


class Embedding:
    def __init__(self, vocab: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Tensor(rng.normal(0.0, 0.02, size=(vocab, dim)).astype(dtype),
                             requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return embedding(self.weight, ids)

    def named_params(self, prefix: str):
        yield f"{prefix}.weight", self.weight


class Adam:
    """Classic Adam over an ordered list of (name, Tensor) parameters."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= (self.lr * update).astype(p.data.dtype, copy=False)
