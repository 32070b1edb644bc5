"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the primitives needed by the 2-1-2D generator and the projection
discriminator are provided. Every op records a closure that maps the
upstream gradient to one gradient per parent (``None`` when the parent
does not need one).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation, ShapeError, UnknownDomain

NORM_EPS = 1e-5

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run forward passes without recording a graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

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

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)

    def abs(self):
        return tabs(self)

    def square(self):
        return square(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), bw, "mul")


def square(x: Tensor) -> Tensor:
    return _node(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,), "square")


def tabs(x: Tensor) -> Tensor:
    return _node(np.abs(x.data), (x,), lambda g: (np.sign(x.data) * g,), "abs")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    return _node(np.logaddexp(0.0, x.data), (x,), lambda g: (g * _sigmoid(x.data),), "softplus")


def tsum(x: Tensor, axis=None) -> Tensor:
    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node(np.asarray(x.data.sum(axis=axis)), (x,), bw, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _node(np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, g / n),), "mean")


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice ``x[start:stop]`` along the batch axis."""

    def bw(g):
        out = np.zeros_like(x.data)
        out[start:stop] = g
        return (out,)

    return _node(x.data[start:stop], (x,), bw, "rows")


def take_rows(table: Tensor, index) -> Tensor:
    """Row gather ``table[index]``; backward scatter-adds into the table."""
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(table.data[index], (table,), bw, "take_rows")


# ---------------------------------------------------------------- convolution
# Every strided convolution is rewritten as a stride-1 correlation over the
# stride phases of its input (kernels are zero-extended to a multiple of the
# stride). Each stride-1 correlation then picks the cheaper of two lowerings:
# im2col when there are at least as many output as input channels, otherwise
# a channel-mixing matmul over the whole grid followed by shifted adds.

def _pad2(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if not (ph or pw):
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * ph, w + 2 * pw))
    out[:, :, ph : ph + h, pw : pw + w] = x
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Stride-1 patches of (B, C, Hp, Wp) as a (C*kh*kw, B*Ho*Wo) matrix."""
    b, c, hp, wp = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, b * (hp - kh + 1) * (wp - kw + 1))


def _channels_first(x: np.ndarray) -> np.ndarray:
    return x.transpose(1, 0, 2, 3).reshape(x.shape[1], -1)


def _corr(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid stride-1 cross-correlation of (B, C, Hp, Wp) with (O, C, kh, kw)."""
    b, c, hp, wp = xp.shape
    o, _, kh, kw = w.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    if o >= c:
        out = (w.reshape(o, -1) @ _im2col(xp, kh, kw)).reshape(o, b, ho, wo)
    else:
        z = (w.transpose(0, 2, 3, 1).reshape(-1, c) @ _channels_first(xp)).reshape(o, kh, kw, b, hp, wp)
        out = z[:, 0, 0, :, :ho, :wo].copy()
        for i in range(kh):
            for j in range(kw):
                if i or j:
                    out += z[:, i, j, :, i : i + ho, j : j + wo]
    return out.transpose(1, 0, 2, 3)


def _corr_weight_grad(xp: np.ndarray, g: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Gradient of :func:`_corr` with respect to the kernel; ``g`` is (B, O, Ho, Wo)."""
    b, c, hp, wp = xp.shape
    o, ho, wo = g.shape[1], g.shape[2], g.shape[3]
    if o >= c:
        return (_channels_first(g) @ _im2col(xp, kh, kw).T).reshape(o, c, kh, kw)
    gs = np.zeros((o, kh, kw, b, hp, wp))
    gt = g.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            gs[:, i, j, :, i : i + ho, j : j + wo] = gt
    gw = gs.reshape(o * kh * kw, -1) @ _channels_first(xp).T
    return gw.reshape(o, kh, kw, c).transpose(0, 3, 1, 2)


def _corr_input_grad(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient of :func:`_corr` with respect to its (padded) input: a full correlation
    with the flipped, channel-swapped kernel."""
    kh, kw = w.shape[2:]
    return _corr(_pad2(g, kh - 1, kw - 1) if kh > 1 or kw > 1 else g,
                 np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)))


class _Geometry:
    """Index bookkeeping for a strided, padded correlation of an (H, W) input."""

    __slots__ = ("h", "w", "kh", "kw", "sh", "sw", "ph", "pw", "ho", "wo", "km", "kn")

    def __init__(self, h, w, kh, kw, sh, sw, ph, pw):
        self.h, self.w, self.kh, self.kw = h, w, kh, kw
        self.sh, self.sw, self.ph, self.pw = sh, sw, ph, pw
        self.ho, self.wo = (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1
        self.km, self.kn = -(-kh // sh), -(-kw // sw)

    @property
    def extent(self) -> tuple[int, int]:
        # padded input region actually touched once kernels are extended to km*sh x kn*sw
        return (self.ho + self.km - 1) * self.sh, (self.wo + self.kn - 1) * self.sw

    def input_phases(self, x: np.ndarray) -> np.ndarray:
        b, c = x.shape[:2]
        he, we = self.extent
        xp = np.zeros((b, c, he, we))
        hh, ww = min(self.h, he - self.ph), min(self.w, we - self.pw)
        xp[:, :, self.ph : self.ph + hh, self.pw : self.pw + ww] = x[:, :, :hh, :ww]
        if self.sh == self.sw == 1:
            return xp
        xp = xp.reshape(b, c, he // self.sh, self.sh, we // self.sw, self.sw)
        return xp.transpose(0, 1, 3, 5, 2, 4).reshape(b, c * self.sh * self.sw, he // self.sh, we // self.sw)

    def input_from_phases(self, gp: np.ndarray, c: int) -> np.ndarray:
        b = gp.shape[0]
        he, we = self.extent
        if not self.sh == self.sw == 1:
            gp = gp.reshape(b, c, self.sh, self.sw, he // self.sh, we // self.sw)
            gp = gp.transpose(0, 1, 4, 2, 5, 3).reshape(b, c, he, we)
        gx = np.zeros((b, c, self.h, self.w))
        hh, ww = min(self.h, he - self.ph), min(self.w, we - self.pw)
        gx[:, :, :hh, :ww] = gp[:, :, self.ph : self.ph + hh, self.pw : self.pw + ww]
        return gx

    def kernel_phases(self, w: np.ndarray) -> np.ndarray:
        o, c = w.shape[:2]
        sh, sw, km, kn = self.sh, self.sw, self.km, self.kn
        if sh == sw == 1:
            return w
        we = np.zeros((o, c, km * sh, kn * sw))
        we[:, :, : self.kh, : self.kw] = w
        we = we.reshape(o, c, km, sh, kn, sw).transpose(0, 1, 3, 5, 2, 4)
        return we.reshape(o, c * sh * sw, km, kn)

    def kernel_from_phases(self, gw: np.ndarray, c: int) -> np.ndarray:
        o = gw.shape[0]
        sh, sw, km, kn = self.sh, self.sw, self.km, self.kn
        if sh == sw == 1:
            return gw
        gw = gw.reshape(o, c, sh, sw, km, kn).transpose(0, 1, 4, 2, 5, 3).reshape(o, c, km * sh, kn * sw)
        return np.ascontiguousarray(gw[:, :, : self.kh, : self.kw])


def _conv_forward(x: np.ndarray, w: np.ndarray, geo: _Geometry) -> np.ndarray:
    return _corr(geo.input_phases(x), geo.kernel_phases(w))


def _conv_input_grad(g: np.ndarray, w: np.ndarray, geo: _Geometry) -> np.ndarray:
    return geo.input_from_phases(_corr_input_grad(g, geo.kernel_phases(w)), w.shape[1])


def _conv_weight_grad(x: np.ndarray, g: np.ndarray, geo: _Geometry) -> np.ndarray:
    return geo.kernel_from_phases(_corr_weight_grad(geo.input_phases(x), g, geo.km, geo.kn), x.shape[1])


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Zero-padded cross-correlation. ``weight`` is (out, in, kh, kw)."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    b, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {ci}")
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ShapeError("stride must be >= 1 and padding >= 0")
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(f"kernel {(kh, kw)} larger than padded input {(h + 2 * ph, w + 2 * pw)}")
    geo = _Geometry(h, w, kh, kw, sh, sw, ph, pw)
    out = _conv_forward(x.data, weight.data, geo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = _conv_input_grad(g, weight.data, geo) if x.requires_grad else None
        gw = _conv_weight_grad(x.data, g, geo) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _node(np.ascontiguousarray(out), parents, bw, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Adjoint of :func:`conv2d` with the same weight array, which is (in, out, kh, kw) here."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    if sh < 1 or sw < 1:
        raise ShapeError("stride must be >= 1")
    b, c, h, w = x.shape
    ci, o, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv_transpose2d channel mismatch: input has {c}, weight expects {ci}")
    ho, wo = (h - 1) * sh + kh - 2 * ph, (w - 1) * sw + kw - 2 * pw
    if ho < 1 or wo < 1 or ph < 0 or pw < 0:
        raise ShapeError(f"impossible transposed-conv geometry: output {(ho, wo)}")
    # geometry of the conv2d whose adjoint this is: it maps (ho, wo) back to (h, w)
    geo = _Geometry(ho, wo, kh, kw, sh, sw, ph, pw)
    out = _conv_input_grad(x.data, weight.data, geo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = _conv_forward(g, weight.data, geo) if x.requires_grad else None
        gw = _conv_weight_grad(g, x.data, geo) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _node(np.ascontiguousarray(out), parents, bw, "conv_transpose2d")


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-d convolution over (batch, channels, length); weight is (out, in, k)."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects 3-d input and weight, got {x.shape} and {weight.shape}")
    b, c, n = x.shape
    o, ci, k = weight.shape
    y = conv2d(reshape(x, (b, c, 1, n)), reshape(weight, (o, ci, 1, k)), bias, (1, stride), (0, padding))
    return reshape(y, (b, o, y.shape[-1]))


# ---------------------------------------------------------------- gating, norms, heads

def glu(x: Tensor) -> Tensor:
    """Gated linear unit over the channel axis: first half times sigmoid of second half."""
    c = x.shape[1]
    if c % 2:
        raise ShapeError(f"glu needs an even channel count, got {c}")
    half = c // 2
    a = x.data[:, :half]
    s = _sigmoid(x.data[:, half:])

    def bw(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=1),)

    return _node(a * s, (x,), bw, "glu")


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """gamma * (x - mean) / (std + eps) + beta with statistics per sample and channel.

    ``gamma``/``beta`` are either per channel (C,) or per sample and channel (B, C).
    """
    b, c = x.shape[:2]
    for p in (gamma, beta):
        if p.shape not in ((c,), (b, c)):
            raise ShapeError(f"norm parameter shape {p.shape} incompatible with input {x.shape}")
    # statistics over one flattened spatial axis reduce much faster than over several
    xf = x.data.reshape(b, c, -1)
    u = xf - xf.mean(axis=2, keepdims=True)
    sigma = np.sqrt(np.einsum("bcn,bcn->bc", u, u)[:, :, None] / u.shape[2])
    d = sigma + eps
    xhat = u / d
    gb = np.broadcast_to(gamma.data, (b, c))[:, :, None]
    out = (gb * xhat + np.broadcast_to(beta.data, (b, c))[:, :, None]).reshape(x.shape)

    def bw(g):
        g = g.reshape(b, c, -1)
        gx = ggamma = gbeta = None
        if x.requires_grad:
            gxh = g * gb
            m1 = gxh.mean(axis=2, keepdims=True)
            m2 = np.einsum("bcn,bcn->bc", gxh, u)[:, :, None] / u.shape[2]
            # d sigma / du = u / (n sigma); a constant channel has zero spread and gets zero there
            coef = np.divide(m2, d * d * sigma, out=np.zeros_like(sigma), where=sigma > 0)
            gx = ((gxh - m1) / d - u * coef).reshape(x.shape)
        if gamma.requires_grad:
            ggamma = np.einsum("bcn,bcn->bc", g, xhat)
            if gamma.shape == (c,):
                ggamma = ggamma.sum(axis=0)
        if beta.requires_grad:
            gbeta = g.sum(axis=2)
            if beta.shape == (c,):
                gbeta = gbeta.sum(axis=0)
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), bw, "instance_norm")


def cond_instance_norm(x: Tensor, codes, gamma_table: Tensor, beta_table: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Instance norm whose scale/shift rows are selected per sample by a domain code."""
    codes = np.atleast_1d(np.asarray(codes, dtype=np.int64))
    n_domains = gamma_table.shape[0]
    if codes.shape != (x.shape[0],):
        raise ShapeError(f"need one domain code per sample, got {codes.shape} for batch {x.shape[0]}")
    if np.any(codes < 0) or np.any(codes >= n_domains):
        raise UnknownDomain(f"domain codes {codes.tolist()} outside [0, {n_domains})")
    return instance_norm(x, take_rows(gamma_table, codes), take_rows(beta_table, codes), eps)


def global_sum_pool(x: Tensor) -> Tensor:
    if x.ndim < 3:
        raise ShapeError("global_sum_pool needs spatial axes")
    axes = tuple(range(2, x.ndim))

    def bw(g):
        return (np.broadcast_to(g.reshape(g.shape + (1,) * len(axes)), x.shape).copy(),)

    return _node(x.data.sum(axis=axes), (x,), bw, "global_sum_pool")


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on (batch, features); weight is (out, features)."""
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"fully_connected: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} vs {weight.shape[0]} outputs")
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _node(out, parents, bw, "fully_connected")


def reshape_2d_to_1d(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C*H, W)."""
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-d tensor, got {x.shape}")
    b, c, h, w = x.shape
    return reshape(x, (b, c * h, w))


def reshape_1d_to_2d(x: Tensor, height: int) -> Tensor:
    """(B, C*H, W) -> (B, C, H, W)."""
    if x.ndim != 3:
        raise ShapeError(f"expected a 3-d tensor, got {x.shape}")
    b, ch, w = x.shape
    if height < 1 or ch % height:
        raise ShapeError(f"{ch} channels not divisible by height {height}")
    return reshape(x, (b, ch // height, height, w))


# ---------------------------------------------------------------- backward

def topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if loss.data.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            grads[k] = grads[k] + pg if k in grads else pg


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5, seed: int = 0,
               max_coords: int | None = None, floor: float = 1e-8) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Non-scalar outputs are contracted with a fixed random tensor first. Only inputs
    with ``requires_grad`` are perturbed; ``max_coords`` checks a seeded random subset
    of each input's entries instead of all of them. Errors are
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    inputs = list(inputs)
    rng = np.random.default_rng(seed)
    probe = None

    def scalar():
        nonlocal probe
        out = fn(*inputs)
        if out.data.size == 1:
            return out.reshape(())
        if probe is None:
            probe = rng.standard_normal(out.shape)
        return tsum(mul(out, probe))

    for t in inputs:
        t.grad = None
    backward(scalar())
    worst = 0.0
    with no_grad():
        for t in inputs:
            if not t.requires_grad:
                continue
            analytic = (np.zeros_like(t.data) if t.grad is None else t.grad).reshape(-1)
            t.data = np.ascontiguousarray(t.data)
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for i in coords:
                orig = flat[i]
                flat[i] = orig + step
                fp = scalar().item()
                flat[i] = orig - step
                fm = scalar().item()
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * step)
                err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), floor)
                worst = max(worst, err)
    return worst
