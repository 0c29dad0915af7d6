"""Reverse-mode automatic differentiation on NumPy arrays.

A Tensor wraps an ndarray plus a closure that scatters its output gradient
back to its parents; ``backward`` walks the tape in reverse topological
order. Ops preserve the dtype of their inputs, so an entire graph can be
run in float64 simply by feeding float64 leaves (used by the gradient
checks, which compare against central finite differences).

Convolutions are lowered to GEMM via im2col. The transposed convolution
forward pass IS the scatter used for the convolution input gradient, which
makes conv/conv_transpose exact adjoints of each other by construction.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.array(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self):
        return tensor_sum(self)


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=np.float32):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _make(data, parents, backward_fn) -> Tensor:
    track = _grad_enabled and any(
        p.requires_grad or p._backward_fn is not None for p in parents
    )
    out = Tensor(data)
    if track:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and shape ops

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out, (a, b), backward)


def transpose2d(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, g.T)

    return _make(a.data.T, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape

    def backward(g):
        _accumulate(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _make(out, tuple(tensors), backward)


def crop2d(a, top: int, left: int, height: int, width: int) -> Tensor:
    """Slice a (B, C, H, W) tensor spatially; gradient zero-pads back."""
    a = _as_tensor(a)
    B, C, H, W = a.data.shape
    if top < 0 or left < 0 or top + height > H or left + width > W:
        raise ValueError("crop outside tensor bounds")
    out = a.data[:, :, top:top + height, left:left + width]

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, :, top:top + height, left:left + width] = g
        _accumulate(a, full)

    return _make(out, (a,), backward)


def tensor_sum(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _make(a.data.sum(), (a,), backward)


# ---------------------------------------------------------------------------
# activations and losses

def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g):
        _accumulate(a, g * mask)

    return _make(np.where(mask, a.data, 0), (a,), backward)


def leaky_relu(a, alpha: float = 0.01) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g):
        _accumulate(a, g * np.where(mask, 1.0, alpha).astype(a.data.dtype))

    return _make(np.where(mask, a.data, a.data * alpha), (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * s * (1.0 - s))

    return _make(s, (a,), backward)


def mse_loss(pred, target) -> Tensor:
    pred = _as_tensor(pred)
    target = _as_tensor(target)
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        scale = 2.0 / n
        _accumulate(pred, g * scale * diff)
        _accumulate(target, -g * scale * diff)

    return _make(np.asarray((diff**2).mean(), dtype=pred.data.dtype), (pred, target), backward)


# ---------------------------------------------------------------------------
# convolution family

def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """(B, C, H, W) -> contiguous (B, Ho, Wo, C*kh*kw) patch matrix."""
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]
    b, c, ho, wo = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        b, ho, wo, c * kh * kw
    )


def _col2im(cols: np.ndarray, out_shape, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back onto (B, C, H, W)."""
    B, C, H, W = out_shape
    ho, wo = cols.shape[1:3]
    patches = cols.reshape(B, ho, wo, C, kh, kw)
    out = np.zeros(out_shape, dtype=cols.dtype)
    for di in range(kh):
        for dj in range(kw):
            out[:, :, di:di + sh * (ho - 1) + 1:sh, dj:dj + sw * (wo - 1) + 1:sw] += (
                patches[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
            )
    return out


def conv2d(x, kernel, bias=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Valid cross-correlation of (B, C, H, W) with kernel (O, C, kh, kw),
    after optional symmetric zero padding."""
    x = _as_tensor(x)
    kernel = _as_tensor(kernel)
    bias = _as_tensor(bias) if bias is not None else None
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    O, C, kh, kw = kernel.data.shape
    xp = x.data
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    B, Cx, H, W = xp.shape
    if Cx != C:
        raise ValueError(f"conv2d channel mismatch: input {Cx}, kernel {C}")
    if H < kh or W < kw:
        raise ValueError(f"conv2d input {H}x{W} smaller than kernel {kh}x{kw}")
    cols = _im2col(xp, kh, kw, sh, sw)
    ho, wo = cols.shape[1:3]
    kmat = kernel.data.reshape(O, -1)
    out = cols.reshape(-1, C * kh * kw) @ kmat.T
    out = out.reshape(B, ho, wo, O).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
        if bias is not None:
            _accumulate(bias, gt.sum(axis=0))
        _accumulate(
            kernel, (gt.T @ cols.reshape(-1, C * kh * kw)).reshape(kernel.data.shape)
        )
        dcols = (gt @ kmat).reshape(B, ho, wo, C * kh * kw)
        dxp = _col2im(dcols, xp.shape, kh, kw, sh, sw)
        if ph or pw:
            dxp = dxp[:, :, ph:H - ph, pw:W - pw]
        _accumulate(x, dxp)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, backward)


def conv2d_transpose(x, kernel, bias=None, stride=(1, 1)) -> Tensor:
    """Transposed convolution: exact adjoint of ``conv2d`` in its spatial
    map. Input (B, Ci, H, W), kernel (Ci, Co, kh, kw), output
    (B, Co, (H-1)*sh + kh, (W-1)*sw + kw)."""
    x = _as_tensor(x)
    kernel = _as_tensor(kernel)
    bias = _as_tensor(bias) if bias is not None else None
    sh, sw = _pair(stride)
    Ci, Co, kh, kw = kernel.data.shape
    B, Cx, H, W = x.data.shape
    if Cx != Ci:
        raise ValueError(f"conv2d_transpose channel mismatch: input {Cx}, kernel {Ci}")
    Hout = (H - 1) * sh + kh
    Wout = (W - 1) * sw + kw
    kmat = kernel.data.reshape(Ci, -1)
    xt = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, Ci)
    cols = (xt @ kmat).reshape(B, H, W, Co * kh * kw)
    out = _col2im(cols, (B, Co, Hout, Wout), kh, kw, sh, sw)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        gcols = _im2col(g, kh, kw, sh, sw)
        gflat = gcols.reshape(-1, Co * kh * kw)
        _accumulate(kernel, (xt.T @ gflat).reshape(kernel.data.shape))
        _accumulate(x, (gflat @ kmat.T).reshape(B, H, W, Ci).transpose(0, 3, 1, 2))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, backward)


def avg_pool2d(x, kernel) -> Tensor:
    """Non-overlapping average pooling; spatial dims must divide evenly."""
    x = _as_tensor(x)
    kh, kw = _pair(kernel)
    B, C, H, W = x.data.shape
    if H % kh or W % kw:
        raise ValueError(f"pool {kh}x{kw} does not tile input {H}x{W}")
    out = x.data.reshape(B, C, H // kh, kh, W // kw, kw).mean(axis=(3, 5))

    def backward(g):
        gexp = np.repeat(np.repeat(g, kh, axis=2), kw, axis=3) / (kh * kw)
        _accumulate(x, gexp)

    return _make(out, (x,), backward)


def dense(x, weight, bias) -> Tensor:
    """Affine layer x @ W + b with x (B, n_in), W (n_in, n_out), b (n_out,)."""
    return add(matmul(x, weight), bias)


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adam with optional decoupled-from-nothing plain L2: the gradient is
    augmented by 2 * weight_decay * theta, matching an L2 penalty term."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + 2.0 * self.weight_decay * p.data
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# numeric checking support

def numeric_gradient(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f with respect to array x.

    x is perturbed in place and restored; use float64 arrays for meaningful
    comparisons against the tape.
    """
    g = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        fp = float(f())
        flat_x[i] = orig - eps
        fm = float(f())
        flat_x[i] = orig
        flat_g[i] = (fp - fm) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(a - b)) / denom
