"""A small reverse-mode automatic differentiation engine on numpy arrays.

Images are single ``(C, H, W)`` arrays (batch size is always one).  Every
operation records a backward closure ``fn(grad, graph) -> parent grads``.  When
``graph`` is false the closure works on plain arrays; when it is true it is
built from tensor operations so that the gradient itself can be
differentiated again (needed for coordinate derivatives of the dense PINN).
Only the elementwise, matmul, reduction and indexing ops support that second
mode; the image operators raise ``NotImplementedError``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class Tensor:
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=DTYPE))

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self):
        return tsum(self) * (1.0 / self.size)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def backward(self, grad=None):
        """Accumulate gradients into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grads = _propagate([self], [np.asarray(grad, dtype=DTYPE)], graph=False)
        for node, g in grads.values():
            if node.requires_grad and not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g


class Parameter(Tensor):
    """Trainable tensor with Adam moment buffers.

    ``ascent=True`` marks parameters that the optimizer moves *up* the
    gradient (the self-adaptive weights).
    """

    def __init__(self, data, ascent: bool = False, name: str | None = None):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=True, name=name)
        self.ascent = ascent
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _toposort(roots):
    order, seen = [], set()
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, iter(root._parents))]
        seen.add(id(root))
        while stack:
            node, it = stack[-1]
            for p in it:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append((p, iter(p._parents)))
                    break
            else:
                stack.pop()
                order.append(node)
    return order


def _propagate(outputs, seeds, graph):
    """Reverse sweep.  Returns ``{id: (node, grad)}`` for every visited node."""
    grads = {}
    for out, g in zip(outputs, seeds):
        if id(out) in grads:
            grads[id(out)] = (out, grads[id(out)][1] + g)
        else:
            grads[id(out)] = (out, g)
    for node in reversed(_toposort(outputs)):
        if id(node) not in grads or not node._parents:
            continue
        g = grads[id(node)][1]
        pgrads = node._backward(g, graph)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = (p, grads[id(p)][1] + pg)
            else:
                grads[id(p)] = (p, pg)
    return grads


def grad(outputs, inputs, grad_outputs=None, create_graph: bool = False):
    """Gradients of ``outputs`` with respect to ``inputs`` without touching ``.grad``.

    With ``create_graph`` the returned gradients are tensors that can be
    differentiated again.
    """
    outputs = list(outputs) if isinstance(outputs, (list, tuple)) else [outputs]
    inputs = list(inputs) if isinstance(inputs, (list, tuple)) else [inputs]
    if grad_outputs is None:
        grad_outputs = [np.ones_like(o.data) for o in outputs]
    elif not isinstance(grad_outputs, (list, tuple)):
        grad_outputs = [grad_outputs]
    if create_graph:
        seeds = [_as_tensor(g) for g in grad_outputs]
    else:
        seeds = [g.data if isinstance(g, Tensor) else np.asarray(g, dtype=DTYPE) for g in grad_outputs]
    grads = _propagate(outputs, seeds, graph=create_graph)
    result = []
    for x in inputs:
        if id(x) in grads:
            result.append(grads[id(x)][1])
        else:
            zeros = np.zeros_like(x.data)
            result.append(Tensor(zeros) if create_graph else zeros)
    return result


def _v(t: Tensor, graph: bool):
    return t if graph else t.data


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (numpy broadcasting rules)."""
    if g.shape == tuple(shape):
        return g
    nlead = len(g.shape) - len(shape)
    axes = tuple(range(nlead)) + tuple(
        i + nlead for i, s in enumerate(shape) if s == 1 and g.shape[i + nlead] != 1
    )
    g = g.sum(axis=axes, keepdims=True)
    return g.reshape(tuple(shape))


# elementwise / algebra ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g, graph):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g, graph):
        return (-g,)

    return _result(-a.data, (a,), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g, graph):
        ga = _unbroadcast(g * _v(b, graph), a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * _v(a, graph), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward)


def power(a: Tensor, p: float) -> Tensor:
    def backward(g, graph):
        return (g * (p * _v(a, graph) ** (p - 1)),)

    return _result(a.data ** p, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul supports 2D operands only")

    def backward(g, graph):
        ga = g @ _v(b, graph).T if a.requires_grad else None
        gb = _v(a, graph).T @ g if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g, graph):
        return (g.T,)

    return _result(a.data.T, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    out = None

    def backward(g, graph):
        y = out if graph else out_data
        return (g * (1.0 - y * y),)

    out = _result(out_data, (a,), backward)
    return out


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(DTYPE)

    def backward(g, graph):
        return (g * (Tensor(mask) if graph else mask),)

    return _result(a.data * mask, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape

    def backward(g, graph):
        if not keepdims and axis is not None:
            axes = (axis,) if np.isscalar(axis) else axis
            axes = tuple(ax % len(shape) for ax in axes)
            kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))
            g = g.reshape(kshape)
        elif axis is None and not keepdims:
            g = g.reshape((1,) * len(shape))
        return (broadcast_to(g, shape) if graph else np.broadcast_to(g, shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)

    def backward(g, graph):
        return (_unbroadcast(g, a.shape),)

    return _result(np.broadcast_to(a.data, shape).copy(), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def backward(g, graph):
        return (g.reshape(old),)

    return _result(a.data.reshape(shape), (a,), backward)


def getitem(a: Tensor, idx) -> Tensor:
    def backward(g, graph):
        return (scatter(g, a.shape, idx) if graph else _scatter_np(g, a.shape, idx),)

    return _result(a.data[idx], (a,), backward)


def _scatter_np(g, shape, idx):
    out = np.zeros(shape, dtype=DTYPE)
    np.add.at(out, idx, g)
    return out


def scatter(a, shape, idx) -> Tensor:
    """Place ``a`` into a zero tensor of ``shape`` at ``idx`` (adjoint of indexing)."""
    a = _as_tensor(a)

    def backward(g, graph):
        return (g[idx],)

    return _result(_scatter_np(a.data, shape, idx), (a,), backward)


def stack(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]

    def backward(g, graph):
        return tuple(g[(slice(None),) * axis + (k,)] for k in range(len(tensors)))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"cannot concatenate {a.shape} and {b.shape}")
    ca = a.shape[0]

    def backward(g, graph):
        return g[:ca], g[ca:]

    return _result(np.concatenate([a.data, b.data], axis=0), (a, b), backward)


def mse(r: Tensor) -> Tensor:
    """``mean(r**2)``."""
    n = r.size

    def backward(g, graph):
        return (g * (2.0 / n) * _v(r, graph),)

    return _result(np.mean(r.data * r.data), (r,), backward)


def linear_map(x: Tensor, forward, adjoint) -> Tensor:
    """Apply a fixed linear operator given as a forward/adjoint function pair."""

    def backward(g, graph):
        if graph:
            return (linear_map(g, adjoint, forward),)
        return (adjoint(g),)

    return _result(forward(x.data), (x,), backward)


# image operators -------------------------------------------------------------

def _norm_padding(padding):
    if isinstance(padding, int):
        return (padding, padding, padding, padding)
    if len(padding) != 4:
        raise ValueError("padding must be an int or (top, bottom, left, right)")
    return tuple(int(p) for p in padding)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding=0) -> Tensor:
    """Bias-free 2D cross-correlation of a ``(C, H, W)`` image.

    ``padding`` is an int or a ``(top, bottom, left, right)`` tuple of zeros.
    """
    C, H, W = x.shape
    O, Ci, kh, kw = w.shape
    if Ci != C:
        raise ValueError(f"kernel expects {Ci} input channels, image has {C}")
    pt, pb, pl, pr = _norm_padding(padding)
    Hp, Wp = H + pt + pb, W + pl + pr
    if (Hp - kh) % stride or (Wp - kw) % stride or Hp < kh or Wp < kw:
        raise ValueError("convolution output size is not a positive integer")
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(C * kh * kw, Ho * Wo)
    wm = w.data.reshape(O, -1)
    out = (wm @ cols).reshape(O, Ho, Wo)

    def backward(g, graph):
        if graph:
            raise NotImplementedError("conv2d does not support double backward")
        g2 = g.reshape(O, -1)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wm.T @ g2).reshape(C, kh, kw, Ho, Wo)
            dxp = np.zeros((C, Hp, Wp), dtype=DTYPE)
            for a in range(kh):
                for b in range(kw):
                    dxp[:, a:a + stride * (Ho - 1) + 1:stride, b:b + stride * (Wo - 1) + 1:stride] += dcols[:, a, b]
            gx = dxp[:, pt:pt + H, pl:pl + W]
        return gx, gw

    return _result(out, (x, w), backward)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization with statistics of the current image.

    A single-pixel channel normalizes to zero, so the output is ``beta``.
    """
    C, H, W = x.shape
    n = H * W
    mean = x.data.mean(axis=(1, 2), keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gm = gamma.data[:, None, None]
    out = gm * xhat + beta.data[:, None, None]

    def backward(g, graph):
        if graph:
            raise NotImplementedError("batchnorm2d does not support double backward")
        ggamma = (g * xhat).sum(axis=(1, 2))
        gbeta = g.sum(axis=(1, 2))
        dxhat = g * gm
        gx = inv / n * (n * dxhat - dxhat.sum(axis=(1, 2), keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=(1, 2), keepdims=True))
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    C, H, W = x.shape
    if H < 2 or W < 2:
        raise ValueError("maxpool2 needs at least 2x2 input")
    h, w = H // 2, W // 2
    win = x.data[:, :2 * h, :2 * w].reshape(C, h, 2, w, 2).transpose(0, 1, 3, 2, 4).reshape(C, h, w, 4)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g, graph):
        if graph:
            raise NotImplementedError("maxpool2 does not support double backward")
        gwin = np.zeros((C, h, w, 4), dtype=DTYPE)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros((C, H, W), dtype=DTYPE)
        gx[:, :2 * h, :2 * w] = gwin.reshape(C, h, w, 2, 2).transpose(0, 1, 3, 2, 4).reshape(C, 2 * h, 2 * w)
        return (gx,)

    return _result(out, (x,), backward)


def interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Corner-aligned linear interpolation weights, shape ``(n_out, n_in)``."""
    A = np.zeros((n_out, n_in), dtype=DTYPE)
    if n_in == 1 or n_out == 1:
        A[:, 0] = 1.0
        return A
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - i0
    rows = np.arange(n_out)
    A[rows, i0] = 1.0 - frac
    A[rows, i0 + 1] += frac
    return A


def upsample_bilinear(x: Tensor, target_h: int, target_w: int) -> Tensor:
    if target_h < 1 or target_w < 1:
        raise ValueError("target size must be positive")
    C, H, W = x.shape
    if (target_h, target_w) == (H, W):
        return x
    Ah = interp_matrix(target_h, H)
    Aw = interp_matrix(target_w, W)
    out = Ah @ x.data @ Aw.T

    def backward(g, graph):
        if graph:
            raise NotImplementedError("upsample_bilinear does not support double backward")
        return (Ah.T @ g @ Aw,)

    return _result(out, (x,), backward)


# optimizer ---------------------------------------------------------------------

def adam_step(params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, t: int = 1):
    """One bias-corrected Adam update, in place.

    Descent parameters move against their gradient, ascent parameters along it.
    """
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p in params:
        if p.grad is None:
            raise RuntimeError(f"parameter {p.name or p.shape} has no gradient; run backward first")
        g = p.grad
        # in-place arithmetic with one scratch buffer; the UNet has millions of entries
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        tmp = g * g
        tmp *= 1.0 - beta2
        p.v *= beta2
        p.v += tmp
        np.divide(p.v, bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += eps
        np.divide(p.m, tmp, out=tmp)
        tmp *= lr / bc1
        if p.ascent:
            p.data += tmp
        else:
            p.data -= tmp


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        adam_step(self.params, self.lr, self.betas[0], self.betas[1], self.eps, self.t)
