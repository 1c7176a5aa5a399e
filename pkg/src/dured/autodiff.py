"""Small reverse-mode differentiation engine over numpy arrays.

Only the operations needed to unroll the reconstruction network are
provided. Complex images travel through the graph as real tensors of
shape ``(B, 2, H, W)`` holding real and imaginary parts; scalars such as
the penalty weights are 0-d tensors and broadcast against images.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to per-parent gradients.
:func:`backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteGradientError

__all__ = [
    "Tensor",
    "Parameter",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "leaky_relu",
    "conv2d",
    "split_channels",
    "merge_channels",
    "inner",
    "sum_squares",
    "mean",
    "fft2c",
    "ifft2c",
    "to_channels",
    "to_complex",
    "backward",
    "adam_step",
]


class Tensor:
    __slots__ = ("value", "parents", "grad_fn", "op", "grad")

    def __init__(self, value, parents=(), grad_fn=None, op="const"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.grad_fn = grad_fn
        self.op = op
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape})"

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
        return div(self, other)

    def __neg__(self):
        return neg(self)


class Parameter(Tensor):
    """Trainable leaf with Adam moment buffers."""

    __slots__ = ("name", "adam_m", "adam_v", "step_count")

    def __init__(self, value, name=""):
        super().__init__(np.array(value, dtype=np.float64), op="param")
        self.name = name
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return Tensor(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return Tensor(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        "sub",
    )


def mul(a, b) -> Tensor:
    """Elementwise product; covers scaling by a scalar and masking by a constant grid."""
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    return Tensor(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    out = av / bv
    return Tensor(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
        "div",
    )


def neg(a) -> Tensor:
    a = constant(a)
    return Tensor(-a.value, (a,), lambda g: (-g,), "neg")


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = constant(x)
    scale = np.where(x.value > 0, 1.0, slope)
    return Tensor(x.value * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def _im2col(xp, k, h, w):
    """Stack the ``k*k`` shifted views of a padded ``(B, C, H+k-1, W+k-1)`` array.

    Result has shape ``(B, C*k*k, H*W)`` with channel-major ordering that
    matches ``weight.reshape(Cout, C*k*k)``.
    """
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, h, w))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + h, j : j + w]
    return cols.reshape(b, c * k * k, h * w)


def conv2d(x, weight, bias=None) -> Tensor:
    """Same-size 2D cross-correlation with zero padding.

    ``x`` is ``(B, Cin, H, W)``, ``weight`` is ``(Cout, Cin, k, k)`` with odd
    ``k``, ``bias`` is ``(Cout,)``.
    """
    x, weight = constant(x), constant(weight)
    bsz, cin, h, w = x.shape
    cout, cin_w, k, k2 = weight.shape
    if cin_w != cin or k != k2 or k % 2 == 0:
        raise ValueError(f"incompatible conv2d shapes {x.shape} and {weight.shape}")
    pad = k // 2
    xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, k, h, w)
    wmat = weight.value.reshape(cout, -1)
    out = np.matmul(wmat, cols).reshape(bsz, cout, h, w)
    parents = [x, weight]
    if bias is not None:
        bias = constant(bias)
        out = out + bias.value[None, :, None, None]
        parents.append(bias)

    def grad_fn(g):
        g2 = g.reshape(bsz, cout, h * w)
        gw = np.einsum("bop,bqp->oq", g2, cols).reshape(weight.shape)
        gcols = np.matmul(wmat.T, g2).reshape(bsz, cin, k, k, h, w)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + h, j : j + w] += gcols[:, :, i, j]
        gx = gxp[:, :, pad : pad + h, pad : pad + w]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor(out, parents, grad_fn, "conv2d")


def split_channels(x):
    """``(B, 2, H, W)`` -> real part, imaginary part, each ``(B, 1, H, W)``."""
    x = constant(x)
    if x.shape[1] != 2:
        raise ValueError("split_channels expects exactly two channels")

    def pick(c):
        def grad_fn(g):
            full = np.zeros(x.shape)
            full[:, c : c + 1] = g
            return (full,)

        return Tensor(x.value[:, c : c + 1], (x,), grad_fn, "split")

    return pick(0), pick(1)


def merge_channels(re, im) -> Tensor:
    re, im = constant(re), constant(im)
    return Tensor(
        np.concatenate([re.value, im.value], axis=1),
        (re, im),
        lambda g: (g[:, 0:1], g[:, 1:2]),
        "merge",
    )


def inner(a, b) -> Tensor:
    """Per-sample real inner product, shape ``(B, 1, 1, 1)``.

    For two-channel tensors this is ``Re <a, b>`` of the complex images.
    """
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ValueError(f"inner: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    axes = tuple(range(1, av.ndim))
    return Tensor(
        (av * bv).sum(axis=axes, keepdims=True),
        (a, b),
        lambda g: (g * bv, g * av),
        "inner",
    )


def sum_squares(x) -> Tensor:
    """Scalar ``sum(x**2)``."""
    x = constant(x)
    xv = x.value
    return Tensor(np.sum(xv * xv), (x,), lambda g: (2.0 * g * xv,), "sum_squares")


def mean(x) -> Tensor:
    x = constant(x)
    n = x.value.size
    return Tensor(np.mean(x.value), (x,), lambda g: (np.full(x.shape, g / n),), "mean")


def to_complex(arr) -> np.ndarray:
    """``(..., 2, H, W)`` real -> ``(..., H, W)`` complex."""
    arr = np.asarray(arr)
    return arr[..., 0, :, :] + 1j * arr[..., 1, :, :]


def to_channels(z) -> np.ndarray:
    """``(..., H, W)`` complex -> ``(..., 2, H, W)`` real."""
    z = np.asarray(z)
    return np.stack([z.real, z.imag], axis=-3).astype(np.float64)


def _fft2c_batch(z):
    ax = (-2, -1)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(z, axes=ax), norm="ortho"), axes=ax)


def _ifft2c_batch(z):
    ax = (-2, -1)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(z, axes=ax), norm="ortho"), axes=ax)


def fft2c(x) -> Tensor:
    """Centered orthonormal FFT on a two-channel tensor.

    As a real-linear map the transform is orthogonal, so its adjoint is
    the inverse transform.
    """
    x = constant(x)
    return Tensor(
        to_channels(_fft2c_batch(to_complex(x.value))),
        (x,),
        lambda g: (to_channels(_ifft2c_batch(to_complex(g))),),
        "fft2c",
    )


def ifft2c(x) -> Tensor:
    x = constant(x)
    return Tensor(
        to_channels(_ifft2c_batch(to_complex(x.value))),
        (x,),
        lambda g: (to_channels(_fft2c_batch(to_complex(g))),),
        "ifft2c",
    )


def _topological(root):
    order, seen = [], set()
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=()) -> dict:
    """Reverse-mode sweep from a scalar ``loss``.

    Sets ``.grad`` on every :class:`Parameter` reached and returns a dict
    ``{parameter: gradient}``. Parameters listed in ``params`` that the
    loss does not depend on get an exact zero gradient.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    found = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            found[node] = g
        if node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if parent.grad_fn is None and not isinstance(parent, Parameter):
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    for p in params:
        found.setdefault(p, np.zeros_like(p.value))
    for p, g in found.items():
        p.grad = g
    return found


def adam_step(params, grads=None, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place.

    ``grads`` maps each parameter to its gradient; when omitted the
    ``.grad`` attribute set by :func:`backward` is used. Nothing is
    modified if any gradient is non-finite.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError("beta1 and beta2 must lie in [0, 1)")
    params = list(params)
    gs = [(grads[p] if grads is not None else p.grad) for p in params]
    bad = [p.name or repr(p) for p, g in zip(params, gs) if g is None or not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(f"non-finite or missing gradient for {', '.join(bad)}")
    for p, g in zip(params, gs):
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1 - beta2) * g * g
        m_hat = p.adam_m / (1 - beta1**t)
        v_hat = p.adam_v / (1 - beta2**t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params
