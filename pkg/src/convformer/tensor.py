"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is tape-free: every operation returns a new Tensor that keeps
references to its parents together with a closure computing the parent
gradients from the output gradient.  ``Tensor.backward()`` walks the implicit
graph in reverse topological order and accumulates gradients additively into
every tensor with ``requires_grad`` set.  Calling ``backward`` a second time
without clearing gradients accumulates a second full pass (accumulate-only
contract).

All data is stored as C-contiguous 64-bit floats; stochastic operations take
an explicit ``numpy.random.Generator`` so runs are bit-reproducible.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """Raised for invalid structural configuration (e.g. even kernel size)."""


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _asarray(x):
    a = np.asarray(x, dtype=np.float64)
    # np.ascontiguousarray would promote 0-d arrays to shape (1,)
    return a if a.flags.c_contiguous else np.ascontiguousarray(a)


class Tensor:
    """A dense float64 array node in a reverse-mode differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward_fn=None):
        self.data = _asarray(data)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad = None
        self.name = name
        self._parents = tuple(_parents)
        self._backward_fn = _backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        """Return the underlying array (no copy); treat as read-only."""
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(node) into ``grad`` of every requires_grad node.

        ``self`` must be a scalar (size 1).  Gradients accumulate additively;
        call :meth:`zero_grad` on leaves between passes if accumulation is not
        wanted.
        """
        if self.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        local = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = local.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward_fn is None:
                continue
            for p, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                acc = local.get(id(p))
                local[id(p)] = pg if acc is None else acc + pg

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division not supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise suite --------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out_data, _parents=(a, b), _backward_fn=bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return Tensor(out_data, _parents=(a, b), _backward_fn=bwd)


def mul(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scale(a, float(b))
    if not isinstance(a, Tensor) and np.isscalar(a):
        return scale(b, float(a))
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor(out_data, _parents=(a, b), _backward_fn=bwd)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)

    def bwd(g):
        return (g * c,)

    return Tensor(a.data * c, _parents=(a,), _backward_fn=bwd)


def sqrt(a):
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        return (g * (0.5 / out_data),)

    return Tensor(out_data, _parents=(a,), _backward_fn=bwd)


def gelu(a):
    """Gaussian error linear unit, exact erf form."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_data = x * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return Tensor(out_data, _parents=(a,), _backward_fn=bwd)


def getitem(a, idx):
    a = as_tensor(a)
    out_data = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return Tensor(out_data, _parents=(a,), _backward_fn=bwd)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return Tensor(np.ascontiguousarray(a.data.transpose(axes)), _parents=(a,), _backward_fn=bwd)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape

    def bwd(g):
        return (g.reshape(old),)

    return Tensor(a.data.reshape(shape), _parents=(a,), _backward_fn=bwd)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(tensors))
        )

    return Tensor(out_data, _parents=tuple(tensors), _backward_fn=bwd)


def split(a, sections, axis=0):
    """Split into ``sections`` equal parts along ``axis``; inverse of concat."""
    a = as_tensor(a)
    n = a.data.shape[axis]
    if n % sections:
        raise DimensionError(f"cannot split axis of extent {n} into {sections} equal parts")
    step = n // sections
    outs = []
    for i in range(sections):
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(i * step, (i + 1) * step)
        sl = tuple(sl)

        def bwd(g, sl=sl):
            ga = np.zeros_like(a.data)
            ga[sl] = g
            return (ga,)

        outs.append(Tensor(np.ascontiguousarray(a.data[sl]), _parents=(a,), _backward_fn=bwd))
    return outs


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor(out_data, _parents=(a,), _backward_fn=bwd)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def dropout(a, p, rng, training=True):
    """Inverted dropout: kept entries scaled by 1/(1-p); identity at eval."""
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {p}")
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)

    def bwd(g):
        return (g * mask,)

    return Tensor(a.data * mask, _parents=(a,), _backward_fn=bwd)


# -- linear algebra -----------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner extents disagree: {a.shape} vs {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # Batched input times a shared 2-d matrix: fold the batch axes into
        # one GEMM (the generic path would build a huge batched gb and sum it).
        lead = a.data.shape[:-1]
        k = a.data.shape[-1]
        a2 = a.data.reshape(-1, k)
        out_data = (a2 @ b.data).reshape(lead + (b.data.shape[-1],))

        def bwd(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.data.shape)
            gb = a2.T @ g2
            return ga, gb

        return Tensor(out_data, _parents=(a, b), _backward_fn=bwd)

    out_data = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor(out_data, _parents=(a, b), _backward_fn=bwd)


class ConvPatches:
    """Precomputed im2col view of one conv input, shareable across filters."""

    __slots__ = ("kernel", "pad", "batch", "c_in", "length", "flat")

    def __init__(self, xd, kernel):
        # xd: (B, C_in, L)
        self.kernel = kernel
        self.pad = (kernel - 1) // 2
        self.batch, self.c_in, self.length = xd.shape
        xp = np.pad(xd, ((0, 0), (0, 0), (self.pad, self.pad)))
        cols = np.stack([xp[:, :, k : k + self.length] for k in range(kernel)], axis=2)
        # (C_in * kernel, B * L) so the convolution is one GEMM per filter bank
        self.flat = np.ascontiguousarray(
            cols.transpose(1, 2, 0, 3).reshape(self.c_in * kernel, self.batch * self.length)
        )


def conv1d_same(x, weight, bias, _patches=None):
    """Length-preserving 1-D convolution with centred taps and zero padding.

    ``x`` is (C_in, L) or (B, C_in, L); ``weight`` is (C_out, C_in, kernel)
    with odd kernel; ``bias`` is (C_out,).  Differentiable in all three.
    ``_patches`` lets callers share one im2col of ``x`` between several
    filter banks of the same kernel size.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or weight.ndim != 3:
        raise DimensionError(f"conv1d_same: input {x.shape}, weight {weight.shape}")
    c_out, c_in, kernel = weight.data.shape
    if kernel % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {kernel}")
    if xd.shape[1] != c_in:
        raise DimensionError(
            f"conv1d_same channel mismatch: input {x.shape} vs weight {weight.shape}"
        )
    batch, _, length = xd.shape
    patches = _patches if _patches is not None else ConvPatches(xd, kernel)
    if patches.kernel != kernel or patches.c_in != c_in:
        raise DimensionError("shared conv patches do not match the filter bank")
    pad = patches.pad
    w2 = weight.data.reshape(c_out, c_in * kernel)
    out = (w2 @ patches.flat).reshape(c_out, batch, length).transpose(1, 0, 2)
    out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def bwd(g):
        gb3 = g[None] if g.ndim == 2 else g  # always (B, C_out, L) here
        gflat = np.ascontiguousarray(gb3.transpose(1, 0, 2)).reshape(c_out, batch * length)
        gw = (gflat @ patches.flat.T).reshape(c_out, c_in, kernel)
        gbias = gb3.sum(axis=(0, 2))
        gcols = (w2.T @ gflat).reshape(c_in, kernel, batch, length)
        gxp = np.zeros((batch, c_in, length + 2 * pad))
        for k in range(kernel):
            gxp[:, :, k : k + length] += gcols[:, k].transpose(1, 0, 2)
        gx = gxp[:, :, pad : pad + length] if pad else gxp
        if squeeze:
            gx = gx[0]
        return np.ascontiguousarray(gx), gw, gbias

    return Tensor(out[0] if squeeze else out, _parents=(x, weight, bias), _backward_fn=bwd)


def pad_kernel_centered(w, target):
    """Zero-pad a (C_out, C_in, k) filter bank symmetrically to kernel ``target``."""
    w = as_tensor(w)
    k = w.shape[-1]
    if (target - k) % 2:
        raise ConfigurationError(f"cannot centre kernel {k} inside {target}")
    if target == k:
        return w
    lo = (target - k) // 2

    def bwd(g):
        return (np.ascontiguousarray(g[..., lo : lo + k]),)

    return Tensor(
        np.pad(w.data, ((0, 0), (0, 0), (lo, target - k - lo))),
        _parents=(w,),
        _backward_fn=bwd,
    )


def softmax_rows(x):
    """Numerically stable softmax along the last axis."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return Tensor(y, _parents=(x,), _backward_fn=bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.shape[-1] != gamma.data.shape[-1]:
        raise DimensionError(
            f"layer_norm: last axis {x.shape} vs gamma {gamma.shape}"
        )
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = xhat * gamma.data + beta.data

    def bwd(g):
        dxhat = g * gamma.data
        gx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        return gx, ggamma, gbeta

    return Tensor(out, _parents=(x, gamma, beta), _backward_fn=bwd)


def assert_finite(t, what="tensor"):
    if not np.all(np.isfinite(t.data if isinstance(t, Tensor) else t)):
        raise FloatingPointError(f"{what} contains NaN/Inf")
    return t
