"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is stored row-major in numpy arrays; image data uses the NCHW
convention. Gradients are accumulated into ``Tensor.grad`` by ``backward()``
for every tensor with ``requires_grad`` reachable from the loss. The graph is
released after one backward pass; a second pass raises ``GraphStateError``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, GraphStateError


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    """N-dimensional float64 value, optionally tracked for gradients."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self._released = False

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out._released = False
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------------

    def _accum(self, g: np.ndarray) -> None:
        # Contributions are never mutated in place afterwards, so aliasing the
        # first one is safe.
        self.grad = g if self.grad is None else self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad tensor, then
        release the graph."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._released:
            raise GraphStateError("graph already released by a previous backward call")
        if not self.requires_grad:
            return
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
            if node._released:
                raise GraphStateError("graph shares released nodes; cannot backward twice")
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            fn = node._backward
            if fn is None:
                continue
            fn(node.grad)
            node._backward = None
            node._parents = ()
            node._released = True

    # -- elementwise arithmetic ----------------------------------------------

    @staticmethod
    def _coerce(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def __add__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        data = self.data + other.data

        def bw(g, a=self, b=other):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.data.shape))

        return Tensor._from_op(data, (self, other), bw)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        data = self.data - other.data

        def bw(g, a=self, b=other):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g, b.data.shape))

        return Tensor._from_op(data, (self, other), bw)

    def __neg__(self) -> "Tensor":
        def bw(g, a=self):
            a._accum(-g)

        return Tensor._from_op(-self.data, (self,), bw)

    def __mul__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        data = self.data * other.data

        def bw(g, a=self, b=other):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._from_op(data, (self, other), bw)

    __rmul__ = __mul__

    def abs(self) -> "Tensor":
        def bw(g, a=self):
            a._accum(g * np.sign(a.data))

        return Tensor._from_op(np.abs(self.data), (self,), bw)

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def bw(g, a=self, e=out_data):
            a._accum(g * e)

        return Tensor._from_op(out_data, (self,), bw)

    def log(self) -> "Tensor":
        def bw(g, a=self):
            a._accum(g / a.data)

        return Tensor._from_op(np.log(self.data), (self,), bw)

    # -- reductions and shape ops ----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g, a=self, ax=axis, kd=keepdims):
            if ax is None:
                a._accum(np.broadcast_to(g, a.data.shape) * 1.0)
            else:
                gg = g if kd else np.expand_dims(g, ax)
                a._accum(np.broadcast_to(gg, a.data.shape) * 1.0)

        return Tensor._from_op(data, (self,), bw)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        data = self.data.mean(axis=axis, keepdims=keepdims)

        def bw(g, a=self, ax=axis, kd=keepdims, inv=1.0 / n):
            if ax is None:
                a._accum(np.full(a.data.shape, g * inv))
            else:
                gg = g if kd else np.expand_dims(g, ax)
                a._accum(np.broadcast_to(gg, a.data.shape) * inv)

        return Tensor._from_op(data, (self,), bw)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)

        def bw(g, a=self):
            a._accum(g.reshape(a.data.shape))

        return Tensor._from_op(data, (self,), bw)


def _t(x) -> Tensor:
    """Accept either a Tensor or a Param wherever layer math needs one."""
    return x.tensor if isinstance(x, Param) else x


@dataclass
class Param:
    """A named, trainable tensor. The optimizer mutates data only, never shape."""

    id: str
    tensor: Tensor

    def __post_init__(self):
        self.tensor.requires_grad = True

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


# -- layer primitives ----------------------------------------------------------


def concat(tensors, axis: int = 1) -> Tensor:
    ts = [Tensor._coerce(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]

    def bw(g, parts=tuple(ts), ax=axis, sz=tuple(sizes)):
        off = 0
        for p, s in zip(parts, sz):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(off, off + s)
                p._accum(g[tuple(idx)])
            off += s

    return Tensor._from_op(data, tuple(ts), bw)


def linear(x, w, b) -> Tensor:
    """Affine map over the trailing axis: x[..., D_in] @ w[D_out, D_in].T + b."""
    x, w, b = _t(x), _t(w), _t(b)
    if w.ndim != 2:
        raise DimensionError(f"linear weight must be 2-D [D_out, D_in], got {w.shape}")
    d_out, d_in = w.shape
    if x.shape[-1] != d_in:
        raise DimensionError(f"linear: trailing axis {x.shape[-1]} != weight D_in {d_in}")
    if b.shape != (d_out,):
        raise DimensionError(f"linear bias must be [{d_out}], got {b.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    data = (x2 @ w.data.T + b.data).reshape(*lead, d_out)

    def bw(g, xt=x, wt=w, bt=b, x2=x2):
        g2 = g.reshape(-1, w.data.shape[0])
        if xt.requires_grad:
            xt._accum((g2 @ wt.data).reshape(xt.data.shape))
        if wt.requires_grad:
            wt._accum(g2.T @ x2)
        if bt.requires_grad:
            bt._accum(g2.sum(axis=0))

    return Tensor._from_op(data, (x, w, b), bw)


def conv2d_pointwise(x, w, b) -> Tensor:
    """1x1 convolution: x[N, C_in, H, W] with w[C_out, C_in], b[C_out]."""
    x, w, b = _t(x), _t(w), _t(b)
    if x.ndim != 4:
        raise DimensionError(f"conv2d_pointwise input must be 4-D NCHW, got {x.shape}")
    if w.ndim != 2:
        raise DimensionError(f"conv2d_pointwise weight must be [C_out, C_in], got {w.shape}")
    c_out, c_in = w.shape
    if x.shape[1] != c_in:
        raise DimensionError(
            f"conv2d_pointwise: input channels {x.shape[1]} (axis 1) != weight C_in {c_in}"
        )
    if b.shape != (c_out,):
        raise DimensionError(f"conv2d_pointwise bias must be [{c_out}], got {b.shape}")
    n, _, h, wd = x.shape
    x2 = x.data.reshape(n, c_in, h * wd)
    data = (w.data @ x2).reshape(n, c_out, h, wd)
    data += b.data.reshape(1, -1, 1, 1)

    def bw(g, xt=x, wt=w, bt=b, x2=x2):
        c_out = wt.data.shape[0]
        g2 = g.reshape(g.shape[0], c_out, -1)
        if xt.requires_grad:
            xt._accum((wt.data.T @ g2).reshape(xt.data.shape))
        if wt.requires_grad:
            wt._accum(np.matmul(g2, x2.transpose(0, 2, 1)).sum(axis=0))
        if bt.requires_grad:
            bt._accum(g.sum(axis=(0, 2, 3)))

    return Tensor._from_op(data, (x, w, b), bw)


def conv2d_depthwise(x, w, b) -> Tensor:
    """Per-channel 3x3 correlation with zero padding 1; spatial dims preserved."""
    x, w, b = _t(x), _t(w), _t(b)
    if x.ndim != 4:
        raise DimensionError(f"conv2d_depthwise input must be 4-D NCHW, got {x.shape}")
    if w.ndim != 3 or w.shape[1:] != (3, 3):
        raise DimensionError(f"conv2d_depthwise kernel must be [C, 3, 3], got {w.shape}")
    n, c, h, wd = x.shape
    if w.shape[0] != c:
        raise DimensionError(
            f"conv2d_depthwise: input channels {c} (axis 1) != kernel channels {w.shape[0]}"
        )
    if b.shape != (c,):
        raise DimensionError(f"conv2d_depthwise bias must be [{c}], got {b.shape}")
    xp = np.zeros((n, c, h + 2, wd + 2))
    xp[:, :, 1:-1, 1:-1] = x.data
    data = np.empty((n, c, h, wd))
    data[...] = b.data.reshape(1, c, 1, 1)
    tmp = np.empty((n, c, h, wd))
    for u in range(3):
        for v in range(3):
            np.multiply(xp[:, :, u : u + h, v : v + wd], w.data[:, u, v].reshape(1, c, 1, 1), out=tmp)
            data += tmp

    def bw(g, xt=x, wt=w, bt=b, xp=xp, h=h, wd=wd):
        c = xp.shape[1]
        if xt.requires_grad:
            gxp = np.zeros_like(xp)
            tmp = np.empty_like(g)
            for u in range(3):
                for v in range(3):
                    np.multiply(g, wt.data[:, u, v].reshape(1, c, 1, 1), out=tmp)
                    gxp[:, :, u : u + h, v : v + wd] += tmp
            xt._accum(gxp[:, :, 1:-1, 1:-1])
        if wt.requires_grad:
            gw = np.empty((c, 3, 3))
            for u in range(3):
                for v in range(3):
                    gw[:, u, v] = np.einsum(
                        "nchw,nchw->c", g, xp[:, :, u : u + h, v : v + wd]
                    )
            wt._accum(gw)
        if bt.requires_grad:
            bt._accum(g.sum(axis=(0, 2, 3)))

    return Tensor._from_op(data, (x, w, b), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis per spatial location, then affine."""
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    if x.ndim != 4:
        raise DimensionError(f"layer_norm input must be 4-D NCHW, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm affine params must be [{c}]")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * invstd
    data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def bw(g, xt=x, gt=gamma, bt=beta, xhat=xhat, invstd=invstd, c=c):
        if gt.requires_grad:
            gt._accum((g * xhat).sum(axis=(0, 2, 3)))
        if bt.requires_grad:
            bt._accum(g.sum(axis=(0, 2, 3)))
        if xt.requires_grad:
            dxhat = g * gt.data.reshape(1, c, 1, 1)
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            xt._accum(invstd * (dxhat - m1 - xhat * m2))

    return Tensor._from_op(data, (x, gamma, beta), bw)


def simple_gate(x) -> Tensor:
    """Split channels (axis 1) in half and multiply the halves elementwise."""
    x = _t(x)
    c = x.shape[1]
    if c % 2 != 0:
        raise DimensionError(f"simple_gate needs an even channel count, got {c} (axis 1)")
    half = c // 2
    h1 = x.data[:, :half]
    h2 = x.data[:, half:]
    data = h1 * h2

    def bw(g, xt=x, h1=h1, h2=h2):
        gx = np.empty_like(xt.data)
        gx[:, : h1.shape[1]] = g * h2
        gx[:, h1.shape[1] :] = g * h1
        xt._accum(gx)

    return Tensor._from_op(data, (x,), bw)


def global_avg_pool(x) -> Tensor:
    """Spatial mean of x[N, C, H, W] -> [N, C]."""
    x = _t(x)
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool input must be 4-D NCHW, got {x.shape}")
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3))

    def bw(g, xt=x, h=h, w=w):
        xt._accum(np.broadcast_to(g[:, :, None, None], xt.data.shape) / (h * w))

    return Tensor._from_op(data, (x,), bw)


def silu(x) -> Tensor:
    """Smooth gated activation x * sigmoid(x)."""
    x = _t(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    data = x.data * s

    def bw(g, xt=x, s=s):
        xt._accum(g * (s * (1.0 + xt.data * (1.0 - s))))

    return Tensor._from_op(data, (x,), bw)


def _space_to_depth(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    a = a.reshape(n, c, h // r, r, w // r, r)
    a = a.transpose(0, 1, 3, 5, 2, 4)
    return a.reshape(n, c * r * r, h // r, w // r)


def _depth_to_space(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    a = a.reshape(n, c // (r * r), r, r, h, w)
    a = a.transpose(0, 1, 4, 2, 5, 3)
    return a.reshape(n, c // (r * r), h * r, w * r)


def pixel_unshuffle(x, r: int) -> Tensor:
    """Rearrange each r x r spatial block into r^2 channels (row-major order)."""
    x = _t(x)
    if x.ndim != 4:
        raise DimensionError(f"pixel_unshuffle input must be 4-D NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if h % r != 0 or w % r != 0:
        raise DimensionError(f"pixel_unshuffle: spatial dims ({h}, {w}) not divisible by r={r}")
    data = _space_to_depth(x.data, r)

    def bw(g, xt=x, r=r):
        xt._accum(_depth_to_space(g, r))

    return Tensor._from_op(data, (x,), bw)


def pixel_shuffle(x, r: int) -> Tensor:
    """Exact inverse of pixel_unshuffle."""
    x = _t(x)
    if x.ndim != 4:
        raise DimensionError(f"pixel_shuffle input must be 4-D NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if c % (r * r) != 0:
        raise DimensionError(f"pixel_shuffle: channels {c} (axis 1) not divisible by r^2={r * r}")
    data = _depth_to_space(x.data, r)

    def bw(g, xt=x, r=r):
        xt._accum(_space_to_depth(g, r))

    return Tensor._from_op(data, (x,), bw)
