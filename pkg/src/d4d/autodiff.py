"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery to train the small convolutional networks in this
package: elementwise arithmetic, 2-D cross-correlation, dense layers, a few
reductions, and a tape-based backward pass. Data lives in numpy arrays;
float64 is the default (finite-difference checks need it), float32 is used by
the training paths.

The conv2d forward accumulates its inner sum in row-major (channel, row,
column) order, one output lane at a time, so results are bit-identical to a
naive scalar loop over the same operands. Reductions elsewhere use numpy's
deterministic built-ins.
"""

from typing import Callable, Iterable, Sequence

import numba
import numpy as np

from .errors import ParameterError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording (for sampling/eval)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """N-dimensional float value, optionally tracked on the autodiff tape.

    ``grad`` is allocated (zeros) iff ``requires_grad`` is set; ``backward``
    accumulates into it, so repeated backward passes without ``zero_grad``
    sum their gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[], None] | None = None

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph bookkeeping ---------------------------------------------------

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        backward(self)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording the tape edge when grad mode is on."""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ops --------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    out = _make(a.data + b.data, (a, b), None)

    def bw():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.shape))

    if out.requires_grad:
        out._backward_fn = bw
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = _make(a.data - b.data, (a, b), None)

    def bw():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad, b.shape))

    if out.requires_grad:
        out._backward_fn = bw
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = _make(a.data * b.data, (a, b), None)

    def bw():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

    if out.requires_grad:
        out._backward_fn = bw
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = _make(np.where(mask, a.data, 0.0), (a,), None)

    def bw():
        if a.requires_grad:
            a._accumulate(out.grad * mask)

    if out.requires_grad:
        out._backward_fn = bw
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = _make(s, (a,), None)

    def bw():
        if a.requires_grad:
            a._accumulate(out.grad * s * (1.0 - s))

    if out.requires_grad:
        out._backward_fn = bw
    return out


def silu(a) -> Tensor:
    a = _as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = _make(a.data * s, (a,), None)

    def bw():
        if a.requires_grad:
            a._accumulate(out.grad * (s + a.data * s * (1.0 - s)))

    if out.requires_grad:
        out._backward_fn = bw
    return out


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}
_ELEMENTWISE_UNARY = {"relu": relu, "silu": silu, "sigmoid": sigmoid}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name: add/sub/mul/scale take ``b``."""
    if op_kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ParameterError(f"elementwise '{op_kind}' needs a second operand")
        return _ELEMENTWISE_BINARY[op_kind](a, b)
    if op_kind == "scale":
        if b is None or np.ndim(b) != 0:
            raise ParameterError("elementwise 'scale' needs a scalar second operand")
        return mul(a, float(b))
    if op_kind in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ParameterError(f"elementwise '{op_kind}' is unary")
        return _ELEMENTWISE_UNARY[op_kind](a)
    raise ParameterError(f"unknown elementwise op {op_kind!r}")


# -- reductions ---------------------------------------------------------------


def tensor_sum(a) -> Tensor:
    a = _as_tensor(a)
    out = _make(np.asarray(a.data.sum()), (a,), None)

    def bw():
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, out.grad))

    if out.requires_grad:
        out._backward_fn = bw
    return out


def tensor_mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    out = _make(np.asarray(a.data.mean()), (a,), None)

    def bw():
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, out.grad / n))

    if out.requires_grad:
        out._backward_fn = bw
    return out


def reduce_loss(kind: str, pred, target) -> Tensor:
    """Mean absolute (L1) or mean squared (L2) difference over all elements.

    Differentiable; the L1 subgradient at zero residual is 0.
    """
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss operands differ in shape: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    kind = kind.lower()
    if kind == "l1":
        out = _make(np.asarray(np.abs(diff).mean()), (pred, target), None)

        def bw():
            g = out.grad * np.sign(diff) / n
            if pred.requires_grad:
                pred._accumulate(g)
            if target.requires_grad:
                target._accumulate(-g)

    elif kind == "l2":
        out = _make(np.asarray((diff * diff).mean()), (pred, target), None)

        def bw():
            g = out.grad * 2.0 * diff / n
            if pred.requires_grad:
                pred._accumulate(g)
            if target.requires_grad:
                target._accumulate(-g)

    else:
        raise ParameterError(f"unknown loss kind {kind!r} (expected 'l1' or 'l2')")
    if out.requires_grad:
        out._backward_fn = bw
    return out


# -- shape ops ---------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = _make(a.data.reshape(shape), (a,), None)

    def bw():
        if a.requires_grad:
            a._accumulate(out.grad.reshape(a.shape))

    if out.requires_grad:
        out._backward_fn = bw
    return out


def concat(parts: Iterable[Tensor], axis: int = 1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), None)
    sizes = [p.shape[axis] for p in parts]

    def bw():
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(offset, offset + size)
                p._accumulate(out.grad[tuple(sl)])
            offset += size

    if out.requires_grad:
        out._backward_fn = bw
    return out


def upsample2(a) -> Tensor:
    """Nearest-neighbour 2x upsampling of the trailing two axes."""
    a = _as_tensor(a)
    if a.data.ndim != 4:
        raise ShapeError(f"upsample2 expects NCHW input, got shape {a.shape}")
    out_data = a.data.repeat(2, axis=2).repeat(2, axis=3)
    out = _make(out_data, (a,), None)
    n, c, h, w = a.shape

    def bw():
        if a.requires_grad:
            g = out.grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
            a._accumulate(g)

    if out.requires_grad:
        out._backward_fn = bw
    return out


# -- dense layer --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul expects (n,k)@(k,m), got {a.shape} @ {b.shape}")
    out = _make(a.data @ b.data, (a, b), None)

    def bw():
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    if out.requires_grad:
        out._backward_fn = bw
    return out


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight (+ bias), for 2-D activations."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# -- conv2d --------------------------------------------------------------------


@numba.njit(cache=True)
def _conv2d_kernel(xp, w, stride):  # pragma: no cover - exercised via conv2d
    n_batch, c_in, hp, wp = xp.shape
    c_out, _, kh, kw = w.shape
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1
    out = np.empty((n_batch, c_out, h_out, w_out), dtype=xp.dtype)
    acc = np.empty(w_out, dtype=xp.dtype)
    for n in range(n_batch):
        for o in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    acc[j] = 0.0
                # per-lane accumulation in (ci, u, v) row-major order
                for ci in range(c_in):
                    for u in range(kh):
                        src = xp[n, ci, i * stride + u]
                        for v in range(kw):
                            wv = w[o, ci, u, v]
                            if stride == 1:
                                for j in range(w_out):
                                    acc[j] += src[j + v] * wv
                            else:
                                for j in range(w_out):
                                    acc[j] += src[j * stride + v] * wv
                for j in range(w_out):
                    out[n, o, i, j] = acc[j]
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    """Patch matrix (N, Cin*kh*kw, H'*W') in (ci, u, v) row-major patch order."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, h_out, w_out),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return patches.reshape(n, c * kh * kw, h_out * w_out)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    x: (N, Cin, H, W); weight: (Cout, Cin, kh, kw); bias: (Cout,) or None.
    Output spatial size is floor((H + 2p - kh)/stride) + 1 (likewise width).
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if bias is not None:
        bias = _as_tensor(bias)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be (N,Cin,H,W), got {x.shape}")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d kernel must be (Cout,Cin,kh,kw), got {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, c_in_k, kh, kw = weight.shape
    if c_in_k != c_in:
        raise ShapeError(f"kernel expects {c_in_k} input channels, input has {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias must be ({c_out},), got {bias.shape}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"padding must be >= 0, got {padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")

    if padding > 0:
        xp = np.zeros((n, c_in, hp, wp), dtype=x.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = np.ascontiguousarray(x.data)
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1

    out_data = _conv2d_kernel(xp, np.ascontiguousarray(weight.data), stride)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    out = _make(out_data, (x, weight, bias) if bias is not None else (x, weight), None)

    def bw():
        go = out.grad.reshape(n, c_out, h_out * w_out)
        w_mat = weight.data.reshape(c_out, -1)
        if weight.requires_grad or x.requires_grad:
            cols = _im2col(xp, kh, kw, stride, h_out, w_out)
        if weight.requires_grad:
            gw = np.einsum("nop,nkp->ok", go, cols, optimize=True)
            weight._accumulate(gw.reshape(weight.shape))
        if x.requires_grad:
            gcols = np.einsum("ok,nop->nkp", w_mat, go, optimize=True)
            gxp = np.zeros_like(xp)
            gpatch = gcols.reshape(n, c_in, kh, kw, h_out, w_out)
            for u in range(kh):
                for v in range(kw):
                    gxp[:, :, u : u + h_out * stride : stride, v : v + w_out * stride : stride] += gpatch[
                        :, :, u, v
                    ]
            if padding > 0:
                gxp = gxp[:, :, padding : padding + h, padding : padding + w]
            x._accumulate(gxp)
        if bias is not None and bias.requires_grad:
            bias._accumulate(out.grad.sum(axis=(0, 2, 3)))

    if out.requires_grad:
        out._backward_fn = bw
    return out


# -- backward pass --------------------------------------------------------------


def backward(loss: Tensor):
    """Populate gradients of every reachable ``requires_grad`` tensor.

    ``loss`` must be a scalar. Gradients accumulate into existing buffers.
    """
    if not isinstance(loss, Tensor):
        raise ShapeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative topological order; parent order is fixed, so the traversal
    # (and therefore accumulation order) is deterministic
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn()


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central finite-difference grads.

    Per coordinate: |analytic - numeric| / max(1, |numeric|). Use float64
    inputs; eps should sit in [1e-7, 1e-3].
    """
    if not x.requires_grad:
        raise ParameterError("grad_check input must require gradients")
    x.zero_grad()
    loss = f(x)
    if loss.data.size != 1:
        raise ShapeError("grad_check target function must be scalar-valued")
    backward(loss)
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    with no_grad():
        for i in range(x.data.size):
            idx = np.unravel_index(i, x.data.shape)
            orig = x.data[idx]
            x.data[idx] = orig + eps
            f_plus = f(x).item()
            x.data[idx] = orig - eps
            f_minus = f(x).item()
            x.data[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
