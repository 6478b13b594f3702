"""Dense-tensor engine with tape-based reverse-mode automatic differentiation.

Small by design: only the primitives the fixed conv/GRU architectures need,
float32 by default (float64 is available for numerical test oracles), and a
fixed summation order so identical inputs always produce bit-identical
outputs. Convolutions lower to im2col GEMMs; the transposed convolution is
computed by zero-insertion followed by a stride-1 convolution, which also
serves as the gradient path of `conv2d` (and vice versa).

A `Tape` records primitive applications while active (thread-local, one tape
per thread). With no tape active, ops run as plain forward numpy code.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DimensionError

DEFAULT_DTYPE = np.float32
LOG_FLOOR = 1e-12


class Tensor:
    """A dense array plus gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        # keep 0-d scalars 0-d: ascontiguousarray would promote them to (1,)
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, object]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _record(out: Tensor, backward_fn) -> None:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append((out, backward_fn))


def _tracked(*inputs: Tensor) -> bool:
    return _active_tape() is not None and any(t.requires_grad for t in inputs)


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate dLoss to every tracked tensor recorded on `tape`.

    `loss` must be scalar. A tape supports exactly one backward pass per
    forward recording; re-running without a fresh forward is rejected.
    """
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise ContractViolation("tape already consumed by a previous backward pass")
    tape.consumed = True
    loss._accumulate(np.ones_like(loss.data))
    for out, fn in reversed(tape.nodes):
        if out.grad is None:
            continue
        fn(out.grad)
        if not isinstance(out, Tensor) or out.requires_grad:
            # free intermediate grad storage early; leaves keep theirs
            pass
    tape.nodes.clear()


# ---------------------------------------------------------------------------
# broadcasting helpers


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Undo numpy broadcasting: reduce `g` back to `shape`."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(a, b, fwd, bwd_a, bwd_b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(fwd(a.data, b.data), requires_grad=_tracked(a, b))

    def back(g):
        if a.requires_grad:
            a._accumulate(_sum_to_shape(bwd_a(g, a.data, b.data), a.data.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(bwd_b(g, a.data, b.data), b.data.shape))

    _record(out, back)
    return out


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, requires_grad=_tracked(a))
    _record(out, lambda g: a._accumulate(-g) if a.requires_grad else None)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product (N,K) @ (K,M)."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner axis mismatch: {a.shape[1]} vs {b.shape[0]}")
    out = Tensor(a.data @ b.data, requires_grad=_tracked(a, b))

    def back(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    _record(out, back)
    return out


def _unary(a: Tensor, fwd, bwd) -> Tensor:
    out = Tensor(fwd(a.data), requires_grad=_tracked(a))

    def back(g):
        if a.requires_grad:
            a._accumulate(bwd(g, a.data, out.data))

    _record(out, back)
    return out


def relu(a: Tensor) -> Tensor:
    return _unary(a, lambda x: np.maximum(x, 0), lambda g, x, y: g * (x > 0))


def sigmoid(a: Tensor) -> Tensor:
    return _unary(a, lambda x: 1.0 / (1.0 + np.exp(-x)), lambda g, x, y: g * y * (1.0 - y))


def tanh(a: Tensor) -> Tensor:
    return _unary(a, np.tanh, lambda g, x, y: g * (1.0 - y * y))


def exp(a: Tensor) -> Tensor:
    return _unary(a, np.exp, lambda g, x, y: g * y)


def log(a: Tensor) -> Tensor:
    """Natural log with the package-wide 1e-12 floor."""
    return _unary(a, lambda x: np.log(np.maximum(x, LOG_FLOOR)),
                  lambda g, x, y: g / np.maximum(x, LOG_FLOOR))


def sqrt(a: Tensor) -> Tensor:
    return _unary(a, lambda x: np.sqrt(np.maximum(x, LOG_FLOOR)),
                  lambda g, x, y: g * 0.5 / np.maximum(y, LOG_FLOOR))


def absolute(a: Tensor) -> Tensor:
    return _unary(a, np.abs, lambda g, x, y: g * np.sign(x))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    return _unary(a, lambda x: np.clip(x, lo, hi),
                  lambda g, x, y: g * ((x >= lo) & (x <= hi)))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to `a`."""
    return _binary(a, b, np.minimum,
                   lambda g, x, y: g * (x <= y),
                   lambda g, x, y: g * (x > y))


def softmax(a: Tensor) -> Tensor:
    """Row-stable softmax along the last axis."""
    x = a.data
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, requires_grad=_tracked(a))

    def back(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            a._accumulate(y * (g - dot))

    _record(out, back)
    return out


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    out = Tensor(y, requires_grad=_tracked(a))

    def back(g):
        if a.requires_grad:
            sm = np.exp(y)
            a._accumulate(g - sm * g.sum(axis=-1, keepdims=True))

    _record(out, back)
    return out


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), requires_grad=_tracked(a))

    def back(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, tuple(ax % a.data.ndim for ax in axes))
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    _record(out, back)
    return out


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), requires_grad=_tracked(a))
    _record(out, lambda g: a._accumulate(g.reshape(a.data.shape)) if a.requires_grad else None)
    return out


def concat(parts: list[Tensor], axis: int) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis),
                 requires_grad=_active_tape() is not None and any(p.requires_grad for p in parts))
    sizes = [p.shape[axis] for p in parts]

    def back(g):
        offs = np.cumsum([0] + sizes)
        for p, s0, s1 in zip(parts, offs[:-1], offs[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(s0, s1)
                p._accumulate(g[tuple(idx)])

    _record(out, back)
    return out


def stack(parts: list[Tensor], axis: int) -> Tensor:
    out = Tensor(np.stack([p.data for p in parts], axis=axis),
                 requires_grad=_active_tape() is not None and any(p.requires_grad for p in parts))

    def back(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p._accumulate(np.take(g, i, axis=axis))

    _record(out, back)
    return out


def take(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along `axis` (scalar index)."""
    out = Tensor(np.take(a.data, index, axis=axis), requires_grad=_tracked(a))

    def back(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            idx = [slice(None)] * a.data.ndim
            idx[axis] = index
            a.grad[tuple(idx)] += g

    _record(out, back)
    return out


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry per row: (B,K) gathered with idx (B,) -> (B,)."""
    if a.data.ndim != 2:
        raise DimensionError(f"gather_rows expects a 2-D tensor, got {a.shape}")
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, idx], requires_grad=_tracked(a))

    def back(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, (rows, idx), g)

    _record(out, back)
    return out


# ---------------------------------------------------------------------------
# convolution primitives


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad):
    """(N,C,H,W) -> (N, C*kh*kw, Ho*Wo) patch matrix."""
    n, c, h, w = x.shape
    ph, pw = pad if isinstance(pad, tuple) else (pad, pad)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    hp, wp = h + 2 * ph, w + 2 * pw
    if hp < kh or wp < kw:
        raise DimensionError(f"spatial dims {hp}x{wp} smaller than kernel {kh}x{kw}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    v = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    v = v[:, :, ::stride, ::stride]  # (N,C,Ho,Wo,kh,kw)
    cols = np.ascontiguousarray(v.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)
    return cols, ho, wo


def _conv_core(x: np.ndarray, w: np.ndarray, stride: int, pad):
    """Plain forward conv; returns (y, cols) with cols saved for the grads."""
    co, ci, kh, kw = w.shape
    if x.shape[1] != ci:
        raise DimensionError(f"input channel axis {x.shape[1]} does not match weight's C_in={ci}")
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    y = np.matmul(w.reshape(co, ci * kh * kw), cols)  # (N,Co,Ho*Wo)
    return y.reshape(x.shape[0], co, ho, wo), cols


def _zero_insert(x: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return x
    n, c, h, w = x.shape
    z = np.zeros((n, c, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=x.dtype)
    z[:, :, ::stride, ::stride] = x
    return z


def _convt_core(x: np.ndarray, w: np.ndarray, stride: int, pad: int):
    """Transposed conv forward: zero-insert then stride-1 conv with the
    spatially-flipped, channel-swapped kernel. w is (C_in, C_out, kh, kw)."""
    ci, co, kh, kw = w.shape
    if x.shape[1] != ci:
        raise DimensionError(f"input channel axis {x.shape[1]} does not match weight's C_in={ci}")
    if pad > kh - 1 or pad > kw - 1:
        raise DimensionError(f"transposed conv padding {pad} exceeds kernel-1")
    z = _zero_insert(x, stride)
    wc = w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]  # (Co,Ci,kh,kw)
    y, cols = _conv_core(z, np.ascontiguousarray(wc), 1, (kh - 1 - pad, kw - 1 - pad))
    return y, cols


def _fit_spatial(g: np.ndarray, h: int, w: int) -> np.ndarray:
    """Pad (with zeros) or crop trailing rows/cols so g is (..., h, w)."""
    gh, gw = g.shape[-2], g.shape[-1]
    if gh == h and gw == w:
        return g
    out = np.zeros(g.shape[:-2] + (h, w), dtype=g.dtype)
    out[..., :min(gh, h), :min(gw, w)] = g[..., :min(gh, h), :min(gw, w)]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation). x: (C,H,W) or (N,C,H,W),
    w: (C_out, C_in, kh, kw), b: (C_out,) or None."""
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input/weight, got {x.shape} and {w.shape}")
    if stride < 1:
        raise ContractViolation(f"stride must be >= 1, got {stride}")
    y, cols = _conv_core(xd, w.data, stride, padding)
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise DimensionError(f"bias axis {b.data.shape} does not match C_out={w.data.shape[0]}")
        y = y + b.data[None, :, None, None]
    out = Tensor(y[0] if single else y,
                 requires_grad=_tracked(x, w) or (b is not None and _tracked(b)))
    n, ci, h, wid = xd.shape
    co = w.data.shape[0]

    def back(g):
        gd = g[None] if single else g
        g2 = gd.reshape(n, co, -1)
        if w.requires_grad:
            dw = np.einsum("nol,nkl->ok", g2, cols, optimize=True)
            w._accumulate(dw.reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            dx, _ = _convt_core(gd, w.data, stride, padding)
            x._accumulate(_fit_spatial(dx, h, wid)[0] if single else _fit_spatial(dx, h, wid))

    _record(out, back)
    return out


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 2-D convolution. x: (C,H,W) or (N,C,H,W),
    w: (C_in, C_out, kh, kw); output spatial size (H-1)*stride - 2*pad + kh."""
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d_transpose expects 4-D input/weight, got {x.shape} and {w.shape}")
    if stride < 1:
        raise ContractViolation(f"stride must be >= 1, got {stride}")
    y, cols = _convt_core(xd, w.data, stride, padding)
    co = w.data.shape[1]
    if b is not None:
        if b.data.shape != (co,):
            raise DimensionError(f"bias axis {b.data.shape} does not match C_out={co}")
        y = y + b.data[None, :, None, None]
    out = Tensor(y[0] if single else y,
                 requires_grad=_tracked(x, w) or (b is not None and _tracked(b)))
    n, ci, h, wid = xd.shape
    kh, kw = w.data.shape[2], w.data.shape[3]

    def back(g):
        gd = g[None] if single else g
        if w.requires_grad:
            # grads of the flipped/swapped kernel used by the forward conv,
            # mapped back to the (C_in, C_out, kh, kw) layout
            g2 = gd.reshape(n, co, -1)
            dwc = np.einsum("nol,nkl->ok", g2, cols, optimize=True).reshape(co, ci, kh, kw)
            w._accumulate(np.ascontiguousarray(dwc.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]))
        if b is not None and b.requires_grad:
            b._accumulate(gd.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            # adjoint of a transposed conv is a conv with the same array,
            # its (C_in, C_out) layout already matching conv's (C_out, C_in)
            dx, _ = _conv_core(gd, w.data, stride, padding)
            x._accumulate(dx[0] if single else dx)

    _record(out, back)
    return out


# ---------------------------------------------------------------------------
# GRU cell


@dataclass
class GruParams:
    """Weights for one GRU cell; x projections are (d_in, d_h), hidden
    projections (d_h, d_h), biases (d_h,)."""
    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wn: Tensor
    un: Tensor
    bn: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {k: getattr(self, k) for k in ("wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn")}


def gru_cell(x: Tensor, h: Tensor, p: GruParams) -> Tensor:
    """One GRU step: z,r = sigmoid gates, n = tanh candidate,
    h' = (1-z)*n + z*h.  Accepts (d,) or (N,d) inputs."""
    single = x.data.ndim == 1
    xd = x.data[None] if single else x.data
    hd = h.data[None] if single else h.data
    d_in, d_h = p.wz.shape
    if xd.shape[1] != d_in:
        raise DimensionError(f"gru input axis {xd.shape[1]} does not match d_in={d_in}")
    if hd.shape[1] != d_h:
        raise DimensionError(f"gru hidden axis {hd.shape[1]} does not match d_h={d_h}")

    az = xd @ p.wz.data + hd @ p.uz.data + p.bz.data
    ar = xd @ p.wr.data + hd @ p.ur.data + p.br.data
    z = 1.0 / (1.0 + np.exp(-az))
    r = 1.0 / (1.0 + np.exp(-ar))
    rh = r * hd
    an = xd @ p.wn.data + rh @ p.un.data + p.bn.data
    n = np.tanh(an)
    hn = (1.0 - z) * n + z * hd

    params = p.tensors().values()
    out = Tensor(hn[0] if single else hn, requires_grad=_tracked(x, h, *params))

    def back(g):
        gd = g[None] if single else g
        dn = gd * (1.0 - z)
        dz = gd * (hd - n)
        dh = gd * z
        dan = dn * (1.0 - n * n)
        drh = dan @ p.un.data.T
        dr = drh * hd
        dh += drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        if p.wn.requires_grad:
            p.wn._accumulate(xd.T @ dan)
            p.un._accumulate(rh.T @ dan)
            p.bn._accumulate(dan.sum(axis=0))
        if p.wz.requires_grad:
            p.wz._accumulate(xd.T @ daz)
            p.uz._accumulate(hd.T @ daz)
            p.bz._accumulate(daz.sum(axis=0))
        if p.wr.requires_grad:
            p.wr._accumulate(xd.T @ dar)
            p.ur._accumulate(hd.T @ dar)
            p.br._accumulate(dar.sum(axis=0))
        if x.requires_grad:
            dx = daz @ p.wz.data.T + dar @ p.wr.data.T + dan @ p.wn.data.T
            x._accumulate(dx[0] if single else dx)
        if h.requires_grad:
            dhh = dh + daz @ p.uz.data.T + dar @ p.ur.data.T
            h._accumulate(dhh[0] if single else dhh)

    _record(out, back)
    return out


# ---------------------------------------------------------------------------
# parameters and Adam


class ParamStore:
    """Named parameter map with per-parameter trainable flags.

    Frozen parameters never receive gradients and are never touched by
    `adam_step`; encoder sharing between networks is done by inserting the
    same Tensor objects under the same names.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, t: Tensor, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ContractViolation(f"duplicate parameter name {name!r}")
        t.requires_grad = trainable
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        self._trainable[name] = flag
        self._params[name].requires_grad = flag

    def freeze_all(self) -> None:
        for name in self._params:
            self.set_trainable(name, False)

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradients of the trainable parameters (contract: all present)."""
        out = {}
        for name, t in self._params.items():
            if self._trainable[name]:
                if t.grad is None:
                    raise ContractViolation(f"trainable parameter {name!r} has no gradient")
                out[name] = t.grad
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}


@dataclass
class AdamState:
    """Adam moments plus hyperparameters; created per training stage."""
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One Adam update over the trainable parameters, in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, pt in params.items():
        if not params.trainable(name):
            continue
        if name not in grads:
            raise ContractViolation(f"missing gradient for trainable parameter {name!r}")
        g = grads[name]
        if g.shape != pt.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {name!r} {pt.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(pt.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(pt.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        pt.data -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(pt.data.dtype)
