"""Dense float64 tensors with reverse-mode differentiation.

Define-by-run: ops executed inside a ``with Tape():`` block append their
backward rules to that tape in forward order, which is already a valid
topological order, so :func:`backward` is a single reverse sweep that
touches each node exactly once. Outside a tape block the same ops are
plain numpy (inference mode).

Tensors and tapes are thread-confined for the duration of one
forward/backward pass; the active-tape stack is thread-local so frozen
parameters can serve concurrent inference.
"""

import struct
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from . import kernels

CHECK_FINITE = True


class NumericError(ArithmeticError):
    """A forward op produced, or backward propagated, non-finite values."""


class CheckpointError(ValueError):
    """Parameter file is malformed or has an unsupported version."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # light arithmetic sugar; the named ops below do the real work
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
        return div(self, other)

    def __neg__(self):
        return neg(self)


_tls = threading.local()


def _tape_stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Forward-ordered record of ops for one differentiation pass."""

    def __init__(self):
        self.nodes = []  # (output tensor, backward fn, op name)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _all_finite(arr: np.ndarray) -> bool:
    # single-reduction fast path: a non-finite entry always poisons the sum;
    # confirm elementwise before claiming failure so huge-but-finite sums
    # cannot false-alarm
    if np.isfinite(arr.sum()):
        return True
    return bool(np.all(np.isfinite(arr)))


def _accum(t: Tensor, g, name: str):
    g = _unbroadcast(np.asarray(g, dtype=np.float64), t.data.shape)
    if t.grad is None:
        t.grad = np.array(g)  # owned copy: g may alias an upstream grad
    else:
        t.grad += g


def _op(name: str, data, inputs, grad_fns) -> Tensor:
    """Build the result tensor and, under an active tape, record backward.

    ``grad_fns[i]`` maps the output gradient to input i's contribution;
    ``None`` marks a non-differentiable input.
    """
    data = np.asarray(data, dtype=np.float64)
    if CHECK_FINITE and not _all_finite(data):
        raise NumericError(f"non-finite values in forward op '{name}'")
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape

        def backward_fn(g, inputs=inputs, grad_fns=grad_fns, name=name):
            for inp, gf in zip(inputs, grad_fns):
                if inp.requires_grad and gf is not None:
                    _accum(inp, gf(g), name)

        tape.nodes.append((out, backward_fn, name))
    return out


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _op("add", a.data + b.data, (a, b), (lambda g: g, lambda g: g))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _op("sub", a.data - b.data, (a, b), (lambda g: g, lambda g: -g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _op("mul", a.data * b.data, (a, b),
               (lambda g: g * b.data, lambda g: g * a.data))


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _op("div", a.data / b.data, (a, b),
               (lambda g: g / b.data, lambda g: -g * a.data / (b.data * b.data)))


def neg(a):
    a = _as_tensor(a)
    return _op("neg", -a.data, (a,), (lambda g: -g,))


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)
    return _op("exp", out_data, (a,), (lambda g: g * out_data,))


def log(a, eps: Optional[float] = None):
    """Natural log; with ``eps`` the input is clamped below at ``eps``
    (clamped entries get zero gradient)."""
    a = _as_tensor(a)
    if eps is None:
        return _op("log", np.log(a.data), (a,), (lambda g: g / a.data,))
    clamped = np.maximum(a.data, eps)
    inside = a.data > eps
    return _op("log", np.log(clamped), (a,),
               (lambda g: np.where(inside, g / clamped, 0.0),))


def sqrt(a):
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)
    return _op("sqrt", out_data, (a,), (lambda g: g / (2.0 * out_data),))


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)
    return _op("tanh", out_data, (a,), (lambda g: g * (1.0 - out_data * out_data),))


def sigmoid(a):
    a = _as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    return _op("sigmoid", out_data, (a,),
               (lambda g: g * out_data * (1.0 - out_data),))


def softmax(a):
    """Normalized exponentials over the last axis, max-subtracted for
    stability; rows sum to 1."""
    a = _as_tensor(a)
    z = a.data - np.max(a.data, axis=-1, keepdims=True)
    ez = np.exp(z)
    out_data = ez / np.sum(ez, axis=-1, keepdims=True)

    def grad(g):
        dot = np.sum(g * out_data, axis=-1, keepdims=True)
        return out_data * (g - dot)

    return _op("softmax", out_data, (a,), (grad,))


def sum_all(a):
    a = _as_tensor(a)
    return _op("sum", np.sum(a.data), (a,),
               (lambda g: np.broadcast_to(g, a.data.shape),))


def mean_all(a):
    a = _as_tensor(a)
    n = a.data.size
    return _op("mean", np.sum(a.data) / n, (a,),
               (lambda g: np.broadcast_to(g / n, a.data.shape),))


def sum_last(a):
    a = _as_tensor(a)
    return _op("sum_last", np.sum(a.data, axis=-1), (a,),
               (lambda g: np.broadcast_to(g[..., None], a.data.shape),))


# ---------------------------------------------------------------------------
# structural ops


def affine(x, weight, bias):
    """``weight @ x + bias`` for a vector, or row-wise for a (B, k) batch."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    w, b = weight.data, bias.data
    if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
        raise ValueError(f"affine: bad parameter shapes {w.shape}, {b.shape}")
    if x.ndim == 1:
        if x.data.shape[0] != w.shape[1]:
            raise ValueError(f"affine: input {x.data.shape} vs weight {w.shape}")
        data = w @ x.data + b
        grads = (
            lambda g: w.T @ g,
            lambda g: np.outer(g, x.data),
            lambda g: g,
        )
    elif x.ndim == 2:
        if x.data.shape[1] != w.shape[1]:
            raise ValueError(f"affine: input {x.data.shape} vs weight {w.shape}")
        data = x.data @ w.T + b
        grads = (
            lambda g: g @ w,
            lambda g: g.T @ x.data,
            lambda g: g.sum(axis=0),
        )
    else:
        raise ValueError("affine input must be 1-D or 2-D")
    return _op("affine", data, (x, weight, bias), grads)


def concat(parts):
    """Concatenate along the last axis; gradient splits back."""
    if not parts:
        raise ValueError("concat of an empty list")
    parts = [_as_tensor(p) for p in parts]
    widths = [p.data.shape[-1] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=-1)
    offsets = np.cumsum([0] + widths)

    def make_grad(i):
        lo, hi = offsets[i], offsets[i + 1]
        return lambda g: g[..., lo:hi]

    return _op("concat", data, tuple(parts),
               tuple(make_grad(i) for i in range(len(parts))))


def split4(x):
    """Split the last axis into four equal chunks (gate order i, f, c, o)."""
    x = _as_tensor(x)
    n = x.data.shape[-1]
    if n % 4 != 0:
        raise ValueError(f"split4: last axis {n} not divisible by 4")
    m = n // 4
    outs = []
    for k in range(4):
        lo, hi = k * m, (k + 1) * m

        def grad(g, lo=lo, hi=hi):
            z = np.zeros_like(x.data)
            z[..., lo:hi] = g
            return z

        outs.append(_op("split4", x.data[..., lo:hi], (x,), (grad,)))
    return tuple(outs)


def take_rows(x, idx):
    """Gather rows by index; gradient scatter-adds back."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)

    def grad(g):
        z = np.zeros_like(x.data)
        np.add.at(z, idx, g)
        return z

    return _op("take_rows", x.data[idx], (x,), (grad,))


def slice_last(x, lo: int, hi: int):
    x = _as_tensor(x)

    def grad(g):
        z = np.zeros_like(x.data)
        z[..., lo:hi] = g
        return z

    return _op("slice_last", x.data[..., lo:hi], (x,), (grad,))


def _cosine_parts(a, b, eps):
    dot = np.sum(a * b, axis=-1)
    na = np.sqrt(np.sum(a * a, axis=-1))
    nb = np.sqrt(np.sum(b * b, axis=-1))
    denom = (na + eps) * (nb + eps)
    return dot, na, nb, denom


def cosine_similarity(u, v, eps: float = 1e-12):
    """Cosine similarity of two vectors, in [-1, 1]; norms are padded by
    ``eps`` so zero vectors are safe (they contribute zero similarity)."""
    u, v = _as_tensor(u), _as_tensor(v)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ValueError("cosine_similarity expects equal-length vectors")
    dot, nu, nv, denom = _cosine_parts(u.data, v.data, eps)
    s = dot / denom
    inv_u = 1.0 / (nu * (nu + eps)) if nu > 0 else 0.0
    inv_v = 1.0 / (nv * (nv + eps)) if nv > 0 else 0.0
    return _op(
        "cosine_similarity", s, (u, v),
        (
            lambda g: g * (v.data / denom - s * u.data * inv_u),
            lambda g: g * (u.data / denom - s * v.data * inv_v),
        ),
    )


def rows_cosine(a, b, eps: float = 1e-12):
    """Row-wise cosine similarity of two (N, k) matrices -> (N,)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError("rows_cosine expects matching (N, k) matrices")
    dot, na, nb, denom = _cosine_parts(a.data, b.data, eps)
    s = dot / denom
    inv_a = np.where(na > 0, 1.0 / (na * (na + eps)), 0.0)
    inv_b = np.where(nb > 0, 1.0 / (nb * (nb + eps)), 0.0)
    return _op(
        "rows_cosine", s, (a, b),
        (
            lambda g: (g / denom)[:, None] * b.data
            - (g * s * inv_a)[:, None] * a.data,
            lambda g: (g / denom)[:, None] * a.data
            - (g * s * inv_b)[:, None] * b.data,
        ),
    )


# ---------------------------------------------------------------------------
# backward sweep


def backward(tape: Tape, loss: Tensor):
    """Accumulate d(loss)/d(tensor) for every requires_grad tensor on the
    tape. The tape's forward order is its topological order, so one
    reverse sweep suffices."""
    if loss.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    if loss._tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    loss.grad = np.ones((), dtype=np.float64)
    for out, backward_fn, _name in reversed(tape.nodes):
        if out.grad is not None:
            backward_fn(out.grad)


# ---------------------------------------------------------------------------
# parameter set + Adam


class ParamSet:
    """Named trainable tensors plus Adam moment state.

    Once training touches the set, every parameter (and its gradient and
    Adam moments) is re-homed as a view into one contiguous buffer so an
    optimizer step is a single fused kernel call.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._flat = None  # (data_buf, grad_buf, m_buf, v_buf, slices)
        self.step_count = 0

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        self._flat = None
        return t

    def _ensure_flat(self):
        if self._flat is not None:
            return self._flat
        total = sum(t.size for t in self._params.values())
        data_buf = np.empty(total)
        grad_buf = np.zeros(total)
        m_buf = np.zeros(total)
        v_buf = np.zeros(total)
        slices = {}
        pos = 0
        for name, t in self._params.items():
            end = pos + t.size
            data_buf[pos:end] = t.data.reshape(-1)
            t.data = data_buf[pos:end].reshape(t.data.shape)
            slices[name] = (pos, end)
            pos = end
        self._flat = (data_buf, grad_buf, m_buf, v_buf, slices)
        return self._flat

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        data_buf, grad_buf, _, _, slices = self._ensure_flat()
        grad_buf[:] = 0.0
        for name, t in self._params.items():
            lo, hi = slices[name]
            t.grad = grad_buf[lo:hi].reshape(t.data.shape)

    # -- serialization: magic 'INTM', u32 LE version, u32 LE entry count,
    #    then per entry name length/name, rank, extents (u32 LE), f64 LE values

    MAGIC = b"INTM"
    FORMAT_VERSION = 1

    def to_bytes(self) -> bytes:
        chunks = [self.MAGIC, struct.pack("<II", self.FORMAT_VERSION, len(self._params))]
        for name in sorted(self._params):
            data = self._params[name].data
            enc = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(enc)))
            chunks.append(enc)
            chunks.append(struct.pack("<I", data.ndim))
            chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
            chunks.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple:
        """Parse a serialized set; returns (ParamSet, bytes consumed)."""
        def take(n):
            nonlocal offset
            if offset + n > len(buf):
                raise CheckpointError("truncated parameter data")
            piece = buf[offset:offset + n]
            offset += n
            return piece

        start = offset
        if take(4) != cls.MAGIC:
            raise CheckpointError("bad magic bytes (not a parameter file)")
        version, count = struct.unpack("<II", take(8))
        if version != cls.FORMAT_VERSION:
            raise CheckpointError(f"unsupported format version {version}")
        ps = cls()
        for _ in range(count):
            (name_len,) = struct.unpack("<I", take(4))
            name = take(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", take(4))
            extents = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
            n_vals = int(np.prod(extents)) if extents else 1
            values = np.frombuffer(take(8 * n_vals), dtype="<f8").reshape(extents)
            ps.add(name, values)
        return ps, offset - start

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParamSet":
        with open(path, "rb") as fh:
            buf = fh.read()
        ps, used = cls.from_bytes(buf)
        if used != len(buf):
            raise CheckpointError("trailing bytes after parameter data")
        return ps


def adam_step(params: ParamSet, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update over the fused parameter buffer;
    consumes and clears gradients."""
    data_buf, grad_buf, m_buf, v_buf, slices = params._ensure_flat()
    for name, t in params.items():
        if t.grad is None:
            raise ValueError(f"missing gradient for parameter '{name}'")
        # usually t.grad already aliases grad_buf (zero_grad hands out
        # views); copying keeps manually-assigned gradients working
        lo, hi = slices[name]
        np.copyto(grad_buf[lo:hi], t.grad.reshape(-1))
    if not _all_finite(grad_buf):
        for name, t in params.items():
            if not _all_finite(t.grad):
                raise NumericError(f"non-finite gradient in parameter '{name}'")
    params.step_count += 1
    kernels.adam_update(data_buf, grad_buf, m_buf, v_buf,
                        params.step_count, lr, beta1, beta2, eps)
    for t in params._params.values():
        t.grad = None


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradientCheckReport:
    per_param: Dict[str, float]
    tolerance: float

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"gradient check {verdict}: max rel err {self.max_rel_err:.3e}"
                f" (tolerance {self.tolerance:.1e})")


def gradient_check(closure: Callable[[], Tensor], params: ParamSet,
                   tolerance: float = 1e-4, step: float = 1e-5) -> GradientCheckReport:
    """Compare tape gradients of ``closure()`` against central differences.

    ``closure`` must be a deterministic scalar-loss function of the current
    parameter values. Relative error per element is
    ``|fd - an| / max(|fd|, |an|, 1e-3)``; the floor keeps rounding noise on
    near-zero gradients from dominating the report.
    """
    params.zero_grad()
    with Tape() as tape:
        loss = closure()
    backward(tape, loss)
    analytic = {name: np.array(t.grad) for name, t in params.items()}

    report: Dict[str, float] = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        an = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(closure().data)
            flat[i] = orig - step
            f_minus = float(closure().data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            rel = abs(fd - an[i]) / max(abs(fd), abs(an[i]), 1e-3)
            if rel > worst:
                worst = rel
        report[name] = worst
    return GradientCheckReport(per_param=report, tolerance=tolerance)
