"""Minimal dense-tensor reverse-mode automatic differentiation.

64-bit floats throughout, shapes up to rank 3, and exactly the operations the
agent needs.  Each op records a backward closure; ``backward`` walks the tape
in reverse topological order with a fixed accumulation order, so repeated
backward passes over the same graph are bitwise repeatable and gradients
accumulate until explicitly zeroed.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

MASK_NEG = -1e9  # additive mask stand-in for -inf


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"rank {arr.ndim} > 3 unsupported")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray, list[np.ndarray]], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={'yes' if self.grad is not None else 'no'})"

    # Operator sugar; every dunder defers to the module-level ops.
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _coerce(other))


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    # Record the tape only when some ancestor is trainable; .grad buffers are
    # kept on leaves (requires_grad), intermediates just route flow.
    if any(p.requires_grad or p._parents for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out axes that were broadcast so grad matches the input shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# Elementwise and linear ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data, "add")

    def backward(g, grads):
        grads[0] = _unbroadcast(g, a.data.shape)
        grads[1] = _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data, "sub")

    def backward(g, grads):
        grads[0] = _unbroadcast(g, a.data.shape)
        grads[1] = _unbroadcast(-g, b.data.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data, "mul")

    def backward(g, grads):
        grads[0] = _unbroadcast(g * b.data, a.data.shape)
        grads[1] = _unbroadcast(g * a.data, b.data.shape)

    return _make(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise ShapeError("matmul requires rank >= 1 operands")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dims disagree, {a.data.shape} @ {b.data.shape}"
        )

    def backward(g, grads):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:  # dot -> scalar
            grads[0] = g * bd
            grads[1] = g * ad
        elif ad.ndim == 1:  # (k,) @ (k,n) -> (n,)
            grads[0] = bd @ g
            grads[1] = np.outer(ad, g)
        elif bd.ndim == 1:  # (m,k) @ (k,) -> (m,)
            grads[0] = np.outer(g, bd)
            grads[1] = ad.T @ g
        else:
            grads[0] = g @ bd.T
            grads[1] = ad.T @ g

    return _make(a.data @ b.data, (a, b), backward)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)
    for t in tensors:
        if t.data.ndim != 1:
            raise ShapeError(f"concat expects vectors, got shape {t.data.shape}")
    sizes = [t.data.shape[0] for t in tensors]

    def backward(g, grads):
        off = 0
        for i, n in enumerate(sizes):
            grads[i] = g[off : off + n]
            off += n

    return _make(np.concatenate([t.data for t in tensors]), tuple(tensors), backward)


def stack0(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into a matrix (rows in argument order)."""
    tensors = tuple(tensors)  # snapshot: callers may grow their list later
    shape = tensors[0].data.shape
    for t in tensors:
        if t.data.shape != shape or t.data.ndim != 1:
            raise ShapeError("stack0 expects equal-length vectors")
    n = len(tensors)

    def backward(g, grads):
        for i in range(n):
            grads[i] = g[i]

    return _make(np.stack([t.data for t in tensors]), tensors, backward)


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g, grads):
        grads[0] = g * y * (1.0 - y)

    return _make(y, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g, grads):
        grads[0] = g * (1.0 - y * y)

    return _make(y, (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0

    def backward(g, grads):
        grads[0] = g * np.where(mask, 1.0, slope)

    return _make(np.where(mask, x.data, slope * x.data), (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g, grads):
        grads[0] = g / x.data

    return _make(np.log(x.data), (x,), backward)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]

    def backward(g, grads):
        if axis is None:
            grads[0] = np.full_like(x.data, float(g) / n)
        else:
            grads[0] = np.repeat(np.expand_dims(g / n, axis), n, axis=axis)

    return _make(x.data.mean(axis=axis), (x,), backward)


def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    def backward(g, grads):
        if axis is None:
            grads[0] = np.full_like(x.data, float(g))
        else:
            grads[0] = np.repeat(
                np.expand_dims(g, axis), x.data.shape[axis], axis=axis
            )

    return _make(x.data.sum(axis=axis), (x,), backward)


def gather(x: Tensor, ids: Sequence[int]) -> Tensor:
    if x.data.ndim != 1:
        raise ShapeError("gather expects a vector")
    idx = np.asarray(ids, dtype=np.intp)

    def backward(g, grads):
        buf = np.zeros_like(x.data)
        np.add.at(buf, idx, g)
        grads[0] = buf

    return _make(x.data[idx], (x,), backward)


def pick(x: Tensor, i: int) -> Tensor:
    """Scalar element of a vector."""
    if x.data.ndim != 1:
        raise ShapeError("pick expects a vector")

    def backward(g, grads):
        buf = np.zeros_like(x.data)
        buf[i] = float(g)
        grads[0] = buf

    return _make(x.data[i], (x,), backward)


def slice1d(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice of a vector."""
    if x.data.ndim != 1:
        raise ShapeError("slice1d expects a vector")

    def backward(g, grads):
        buf = np.zeros_like(x.data)
        buf[start:stop] = g
        grads[0] = buf

    return _make(x.data[start:stop], (x,), backward)


def row(x: Tensor, i: int) -> Tensor:
    """One row of a matrix as a vector."""
    if x.data.ndim != 2:
        raise ShapeError("row expects a matrix")

    def backward(g, grads):
        buf = np.zeros_like(x.data)
        buf[i] = g
        grads[0] = buf

    return _make(x.data[i], (x,), backward)


def vector(scalars: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a vector."""
    scalars = tuple(scalars)
    for t in scalars:
        if t.data.ndim != 0:
            raise ShapeError("vector expects scalars")
    n = len(scalars)

    def backward(g, grads):
        for i in range(n):
            grads[i] = g[i]

    return _make(
        np.array([t.data for t in scalars], dtype=np.float64),
        scalars,
        backward,
    )


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    if table.data.ndim != 2:
        raise ShapeError("embedding table must be 2-D")
    idx = np.asarray(ids, dtype=np.intp)

    def backward(g, grads):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        grads[0] = buf

    return _make(table.data[idx], (table,), backward)


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Probabilities over a vector; masked-out entries are exactly zero and
    the rest renormalize.  ``mask`` is boolean, True = allowed."""
    if x.data.ndim != 1:
        raise ShapeError("softmax expects a vector")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.data.shape:
            raise ShapeError(
                f"softmax mask shape {mask.shape} != logits shape {x.data.shape}"
            )
        if not mask.any():
            raise ShapeError("softmax mask excludes every entry")
        shifted = x.data + np.where(mask, 0.0, MASK_NEG)
    else:
        shifted = x.data
    z = shifted - shifted.max()
    e = np.exp(z)
    if mask is not None:
        e = np.where(mask, e, 0.0)  # exact zeros outside the mask
    y = e / e.sum()

    def backward(g, grads):
        grads[0] = y * (g - float(g @ y))

    return _make(y, (x,), backward)


def cross_entropy_with_logits(logits: Tensor, target: int) -> Tensor:
    """Categorical cross-entropy of one target class: logsumexp(x) - x[t]."""
    if logits.data.ndim != 1:
        raise ShapeError("cross_entropy_with_logits expects a vector")
    z = logits.data - logits.data.max()
    lse = float(np.log(np.exp(z).sum()) + logits.data.max())
    p = np.exp(logits.data - lse)

    def backward(g, grads):
        buf = p * float(g)
        buf[target] -= float(g)
        grads[0] = buf

    return _make(np.float64(lse - logits.data[target]), (logits,), backward)


def binary_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean multi-label BCE between sigmoid(logits) and 0/1 targets,
    computed from logits for numerical stability."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise ShapeError(
            f"binary_cross_entropy: targets shape {t.shape} != logits shape "
            f"{logits.data.shape}"
        )
    x = logits.data
    loss = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    n = x.size

    def backward(g, grads):
        grads[0] = float(g) * (1.0 / (1.0 + np.exp(-x)) - t) / n

    return _make(np.float64(loss.mean()), (logits,), backward)


# ---------------------------------------------------------------------------
# GRU cell


@dataclass
class GRUParams:
    Wz: Tensor
    Uz: Tensor
    bz: Tensor
    Wr: Tensor
    Ur: Tensor
    br: Tensor
    Wn: Tensor
    Un: Tensor
    bn: Tensor


def gru_cell(x: Tensor, h: Tensor, p: GRUParams) -> Tensor:
    """Standard gated update: h' = (1-z)*h + z*n.

    Fused into a single tape node; the cell runs once per token so the
    per-node overhead of composing it from primitives dominates training
    time otherwise.
    """
    xd, hd = x.data, h.data
    if xd.ndim != 1 or hd.ndim != 1:
        raise ShapeError("gru_cell expects vector inputs")
    if xd.shape[0] != p.Wz.data.shape[0] or hd.shape[0] != p.Uz.data.shape[0]:
        raise ShapeError(
            f"gru_cell: x {xd.shape} / h {hd.shape} disagree with params "
            f"{p.Wz.data.shape} / {p.Uz.data.shape}"
        )
    z = 1.0 / (1.0 + np.exp(-(xd @ p.Wz.data + hd @ p.Uz.data + p.bz.data)))
    r = 1.0 / (1.0 + np.exp(-(xd @ p.Wr.data + hd @ p.Ur.data + p.br.data)))
    hUn = hd @ p.Un.data
    n = np.tanh(xd @ p.Wn.data + r * hUn + p.bn.data)
    out = hd + z * (n - hd)

    def backward(g, grads):
        dn = g * z
        dz = g * (n - hd) * z * (1.0 - z)
        dan = dn * (1.0 - n * n)
        dr = dan * hUn
        dar = dr * r * (1.0 - r)
        dhUn = dan * r
        grads[0] = dz @ p.Wz.data.T + dar @ p.Wr.data.T + dan @ p.Wn.data.T
        grads[1] = (
            g * (1.0 - z)
            + dz @ p.Uz.data.T
            + dar @ p.Ur.data.T
            + dhUn @ p.Un.data.T
        )
        grads[2] = np.outer(xd, dz)
        grads[3] = np.outer(hd, dz)
        grads[4] = dz
        grads[5] = np.outer(xd, dar)
        grads[6] = np.outer(hd, dar)
        grads[7] = dar
        grads[8] = np.outer(xd, dan)
        grads[9] = np.outer(hd, dhUn)
        grads[10] = dan

    parents = (x, h, p.Wz, p.Uz, p.bz, p.Wr, p.Ur, p.br, p.Wn, p.Un, p.bn)
    return _make(out, parents, backward)


def gru_sequence(xs: Iterable[Tensor], h0: Tensor, p: GRUParams) -> Tensor:
    """Run the cell over a sequence; an empty sequence returns h0 unchanged."""
    h = h0
    for x in xs:
        h = gru_cell(x, h, p)
    return h


# ---------------------------------------------------------------------------
# Backward pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into .grad along the recorded tape."""
    if loss.data.ndim != 0:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")

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

    flow: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(topo):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        grads: list[np.ndarray | None] = [None] * len(node._parents)
        node._backward(g, grads)
        for parent, pg in zip(node._parents, grads):
            if pg is None or not (parent.requires_grad or parent._parents):
                continue
            pid = id(parent)
            if pid in flow:
                flow[pid] = flow[pid] + pg
            else:
                flow[pid] = pg


# ---------------------------------------------------------------------------
# Parameters, Adam, checkpoints


class ParameterSet:
    """Named trainable tensors plus Adam state, seeded deterministically."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.tensors: dict[str, Tensor] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.adam_t = 0

    def add(self, name: str, shape: tuple[int, ...], kind: str = "weight") -> Tensor:
        """kind: weight (uniform +-1/sqrt(fan_in)), bias (zeros), embedding
        (uniform +-1/sqrt(dim))."""
        if name in self.tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        if kind == "bias":
            data = np.zeros(shape)
        elif kind == "embedding":
            bound = 1.0 / np.sqrt(shape[-1])
            data = self.rng.uniform(-bound, bound, size=shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            data = self.rng.uniform(-bound, bound, size=shape)
        t = Tensor(data, requires_grad=True)
        self.tensors[name] = t
        self.adam_m[name] = np.zeros(shape)
        self.adam_v[name] = np.zeros(shape)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def gru(self, prefix: str, in_dim: int, hid_dim: int) -> GRUParams:
        return GRUParams(
            Wz=self.add(f"{prefix}.Wz", (in_dim, hid_dim)),
            Uz=self.add(f"{prefix}.Uz", (hid_dim, hid_dim)),
            bz=self.add(f"{prefix}.bz", (hid_dim,), "bias"),
            Wr=self.add(f"{prefix}.Wr", (in_dim, hid_dim)),
            Ur=self.add(f"{prefix}.Ur", (hid_dim, hid_dim)),
            br=self.add(f"{prefix}.br", (hid_dim,), "bias"),
            Wn=self.add(f"{prefix}.Wn", (in_dim, hid_dim)),
            Un=self.add(f"{prefix}.Un", (hid_dim, hid_dim)),
            bn=self.add(f"{prefix}.bn", (hid_dim,), "bias"),
        )

    def gru_params(self, prefix: str) -> GRUParams:
        return GRUParams(
            **{f: self.tensors[f"{prefix}.{f}"] for f in
               ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wn", "Un", "bn")}
        )

    def grad_norm(self) -> float:
        total = 0.0
        for name in self.names():
            g = self.tensors[name].grad
            if g is not None:
                total += float((g * g).sum())
        return float(np.sqrt(total))


def adam_step(
    params: ParameterSet,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    grad_clip: float | None = None,
) -> float:
    """One bias-corrected Adam update over all parameters with gradients.
    Returns the pre-clip gradient norm."""
    b1, b2 = betas
    norm = params.grad_norm()
    scale = 1.0
    if grad_clip is not None and norm > grad_clip and norm > 0.0:
        scale = grad_clip / norm
    params.adam_t += 1
    t = params.adam_t
    for name in params.names():
        tensor = params.tensors[name]
        if tensor.grad is None:
            continue
        g = tensor.grad * scale
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return norm


CHECKPOINT_MAGIC = b"KGCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: ParameterSet, path) -> None:
    """Versioned binary: name table, shapes, little-endian float64 payloads."""
    body = bytearray()
    names = params.names()
    body += struct.pack("<I", len(names))
    for name in names:
        raw = name.encode("utf-8")
        data = params.tensors[name].data
        body += struct.pack("<H", len(raw)) + raw
        body += struct.pack("<B", data.ndim)
        for dim in data.shape:
            body += struct.pack("<I", dim)
        body += data.astype("<f8").tobytes()
    blob = CHECKPOINT_MAGIC + struct.pack("<H", CHECKPOINT_VERSION) + bytes(body)
    blob += struct.pack("<I", zlib.crc32(blob))
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path, seed: int = 0) -> ParameterSet:
    """Exact round trip of parameter values; Adam state starts fresh."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != zlib.crc32(blob[:-4]):
        raise CheckpointError("checkpoint checksum mismatch")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    params = ParameterSet(seed)
    off = 6
    try:
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = []
            for _ in range(ndim):
                (dim,) = struct.unpack_from("<I", blob, off)
                off += 4
                shape.append(dim)
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape)
            off += size * 8
            t = Tensor(data.astype(np.float64), requires_grad=True)
            params.tensors[name] = t
            params.adam_m[name] = np.zeros(t.data.shape)
            params.adam_v[name] = np.zeros(t.data.shape)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if off != len(blob) - 4:
        raise CheckpointError("checkpoint has trailing bytes")
    return params
