"""
Dense arrays with a reverse-mode differentiation tape.

A `Tensor` wraps a float64 numpy array. Tensors created from other tensors
are recorded on the tape of their inputs; tensors without a tape are plain
immutable values. A `Tape` is single-writer: run one forward/backward pass on
it at a time and use one tape per batch element for parallel work.
"""

import logging
import os
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from app.core.errors import CheckpointError, ConfigError, ShapeError, TapeError
from app.core.util import atomic_write_bytes

logger = logging.getLogger(__name__)

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]
GradientMap = dict[str, np.ndarray]


@dataclass
class Node:
    op: str
    parents: tuple[int | None, ...]
    backward: BackwardFn | None
    shape: tuple[int, ...]
    name: str | None = None


class Tensor:
    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: "Tape | None" = None, node_id: int | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        where = f", node={self.node_id}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{where})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Ordered record of operations; parents always precede children."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[str, int] = {}
        self._bound: list["BoundParameters"] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, value: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
        parents = tuple(t.node_id if t.tape is self else None for t in inputs)
        node_id = len(self.nodes)
        self.nodes.append(Node(op, parents, backward, value.shape))
        return Tensor(value, self, node_id)

    def watch(self, value, name: str) -> Tensor:
        """Leaf tensor whose gradient `backward` reports under `name`."""
        if name in self._leaves:
            raise TapeError(f"leaf '{name}' already watched on this tape")
        data = np.array(value, dtype=DTYPE)
        node_id = len(self.nodes)
        self.nodes.append(Node("leaf", (), None, data.shape, name))
        self._leaves[name] = node_id
        return Tensor(data, self, node_id)

    def bind(self, registry: "ParameterRegistry") -> "BoundParameters":
        bound = BoundParameters(registry, self)
        self._bound.append(bound)
        return bound

    def backward(self, root: Tensor) -> GradientMap:
        if root.tape is not self:
            raise TapeError("root tensor is not recorded on this tape")
        if root.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")

        grads: dict[int, np.ndarray] = {root.node_id: np.ones(root.shape, dtype=DTYPE)}
        leaf_grads: dict[int, np.ndarray] = {}
        for node_id in range(root.node_id, -1, -1):
            grad = grads.pop(node_id, None)
            if grad is None:
                continue
            node = self.nodes[node_id]
            if node.backward is None:
                leaf_grads[node_id] = grad
                continue
            for parent, parent_grad in zip(node.parents, node.backward(grad)):
                if parent is None or parent_grad is None:
                    continue
                if parent in grads:
                    grads[parent] = grads[parent] + parent_grad
                else:
                    grads[parent] = parent_grad

        result: GradientMap = {}
        for name, node_id in self._leaves.items():
            grad = leaf_grads.get(node_id)
            result[name] = grad if grad is not None else np.zeros(self.nodes[node_id].shape, dtype=DTYPE)
        for bound in self._bound:
            for param in bound.registry.trainable():
                if param.name not in result:
                    result[param.name] = np.zeros(param.shape, dtype=DTYPE)
        return result


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is not None and t.tape is not tape:
            raise TapeError("inputs are recorded on different tapes")
        tape = t.tape
    return tape


def _emit(op: str, value: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(value)
    return tape.record(op, value, inputs, backward)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so `grad` matches `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _check_axis(op: str, a: Tensor, axis: int) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim


# Elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    return _emit("div", a.data / b.data, (a, b),
                 lambda g: (unbroadcast(g / b.data, a.shape),
                            unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def negate(a) -> Tensor:
    a = as_tensor(a)
    return _emit("negate", -a.data, (a,), lambda g: (-g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    # subgradient 0 at exactly 0
    active = a.data > 0
    return _emit("relu", np.where(active, a.data, 0.0), (a,), lambda g: (g * active,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _emit("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "exp": exp,
    "negate": negate,
    "abs": absolute,
}


def elementwise(kind: str, a, b=None) -> Tensor:
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ShapeError(f"unknown elementwise op '{kind}'") from None
    if kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ShapeError(f"{kind} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ShapeError(f"{kind} takes one operand")
    return fn(a)


def scale(a, factor: float) -> Tensor:
    return mul(a, float(factor))


# Linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _emit("matmul", np.matmul(a.data, b.data), (a, b), backward)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose needs rank >= 2, got {a.shape}")
    return _emit("transpose", np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from None
    return _emit("broadcast_to", out, (a,), lambda g: (unbroadcast(g, a.shape),))


def index(a, key) -> Tensor:
    """Basic (slice / integer) indexing."""
    a = as_tensor(a)
    parts = key if isinstance(key, tuple) else (key,)
    if any(not isinstance(k, (int, slice, type(Ellipsis), np.integer)) for k in parts):
        raise ShapeError("index accepts integers, slices and Ellipsis only; use gather_rows")
    out = a.data[key]

    def backward(g):
        grad = np.zeros(a.shape, dtype=DTYPE)
        grad[key] = g
        return (grad,)

    return _emit("index", np.array(out, dtype=DTYPE), (a,), backward)


def take(a, indices: Sequence[int], axis: int = -1) -> Tensor:
    """Select entries along `axis` (used for quaternion / pose components)."""
    a = as_tensor(a)
    axis = _check_axis("take", a, axis)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise ShapeError(f"take: index out of bounds for axis {axis} of {a.shape}")

    def backward(g):
        grad = np.zeros(a.shape, dtype=DTYPE)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (grad,)

    return _emit("take", np.take(a.data, idx, axis=axis), (a,), backward)


# Reductions and normalisation

def reduce_sum(a, axis: int, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _check_axis("sum", a, axis)

    def backward(g):
        g = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def reduce_max(a, axis: int, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _check_axis("max", a, axis)
    if a.shape[axis] == 0:
        raise ShapeError(f"max over empty axis {axis} of shape {a.shape}")
    # np.argmax returns the first maximum, which is the tie rule
    winner = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, winner, axis=axis)

    def backward(g):
        g = g if keepdims else np.expand_dims(g, axis)
        grad = np.zeros(a.shape, dtype=DTYPE)
        np.put_along_axis(grad, winner, g, axis=axis)
        return (grad,)

    return _emit("max", out if keepdims else np.squeeze(out, axis), (a,), backward)


def reduce(kind: str, a, axis: int, keepdims: bool = False) -> Tensor:
    if kind == "sum":
        return reduce_sum(a, axis, keepdims)
    if kind == "max":
        return reduce_max(a, axis, keepdims)
    raise ShapeError(f"unknown reduction '{kind}'")


def mean(a, axis: int, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _check_axis("mean", a, axis)
    return scale(reduce_sum(a, axis, keepdims), 1.0 / a.shape[axis])


def softmax(a, axis: int) -> Tensor:
    a = as_tensor(a)
    axis = _check_axis("softmax", a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", out, (a,), backward)


softmax_axis = softmax


def norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along `axis`; gradient is 0 at the zero vector."""
    a = as_tensor(a)
    axis = _check_axis("norm", a, axis)
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def backward(g):
        g = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * a.data / safe, 0.0),)

    return _emit("norm", n if keepdims else np.squeeze(n, axis), (a,), backward)


# Structure

def concat(tensors: Sequence, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    first = tensors[0]
    axis = _check_axis("concat", first, axis)
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            t.shape[d] != first.shape[d] for d in range(first.ndim) if d != axis
        ):
            raise ShapeError(f"concat on axis {axis}: shapes {first.shape} and {t.shape} are incompatible")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def gather_rows(a, indices) -> Tensor:
    """out[i...] = a[indices[i...]]; backward scatter-adds, so duplicates accumulate."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim < 1:
        raise ShapeError("gather_rows needs rank >= 1")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of bounds for {a.shape[0]} rows")

    def backward(g):
        grad = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(grad, idx, g)
        return (grad,)

    return _emit("gather_rows", a.data[idx], (a,), backward)


# Parameters

@dataclass
class Parameter:
    name: str
    tensor: Tensor
    trainable: bool = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    @property
    def size(self) -> int:
        return self.tensor.size


class ParameterRegistry:
    """Named parameters; names are unique path strings without whitespace."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value, trainable: bool = True) -> Parameter:
        if name in self._params:
            raise ConfigError(f"parameter '{name}' registered twice")
        if not name or any(c.isspace() for c in name):
            raise ConfigError(f"invalid parameter name {name!r}")
        param = Parameter(name, Tensor(np.array(value, dtype=DTYPE)), trainable)
        self._params[name] = param
        return param

    def set(self, name: str, value) -> None:
        param = self[name]
        data = np.array(value, dtype=DTYPE)
        if data.shape != param.shape:
            raise ShapeError(f"parameter '{name}': new shape {data.shape} != {param.shape}")
        param.tensor = Tensor(data)

    def __getitem__(self, name: str) -> Parameter:
        try:
            return self._params[name]
        except KeyError:
            raise ConfigError(f"unknown parameter '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def trainable(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.trainable]

    def num_trainable(self) -> int:
        return int(sum(p.size for p in self.trainable()))

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: p.shape for name, p in self._params.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: p.tensor.data for name, p in self._params.items()}

    def copy(self) -> "ParameterRegistry":
        clone = ParameterRegistry()
        for p in self:
            clone.add(p.name, p.tensor.data.copy(), p.trainable)
        return clone

    def constants(self) -> "ConstantParameters":
        return ConstantParameters(self)


class BoundParameters(Mapping[str, Tensor]):
    """Parameter view whose trainable entries are leaves on one tape."""

    def __init__(self, registry: ParameterRegistry, tape: Tape):
        self.registry = registry
        self.tape = tape
        self._cache: dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        cached = self._cache.get(name)
        if cached is not None:
            return cached
        param = self.registry[name]
        tensor = self.tape.watch(param.tensor.data, name) if param.trainable else param.tensor
        self._cache[name] = tensor
        return tensor

    def __iter__(self):
        return iter(self.registry.names())

    def __len__(self) -> int:
        return len(self.registry)


class ConstantParameters(Mapping[str, Tensor]):
    """Parameter view for inference: nothing is recorded."""

    def __init__(self, registry: ParameterRegistry):
        self.registry = registry

    def __getitem__(self, name: str) -> Tensor:
        return self.registry[name].tensor

    def __iter__(self):
        return iter(self.registry.names())

    def __len__(self) -> int:
        return len(self.registry)


def backward(tape: Tape, root: Tensor) -> GradientMap:
    return tape.backward(root)


# Checkpoint file:
#   PWCLO-PARAMS <version>\n
#   params <count>\n
#   per entry: <name> <trainable 0|1> <ndim> <dims...>\n <little-endian float64 bytes>\n
#   meta <count>\n  then <key> <value>\n lines
#   extras <count>\n  then entries in the params layout
CHECKPOINT_MAGIC = "PWCLO-PARAMS"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    registry: ParameterRegistry
    extras: dict[str, np.ndarray]
    meta: dict[str, str]


def _encode_entry(name: str, data: np.ndarray, trainable: bool) -> bytes:
    dims = " ".join(str(d) for d in data.shape)
    header = f"{name} {int(trainable)} {data.ndim}{' ' + dims if dims else ''}\n".encode()
    return header + np.ascontiguousarray(data, dtype="<f8").tobytes() + b"\n"


def encode_checkpoint(registry: ParameterRegistry, extras: Mapping[str, np.ndarray] | None = None,
                      meta: Mapping[str, str] | None = None) -> bytes:
    chunks = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n".encode(), f"params {len(registry)}\n".encode()]
    for p in registry:
        chunks.append(_encode_entry(p.name, p.tensor.data, p.trainable))
    meta = dict(meta or {})
    chunks.append(f"meta {len(meta)}\n".encode())
    for key, value in meta.items():
        if any(c.isspace() for c in key) or "\n" in str(value):
            raise CheckpointError(f"meta entry {key!r} cannot be stored")
        chunks.append(f"{key} {value}\n".encode())
    extras = dict(extras or {})
    chunks.append(f"extras {len(extras)}\n".encode())
    for name, data in extras.items():
        chunks.append(_encode_entry(name, np.asarray(data, dtype=DTYPE), True))
    return b"".join(chunks)


def save_checkpoint(path: str | os.PathLike, registry: ParameterRegistry,
                    extras: Mapping[str, np.ndarray] | None = None,
                    meta: Mapping[str, str] | None = None) -> None:
    try:
        atomic_write_bytes(path, encode_checkpoint(registry, extras, meta))
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info("checkpoint written to %s (%d parameters)", path, len(registry))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def line(self) -> list[str]:
        end = self.blob.find(b"\n", self.pos)
        if end < 0:
            raise CheckpointError("checkpoint truncated (missing line)")
        text = self.blob[self.pos:end].decode("utf-8", errors="replace")
        self.pos = end + 1
        return text.split(" ")

    def counted(self, label: str) -> int:
        parts = self.line()
        if len(parts) != 2 or parts[0] != label or not parts[1].isdigit():
            raise CheckpointError(f"checkpoint section '{label}' malformed")
        return int(parts[1])

    def entry(self) -> tuple[str, np.ndarray, bool]:
        parts = self.line()
        try:
            name, trainable, ndim = parts[0], parts[1] == "1", int(parts[2])
            shape = tuple(int(d) for d in parts[3:3 + ndim])
        except (IndexError, ValueError):
            raise CheckpointError(f"checkpoint entry header malformed: {' '.join(parts)!r}") from None
        if len(shape) != ndim:
            raise CheckpointError(f"checkpoint entry '{name}' has a bad shape")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        raw = self.blob[self.pos:self.pos + nbytes]
        if len(raw) != nbytes or self.blob[self.pos + nbytes:self.pos + nbytes + 1] != b"\n":
            raise CheckpointError(f"checkpoint entry '{name}' truncated")
        self.pos += nbytes + 1
        return name, np.frombuffer(raw, dtype="<f8").astype(DTYPE).reshape(shape), trainable


def decode_checkpoint(blob: bytes) -> Checkpoint:
    reader = _Reader(blob)
    head = reader.line()
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a parameter checkpoint")
    if head[1] != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"unsupported checkpoint version {head[1]}")
    registry = ParameterRegistry()
    for _ in range(reader.counted("params")):
        name, data, trainable = reader.entry()
        if name in registry:
            raise CheckpointError(f"checkpoint lists parameter '{name}' twice")
        try:
            registry.add(name, data, trainable)
        except ConfigError as e:
            raise CheckpointError(f"checkpoint entry rejected: {e.detail}") from None
    meta = {}
    for _ in range(reader.counted("meta")):
        parts = reader.line()
        meta[parts[0]] = " ".join(parts[1:])
    extras = {}
    for _ in range(reader.counted("extras")):
        name, data, _ = reader.entry()
        extras[name] = data
    return Checkpoint(registry, extras, meta)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(blob)
