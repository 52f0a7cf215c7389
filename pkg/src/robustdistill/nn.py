"""Model descriptions, initialization, forward passes and checkpoint files."""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    apply_primitive,
    avgpool2d,
    conv2d,
    get_default_dtype,
    relu,
    softmax_t,
)


class ShapeError(DimensionError):
    """Consecutive layers of a ModelSpec do not compose."""


class CheckpointFormatError(ValueError):
    pass


class CheckpointIntegrityError(ValueError):
    pass


class SpecMismatchError(ValueError):
    pass


# ---------------------------------------------------------------------------
# layer descriptors

@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int | None = None  # None -> kernel // 2

    @property
    def pad(self) -> int:
        return self.kernel // 2 if self.padding is None else self.padding


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class AvgPool:
    size: int = 2


@dataclass(frozen=True)
class Residual:
    """Two 3x3 same-padded convs with a relu between, identity skip, relu after."""

    channels: int


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Dense, Conv, ReLU, AvgPool, Residual, Flatten]
_LAYER_TYPES = {cls.__name__.lower(): cls for cls in (Dense, Conv, ReLU, AvgPool, Residual, Flatten)}


def _layer_to_dict(layer: Layer) -> dict:
    d = {"type": type(layer).__name__.lower()}
    d.update(vars(layer))
    return d


def _layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    kind = d.pop("type")
    try:
        return _LAYER_TYPES[kind](**d)
    except KeyError:
        raise ValueError(f"unknown layer type {kind!r}") from None


def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    num_classes: int
    input_shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    def to_dict(self) -> dict:
        return {
            "layers": [_layer_to_dict(l) for l in self.layers],
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(tuple(_layer_from_dict(l) for l in d["layers"]), int(d["num_classes"]), tuple(d["input_shape"]))

    def canonical(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    def digest(self) -> int:
        return fnv1a_64(self.canonical())

    def output_shapes(self) -> list[tuple]:
        """Per-layer output shapes (without batch axis); raises ShapeError on a broken chain."""
        shape = self.input_shape
        shapes = []
        prev = "input"
        for i, layer in enumerate(self.layers):
            where = f"layer {i} ({type(layer).__name__}) after {prev}"
            if isinstance(layer, Dense):
                if len(shape) != 1 or shape[0] != layer.in_features:
                    raise ShapeError(f"{where}: expects ({layer.in_features},) but receives {shape}")
                shape = (layer.out_features,)
            elif isinstance(layer, Conv):
                if len(shape) != 3 or shape[0] != layer.in_channels:
                    raise ShapeError(f"{where}: expects {layer.in_channels} channels but receives {shape}")
                if layer.stride not in (1, 2):
                    raise ShapeError(f"{where}: stride must be 1 or 2")
                h, w = (s + 2 * layer.pad - layer.kernel for s in shape[1:])
                if h < 0 or w < 0:
                    raise ShapeError(f"{where}: kernel larger than input {shape}")
                shape = (layer.out_channels, h // layer.stride + 1, w // layer.stride + 1)
            elif isinstance(layer, Residual):
                if len(shape) != 3 or shape[0] != layer.channels:
                    raise ShapeError(f"{where}: expects {layer.channels} channels but receives {shape}")
            elif isinstance(layer, AvgPool):
                if len(shape) != 3 or shape[1] % layer.size or shape[2] % layer.size:
                    raise ShapeError(f"{where}: pool {layer.size} does not divide {shape}")
                shape = (shape[0], shape[1] // layer.size, shape[2] // layer.size)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            shapes.append(shape)
            prev = f"layer {i} ({type(layer).__name__})"
        if shape != (self.num_classes,):
            raise ShapeError(f"final output {shape} does not match num_classes={self.num_classes}")
        return shapes


# ---------------------------------------------------------------------------
# stock architectures

def mlp(input_shape, hidden, num_classes: int) -> ModelSpec:
    dims = [int(np.prod(input_shape)), *hidden]
    layers: list = [] if len(input_shape) == 1 else [Flatten()]
    for a, b in zip(dims[:-1], dims[1:]):
        layers += [Dense(a, b), ReLU()]
    layers.append(Dense(dims[-1], num_classes))
    return ModelSpec(tuple(layers), num_classes, tuple(input_shape))


def student_cnn(input_shape, num_classes: int, width: int = 8, hidden: int = 64) -> ModelSpec:
    """Four weight layers: two convs (second one strided), two dense."""
    c, h, w = input_shape
    flat = 2 * width * ((h + 1) // 2) * ((w + 1) // 2)
    return ModelSpec(
        (
            Conv(c, width, 3, 1), ReLU(),
            Conv(width, 2 * width, 3, 2), ReLU(),
            Flatten(), Dense(flat, hidden), ReLU(),
            Dense(hidden, num_classes),
        ),
        num_classes,
        tuple(input_shape),
    )


TEACHER_SIZES = {"small": (8, 1, 64), "medium": (16, 2, 128), "large": (32, 2, 256)}


def teacher_resnet(input_shape, num_classes: int, size: str = "large") -> ModelSpec:
    """Strided stem conv, residual blocks at half resolution, two dense layers."""
    width, blocks, hidden = TEACHER_SIZES[size]
    c, h, w = input_shape
    flat = width * ((h + 1) // 2) * ((w + 1) // 2)
    layers: list = [Conv(c, width, 3, 2), ReLU()]
    layers += [Residual(width) for _ in range(blocks)]
    layers += [Flatten(), Dense(flat, hidden), ReLU(), Dense(hidden, num_classes)]
    return ModelSpec(tuple(layers), num_classes, tuple(input_shape))


# ---------------------------------------------------------------------------
# parameters

@dataclass
class ParameterSet:
    spec: ModelSpec
    tensors: dict[str, Tensor]
    role: str = "student"

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name].data).tobytes())
        return h.hexdigest()

    def copy(self, role: str | None = None) -> "ParameterSet":
        return ParameterSet(
            self.spec,
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.tensors.items()},
            role or self.role,
        )

    def trainable(self, flag: bool = True) -> "ParameterSet":
        for t in self.tensors.values():
            t.requires_grad = flag
        return self

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet(
            self.spec,
            {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad) for k, v in self.tensors.items()},
            self.role,
        )


def _param_shapes(spec: ModelSpec) -> dict[str, tuple]:
    shapes = {}
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            shapes[f"{i}.weight"] = (layer.in_features, layer.out_features)
            shapes[f"{i}.bias"] = (layer.out_features,)
        elif isinstance(layer, Conv):
            shapes[f"{i}.weight"] = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
            shapes[f"{i}.bias"] = (layer.out_channels,)
        elif isinstance(layer, Residual):
            for part in ("conv1", "conv2"):
                shapes[f"{i}.{part}.weight"] = (layer.channels, layer.channels, 3, 3)
                shapes[f"{i}.{part}.bias"] = (layer.channels,)
    return shapes


def build_model(spec: ModelSpec, seed: int, role: str = "student", dtype=None) -> ParameterSet:
    """He fan-in normal weights and zero biases, deterministic in ``seed``."""
    spec.output_shapes()
    dtype = dtype or get_default_dtype()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _param_shapes(spec).items():
        if name.endswith("bias"):
            data = np.zeros(shape)
        else:
            fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
            data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        tensors[name] = Tensor(data.astype(dtype), requires_grad=role == "student")
    return ParameterSet(spec, tensors, role)


def forward(params: ParameterSet, batch) -> Tensor:
    spec = params.spec
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if tuple(x.shape[1:]) != spec.input_shape:
        raise DimensionError(f"batch shape {x.shape} does not match model input {spec.input_shape}")
    p = params.tensors
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            x = x @ p[f"{i}.weight"] + p[f"{i}.bias"]
        elif isinstance(layer, Conv):
            x = conv2d(x, p[f"{i}.weight"], layer.stride, layer.pad) + p[f"{i}.bias"].reshape(1, -1, 1, 1)
        elif isinstance(layer, ReLU):
            x = relu(x)
        elif isinstance(layer, Residual):
            h = relu(conv2d(x, p[f"{i}.conv1.weight"], 1, 1) + p[f"{i}.conv1.bias"].reshape(1, -1, 1, 1))
            h = conv2d(h, p[f"{i}.conv2.weight"], 1, 1) + p[f"{i}.conv2.bias"].reshape(1, -1, 1, 1)
            x = relu(x + h)
        elif isinstance(layer, AvgPool):
            x = avgpool2d(x, layer.size)
        elif isinstance(layer, Flatten):
            x = x.reshape(x.shape[0], -1)
    return x


def predict_probs(params: ParameterSet, batch, tau: float = 1.0) -> Tensor:
    return softmax_t(forward(params, batch), tau)


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian):
#   magic[8] version:u32 spec_digest:u64
#   spec_len:u32 spec_json  meta_len:u32 meta_json
#   n:u32 { name_len:u16 name group:u8 dtype:u8 ndim:u8 dims:u32*ndim payload }*n
#   crc32:u32 over all preceding bytes

MAGIC = b"RDISTCKP"
FORMAT_VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


@dataclass
class Checkpoint:
    parameters: ParameterSet
    epoch: int
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)
    metric_history: list[dict] = field(default_factory=list)
    selection_tag: str = "last"


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    spec = ckpt.parameters.spec
    meta = {
        "epoch": ckpt.epoch,
        "selection_tag": ckpt.selection_tag,
        "role": ckpt.parameters.role,
        "metric_history": ckpt.metric_history,
    }
    chunks = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, spec.digest())]
    for blob in (spec.canonical(), json.dumps(meta, sort_keys=True).encode()):
        chunks += [struct.pack("<I", len(blob)), blob]
    entries = [(name, 0, t.data) for name, t in ckpt.parameters.tensors.items()]
    entries += [(name, 1, buf) for name, buf in ckpt.optimizer_state.items()]
    chunks.append(struct.pack("<I", len(entries)))
    for name, group, arr in entries:
        arr = np.asarray(arr)
        code = arr.dtype.itemsize
        if code not in _DTYPES or arr.dtype.kind != "f":
            raise CheckpointFormatError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode()
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BBB", group, code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    body = b"".join(chunks)
    data = body + struct.pack("<I", zlib.crc32(body))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointIntegrityError(f"truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_spec: ModelSpec | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {data[:8]!r}")
    if len(data) < 24:
        raise CheckpointIntegrityError(f"{path}: truncated header")
    r = _Reader(data[:-4])
    r.take(8)
    version, digest = r.unpack("<IQ")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointIntegrityError(f"{path}: checksum mismatch (truncated or corrupted)")
    (n,) = r.unpack("<I")
    spec = ModelSpec.from_dict(json.loads(r.take(n)))
    if spec.digest() != digest:
        raise CheckpointIntegrityError(f"{path}: stored spec does not match its digest")
    if expected_spec is not None and expected_spec.digest() != digest:
        raise SpecMismatchError(
            f"{path}: checkpoint spec digest {digest:016x} != expected {expected_spec.digest():016x}"
        )
    (n,) = r.unpack("<I")
    meta = json.loads(r.take(n))
    (count,) = r.unpack("<I")
    tensors, buffers = {}, {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        group, code, ndim = r.unpack("<BBB")
        if code not in _DTYPES:
            raise CheckpointFormatError(f"{path}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I")
        dt = _DTYPES[code]
        arr = np.frombuffer(r.take(int(np.prod(shape)) * dt.itemsize), dtype=dt).reshape(shape)
        arr = arr.astype(dt.newbyteorder("="))
        if group == 0:
            tensors[name] = Tensor(arr, requires_grad=meta["role"] == "student", dtype=arr.dtype)
        else:
            buffers[name] = arr
    if r.pos != len(r.data):
        raise CheckpointIntegrityError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    expected = _param_shapes(spec)
    if {k: v.shape for k, v in tensors.items()} != expected:
        raise CheckpointFormatError(f"{path}: tensor shapes do not match stored spec")
    params = ParameterSet(spec, tensors, meta["role"])
    return Checkpoint(params, meta["epoch"], buffers, meta["metric_history"], meta["selection_tag"])
