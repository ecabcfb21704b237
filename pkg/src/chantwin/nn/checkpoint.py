"""Binary model checkpoints ("CTWM" files).

Layout (all integers little-endian)::

    b"CTWM" | u32 version | u32 ndim + u32 dims (input shape) | u32 layer count
    per layer:
        u8 kind tag | u32 kernel_count | u32 kernel_size | u32 stride | u32 output_width
        u32 array count
        per array: u8 name length | name (utf-8) | u32 ndim | u32 dims... | f64 data
"""

import io
import struct

import numpy as np

from ..errors import ParseError
from .layers import KINDS, LayerSpec
from .model import Model

MAGIC = b"CTWM"
VERSION = 1
_KIND_TAG = {k: i for i, k in enumerate(KINDS)}


def _write_array(buf, name, arr):
    raw = name.encode()
    buf.write(struct.pack("<B", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def dumps(model: Model) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    shape = model.input_shape
    buf.write(struct.pack("<I", len(shape)))
    buf.write(struct.pack(f"<{len(shape)}I", *shape))
    buf.write(struct.pack("<I", len(model.layers)))
    for layer in model.layers:
        s = layer.spec
        buf.write(struct.pack("<BIIII", _KIND_TAG[s.kind], s.kernel_count, s.kernel_size, s.stride, s.output_width))
        arrays = list(layer.params.items()) + list(layer.buffers.items())
        buf.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            _write_array(buf, name, arr)
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ParseError(f"checkpoint truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> Model:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ParseError("not a CTWM checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    (ndim,) = r.unpack("<I")
    input_shape = r.unpack(f"<{ndim}I")
    (count,) = r.unpack("<I")
    specs, arrays = [], []
    for _ in range(count):
        tag, kc, ks, stride, width = r.unpack("<BIIII")
        if tag >= len(KINDS):
            raise ParseError(f"unknown layer kind tag {tag}")
        specs.append(LayerSpec(KINDS[tag], kc, ks, stride, width))
        (n_arr,) = r.unpack("<I")
        layer_arrays = {}
        for _ in range(n_arr):
            (nlen,) = r.unpack("<B")
            name = r.take(nlen).decode()
            (adim,) = r.unpack("<I")
            shape = r.unpack(f"<{adim}I")
            size = int(np.prod(shape)) if adim else 1
            layer_arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        arrays.append(layer_arrays)
    if r.pos != len(data):
        raise ParseError("trailing bytes after checkpoint")
    model = Model(specs, input_shape, seed=None)
    for layer, layer_arrays in zip(model.layers, arrays):
        for name, arr in layer_arrays.items():
            if name in layer.params:
                target = layer.params
            elif name in layer.buffers:
                target = layer.buffers
            else:
                raise ParseError(f"unexpected array {name!r} for {layer.spec.kind} layer")
            if target[name].shape != arr.shape:
                raise ParseError(f"array {name!r} has shape {arr.shape}, expected {target[name].shape}")
            target[name] = arr.copy()
    return model


def save(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
