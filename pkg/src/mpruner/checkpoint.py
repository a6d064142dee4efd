"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MPRK"  u16 version
    u32 input_dim  u32 num_classes  u8 embed_trainable  u8 head_trainable
    u32 num_blocks, then per block:
        u8 kind  u32 in_width  u32 width  u32 inner_width  u32 tokens  u8 trainable
    u32 num_hooks, u32 hook[num_hooks]
    u32 num_tensors, then per tensor:
        u16 name_len  name (utf-8)  u8 rank  u32 dims[rank]  f32 data (row-major)
    u32 crc32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError
from .nn import Block, BlockKind, BlockSpec, Model, block_param_shapes

MAGIC = b"MPRK"
VERSION = 1
_KINDS = [BlockKind.RESIDUAL_MLP, BlockKind.ENCODER]


def save_checkpoint(model: Model) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<HIIBB", VERSION, model.input_dim, model.num_classes,
                       model.embed_trainable, model.head_trainable)
    out += struct.pack("<I", model.num_blocks)
    for b in model.blocks:
        s = b.spec
        out += struct.pack("<BIIIIB", _KINDS.index(s.kind), s.in_width, s.width,
                           s.inner_width, s.tokens, b.trainable)
    out += struct.pack(f"<I{len(model.hook_positions)}I", len(model.hook_positions), *model.hook_positions)
    params = list(model.named_parameters())
    out += struct.pack("<I", len(params))
    for name, arr in params:
        raw = name.encode()
        out += struct.pack(f"<H{len(raw)}sB", len(raw), raw, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


class _Reader:
    def __init__(self, payload: bytes):
        self.buf = memoryview(payload)
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CheckpointFormatError("checkpoint payload is truncated")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def floats(self, count: int) -> np.ndarray:
        size = 4 * count
        if self.pos + size > len(self.buf):
            raise CheckpointFormatError("checkpoint payload is truncated")
        arr = np.frombuffer(self.buf, dtype="<f4", count=count, offset=self.pos)
        self.pos += size
        return arr.astype(np.float32)


def load_checkpoint(payload: bytes) -> Model:
    payload = bytes(payload)
    if len(payload) < 10 or payload[:4] != MAGIC:
        raise CheckpointFormatError("not an MPRK checkpoint (bad magic)")
    body, (crc,) = payload[:-4], struct.unpack("<I", payload[-4:])
    r = _Reader(body)
    r.pos = 4
    version, input_dim, num_classes, embed_tr, head_tr = r.take("<HIIBB")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if zlib.crc32(body) != crc:
        raise CheckpointFormatError("checkpoint checksum mismatch (corrupt or truncated payload)")
    (num_blocks,) = r.take("<I")
    headers = []
    for _ in range(num_blocks):
        kind, in_w, w, inner, tokens, trainable = r.take("<BIIIIB")
        if kind >= len(_KINDS):
            raise CheckpointFormatError(f"unknown block kind code {kind}")
        try:
            spec = BlockSpec(_KINDS[kind], w, inner, in_w, tokens)
        except ValueError as exc:
            raise CheckpointFormatError(f"invalid block header: {exc}") from exc
        headers.append((spec, bool(trainable)))
    (num_hooks,) = r.take("<I")
    hooks = list(r.take(f"<{num_hooks}I"))
    (num_tensors,) = r.take("<I")
    tensors = {}
    for _ in range(num_tensors):
        (name_len,) = r.take("<H")
        (raw,) = r.take(f"<{name_len}s")
        (rank,) = r.take("<B")
        dims = r.take(f"<{rank}I")
        tensors[raw.decode()] = r.floats(int(np.prod(dims, dtype=np.int64))).reshape(dims)
    if r.pos != len(body):
        raise CheckpointFormatError("trailing bytes after tensor section")

    def pop(name, shape):
        arr = tensors.pop(name, None)
        if arr is None or arr.shape != tuple(shape):
            raise CheckpointFormatError(f"tensor {name!r} missing or misshapen")
        return arr

    try:
        d0 = headers[0][0].in_width if headers else tensors["embed.weight"].shape[0]
        d_last = headers[-1][0].width if headers else d0
        embed = {"weight": pop("embed.weight", (d0, input_dim)), "bias": pop("embed.bias", (d0,))}
        blocks = []
        for i, (spec, trainable) in enumerate(headers):
            params = {k: pop(f"blocks.{i}.{k}", s) for k, s in block_param_shapes(spec).items()}
            blocks.append(Block(spec, params, trainable))
        head = {"weight": pop("head.weight", (num_classes, d_last)), "bias": pop("head.bias", (num_classes,))}
    except KeyError as exc:
        raise CheckpointFormatError(f"missing tensor {exc}") from exc
    if tensors:
        raise CheckpointFormatError(f"unexpected tensors: {sorted(tensors)}")
    return Model(input_dim, num_classes, embed, blocks, head, hooks, bool(embed_tr), bool(head_tr))


def write_checkpoint(model: Model, path) -> Path:
    path = Path(path)
    path.write_bytes(save_checkpoint(model))
    return path


def read_checkpoint(path) -> Model:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    return load_checkpoint(payload)
