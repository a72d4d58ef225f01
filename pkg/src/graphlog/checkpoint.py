"""Little-endian binary checkpoints.

Layout (all integers unsigned little-endian unless noted, floats IEEE-754
binary64 little-endian)::

    b"GLOG"                      magic
    u32 version                  currently 1
    u32 L, u32 d                 GIN layers and width
    u32 Kv, then Kv x u32        node embedding table row counts (vocab + 1)
    u32 Ke, then Ke x u32        edge embedding table row counts
    f64[...]                     encoder arrays in declaration order:
                                 node tables, edge tables, then per layer
                                 W1 (d x d), b1 (d), W2 (d x d), b2 (d); row-major
    sections until b"END ":
      4-byte tag, u64 payload length, payload

Sections:

    b"FRST"  u32 Lp, Lp x u32 layer sizes, i64 parent index for every
             prototype of layers 2..Lp, then f64 prototype vectors layer by
             layer (top first), each layer row-major (size x d)
    b"ADAM"  u64 step, f64 lr, beta1, beta2, eps, u32 count, then count first
             moment arrays followed by count second moment arrays, matching
             the parameter order encoder + prototype layers
    b"HEAD"  u32 T, f64 weight (d x T), f64 bias (T)
    b"CONF"  UTF-8 text of the resolved TrainConfig
    b"STAT"  UTF-8 JSON trainer state (step counters, diagnostics)
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .gnn import GinParams
from .optim import AdamState
from .prototypes import PrototypeForest

MAGIC = b"GLOG"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: GinParams
    config_text: str = ""
    forest: PrototypeForest | None = None
    adam: AdamState | None = None
    head: tuple[np.ndarray, np.ndarray] | None = None
    state: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        return dumps(self)

    def save(self, path) -> None:
        Path(path).write_bytes(dumps(self))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return loads(data)


def _u32(x) -> bytes:
    return struct.pack("<I", int(x))


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def dumps(ckpt: Checkpoint) -> bytes:
    p = ckpt.params
    out = io.BytesIO()
    out.write(MAGIC + _u32(VERSION) + _u32(p.num_layers) + _u32(p.dim))
    out.write(_u32(len(p.node_tables)) + b"".join(_u32(t.shape[0]) for t in p.node_tables))
    out.write(_u32(len(p.edge_tables)) + b"".join(_u32(t.shape[0]) for t in p.edge_tables))
    for t in p.tensors():
        out.write(_f64(t.values))
    if ckpt.forest is not None:
        f = ckpt.forest
        body = _u32(f.depth) + b"".join(_u32(s) for s in f.sizes())
        for l in range(1, f.depth):
            body += np.ascontiguousarray(f.parents[l], dtype="<i8").tobytes()
        body += b"".join(_f64(t.values) for t in f.layers)
        out.write(_section(b"FRST", body))
    if ckpt.adam is not None:
        s = ckpt.adam
        body = struct.pack("<Q", s.step) + struct.pack("<4d", s.lr, s.beta1, s.beta2, s.eps) + _u32(len(s.m))
        body += b"".join(_f64(m) for m in s.m) + b"".join(_f64(v) for v in s.v)
        out.write(_section(b"ADAM", body))
    if ckpt.head is not None:
        w, b = ckpt.head
        out.write(_section(b"HEAD", _u32(w.shape[1]) + _f64(w) + _f64(b)))
    out.write(_section(b"CONF", ckpt.config_text.encode("utf-8")))
    out.write(_section(b"STAT", json.dumps(ckpt.state, sort_keys=True, separators=(",", ":")).encode("utf-8")))
    out.write(b"END ")
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(ad.get_default_dtype())


def loads(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    L, d = r.u32(), r.u32()
    node_rows = [r.u32() for _ in range(r.u32())]
    edge_rows = [r.u32() for _ in range(r.u32())]
    P = ad.parameter
    node_tables = [P(r.f64((n, d)), name=f"node_table{i}") for i, n in enumerate(node_rows)]
    edge_tables = [P(r.f64((n, d)), name=f"edge_table{i}") for i, n in enumerate(edge_rows)]
    w1, b1, w2, b2 = [], [], [], []
    for layer in range(L):
        w1.append(P(r.f64((d, d)), name=f"w1_{layer}"))
        b1.append(P(r.f64((d,)), name=f"b1_{layer}"))
        w2.append(P(r.f64((d, d)), name=f"w2_{layer}"))
        b2.append(P(r.f64((d,)), name=f"b2_{layer}"))
    ckpt = Checkpoint(GinParams(node_tables, edge_tables, w1, b1, w2, b2))
    while True:
        tag = r.take(4)
        if tag == b"END ":
            break
        sub = _Reader(r.take(r.u64()))
        if tag == b"FRST":
            depth = sub.u32()
            sizes = [sub.u32() for _ in range(depth)]
            parents = [np.zeros(0, dtype=np.int64)]
            for l in range(1, depth):
                parents.append(np.frombuffer(sub.take(8 * sizes[l]), dtype="<i8").astype(np.int64))
            layers = [P(sub.f64((s, d)), name=f"prototypes{l}") for l, s in enumerate(sizes)]
            ckpt.forest = PrototypeForest(layers, parents)
        elif tag == b"ADAM":
            step = sub.u64()
            lr, b1_, b2_, eps = struct.unpack("<4d", sub.take(32))
            count = sub.u32()
            shapes = [t.shape for t in ckpt.params.tensors()]
            if ckpt.forest is not None:
                shapes += [t.shape for t in ckpt.forest.layers]
            shapes = shapes[:count]
            if len(shapes) != count:
                raise CheckpointError("optimizer state does not match parameters")
            m = [sub.f64(s) for s in shapes]
            v = [sub.f64(s) for s in shapes]
            ckpt.adam = AdamState(m, v, step, lr, b1_, b2_, eps)
        elif tag == b"HEAD":
            t = sub.u32()
            ckpt.head = (sub.f64((d, t)), sub.f64((t,)))
        elif tag == b"CONF":
            ckpt.config_text = sub.data.decode("utf-8")
        elif tag == b"STAT":
            ckpt.state = json.loads(sub.data.decode("utf-8"))
        else:
            raise CheckpointError(f"unknown section {tag!r}")
    return ckpt
