"""Named parameter storage, seeded initialisation and the binary checkpoint format."""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import DTYPE, Tensor

CHECKPOINT_TAG = b"TRJFCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Map of dot-separated names to leaf tensors; iteration is lexicographic."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    @classmethod
    def wrap(cls, tensors: dict[str, Tensor]) -> "ParamStore":
        """Store backed by existing tensors (no copy)."""
        out = cls()
        out._params = dict(tensors)
        return out

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for n in self.names():
            yield n, self._params[n]

    def with_prefix(self, prefix: str) -> list[str]:
        return [n for n in self.names() if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def fill_missing_grads(self) -> None:
        """Parameters off the loss path get an explicit zero gradient."""
        for t in self._params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.items()}

    def copy(self, dtype=None) -> "ParamStore":
        out = ParamStore()
        for n, t in self.items():
            c = Tensor(np.array(t.data, dtype=dtype or t.dtype, copy=True), requires_grad=True, name=n)
            out._params[n] = c
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = set(self._params) - set(arrays)
            extra = set(arrays) - set(self._params)
            if missing or extra:
                raise CheckpointError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, a in arrays.items():
            if n not in self._params:
                continue
            t = self._params[n]
            if t.shape != a.shape:
                raise CheckpointError(f"parameter {n!r}: checkpoint shape {a.shape} != model shape {t.shape}")
            t.data = np.array(a, dtype=t.dtype, copy=True)


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


# -- checkpoint container ------------------------------------------------------------
#
# header: tag (8 bytes) | version u32 | param count u32 | meta length u32 | meta (UTF-8 JSON)
# each parameter: name length u32 | name | rank u32 | dims u64 * rank | float32 data
# all integers and floats little-endian

def dumps_checkpoint(params: ParamStore, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(CHECKPOINT_TAG)
    buf.write(struct.pack("<III", CHECKPOINT_VERSION, len(params), len(meta_bytes)))
    buf.write(meta_bytes)
    for name, t in params.items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}Q", *t.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return buf.getvalue()


def loads_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    view = memoryview(blob)
    if bytes(view[:8]) != CHECKPOINT_TAG:
        raise CheckpointError("not a checkpoint (bad format tag)")
    version, count, meta_len = struct.unpack_from("<III", view, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 20
    meta = json.loads(bytes(view[pos:pos + meta_len]).decode("utf-8"))
    pos += meta_len
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", view, pos)
        pos += 4
        name = bytes(view[pos:pos + n]).decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", view, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", view, pos)
        pos += 8 * rank
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        arrays[name] = np.frombuffer(view[pos:pos + nbytes], dtype="<f4").astype(DTYPE).reshape(dims)
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint ({len(blob) - pos})")
    return arrays, meta


def save_checkpoint(path, params: ParamStore, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps_checkpoint(params, meta))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads_checkpoint(Path(path).read_bytes())
