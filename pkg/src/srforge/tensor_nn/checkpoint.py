"""Checkpoint file format for parameter stores.

Layout (little-endian): 8-byte magic "SRNN0001", version u32, flags u32
(bit 0 = Adam state present), config length u32 + config JSON, parameter
count u32, then per parameter: name length u16 + UTF-8 name + rank u8 +
dims u32[] + float32 payload.  With the flags bit set, an optimizer step
counter u64 follows, then per parameter (same order) the float32 m and v
moment payloads.  Values are stored as float32 regardless of the
in-memory dtype.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .optim import ParameterStore

MAGIC = b"SRNN0001"
FORMAT_VERSION = 1
FLAG_ADAM_STATE = 1


class CheckpointFormatError(Exception):
    pass


def save_checkpoint(
    path: Union[str, Path],
    store: ParameterStore,
    config: dict,
    include_optimizer: bool = False,
) -> None:
    if include_optimizer and not store.has_moments():
        raise ValueError("store has no optimizer state to save")
    config_blob = json.dumps(config, sort_keys=True).encode("utf-8")
    flags = FLAG_ADAM_STATE if include_optimizer else 0
    parts = [MAGIC, struct.pack("<III", FORMAT_VERSION, flags, len(config_blob)), config_blob]
    parts.append(struct.pack("<I", len(store.names())))
    for name, param in store.items():
        blob = name.encode("utf-8")
        arr = np.ascontiguousarray(param.data, dtype="<f4")
        parts.append(struct.pack("<H", len(blob)))
        parts.append(blob)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    if include_optimizer:
        parts.append(struct.pack("<Q", store.step_count))
        for name, param in store.items():
            m, v = store.moments(name)
            parts.append(np.ascontiguousarray(m, dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: Union[str, Path]) -> tuple[ParameterStore, dict]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointFormatError("bad magic; not a checkpoint file")
    try:
        version, flags, config_len = struct.unpack_from("<III", blob, 8)
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        offset = 20
        config = json.loads(blob[offset : offset + config_len].decode("utf-8"))
        offset += config_len
        (n_params,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        store = ParameterStore()
        for _ in range(n_params):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            payload = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            if payload.size != count:
                raise CheckpointFormatError("truncated parameter payload")
            offset += 4 * count
            store.register(name, payload.reshape(shape).copy())
        if flags & FLAG_ADAM_STATE:
            (step,) = struct.unpack_from("<Q", blob, offset)
            offset += 8
            store.step_count = step
            for name in store.names():
                shape = store[name].data.shape
                count = store[name].data.size
                m = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
                offset += 4 * count
                v = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
                offset += 4 * count
                if m.size != count or v.size != count:
                    raise CheckpointFormatError("truncated optimizer payload")
                store.set_moments(name, m.reshape(shape).copy(), v.reshape(shape).copy())
        if offset != len(blob):
            raise CheckpointFormatError("trailing bytes after checkpoint payload")
    except (struct.error, ValueError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint: {exc}") from exc
    return store, config
