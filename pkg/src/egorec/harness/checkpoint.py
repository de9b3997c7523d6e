"""Binary checkpoint container.

Layout (all integers little-endian):

    magic  b"DDRM"
    u32    format version (1)
    u32    tensor count
    per tensor:
        u16     name length, then UTF-8 name
        u8      rank
        u32[r]  dims
        f32[n]  payload, little-endian

Model parameters are stored under their module-qualified names, optimizer
state under ``opt/``, and the config snapshot / stage marker as byte-coded
tensors under ``meta/``. The reader uses explicit little-endian dtypes, so
it is independent of host byte order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DDRM"
VERSION = 1


def _encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def _decode_text(arr: np.ndarray) -> str:
    return bytes(np.round(arr).astype(np.uint8)).decode("utf-8")


def save_checkpoint(path, tensors: dict[str, np.ndarray], config_text: str,
                    stage: str) -> None:
    table = dict(tensors)
    table["meta/config"] = _encode_text(config_text)
    table["meta/stage"] = _encode_text(stage)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(table)))
        for name, arr in table.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", data.ndim))
            f.write(np.asarray(data.shape, dtype="<u4").tobytes())
            f.write(data.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str, str]:
    """Return (tensor table, config text, stage marker)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    table: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        dims = np.frombuffer(raw, dtype="<u4", count=rank, offset=offset)
        offset += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        table[name] = data.reshape(dims.astype(np.int64)).astype(np.float32)
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    config_text = _decode_text(table.pop("meta/config"))
    stage = _decode_text(table.pop("meta/stage"))
    return table, config_text, stage


def split_optimizer(table: dict[str, np.ndarray]):
    params = {k: v for k, v in table.items() if not k.startswith("opt/")}
    opt = {k: v for k, v in table.items() if k.startswith("opt/")}
    return params, opt
