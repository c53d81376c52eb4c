"""Binary field snapshots (SLPF) and checkpoint directories."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SLPF"
VERSION = 1


class SnapshotError(ValueError):
    pass


def write_snapshot(path, name: str, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim != 2:
        raise SnapshotError("snapshots hold 2D scalar fields")
    n1, n2p1 = values.shape
    encoded = name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, n1, n2p1 - 1, len(encoded)))
        fh.write(encoded)
        fh.write(values.tobytes(order="C"))


def read_snapshot(path) -> tuple[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise SnapshotError(f"{path}: bad magic {data[:4]!r}")
    version, n1, n2, name_len = struct.unpack_from("<IIII", data, 4)
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported version {version}")
    off = 20 + name_len
    name = data[20:off].decode("utf-8")
    count = n1 * (n2 + 1)
    if len(data) - off != 8 * count:
        raise SnapshotError(f"{path}: expected {count} values, found {(len(data) - off) // 8}")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(n1, n2 + 1)
    return name, values.astype(float)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(directory, fields: dict[str, np.ndarray], meta: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, values in fields.items():
        write_snapshot(directory / f"{name}.slpf", name, values)
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    fields = {}
    for path in sorted(directory.glob("*.slpf")):
        name, values = read_snapshot(path)
        fields[name] = values
    return fields, meta
