"""Binary checkpoint: JSON header describing the layers, then raw parameters.

Layout::

    b"RSNN" | uint16 version | uint32 header_len | header (UTF-8 JSON)
    | float32 little-endian parameter blobs in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import Network, build_network

MAGIC = b"RSNN"
VERSION = 1


def save_checkpoint(path, net: Network, meta: dict | None = None) -> None:
    named = net.named_parameters()
    header = {
        "input_shape": list(net.input_shape),
        "spec": net.spec,
        "params": [{"name": n, "shape": list(p.shape)} for n, p in named],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(blob)))
        fh.write(blob)
        for _, p in named:
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, n = struct.unpack("<HI", fh.read(6))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        return json.loads(fh.read(n).decode("utf-8"))


def load_checkpoint(path) -> tuple[Network, dict]:
    """Return the network and the free-form ``meta`` dict stored with it."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, n = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[10:10 + n].decode("utf-8"))
    net = build_network(header["spec"], tuple(header["input_shape"]), seed=0)
    offset = 10 + n
    named = dict(net.named_parameters())
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        target = named[entry["name"]]
        if target.shape != shape:
            raise ValueError(f"{path}: parameter {entry['name']} has shape {shape}, "
                             f"spec builds {target.shape}")
        target.data = arr.astype(np.float32)
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return net, header.get("meta", {})
