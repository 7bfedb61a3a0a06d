"""FRZD checkpoint files.

Layout (little-endian): ``b"FRZD"``, u32 version, u32 kind code, u32-length
key=value config blob, u32 tensor count, then per tensor u16 name length,
UTF-8 name, u8 rank, u32 dims[rank], f64 data.
"""
from __future__ import annotations

import os

import numpy as np

from .binfmt import Reader, Writer, decode_kv, encode_kv
from .errors import FormatError, ShapeMismatchError
from .nn import KINDS, Network, build, config_from_dict, config_to_dict

MAGIC = b"FRZD"
KIND_CODES = {kind: i + 1 for i, kind in enumerate(KINDS)}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


def checkpoint_bytes(net: Network) -> bytes:
    w = Writer()
    w.header(MAGIC)
    w.u32(KIND_CODES[net.kind])
    w.blob(encode_kv(config_to_dict(net.cfg)))
    params = net.parameters()
    w.u32(len(params))
    for p in params:
        w.tensor(p.name, p.data)
    return w.getvalue()


def save_checkpoint(net: Network, path) -> None:
    data = checkpoint_bytes(net)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def checkpoint_from_bytes(data: bytes) -> Network:
    r = Reader(data)
    r.header(MAGIC, "checkpoint")
    code = r.u32("kind code")
    if code not in CODE_KINDS:
        raise FormatError(f"unknown network kind code {code}")
    try:
        cfg = config_from_dict(decode_kv(r.blob("config blob")))
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"bad config blob: {exc}") from None
    net = build(CODE_KINDS[code], cfg)
    expected = net.named_parameters()
    count = r.u32("tensor count")
    if count != len(expected):
        raise ShapeMismatchError(f"checkpoint holds {count} tensors, architecture has {len(expected)}")
    loaded = {}
    for i in range(count):
        name, arr = r.tensor(i)
        if name not in expected:
            raise ShapeMismatchError(f"tensor {name!r} is not part of the {net.kind} architecture")
        if arr.shape != expected[name].shape:
            raise ShapeMismatchError(
                f"tensor {name!r} has shape {arr.shape}, config implies {expected[name].shape}"
            )
        loaded[name] = arr
    if not r.done():
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last tensor")
    for name, arr in loaded.items():
        expected[name].data = np.array(arr)
        expected[name].zero_grad()
    return net


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
