"""Binary checkpoint format for network parameters and batch-norm buffers.

    b"VINNCKPT" | u32 version | u32 header length | UTF-8 JSON header
    | zero padding to 64 bytes | tensors (f32 little-endian, each 64-byte aligned)

The header holds the network spec, optional metadata and a tensor directory
(name, shape, kind, offset from the start of the data section).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..blocks import Params
from ..model import NetworkSpec, build

MAGIC = b"VINNCKPT"
VERSION = 1
ALIGN = 64
_PREFIX = struct.Struct("<8sII")


class CheckpointError(ValueError):
    pass


def _aligned(n: int) -> int:
    return -(-n // ALIGN) * ALIGN


def encode_checkpoint(params: Params, spec: NetworkSpec, meta: dict | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    items = [(k, v.data, "param") for k, v in params.weights.items()]
    items += [(k, v, "buffer") for k, v in params.buffers.items()]
    for name, arr, kind in sorted(items):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "kind": kind, "offset": offset})
        blobs.append(raw + b"\0" * (_aligned(len(raw)) - len(raw)))
        offset += _aligned(len(raw))
    header = json.dumps({"spec": spec.to_dict(), "meta": meta or {}, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = _PREFIX.pack(MAGIC, VERSION, len(header)) + header
    return head + b"\0" * (_aligned(len(head)) - len(head)) + b"".join(blobs)


def save_checkpoint(params: Params, spec: NetworkSpec, path, meta: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, spec, meta))


def read_checkpoint(path):
    """Return (spec, {name: array}, {name: kind}, meta) without checking against a network."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint prefix")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if len(raw) < _PREFIX.size + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    base = _aligned(_PREFIX.size + hlen)
    arrays, kinds = {}, {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        if start + 4 * n > len(raw):
            raise CheckpointError(f"{path}: truncated data for tensor {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, "<f4", n, start).reshape(e["shape"]).astype(np.float32)
        kinds[e["name"]] = e["kind"]
    return NetworkSpec.from_dict(header["spec"]), arrays, kinds, header.get("meta", {})


def shape_diff(expected: dict, found: dict) -> list:
    """Human-readable lines for every tensor that is missing, extra or mis-shaped."""
    lines = []
    for name in sorted(set(expected) | set(found)):
        if name not in found:
            lines.append(f"missing  {name} {tuple(expected[name])}")
        elif name not in expected:
            lines.append(f"extra    {name} {tuple(found[name])}")
        elif tuple(expected[name]) != tuple(found[name]):
            lines.append(f"shape    {name} expected {tuple(expected[name])} found {tuple(found[name])}")
    return lines


def load_checkpoint(path, spec: NetworkSpec | None = None):
    """Load (params, spec, meta). With ``spec`` given, the stored tensors must
    match that network exactly; a mismatch raises with a per-tensor report."""
    stored_spec, arrays, kinds, meta = read_checkpoint(path)
    target = spec or stored_spec
    params = build(target, seed=0)
    expected = {k: v.data.shape for k, v in params.weights.items()}
    expected.update({k: v.shape for k, v in params.buffers.items()})
    diff = shape_diff(expected, {k: v.shape for k, v in arrays.items()})
    if diff:
        raise CheckpointError(f"{path}: checkpoint does not match {target.arch} network:\n  "
                              + "\n  ".join(diff))
    for name, arr in arrays.items():
        if kinds[name] == "param":
            params.weights[name].data = arr
        else:
            params.buffers[name] = arr
    return params, target, meta
