"""Binary parameter checkpoints.

Layout (little-endian)::

    b"SCN1"
    u32 levels, u32 base_width, u32 in_channels, u32 tensor_count
    per tensor: u16 name length, name (ASCII), u8 ndim, u32 dims[ndim]
    float32 payload of every tensor, in table order

Running normalisation statistics are stored as ``<layer>.running_mean`` and
``<layer>.running_var`` after the trainable weights.
"""

from __future__ import annotations

import struct

import numpy as np

from .network import ScNetParams, Topology, _layer_specs

MAGIC = b"SCN1"


class CheckpointError(ValueError):
    pass


def _tensors(params: ScNetParams):
    for name, _, _ in _layer_specs(params.topology):
        yield name, params.weights[name]
    for name in sorted(params.running):
        mean, var = params.running[name]
        yield f"{name}.running_mean", mean
        yield f"{name}.running_var", var


def encode_checkpoint(params: ScNetParams) -> bytes:
    topo = params.topology
    items = list(_tensors(params))
    head = [MAGIC, struct.pack("<4I", topo.levels, topo.base_width, topo.in_channels, len(items))]
    for name, arr in items:
        nb = name.encode("ascii")
        head.append(struct.pack("<H", len(nb)) + nb)
        head.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    payload = [np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in items]
    return b"".join(head + payload)


def save_checkpoint(params: ScNetParams, path) -> None:
    with open(path, "wb") as f:
        f.write(encode_checkpoint(params))


def decode_checkpoint(buf: bytes) -> ScNetParams:
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {buf[:4]!r}")
    try:
        levels, width, cin, count = struct.unpack_from("<4I", buf, 4)
        off = 20
        table = []
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + ln].decode("ascii")
            off += ln
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            table.append((name, shape))
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    topo = Topology(levels, width, cin)
    arrays = {}
    for name, shape in table:
        n = int(np.prod(shape, dtype=np.int64))
        if off + 4 * n > len(buf):
            raise CheckpointError("truncated checkpoint payload")
        arrays[name] = np.frombuffer(buf, "<f4", n, off).reshape(shape).astype(np.float32)
        off += 4 * n
    weights, running = {}, {}
    for name, shape, _ in _layer_specs(topo):
        if name not in arrays or arrays[name].shape != tuple(shape):
            raise CheckpointError(f"checkpoint does not match topology at {name}")
        weights[name] = arrays[name]
        if name.endswith(".gamma"):
            layer = name[: -len(".gamma")]
            try:
                running[layer] = (arrays[f"{layer}.running_mean"], arrays[f"{layer}.running_var"])
            except KeyError as exc:
                raise CheckpointError(f"checkpoint lacks running statistics {exc}") from None
    return ScNetParams(topo, weights, running)


def load_checkpoint(path) -> ScNetParams:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
