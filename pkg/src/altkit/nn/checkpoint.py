"""Binary checkpoint container.

Layout: magic, u32 format version, u32 header length, UTF-8 JSON header
(hyperparameters, layer list and tensor table), then each tensor as
row-major little-endian float32 in header order.
"""

import json
import os
import struct

import numpy as np

MAGIC = b"ALTCKPT\0"
FORMAT_VERSION = 1


def save_checkpoint(path, header, tensors):
    """``tensors`` is an ordered list of (name, array)."""
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["tensors"] = [{"name": n, "shape": list(a.shape)} for n, a in tensors]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for _, a in tensors:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (header, [(name, float32 array), ...])."""
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen).decode("utf-8"))
        tensors = []
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(4 * count), dtype="<f4")
            if data.size != count:
                raise ValueError(f"{path}: truncated tensor {spec['name']}")
            tensors.append((spec["name"], data.reshape(shape).astype(np.float32)))
    return header, tensors
