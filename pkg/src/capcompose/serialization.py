"""Binary file formats.

Model tensors ("CCAP"): magic, format version u32, then a sequence of named
tensors, each as name length u32, name bytes (utf-8), rank u32, one u32 per
dim, and the little-endian float64 data. Tensors are written sorted by name
so equal inputs give byte-identical files.

Image features ("CCFT"): magic, version u32, entry count u32, then per entry
the image id (length u32 + bytes), d_g u32 and the global vector, M u32,
d_r u32 and the M x d_r regional matrix, all little-endian float32.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .encoder import ImageContext
from .errors import InputError

TENSOR_MAGIC = b"CCAP"
TENSOR_VERSION = 1
FEATURE_MAGIC = b"CCFT"
FEATURE_VERSION = 1


def _write_atomic(path, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [TENSOR_MAGIC, struct.pack("<I", TENSOR_VERSION)]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            parts.append(struct.pack("<I", dim))
        parts.append(arr.tobytes())
    _write_atomic(path, b"".join(parts))


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != TENSOR_MAGIC:
        raise InputError(f"{path}: not a tensor file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != TENSOR_VERSION:
        raise InputError(f"{path}: unsupported tensor format version {version}")
    offset = 8
    out: dict[str, np.ndarray] = {}
    while offset < len(data):
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
        out[name] = arr.astype(np.float64)
    return out


def save_features(path, features: dict[str, ImageContext]) -> None:
    parts = [FEATURE_MAGIC, struct.pack("<II", FEATURE_VERSION, len(features))]
    for image_id in sorted(features):
        ctx = features[image_id]
        encoded = image_id.encode("utf-8")
        v = np.ascontiguousarray(ctx.v, dtype="<f4")
        u = np.ascontiguousarray(ctx.u, dtype="<f4")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", v.shape[0]))
        parts.append(v.tobytes())
        parts.append(struct.pack("<II", u.shape[0], u.shape[1]))
        parts.append(u.tobytes())
    _write_atomic(path, b"".join(parts))


def load_features(path) -> dict[str, ImageContext]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FEATURE_MAGIC:
        raise InputError(f"{path}: not a feature file (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FEATURE_VERSION:
        raise InputError(f"{path}: unsupported feature format version {version}")
    offset = 12
    out: dict[str, ImageContext] = {}
    for _ in range(count):
        (id_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        image_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        (d_g,) = struct.unpack_from("<I", data, offset)
        offset += 4
        v = np.frombuffer(data, dtype="<f4", count=d_g, offset=offset).astype(np.float64)
        offset += 4 * d_g
        m, d_r = struct.unpack_from("<II", data, offset)
        offset += 8
        u = (
            np.frombuffer(data, dtype="<f4", count=m * d_r, offset=offset)
            .reshape(m, d_r)
            .astype(np.float64)
        )
        offset += 4 * m * d_r
        out[image_id] = ImageContext(v=v, u=u)
    return out
