"""Portable binary checkpoints.

Layout (all little-endian):
    8 bytes   magic b"ACRNNCK1"
    uint32    format version (1)
    uint32    V_x
    uint32    d
    uint32    k
    uint32    variant code (navigation=0, early=1, late=2, clicks=3)
    float64[] tensors in PARAM_ORDER, each row-major:
              V_embed[d,V_x] W_z W_r W_h[k,d] U_z U_r U_h[k,k] b_z b_r b_h[k]
              W_a[k,d] W_out[V_x,k] b_out[V_x]
"""

import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .errors import DataError
from .model import PARAM_ORDER, ModelParams, Variant

MAGIC = b"ACRNNCK1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8s5I")
_VARIANT_CODES = {name: code for code, name in enumerate(Variant.ALL)}


def to_bytes(params: ModelParams, variant: str) -> bytes:
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, params.V_x, params.d, params.k, _VARIANT_CODES[variant]
    )
    body = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for _, t in params.items())
    return header + body


def from_bytes(blob: bytes) -> Tuple[ModelParams, str]:
    if len(blob) < _HEADER.size:
        raise DataError("checkpoint truncated in header")
    magic, version, V_x, d, k, code = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    if code >= len(Variant.ALL):
        raise DataError(f"unknown variant code {code}")

    shapes = ModelParams.shapes(V_x, d, k)
    expected = _HEADER.size + 8 * sum(int(np.prod(shapes[n])) for n in PARAM_ORDER)
    if len(blob) != expected:
        raise DataError(f"checkpoint size {len(blob)} does not match header (expected {expected})")

    tensors = {}
    offset = _HEADER.size
    for name in PARAM_ORDER:
        count = int(np.prod(shapes[name]))
        flat = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        tensors[name] = flat.astype(np.float64).reshape(shapes[name])
        offset += 8 * count
    return ModelParams(**tensors), Variant.ALL[code]


def save(path: Union[str, Path], params: ModelParams, variant: str):
    Path(path).write_bytes(to_bytes(params, variant))


def load(path: Union[str, Path]) -> Tuple[ModelParams, str]:
    return from_bytes(Path(path).read_bytes())
