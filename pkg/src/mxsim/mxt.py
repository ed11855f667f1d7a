"""MXT1 binary tensor files.

Layout (all little-endian):

    offset  size  field
    0       4     magic "MXT1"
    4       1     element format code (1=fp8_e5m2, 2=fp8_e4m3, 3=fp4_e2m1)
    5       1     block size k
    6       1     block axis (0=row, 1=col)
    7       4     rows (u32)
    11      4     cols (u32)
    15      ...   element payload, row-major; fp4 packs two elements per
                  byte over the flattened row-major order, low nibble first
    ...     ...   scale payload, row-major u8
                  (rows x cols/k for axis=row, rows/k x cols for axis=col)
"""

from __future__ import annotations

import struct

import numpy as np

from mxsim.blocks import BlockAxis, MxMatrix
from mxsim.formats import FP4_E2M1, FP8_E4M3, FP8_E5M2

MAGIC = b"MXT1"

FORMAT_CODES = {FP8_E5M2: 1, FP8_E4M3: 2, FP4_E2M1: 3}
CODE_FORMATS = {v: k for k, v in FORMAT_CODES.items()}

_AXIS_CODES = {BlockAxis.ROW: 0, BlockAxis.COL: 1}
_CODE_AXES = {v: k for k, v in _AXIS_CODES.items()}


class TensorFileError(ValueError):
    """Malformed or unsupported MXT file contents."""


def pack_nibbles(flat: np.ndarray) -> bytes:
    """Pack 4-bit values two per byte, low nibble first; odd tail padded."""
    flat = np.asarray(flat, dtype=np.uint8).ravel()
    if flat.size % 2:
        flat = np.concatenate([flat, np.zeros(1, dtype=np.uint8)])
    lo = flat[0::2] & 0xF
    hi = flat[1::2] & 0xF
    return (lo | (hi << 4)).astype(np.uint8).tobytes()


def unpack_nibbles(raw: bytes, count: int) -> np.ndarray:
    data = np.frombuffer(raw, dtype=np.uint8)
    out = np.empty(data.size * 2, dtype=np.uint8)
    out[0::2] = data & 0xF
    out[1::2] = data >> 4
    return out[:count]


def write_mxt(path, matrix: MxMatrix) -> None:
    """Serialize an MxMatrix to an MXT1 file."""
    if matrix.fmt not in FORMAT_CODES:
        raise TensorFileError(f"no MXT format code for {matrix.fmt.name}")
    header = MAGIC + struct.pack(
        "<BBBII",
        FORMAT_CODES[matrix.fmt],
        matrix.k,
        _AXIS_CODES[matrix.block_axis],
        matrix.rows,
        matrix.cols,
    )
    flat = np.ascontiguousarray(matrix.elements, dtype=np.uint8)
    if matrix.fmt is FP4_E2M1:
        payload = pack_nibbles(flat)
    else:
        payload = flat.tobytes()
    scales = np.ascontiguousarray(matrix.scales, dtype=np.uint8).tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)
        f.write(scales)


def read_mxt(path) -> MxMatrix:
    """Load an MXT1 file back into an MxMatrix."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 15 or data[:4] != MAGIC:
        raise TensorFileError(f"{path}: not an MXT1 file")
    code, k, axis_code, rows, cols = struct.unpack("<BBBII", data[4:15])
    fmt = CODE_FORMATS.get(code)
    if fmt is None:
        raise TensorFileError(f"{path}: unknown element format code {code}")
    if axis_code not in _CODE_AXES:
        raise TensorFileError(f"{path}: bad block axis {axis_code}")
    axis = _CODE_AXES[axis_code]
    if k < 1:
        raise TensorFileError(f"{path}: bad block size {k}")

    count = rows * cols
    if fmt is FP4_E2M1:
        elem_bytes = (count + 1) // 2
    else:
        elem_bytes = count
    n_scales = (rows * cols // k) if count else 0
    if len(data) != 15 + elem_bytes + n_scales:
        raise TensorFileError(
            f"{path}: expected {15 + elem_bytes + n_scales} bytes, got {len(data)}"
        )
    body = data[15 : 15 + elem_bytes]
    if fmt is FP4_E2M1:
        elements = unpack_nibbles(body, count).reshape(rows, cols)
    else:
        elements = np.frombuffer(body, dtype=np.uint8).reshape(rows, cols).copy()
    scale_shape = (rows, cols // k) if axis is BlockAxis.ROW else (rows // k, cols)
    scales = (
        np.frombuffer(data[15 + elem_bytes :], dtype=np.uint8)
        .reshape(scale_shape)
        .copy()
    )
    return MxMatrix(rows, cols, k, axis, fmt, elements, scales)
