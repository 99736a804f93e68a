"""File formats: tensor container checkpoints, binary PPM images, box JSON.

Tensor container layout (all integers little-endian)::

    b"CRTN"                      magic
    u16   version (= 1)
    u32   entry count
    per entry:
        u32   name length, then UTF-8 name bytes
        u8    dtype tag (1 = float64)
        u32   rank
        u64   dims[rank]
        f64   payload[prod(dims)], C order

Box files are JSON arrays of ``[x0, y0, x1, y1]``; annotation files are JSON
arrays of ``{"image_id": str, "boxes": [[x0, y0, x1, y1], ...]}``.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Mapping

import numpy as np

from .boxes import as_box_array
from .views import Annotation

__all__ = [
    "FormatError",
    "write_tensors",
    "read_tensors",
    "read_ppm",
    "write_ppm",
    "read_boxes",
    "write_boxes",
    "read_annotations",
    "write_annotations",
]

MAGIC = b"CRTN"
VERSION = 1
DTYPE_F64 = 1


class FormatError(ValueError):
    """Raised for malformed input files."""


def write_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, value in tensors.items():
        # np.require keeps 0-d arrays 0-d (ascontiguousarray would make them 1-d)
        arr = np.require(np.asarray(value, dtype="<f8"), requirements="C")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BI", DTYPE_F64, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensors(path) -> Dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated tensor container at byte {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise FormatError("not a tensor container (bad magic)")
    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    tensors: Dict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        dtype, rank = struct.unpack("<BI", take(5))
        if dtype != DTYPE_F64:
            raise FormatError(f"entry {name!r}: unknown dtype tag {dtype} at byte {pos - 5}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64)
        tensors[name] = data.reshape(dims)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last entry")
    return tensors


def read_ppm(path) -> np.ndarray:
    """Read an 8-bit binary PPM (P6) as a ``(3, H, W)`` map scaled to ``[0, 1]``."""
    buf = Path(path).read_bytes()
    pos = 0
    tokens: List[int] = []
    starts: List[int] = []
    if buf[:2] != b"P6":
        raise FormatError("PPM must start with magic 'P6' (byte offset 0)")
    pos = 2
    while len(tokens) < 3:
        if pos >= len(buf):
            raise FormatError(f"truncated PPM header at byte offset {pos}")
        ch = buf[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        elif ch.isdigit():
            start = pos
            while pos < len(buf) and buf[pos:pos + 1].isdigit():
                pos += 1
            tokens.append(int(buf[start:pos]))
            starts.append(start)
        else:
            raise FormatError(f"unexpected byte {ch!r} in PPM header at byte offset {pos}")
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise FormatError(f"PPM size must be positive, got {width}x{height} (byte offset {starts[0]})")
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM supported (maxval 255), got {maxval} at byte offset {starts[2]}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"expected whitespace after PPM header at byte offset {pos}")
    pos += 1
    need = width * height * 3
    if len(buf) - pos < need:
        raise FormatError(f"PPM pixel data truncated at byte offset {len(buf)}: need {need} bytes from offset {pos}")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return pixels.reshape(height, width, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_ppm(path, image: np.ndarray) -> None:
    """Write a ``(3, H, W)`` map with values in ``[0, 1]`` as binary PPM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {image.shape}")
    _, h, w = image.shape
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_boxes(path) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return as_box_array(data)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_boxes(path, boxes) -> None:
    arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    Path(path).write_text(json.dumps(arr.tolist()))


def read_annotations(path) -> List[Annotation]:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise FormatError(f"{path}: expected a JSON array of annotations")
    out = []
    for i, item in enumerate(data):
        try:
            out.append(Annotation(str(item["image_id"]), list(item["boxes"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: entry {i}: {exc}") from exc
    return out


def write_annotations(path, annotations) -> None:
    data = [{"image_id": a.image_id, "boxes": [list(b) for b in a.gt_boxes]} for a in annotations]
    Path(path).write_text(json.dumps(data, indent=1))
