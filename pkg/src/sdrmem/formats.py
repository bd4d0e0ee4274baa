"""Readers and writers for IDX, PGM (P5), PBM (P4) and snippet directories."""

from __future__ import annotations

import gzip
import json
import os
import re
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class DataError(ValueError):
    """Input data is missing or malformed."""


def _open(path: str | os.PathLike):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path: str | os.PathLike) -> np.ndarray:
    try:
        with _open(path) as f:
            data = f.read()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if len(data) < 8:
        raise DataError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise DataError(f"{path}: unexpected IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", data[4 : 4 + 4 * ndim])
    body = data[4 + 4 * ndim :]
    if len(body) != int(np.prod(dims)):
        raise DataError(f"{path}: IDX body has {len(body)} bytes, header says {int(np.prod(dims))}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def write_idx(path: str | os.PathLike, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    magic = {3: IDX_IMAGES, 1: IDX_LABELS}.get(arr.ndim)
    if magic is None:
        raise ValueError("IDX writer handles label vectors and image stacks only")
    with open(path, "wb") as f:
        f.write(struct.pack(f">I{arr.ndim}I", magic, *arr.shape))
        f.write(arr.tobytes())


def load_mnist(images: str | os.PathLike, labels: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    X, y = read_idx(images), read_idx(labels)
    if X.ndim != 3 or y.ndim != 1 or len(X) != len(y):
        raise DataError("MNIST image/label files do not match")
    return X, y


_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def _pnm_header(data: bytes, n_fields: int) -> tuple[list[bytes], int]:
    pos, fields = 0, []
    for _ in range(n_fields):
        m = _PNM_TOKEN.match(data, pos)
        if not m:
            raise DataError("truncated PNM header")
        fields.append(m.group(1))
        pos = m.end()
    return fields, pos + 1  # one whitespace byte before the raster


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _pnm_header(data, 4)
    if magic != b"P5" or int(maxval) > 255:
        raise DataError(f"{path}: only 8-bit P5 PGM is supported")
    w, h = int(w), int(h)
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)


def write_pgm(path: str | os.PathLike, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


def write_pbm(path: str | os.PathLike, frame: np.ndarray) -> None:
    frame = np.asarray(frame, dtype=bool)
    with open(path, "wb") as f:
        f.write(b"P4\n%d %d\n" % (frame.shape[1], frame.shape[0]))
        f.write(np.packbits(frame, axis=1).tobytes())


def read_pbm(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h), pos = _pnm_header(data, 3)
    if magic != b"P4":
        raise DataError(f"{path}: not a P4 PBM")
    w, h = int(w), int(h)
    row = (w + 7) // 8
    bits = np.frombuffer(data, dtype=np.uint8, count=row * h, offset=pos).reshape(h, row)
    return np.unpackbits(bits, axis=1, count=w).astype(bool)


def write_json(path: str | os.PathLike, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def iter_snippet_dirs(root: str | os.PathLike) -> Iterator[Path]:
    """Snippet directories under ``root`` (those holding a ``meta.json``), sorted."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    yield from sorted(p.parent for p in root.glob("*/meta.json"))
