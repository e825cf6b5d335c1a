"""File formats: PPM/PGM images, QMAT matrices, mask lists, problem and point JSON."""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .qmatrix import QMatrix

QMAT_MAGIC = b"QMAT1"


# images -----------------------------------------------------------------------


def _read_netpbm(path, magic: bytes):
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    if tokens[0] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} image, got {tokens[0][:2]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    pos += 1  # single whitespace byte ends the header
    return raw[pos:], w, h, maxval


def read_ppm(path) -> QMatrix:
    """Read a binary PPM (P6) as a pure quaternion matrix, R, G, B -> i, j, k in [0, 1]."""
    body, w, h, maxval = _read_netpbm(path, b"P6")
    if len(body) < 3 * w * h:
        raise ValueError(f"{path}: pixel data truncated")
    px = np.frombuffer(body[:3 * w * h], dtype=np.uint8).reshape(h, w, 3).astype(float) / maxval
    data = np.zeros((4, h, w))
    data[1:] = px.transpose(2, 0, 1)
    return QMatrix(data)


def to_rgb8(A: QMatrix) -> np.ndarray:
    """Quantize the imaginary parts to 8-bit RGB after clamping to [0, 1]."""
    px = np.clip(A.data[1:], 0.0, 1.0).transpose(1, 2, 0)
    return np.rint(px * 255.0).astype(np.uint8)


def write_ppm(path, A: QMatrix) -> None:
    h, w = A.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(to_rgb8(A).tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    """Write an 8-bit grayscale P5 image from values in [0, 1]."""
    g = np.rint(np.clip(np.asarray(gray, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = g.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(g.tobytes())


def read_pgm(path) -> np.ndarray:
    body, w, h, maxval = _read_netpbm(path, b"P5")
    return np.frombuffer(body[:w * h], dtype=np.uint8).reshape(h, w).astype(float) / maxval


# matrices ---------------------------------------------------------------------


def write_qmat(path, A: QMatrix) -> None:
    m, n = A.shape
    with open(path, "wb") as fh:
        fh.write(QMAT_MAGIC)
        fh.write(struct.pack("<QQ", m, n))
        fh.write(np.ascontiguousarray(A.data, dtype="<f8").tobytes())


def read_qmat(path) -> QMatrix:
    raw = Path(path).read_bytes()
    if raw[:5] != QMAT_MAGIC:
        raise ValueError(f"{path}: not a QMAT file")
    m, n = struct.unpack("<QQ", raw[5:21])
    size = 4 * m * n * 8
    if len(raw) != 21 + size:
        raise ValueError(f"{path}: expected {size} data bytes, found {len(raw) - 21}")
    data = np.frombuffer(raw[21:], dtype="<f8").reshape(4, m, n).astype(float)
    return QMatrix(data)


def read_matrix(path) -> QMatrix:
    """Read a .qmat file, or a .ppm image as a pure quaternion matrix."""
    suffix = Path(path).suffix.lower()
    if suffix == ".qmat":
        return read_qmat(path)
    if suffix in (".ppm", ".pnm"):
        return read_ppm(path)
    raise ValueError(f"{path}: unsupported extension {suffix!r} (use .ppm or .qmat)")


# masks ------------------------------------------------------------------------


def read_mask(path, shape) -> np.ndarray:
    """Observed-entry mask from a text file of 0-indexed ``row col`` lines."""
    m, n = shape
    mask = np.zeros((m, n), dtype=bool)
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'row col'")
        i, j = int(parts[0]), int(parts[1])
        if not (0 <= i < m and 0 <= j < n):
            raise ShapeMismatch(f"{path}:{lineno}: entry ({i}, {j}) outside {m}x{n}")
        mask[i, j] = True
    return mask


def write_mask(path, mask: np.ndarray) -> None:
    rows, cols = np.nonzero(mask)
    with open(path, "w") as fh:
        for i, j in zip(rows, cols):
            fh.write(f"{i} {j}\n")


# JSON -------------------------------------------------------------------------


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, fixed indentation, trailing newline)."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def resolve(base, rel) -> str:
    """Path ``rel`` taken relative to the directory of the file ``base``."""
    return os.path.join(os.path.dirname(os.path.abspath(base)), rel)
