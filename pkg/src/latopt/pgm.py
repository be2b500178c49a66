"""Binary PGM (maxval 1) read/write for cell bitmaps."""

from __future__ import annotations

import numpy as np


def write_pgm(path, bitmap: np.ndarray) -> None:
    """Write a binary bitmap as P5 with maxval 1 (1 = solid)."""
    b = (np.asarray(bitmap) != 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{b.shape[1]} {b.shape[0]}\n1\n".encode())
        fh.write(b.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM (P5) file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    width, height, maxval = (int(f) for f in fields)
    if maxval != 1:
        raise ValueError(f"expected maxval 1, got {maxval}")
    raw = np.frombuffer(data[pos + 1 : pos + 1 + width * height], dtype=np.uint8)
    return raw.reshape(height, width).astype(bool)
