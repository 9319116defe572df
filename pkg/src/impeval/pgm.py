"""Binary PGM (P5) codec. Writes 16-bit big-endian with maxval 65535."""

import re

import numpy as np

MAXVAL = 65535


class PGMError(ValueError):
    pass


def quantize(values):
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * MAXVAL + 0.5).astype(">u2")


def write_pgm(path, values):
    """Write a 2-D array of values in [0, 1] as 16-bit P5."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise PGMError(f"PGM needs a 2-D array, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii"))
        f.write(quantize(arr).tobytes())


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm_raw(path):
    """Return (integer sample array, maxval)."""
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise PGMError(f"cannot read PGM {path}: {e}") from e
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise PGMError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise PGMError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(x) for x in fields[1:])
    except ValueError as e:
        raise PGMError(f"{path}: bad PGM header") from e
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise PGMError(f"{path}: bad PGM dimensions or maxval")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if len(buf) - pos < need:
        raise PGMError(f"{path}: expected {need} bytes of pixel data, found {len(buf) - pos}")
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return data.astype(np.int64), maxval


def read_pgm(path):
    """Read a P5 file into float64 values in [0, 1]."""
    data, maxval = read_pgm_raw(path)
    return data / maxval
