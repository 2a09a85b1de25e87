"""PPM/PGM images, the RTNF raw-float array format, and CSV text."""

from __future__ import annotations

import csv
import io
import struct

import numpy as np

MAGIC = b"RTNF"


class FormatError(ValueError):
    """Malformed file header or payload."""


def write_rtnf(path, arr) -> None:
    """Lossless dump: magic, u32 LE rank, u32 LE dims, f64 LE data (C order)."""
    a = np.array(arr, dtype="<f8", order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def read_rtnf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise FormatError("truncated header")
    (rank,) = struct.unpack_from("<I", raw, 4)
    head = 8 + 4 * rank
    if len(raw) < head:
        raise FormatError("truncated dims")
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    count = int(np.prod(dims)) if rank else 1
    if len(raw) - head != 8 * count:
        raise FormatError(f"payload of {len(raw) - head} bytes does not match dims {dims}")
    return np.frombuffer(raw, dtype="<f8", offset=head).reshape(dims).astype(float)


def _quantize(img) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, float) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img) -> None:
    """Binary P6 (RGB) or P5 (gray) with maxval 255; values in [0, 1] are clipped."""
    img = np.asarray(img, float)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"cannot store shape {img.shape} as PPM/PGM")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(_quantize(img).tobytes())


write_pgm = write_ppm


def _tokens(raw: bytes, count: int):
    """First ``count`` header tokens (comments skipped) and the payload offset."""
    out, i = [], 0
    while len(out) < count:
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j:j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated header")
        out.append(raw[i:j])
        i = j
    return out, i + 1


def read_ppm(path) -> np.ndarray:
    """Read P6/P5 (maxval <= 255) into floats in [0, 1], shape (H, W, C)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    (magic, w, h, maxval), off = _tokens(raw, 4)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError("non-integer header field") from exc
    if w <= 0 or h <= 0 or not 0 < maxval <= 255:
        raise FormatError("bad dims or maxval")
    c = 3 if magic == b"P6" else 1
    data = np.frombuffer(raw, np.uint8, count=h * w * c, offset=off) if len(raw) - off >= h * w * c else None
    if data is None:
        raise FormatError("truncated pixel data")
    return data.reshape(h, w, c).astype(float) / maxval


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def csv_text(columns, rows) -> str:
    """Header plus rows; floats via ``repr`` so values round-trip exactly."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(v) for v in r])
    return buf.getvalue()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
