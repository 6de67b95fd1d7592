"""Plain-text signal files, PGM images and key-value reports."""

import os
import re
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .exceptions import FormatError

CSV_DIGITS = 12
RUN_SECTION = "run"


def format_float(value) -> str:
    """Shortest stable text form used everywhere in reports and CSV files."""
    value = float(value)
    if np.isnan(value):
        return "nan"
    if np.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{CSV_DIGITS}g}"


def write_csv(path, values) -> None:
    """One value per line, ``CSV_DIGITS`` significant digits."""
    values = np.asarray(values, dtype=float).ravel()
    with open(path, "w", encoding="ascii") as fh:
        fh.writelines(format_float(v) + "\n" for v in values)


def read_csv(path) -> np.ndarray:
    """Read a one-value-per-line file; blank lines and ``#`` comments are skipped.

    A line holding several comma-separated fields contributes its first field,
    so single-column exports with trailing columns also load.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            field = text.split(",", 1)[0].strip()
            try:
                out.append(float(field))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not a number: {field!r}") from None
    if not out:
        raise FormatError(f"{path}: no samples")
    return np.array(out)


def _pgm_tokens(data: bytes, count: int) -> Tuple[List[bytes], int]:
    """First ``count`` whitespace-separated header tokens and the offset after them."""
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path) -> Tuple[np.ndarray, int]:
    """Read a P2 (text) or P5 (binary) grayscale image as ``(pixels, maxval)``.

    Pixels are returned as integers in a ``(height, width)`` array.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic in (b"P3", b"P6"):
        raise FormatError(f"{path}: color PNM ({magic.decode()}) is not grayscale")
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a PGM file")
    try:
        (_, w, h, maxval), pos = _pgm_tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad PGM dimensions or maxval ({w}x{h}, {maxval})")
    if magic == b"P5":
        pos += 1  # single whitespace byte before the raster
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raster = data[pos:pos + w * h * dtype.itemsize]
        if len(raster) != w * h * dtype.itemsize:
            raise FormatError(f"{path}: truncated PGM raster")
        pixels = np.frombuffer(raster, dtype=dtype).astype(np.int64)
    else:
        body = re.sub(rb"#[^\r\n]*", b"", data[pos:])
        try:
            pixels = np.array([int(t) for t in body.split()], dtype=np.int64)
        except ValueError:
            raise FormatError(f"{path}: non-integer pixel in PGM body") from None
        if pixels.size != w * h:
            raise FormatError(f"{path}: expected {w * h} pixels, found {pixels.size}")
    if pixels.max(initial=0) > maxval:
        raise FormatError(f"{path}: pixel value exceeds maxval {maxval}")
    return pixels.reshape(h, w), maxval


def write_pgm(path, pixels, maxval=255, binary=True) -> None:
    """Write integer pixels (clipped to ``[0, maxval]``) as P5 or P2."""
    if maxval not in (255, 65535):
        raise FormatError(f"maxval must be 255 or 65535, got {maxval}")
    pixels = np.clip(np.asarray(pixels), 0, maxval).astype(np.int64)
    if pixels.ndim != 2:
        raise FormatError("PGM images must be 2-D")
    h, w = pixels.shape
    header = f"{'P5' if binary else 'P2'}\n{w} {h}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            dtype = ">u2" if maxval > 255 else "u1"
            fh.write(pixels.astype(dtype).tobytes())
        else:
            for row in pixels:
                fh.write((" ".join(str(int(p)) for p in row) + "\n").encode("ascii"))


def image_to_unit(pixels, maxval) -> np.ndarray:
    return np.asarray(pixels, dtype=float) / maxval


def unit_to_image(img, maxval=255) -> np.ndarray:
    """Round to the nearest level after clamping to ``[0, 1]``."""
    return np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(np.int64)


# -- reports -----------------------------------------------------------------

Section = Tuple[str, List[Tuple[str, str]]]


def render_report(sections: Sequence[Section]) -> str:
    """Flat text: ``[name]`` headers followed by ``key = value`` lines."""
    lines = []
    for name, items in sections:
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in items)
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> List[Section]:
    sections: List[Section] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            sections.append((line[1:-1].strip(), []))
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not sections:
            sections.append(("", []))
        sections[-1][1].append((key, value))
    return sections


def report_body(text: str) -> str:
    """Report text without the trailing non-reproducible ``[run]`` section."""
    marker = f"\n[{RUN_SECTION}]\n"
    idx = text.find(marker)
    return text if idx < 0 else text[: idx + 1].rstrip("\n") + "\n"


def read_config_file(path) -> Dict[str, str]:
    """``key = value`` pairs from a config file or from a report's ``[config]`` block."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    sections = parse_report(text)
    named = {name: items for name, items in sections}
    items = named["config"] if "config" in named else [kv for _, s in sections for kv in s]
    return dict(items)


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
