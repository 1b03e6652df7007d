"""LDR/HDR image containers and their file codecs.

LDR inputs are 8- or 16-bit RGB PNG or binary PPM (P6). HDR images are
stored as little-endian PFM with rows written bottom to top, which keeps
float samples bit-exact through a save/load round trip.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import png

from .errors import (
    CorruptHeaderError,
    InvalidDataError,
    MissingFileError,
    UnsupportedFormatError,
    UnwritablePathError,
)

MIN_SIDE = 8


@dataclass(frozen=True)
class LdrImage:
    """Normalized RGB capture, ``data`` is ``(H, W, 3)`` in [0, 1]."""

    data: np.ndarray
    ev: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise InvalidDataError(f"LDR image must be HxWx3, got {data.shape}")
        if data.shape[0] < MIN_SIDE or data.shape[1] < MIN_SIDE:
            raise InvalidDataError(f"LDR image must be at least {MIN_SIDE}x{MIN_SIDE}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise InvalidDataError("LDR samples must lie in [0, 1]")
        if not np.isfinite(self.ev):
            raise InvalidDataError("exposure value must be finite")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ev", float(self.ev))

    @property
    def t(self) -> float:
        """Relative exposure time, always recomputed as 2**ev."""
        return 2.0 ** self.ev

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class HdrImage:
    """Linear radiance image, ``data`` is ``(H, W, 3)`` with finite samples >= 0."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise InvalidDataError(f"HDR image must be HxWx3, got {data.shape}")
        if np.isnan(data).any():
            raise InvalidDataError("HDR image contains NaN samples")
        if not np.all(np.isfinite(data)) or (data.size and data.min() < 0.0):
            raise InvalidDataError("HDR samples must be finite and non-negative")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def _require_file(path: Path) -> None:
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")


def read_sidecar_ev(path) -> float | None:
    """EV from a ``{"ev": <float>}`` JSON file next to ``path``, if present."""
    sidecar = Path(path).with_suffix(".json")
    if not sidecar.is_file():
        return None
    try:
        ev = float(json.loads(sidecar.read_text())["ev"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptHeaderError(f"bad EV sidecar {sidecar}: {exc}") from None
    return ev


def write_sidecar_ev(path, ev: float) -> None:
    Path(path).with_suffix(".json").write_text(json.dumps({"ev": float(ev)}))


def _read_png(path: Path) -> tuple[np.ndarray, int]:
    try:
        width, height, rows, info = png.Reader(filename=str(path)).read()
        if info.get("palette") or info["planes"] != 3:
            raise UnsupportedFormatError(
                f"{path}: expected 3-channel RGB PNG, got {info['planes']} planes"
            )
        bits = info["bitdepth"]
        if bits not in (8, 16):
            raise UnsupportedFormatError(f"{path}: unsupported bit depth {bits}")
        codes = np.vstack([np.asarray(r, dtype=np.uint32) for r in rows])
    except (png.FormatError, png.ChunkError, EOFError) as exc:
        raise CorruptHeaderError(f"{path}: {exc}") from None
    return codes.reshape(height, width, 3), bits


_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_ppm(path: Path) -> tuple[np.ndarray, int]:
    raw = path.read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _PNM_TOKEN.match(raw, pos)
        if m is None:
            raise CorruptHeaderError(f"{path}: truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise CorruptHeaderError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise CorruptHeaderError(f"{path}: non-numeric PPM header") from None
    if width <= 0 or height <= 0:
        raise CorruptHeaderError(f"{path}: bad PPM dimensions {width}x{height}")
    if maxval == 255:
        bits, dtype = 8, np.uint8
    elif maxval == 65535:
        bits, dtype = 16, np.dtype(">u2")
    else:
        raise UnsupportedFormatError(f"{path}: unsupported PPM maxval {maxval}")
    body = raw[pos + 1:]  # single whitespace byte ends the header
    count = width * height * 3
    if len(body) < count * np.dtype(dtype).itemsize:
        raise CorruptHeaderError(f"{path}: PPM raster shorter than header declares")
    codes = np.frombuffer(body, dtype=dtype, count=count)
    return codes.astype(np.uint32).reshape(height, width, 3), bits


def load_ldr(path, ev: float | None = None) -> LdrImage:
    """Read an LDR capture and map integer codes to [0, 1].

    When ``ev`` is omitted, it is taken from the JSON sidecar next to the
    file, falling back to 0.
    """
    path = Path(path)
    _require_file(path)
    with path.open("rb") as fh:
        magic = fh.read(8)
    if magic.startswith(b"\x89PNG"):
        codes, bits = _read_png(path)
    elif magic.startswith(b"P6"):
        codes, bits = _read_ppm(path)
    elif magic[:2] in (b"P1", b"P2", b"P3", b"P4", b"P5"):
        raise UnsupportedFormatError(f"{path}: only binary RGB PPM (P6) is supported")
    else:
        raise CorruptHeaderError(f"{path}: unrecognized image header")
    if ev is None:
        ev = read_sidecar_ev(path)
    data = codes.astype(np.float64) / float(2 ** bits - 1)
    return LdrImage(data, 0.0 if ev is None else ev)


def save_png(data: np.ndarray, path, bits: int = 8) -> None:
    """Write an ``(H, W, 3)`` or ``(H, W)`` array in [0, 1] as PNG."""
    data = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
    top = 2 ** bits - 1
    codes = np.round(data * top).astype(np.uint16 if bits == 16 else np.uint8)
    greyscale = codes.ndim == 2
    h, w = codes.shape[:2]
    writer = png.Writer(w, h, greyscale=greyscale, bitdepth=bits)
    try:
        with Path(path).open("wb") as fh:
            writer.write(fh, codes.reshape(h, -1))
    except OSError as exc:
        raise UnwritablePathError(f"cannot write {path}: {exc}") from None


def save_hdr(img: HdrImage, path) -> None:
    """Write ``img`` as a little-endian PFM, bottom row first."""
    h, w = img.height, img.width
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(img.data[::-1], dtype="<f4").tobytes()
    try:
        with Path(path).open("wb") as fh:
            fh.write(header)
            fh.write(body)
    except OSError as exc:
        raise UnwritablePathError(f"cannot write {path}: {exc}") from None


def load_hdr(path) -> HdrImage:
    """Read a 3-channel PFM written by :func:`save_hdr` (either byte order)."""
    path = Path(path)
    _require_file(path)
    raw = path.read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4:
        raise CorruptHeaderError(f"{path}: truncated PFM header")
    magic, dims, scale_line, body = parts
    if magic.strip() == b"Pf":
        raise UnsupportedFormatError(f"{path}: greyscale PFM is not supported")
    if magic.strip() != b"PF":
        raise CorruptHeaderError(f"{path}: bad PFM magic {magic[:8]!r}")
    try:
        w, h = (int(v) for v in dims.split())
        scale = float(scale_line)
    except ValueError:
        raise CorruptHeaderError(f"{path}: malformed PFM dimensions or scale") from None
    if w <= 0 or h <= 0 or scale == 0.0:
        raise CorruptHeaderError(f"{path}: bad PFM dimensions {w}x{h}")
    count = w * h * 3
    if len(body) < count * 4:
        raise CorruptHeaderError(f"{path}: PFM raster shorter than header declares")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(body, dtype=dtype, count=count).astype(np.float32)
    return HdrImage(data.reshape(h, w, 3)[::-1].copy())
