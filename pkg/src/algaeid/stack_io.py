"""Multi-band fluorescence image stacks and their on-disk representation.

A stack is an ordered list of co-registered 2-D intensity rasters, one per
excitation wavelength. On disk a stack is a JSON manifest plus one binary
16-bit big-endian PGM (P5, maxval 65535) per band; in memory every band is
a float64 array so processing never quantizes.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

ROLE_TAGS = ("raw", "background", "corrected")

MANIFEST_NAME = "stack.json"

PGM_MAXVAL = 65535


class StackIOError(ValueError):
    """Base class for stack validation and codec failures."""


class MissingBandFileError(StackIOError):
    pass


class BandShapeMismatchError(StackIOError):
    pass


class WavelengthOrderError(StackIOError):
    pass


class UnsupportedBitDepthError(StackIOError):
    pass


@dataclass(frozen=True)
class ImageStack:
    """An m-band fluorescence cube with per-band excitation wavelengths.

    Immutable after construction: band arrays are flagged read-only, so a
    stack can be shared across threads. Every processing step returns a new
    stack instead of mutating.
    """

    bands: tuple
    wavelengths_nm: tuple
    pixel_pitch_um: float = 1.2
    role_tag: str = "raw"

    def __post_init__(self):
        bands = tuple(np.asarray(b, dtype=np.float64) for b in self.bands)
        if len(bands) < 1:
            raise StackIOError("stack must contain at least one band (m >= 1)")
        for b in bands:
            if b.ndim != 2:
                raise StackIOError(f"band must be 2-D, got shape {b.shape}")
        shape = bands[0].shape
        if shape[0] < 1 or shape[1] < 1:
            raise StackIOError(f"band dimensions must be >= 1, got {shape}")
        for i, b in enumerate(bands):
            if b.shape != shape:
                raise BandShapeMismatchError(
                    f"band {i} has shape {b.shape}, expected {shape}"
                )
        wl = tuple(float(w) for w in self.wavelengths_nm)
        if len(wl) != len(bands):
            raise WavelengthOrderError(
                f"{len(wl)} wavelengths for {len(bands)} bands"
            )
        if any(w2 <= w1 for w1, w2 in zip(wl, wl[1:])):
            raise WavelengthOrderError(
                f"wavelengths_nm must be strictly increasing, got {wl}"
            )
        if self.role_tag not in ROLE_TAGS:
            raise StackIOError(
                f"role_tag must be one of {ROLE_TAGS}, got {self.role_tag!r}"
            )
        if self.pixel_pitch_um <= 0:
            raise StackIOError("pixel_pitch_um must be positive")
        if self.role_tag == "raw":
            for i, b in enumerate(bands):
                if np.any(b < 0):
                    raise StackIOError(f"raw stack band {i} has negative intensities")
        for b in bands:
            b.flags.writeable = False
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "wavelengths_nm", wl)

    @property
    def num_bands(self):
        return len(self.bands)

    @property
    def height(self):
        return self.bands[0].shape[0]

    @property
    def width(self):
        return self.bands[0].shape[1]

    def band(self, i):
        return self.bands[i]

    def intensity(self, band_index, x, y):
        """Pixel intensity of band `band_index` at column x, row y."""
        return float(self.bands[band_index][y, x])

    def with_bands(self, bands, role_tag):
        """New stack with the same metadata but different pixel data."""
        return ImageStack(
            bands=tuple(bands),
            wavelengths_nm=self.wavelengths_nm,
            pixel_pitch_um=self.pixel_pitch_um,
            role_tag=role_tag,
        )


def atomic_write_bytes(path, data):
    """Write bytes via a temp file in the same directory plus rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_pgm16(path, array):
    """Write a 2-D array as binary PGM, 16-bit big-endian, maxval 65535.

    Real-valued input is clamped to [0, 65535] and rounded to nearest
    (ties to even). Files are the only quantized representation of a stack.
    """
    a = np.asarray(array, dtype=np.float64)
    if a.ndim != 2:
        raise StackIOError(f"PGM raster must be 2-D, got shape {a.shape}")
    q = np.rint(np.clip(a, 0, PGM_MAXVAL)).astype(">u2")
    h, w = q.shape
    header = f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii")
    atomic_write_bytes(path, header + q.tobytes())


def _read_pgm_tokens(data, count):
    """Return the first `count` whitespace-separated header tokens,
    skipping '#' comments, plus the offset just past the final delimiter."""
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        if i >= n:
            raise StackIOError("truncated PGM header")
        c = data[i:i + 1]
        if c == b"#":
            while i < n and data[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    # exactly one whitespace byte separates the header from the raster
    if i >= n or not data[i:i + 1].isspace():
        raise StackIOError("malformed PGM header")
    return tokens, i + 1


def read_pgm(path):
    """Read a binary PGM (P5). Returns an integer array (uint8 or uint16)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise StackIOError(f"{path}: not a binary PGM (P5) file")
    tokens, offset = _read_pgm_tokens(data[2:], 3)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise StackIOError(f"{path}: non-numeric PGM header") from None
    if width < 1 or height < 1:
        raise StackIOError(f"{path}: invalid PGM dimensions {width}x{height}")
    if maxval < 1 or maxval > 65535:
        raise UnsupportedBitDepthError(
            f"{path}: maxval {maxval} unsupported (must be 1..65535)"
        )
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    raster = data[offset:offset + expected]
    if len(raster) != expected:
        raise StackIOError(f"{path}: PGM raster truncated")
    a = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return a.astype(np.uint16) if maxval > 255 else a.astype(np.uint8)


def save_stack(stack, directory, extra_fields=None):
    """Write manifest plus one PGM per band; returns the manifest path.

    For integer-valued stacks load_stack(save_stack(s)) reproduces s
    bit-exactly; real-valued data is clamped/rounded by the PGM codec.
    `extra_fields` lets callers embed provenance (ignored on load).
    """
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    filenames = []
    for i, band in enumerate(stack.bands):
        name = f"band_{i:02d}.pgm"
        write_pgm16(os.path.join(directory, name), band)
        filenames.append(name)
    manifest = {
        "wavelengths_nm": list(stack.wavelengths_nm),
        "pixel_pitch_um": stack.pixel_pitch_um,
        "band_filenames": filenames,
        "role_tag": stack.role_tag,
    }
    if extra_fields:
        manifest.update(extra_fields)
    path = os.path.join(directory, MANIFEST_NAME)
    atomic_write_json(path, manifest)
    return path


def load_stack(manifest_path):
    """Load a stack from its manifest (or from a directory containing one).

    Bands come back in manifest order with wavelengths taken from the
    manifest. Raises a distinct error for a missing band file, a dimension
    mismatch between bands, non-increasing wavelengths, or an unsupported
    bit depth.
    """
    manifest_path = os.fspath(manifest_path)
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise MissingBandFileError(f"manifest not found: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as e:
            raise StackIOError(f"{manifest_path}: invalid manifest JSON: {e}") from None
    for key in ("wavelengths_nm", "band_filenames", "role_tag"):
        if key not in manifest:
            raise StackIOError(f"{manifest_path}: manifest missing field {key!r}")
    base = os.path.dirname(manifest_path)
    bands = []
    for name in manifest["band_filenames"]:
        band_path = os.path.join(base, name)
        if not os.path.exists(band_path):
            raise MissingBandFileError(f"band file not found: {band_path}")
        bands.append(read_pgm(band_path).astype(np.float64))
    return ImageStack(
        bands=tuple(bands),
        wavelengths_nm=tuple(manifest["wavelengths_nm"]),
        pixel_pitch_um=float(manifest.get("pixel_pitch_um", 1.2)),
        role_tag=str(manifest["role_tag"]),
    )
