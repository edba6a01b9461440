"""Square sampled fields on the unit torus and their discrete Fourier transforms.

Conventions used by every other module:

* A field is an M x M real matrix; ``data[i, j]`` is the sample at the pixel
  center ``(i/M, j/M)``.  M must be a power of two, at least 8.
* Spectra are stored in standard (unshifted) DFT index order.  Index ``k``
  along either axis corresponds to the integer frequency ``fftfreq(M)*M``,
  i.e. frequencies in cycles per domain in ``[-M/2, M/2)``.
* Transforms are unitary (``norm="ortho"``), so Parseval holds exactly:
  ``||f||_2 == ||fft2(f)||_2``.
* A plane wave ``cos(2*pi*<xi, x>)`` with integer ``xi`` puts spectral mass
  ``M/2`` at indices ``xi mod M`` and ``-xi mod M``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"F2D1"


class FormatError(ValueError):
    """Raised for malformed F2D files (bad magic, sizes, payload)."""


def _check_side(m: int) -> None:
    if m < 8 or (m & (m - 1)) != 0:
        raise ValueError(f"side length must be a power of two >= 8, got {m}")


@dataclass(frozen=True)
class Field2D:
    """Real M x M sample matrix on the unit square, immutable after creation."""

    data: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"field must be square 2-D, got shape {a.shape}")
        _check_side(a.shape[0])
        if not np.all(np.isfinite(a)):
            raise ValueError("field contains non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class Spectrum2D:
    """Complex M x M DFT coefficients in standard (unshifted) index order."""

    data: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.data, dtype=np.complex128))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"spectrum must be square 2-D, got shape {a.shape}")
        _check_side(a.shape[0])
        if not np.all(np.isfinite(a)):
            raise ValueError("spectrum contains non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @property
    def m(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class PixelGrid:
    """Pixel-center coordinates; canonical grid has points[i, j] = (i/M, j/M)."""

    points: np.ndarray  # (M, M, 2)

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if a.ndim != 3 or a.shape[2] != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"grid must have shape (M, M, 2), got {a.shape}")
        _check_side(a.shape[0])
        a.setflags(write=False)
        object.__setattr__(self, "points", a)

    @property
    def m(self) -> int:
        return self.points.shape[0]


def canonical_grid(m: int) -> PixelGrid:
    """The pixel-center grid (i/M, j/M)."""
    _check_side(m)
    idx = np.arange(m, dtype=np.float64) / m
    pts = np.stack(np.meshgrid(idx, idx, indexing="ij"), axis=-1)
    return PixelGrid(pts)


def freq_grid(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer frequency coordinates (cycles per domain) for each spectrum index."""
    f = np.fft.fftfreq(m, d=1.0 / m)
    return np.meshgrid(f, f, indexing="ij")


def fft2(f: Field2D) -> Spectrum2D:
    """Unitary 2-D DFT of a real field."""
    return Spectrum2D(np.fft.fft2(f.data, norm="ortho"))


def ifft2(s: Spectrum2D, imag_tol: float = 1e-6) -> Field2D:
    """Unitary inverse DFT, discarding the (small) imaginary residue.

    The input is expected to be Hermitian-symmetric up to roundoff.  A relative
    imaginary residue above ``imag_tol`` signals a non-Hermitian spectrum and
    raises instead of silently truncating.
    """
    z = np.fft.ifft2(s.data, norm="ortho")
    scale = max(float(np.linalg.norm(z)), np.finfo(np.float64).tiny)
    residue = float(np.linalg.norm(z.imag)) / scale
    if residue > imag_tol:
        raise ValueError(
            f"inverse transform has relative imaginary residue {residue:.3e} "
            f"> {imag_tol:.1e}; input spectrum is not Hermitian-symmetric"
        )
    return Field2D(z.real)


def spectrum_of(data: np.ndarray) -> Spectrum2D:
    """Wrap a raw complex array as a spectrum (validating shape/finiteness)."""
    return Spectrum2D(data)


# ---------------------------------------------------------------------------
# F2D binary format: b"F2D1", uint32-le rows, uint32-le cols, float64-le
# row-major payload.


def write_field(f: Field2D, path) -> None:
    with open(path, "wb") as fh:
        _write_record(fh, f.data)


def read_field(path) -> Field2D:
    with open(path, "rb") as fh:
        data = _read_record(fh)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after single F2D record")
    return _field_from_payload(data, path)


def write_field_stack(fields, path) -> None:
    """Write consecutive F2D records to one file."""
    with open(path, "wb") as fh:
        for f in fields:
            _write_record(fh, f.data)


def read_field_stack(path) -> list[Field2D]:
    out = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            data = _read_record(fh, head)
            out.append(_field_from_payload(data, path))
    if not out:
        raise FormatError(f"{path}: empty F2D stack")
    return out


def _field_from_payload(data: np.ndarray, path) -> Field2D:
    if data.shape[0] != data.shape[1]:
        raise FormatError(f"{path}: non-square payload {data.shape}")
    try:
        return Field2D(data)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _write_record(fh, a: np.ndarray) -> None:
    rows, cols = a.shape
    fh.write(_MAGIC)
    fh.write(struct.pack("<II", rows, cols))
    fh.write(a.astype("<f8", copy=False).tobytes(order="C"))


def _read_record(fh, head: bytes | None = None) -> np.ndarray:
    magic = head if head is not None else fh.read(4)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    dims = fh.read(8)
    if len(dims) != 8:
        raise FormatError("truncated header")
    rows, cols = struct.unpack("<II", dims)
    if rows == 0 or cols == 0:
        raise FormatError(f"zero dimension ({rows}, {cols})")
    payload = fh.read(rows * cols * 8)
    if len(payload) != rows * cols * 8:
        raise FormatError(
            f"truncated payload: expected {rows * cols * 8} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_pgm(f: Field2D, path) -> None:
    """8-bit binary PGM preview, min-max normalized."""
    a = f.data
    lo, hi = float(a.min()), float(a.max())
    if hi > lo:
        img = np.round((a - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        img = np.zeros_like(a, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{f.m} {f.m}\n255\n".encode("ascii"))
        fh.write(img.tobytes(order="C"))


def write_csv(f: Field2D, path) -> None:
    """One CSV row per matrix row, full float precision."""
    np.savetxt(path, f.data, delimiter=",", fmt="%.17g")
