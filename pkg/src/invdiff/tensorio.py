"""Grid/stack containers and the INVDIFF1 tensor file format.

File layout::

    bytes 0-7     b"INVDIFF1"
    bytes 8-11    header length L, u32 little-endian
    bytes 12..    JSON header (UTF-8), L bytes
    remainder     payload, f32 little-endian, C order

Computation everywhere else in the package is float64; only storage is f32.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

__all__ = [
    "MAGIC",
    "TensorFormatError",
    "ImageGrid",
    "SigmaGrid",
    "PsdrStack",
    "WeightMaps",
    "tensor_write",
    "tensor_read",
    "encode_tensor",
    "decode_tensor",
    "write_stack",
    "read_stack",
    "write_image",
    "read_image",
]

MAGIC = b"INVDIFF1"
_DTYPE = "f32le"


class TensorFormatError(ValueError):
    """Raised for malformed INVDIFF1 files or inconsistent headers."""


@dataclass
class ImageGrid:
    """An M x N observation with its pixel pitch (micrometers)."""

    data: np.ndarray
    pixel_pitch: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or min(self.data.shape) < 1:
            raise ValueError(f"image must be a non-empty 2D array, got shape {self.data.shape}")
        if not self.pixel_pitch > 0:
            raise ValueError("pixel_pitch must be positive")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass
class SigmaGrid:
    """Bin edges over the diffusion-width axis, in pixel units.

    ``aleph`` holds the 0-based indices of the bins subject to the group
    regularizer; it defaults to every bin.
    """

    edges: np.ndarray
    aleph: Optional[Sequence[int]] = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        if self.edges.ndim != 1 or self.edges.size < 2:
            raise ValueError("sigma grid needs at least two edges")
        if not np.all(np.diff(self.edges) > 0):
            raise ValueError("sigma edges must be strictly increasing")
        K = self.edges.size - 1
        if self.aleph is None:
            self.aleph = tuple(range(K))
        aleph = tuple(sorted(int(k) for k in self.aleph))
        if len(set(aleph)) != len(aleph) or any(k < 0 or k >= K for k in aleph):
            raise ValueError(f"aleph must be distinct bin indices in [0, {K})")
        self.aleph = aleph

    @property
    def K(self) -> int:
        return self.edges.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def aleph_mask(self) -> np.ndarray:
        mask = np.zeros(self.K, dtype=bool)
        mask[list(self.aleph)] = True
        return mask

    @classmethod
    def uniform(cls, lo: float, hi: float, K: int) -> "SigmaGrid":
        return cls(np.linspace(lo, hi, K + 1))


@dataclass
class PsdrStack:
    """Discretized PSDR: ``coeffs[k]`` is the orthonormal box-basis coefficient
    of bin k, i.e. roughly ``Delta_k**-0.5`` times the integral of a over the bin."""

    coeffs: np.ndarray
    sigma: SigmaGrid

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 3:
            raise ValueError("coeffs must be K x M x N")
        if self.coeffs.shape[0] != self.sigma.K:
            raise ValueError(
                f"stack has {self.coeffs.shape[0]} planes but sigma grid has {self.sigma.K} bins"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.coeffs.shape

    @classmethod
    def zeros(cls, sigma: SigmaGrid, shape: tuple[int, int]) -> "PsdrStack":
        return cls(np.zeros((sigma.K, *shape)), sigma)

    def spatial_mass(self) -> np.ndarray:
        """Per-pixel integral over sigma: sum_k sqrt(Delta_k) * coeffs[k]."""
        w = np.sqrt(self.sigma.widths)
        return np.tensordot(w, self.coeffs, axes=(0, 0))


@dataclass
class WeightMaps:
    """Data-fidelity weights ``w2`` (pointwise w**2) and binary support mask ``mu``."""

    w2: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.w2.shape != self.mu.shape or self.w2.ndim != 2:
            raise ValueError("w2 and mu must be 2D arrays of equal shape")
        if np.any(self.w2 < 0):
            raise ValueError("w2 must be non-negative")
        if not np.all((self.mu == 0) | (self.mu == 1)):
            raise ValueError("mu must be a 0/1 mask")

    @classmethod
    def ones(cls, shape: tuple[int, int]) -> "WeightMaps":
        return cls(np.ones(shape), np.ones(shape))

    @property
    def w_inf_sq(self) -> float:
        return float(self.w2.max()) if self.w2.size else 0.0


def encode_tensor(payload: np.ndarray, **extra: Any) -> bytes:
    arr = np.asarray(payload)
    if arr.ndim not in (2, 3):
        raise TensorFormatError(f"only 2D/3D tensors are supported, got ndim={arr.ndim}")
    header = {
        "dtype": _DTYPE,
        "order": "kmn" if arr.ndim == 3 else "mn",
        "shape": [int(s) for s in arr.shape],
    }
    for key, value in extra.items():
        if value is None:
            continue
        if isinstance(value, np.ndarray):
            value = value.tolist()
        header[key] = value
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes(order="C")
    return MAGIC + struct.pack("<I", len(blob)) + blob + data


def decode_tensor(raw: bytes) -> tuple[dict, np.ndarray]:
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise TensorFormatError("bad magic")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if 12 + hlen > len(raw):
        raise TensorFormatError("header length exceeds file size")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFormatError(f"unreadable header: {exc}") from None
    if header.get("dtype") != _DTYPE:
        raise TensorFormatError(f"unknown dtype {header.get('dtype')!r}")
    shape = tuple(int(s) for s in header.get("shape", ()))
    if len(shape) not in (2, 3):
        raise TensorFormatError(f"unsupported shape {shape}")
    payload = raw[12 + hlen :]
    if len(payload) != 4 * int(np.prod(shape)):
        raise TensorFormatError("payload length mismatch")
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return header, arr


def tensor_write(path, payload: np.ndarray, shape: Optional[Sequence[int]] = None, **extra: Any) -> None:
    """Write ``payload`` as an INVDIFF1 file.

    ``shape``, when given, is checked against the payload element count; extra
    keyword arguments (``sigma_edges``, ``pixel_pitch``, ...) go into the header.
    """
    arr = np.asarray(payload)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != arr.size:
            raise TensorFormatError(f"header shape {shape} does not match {arr.size} payload elements")
        arr = arr.reshape(shape)
    Path(path).write_bytes(encode_tensor(arr, **extra))


def tensor_read(path) -> tuple[dict, np.ndarray]:
    """Inverse of :func:`tensor_write`; returns ``(header, float32 array)``."""
    return decode_tensor(Path(path).read_bytes())


def write_stack(path, stack: PsdrStack, **extra: Any) -> None:
    tensor_write(path, stack.coeffs, sigma_edges=stack.sigma.edges, aleph=[int(k) for k in stack.sigma.aleph], **extra)


def read_stack(path) -> PsdrStack:
    header, arr = tensor_read(path)
    if arr.ndim != 3 or "sigma_edges" not in header:
        raise TensorFormatError("file does not hold a PSDR stack (needs 3D payload and sigma_edges)")
    sigma = SigmaGrid(header["sigma_edges"], header.get("aleph"))
    return PsdrStack(arr.astype(np.float64), sigma)


def write_image(path, image: ImageGrid, **extra: Any) -> None:
    tensor_write(path, image.data, pixel_pitch=image.pixel_pitch, **extra)


def read_image(path) -> ImageGrid:
    header, arr = tensor_read(path)
    if arr.ndim != 2:
        raise TensorFormatError("file does not hold a 2D image")
    return ImageGrid(arr.astype(np.float64), float(header.get("pixel_pitch", 1.0)))
