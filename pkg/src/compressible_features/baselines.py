"""Classical feature compressors used as reference points.

Every compressor works per example (each row is compressed on its own) and
returns the compressed byte strings together with the reconstruction the
classifier head sees.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

__all__ = [
    "FeatureFile",
    "Compressed",
    "deflate_lossless",
    "inflate",
    "f16_deflate",
    "UniformQuantizer",
    "PcaBasis",
    "pca_fit",
    "pca_compress",
    "QUANT_BINS",
    "PCA_COMPONENTS",
]

QUANT_BINS = (2**16, 2**8, 2**4, 2**2)
PCA_COMPONENTS = (1, 2, 4, 8, 16, 32, 64)
DEFLATE_LEVEL = 9
F16_MAX = float(np.finfo(np.float16).max)


# -- feature file ("CFFT") ----------------------------------------------------

FEATURE_MAGIC = b"CFFT"
FEATURE_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f2"), 2: np.dtype("u1"), 3: np.dtype("<u2")}
_TAGS = {v: k for k, v in _DTYPES.items()}


@dataclass
class FeatureFile:
    values: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.dtype.newbyteorder("<") not in _TAGS:
            raise ValueError(f"unsupported feature dtype {self.values.dtype}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int32)
            if self.values.ndim == 0 or self.labels.shape != (self.values.shape[0],):
                raise ValueError("labels must have one entry per row")

    def to_bytes(self) -> bytes:
        v = self.values
        dtype = v.dtype.newbyteorder("<")
        out = io.BytesIO()
        out.write(FEATURE_MAGIC)
        out.write(struct.pack("<HBB", FEATURE_VERSION, _TAGS[dtype], v.ndim))
        out.write(struct.pack(f"<{v.ndim}I", *v.shape))
        out.write(struct.pack("<B", self.labels is not None))
        out.write(np.ascontiguousarray(v, dtype=dtype).tobytes())
        if self.labels is not None:
            out.write(self.labels.astype("<i4").tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FeatureFile":
        if data[:4] != FEATURE_MAGIC:
            raise ValueError("not a CFFT feature file")
        try:
            version, tag, rank = struct.unpack_from("<HBB", data, 4)
            if version != FEATURE_VERSION:
                raise ValueError(f"unsupported feature file version {version}")
            dtype = _DTYPES[tag]
            pos = 8
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            (has_labels,) = struct.unpack_from("<B", data, pos)
            pos += 1
        except (struct.error, KeyError) as exc:
            raise ValueError("malformed feature file header") from exc
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * dtype.itemsize
        expected = pos + nbytes + (4 * shape[0] if has_labels and rank else 0)
        if len(data) != expected:
            raise ValueError(f"feature file length {len(data)} != expected {expected}")
        values = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(shape).copy()
        labels = None
        if has_labels:
            labels = np.frombuffer(data, dtype="<i4", count=shape[0], offset=pos + nbytes).copy()
        return cls(values, labels)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FeatureFile":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


# -- compressors --------------------------------------------------------------


@dataclass
class Compressed:
    """Per-example compressed strings plus the decoded features."""

    blobs: List[bytes]
    reconstruction: np.ndarray
    clamped: int = 0

    @property
    def total_bytes(self) -> int:
        return sum(len(b) for b in self.blobs)

    @property
    def bits_per_example(self) -> float:
        return 8.0 * self.total_bytes / max(len(self.blobs), 1)


def _deflate_rows(rows: np.ndarray) -> List[bytes]:
    return [zlib.compress(row.tobytes(), DEFLATE_LEVEL) for row in rows]


def inflate(blob: bytes, dtype, count: int) -> np.ndarray:
    return np.frombuffer(zlib.decompress(blob), dtype=dtype, count=count)


def deflate_lossless(features: np.ndarray) -> Compressed:
    """zlib level 9 over the float32 bytes of each row."""
    x = np.ascontiguousarray(np.atleast_2d(features), dtype="<f4")
    return Compressed(_deflate_rows(x), x.copy())


def f16_deflate(features: np.ndarray) -> Compressed:
    """Cast to IEEE half precision (round to nearest even), then deflate."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float32))
    clamped = int(np.count_nonzero(np.abs(x) > F16_MAX))
    half = np.clip(x, -F16_MAX, F16_MAX).astype("<f2")
    return Compressed(_deflate_rows(half), half.astype(np.float32), clamped)


@dataclass
class UniformQuantizer:
    """Per-dimension unit-range scaling calibrated on the training split."""

    minimum: np.ndarray
    maximum: np.ndarray

    @classmethod
    def fit(cls, train_features: np.ndarray) -> "UniformQuantizer":
        x = np.asarray(train_features, dtype=np.float64)
        return cls(x.min(axis=0), x.max(axis=0))

    @property
    def active(self) -> np.ndarray:
        # constant dimensions are stored as calibration only, no index bits
        return self.maximum > self.minimum

    def indices(self, features: np.ndarray, bins: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        span = np.where(self.active, self.maximum - self.minimum, 1.0)
        unit = np.clip((x - self.minimum) / span, 0.0, 1.0)
        return np.rint(unit * (bins - 1)).astype(np.int64)[:, self.active]

    def reconstruct(self, idx: np.ndarray, bins: int) -> np.ndarray:
        n = idx.shape[0]
        out = np.tile(self.minimum, (n, 1))
        span = (self.maximum - self.minimum)[self.active]
        out[:, self.active] = self.minimum[self.active] + idx / (bins - 1) * span
        return out.astype(np.float32)

    def compress(self, features: np.ndarray, bins: int) -> Compressed:
        if bins not in QUANT_BINS:
            raise ValueError(f"bins must be one of {QUANT_BINS}")
        idx = self.indices(features, bins)
        # one unpacked byte per index below 256 bins
        stored = idx.astype("u1" if bins <= 256 else "<u2")
        return Compressed(_deflate_rows(stored), self.reconstruct(idx, bins))


@dataclass
class PcaBasis:
    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.size


def pca_fit(train_features: np.ndarray) -> PcaBasis:
    """Eigendecomposition of the full training-set covariance, largest first."""
    x = np.asarray(train_features, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("PCA input contains non-finite values")
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("PCA needs at least two training rows")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / x.shape[0]
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1]
    return PcaBasis(mean, vectors[:, order], values[order])


def pca_compress(features: np.ndarray, basis: PcaBasis, m: int) -> Compressed:
    """Keep ``m`` float32 coefficients per row, deflated. Basis cost is not counted."""
    if not 1 <= m <= basis.dim:
        raise ValueError(f"component count {m} outside [1, {basis.dim}]")
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    coeffs = ((x - basis.mean) @ basis.basis[:, :m]).astype("<f4")
    recon = basis.mean + coeffs.astype(np.float64) @ basis.basis[:, :m].T
    return Compressed(_deflate_rows(coeffs), recon.astype(np.float32))
