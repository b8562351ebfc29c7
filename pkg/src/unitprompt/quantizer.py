"""k-means codebook fitting and frame-to-unit assignment.

Continuous frame features become discrete units by nearest-centroid
lookup against a codebook fitted with Lloyd's algorithm (k-means++
initialization). Unit sequences are what the language model consumes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import CodebookFileError, QuantizerError
from .featio import FeatureMatrix

ULMC_MAGIC = b"ULMC"
ULMC_VERSION = 1


@dataclass
class Codebook:
    centroids: np.ndarray
    inertia: float
    rng_seed: int
    inertia_history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=np.float64))
        if self.k < 2:
            raise QuantizerError(f"codebook needs k >= 2, got {self.k}")
        if not np.all(np.isfinite(self.centroids)):
            raise QuantizerError("centroids contain non-finite values")
        if self.inertia < 0:
            raise QuantizerError(f"inertia must be >= 0, got {self.inertia}")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class UnitSequence:
    """Discrete unit tokens for one segment of one patient's recording."""

    units: np.ndarray
    patient_id: str = ""
    segment_index: int = 0

    def __post_init__(self):
        self.units = np.asarray(self.units, dtype=np.int32)
        if self.units.ndim != 1 or len(self.units) == 0:
            raise QuantizerError("unit sequence must be a non-empty 1-d array")
        if np.any(self.units < 0):
            raise QuantizerError("unit ids must be non-negative")
        if self.segment_index < 0:
            raise QuantizerError("segment_index must be >= 0")

    def __len__(self) -> int:
        return len(self.units)


def _stack_frames(features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        features = [features]
    mats = []
    dim = None
    for m in features:
        frames = m.frames if isinstance(m, FeatureMatrix) else np.atleast_2d(np.asarray(m, float))
        if dim is None:
            dim = frames.shape[1]
        elif frames.shape[1] != dim:
            raise QuantizerError(
                f"dimension mismatch across feature matrices: {frames.shape[1]} != {dim}"
            )
        mats.append(frames)
    if not mats:
        raise QuantizerError("no feature matrices given")
    return np.concatenate(mats, axis=0)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new centroid drawn with prob proportional
    to squared distance from the nearest already-chosen centroid."""
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        idx = rng.choice(n, p=d2 / d2.sum())
        centroids[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centroids[j]) ** 2, axis=1))
    return centroids


def kmeans_fit(features, k: int, max_iters: int = 300, tol: float = 1e-6,
               seed: int = 0) -> Codebook:
    """Fit a k-centroid codebook with Lloyd's algorithm.

    Deterministic given the seed. Stops when the inertia improvement over
    one iteration drops below tol, or after max_iters update steps. Empty
    clusters are re-seeded to the point currently farthest from its
    assigned centroid.
    """
    x = _stack_frames(features)
    n = x.shape[0]
    if k < 2:
        raise QuantizerError(f"k must be >= 2, got {k}")
    if n < k:
        raise QuantizerError(f"total frames ({n}) fewer than k ({k})")
    if np.unique(x, axis=0).shape[0] < k:
        raise QuantizerError(f"fewer distinct points than k ({k})")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(x, k, rng)
    history = []
    prev = np.inf
    labels = None
    for iteration in range(max_iters + 1):
        labels, d2 = kernels.nearest_centroids(x, centroids)
        inertia = float(d2.sum())
        history.append(inertia)
        if prev - inertia < tol or iteration == max_iters:
            break
        prev = inertia
        sums, counts = kernels.cluster_sums(x, labels, k)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        for j in np.flatnonzero(~nonempty):
            far = int(np.argmax(d2))
            centroids[j] = x[far]
            d2[far] = 0.0
    return Codebook(centroids, history[-1], seed, inertia_history=history)


def kmeans_assign(m: FeatureMatrix, cb: Codebook, patient_id: str = "",
                  segment_index: int = 0) -> UnitSequence:
    """Map each frame to its nearest centroid (ties -> lowest index)."""
    if m.dim != cb.feature_dim:
        raise QuantizerError(
            f"dimension mismatch: features D={m.dim}, codebook D={cb.feature_dim}"
        )
    labels, _ = kernels.nearest_centroids(m.frames, cb.centroids)
    return UnitSequence(labels, patient_id=patient_id, segment_index=segment_index)


def dedup_units(s: UnitSequence) -> UnitSequence:
    """Collapse runs of adjacent equal units to a single unit."""
    keep = np.empty(len(s.units), dtype=bool)
    keep[0] = True
    keep[1:] = s.units[1:] != s.units[:-1]
    return UnitSequence(s.units[keep], patient_id=s.patient_id,
                        segment_index=s.segment_index)


def write_codebook(cb: Codebook, path) -> None:
    """Serialize to the ULMC format."""
    header = ULMC_MAGIC + struct.pack(
        "<IIIQd", ULMC_VERSION, cb.k, cb.feature_dim, cb.rng_seed, cb.inertia
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(cb.centroids, dtype="<f4").tobytes())


def read_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != ULMC_MAGIC:
        raise CodebookFileError(f"bad magic {blob[:4]!r}, expected {ULMC_MAGIC!r}")
    header_end = 4 + struct.calcsize("<IIIQd")
    if len(blob) < header_end:
        raise CodebookFileError("truncated header")
    version, k, dim, seed, inertia = struct.unpack("<IIIQd", blob[4:header_end])
    if version != ULMC_VERSION:
        raise CodebookFileError(f"version mismatch: file={version}, expected {ULMC_VERSION}")
    end = header_end + 4 * k * dim
    if len(blob) < end:
        raise CodebookFileError(f"truncated payload: need {end} bytes, file has {len(blob)}")
    centroids = np.frombuffer(blob[header_end:end], dtype="<f4").reshape(k, dim)
    return Codebook(centroids.astype(np.float64), inertia, seed)
