"""Core motion data types, synthetic corpus generation, and binary file I/O.

A motion is a dense frame matrix (N frames x D pose dims).  The latent
projection / reconstruction pair stands in for a learned encoder/decoder:
block means downsample by an integer ratio, and reconstruction repeats each
latent vector.  Token index ``i`` therefore covers frames
``[i*ratio, (i+1)*ratio)``, which is the only property downstream code
relies on.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SGMO"

DEFAULT_DOWNSAMPLE_RATIO = 4


class MotionFormatError(ValueError):
    """Base class for motion-file format problems."""


class BadMagicError(MotionFormatError):
    pass


class TruncatedPayloadError(MotionFormatError):
    pass


class NonFiniteValueError(MotionFormatError):
    pass


def _as_finite_matrix(arr, name: str) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64) if np.asarray(arr).dtype != np.float32 else np.asarray(arr)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteValueError(f"{name} contains non-finite values")
    return a


@dataclass(frozen=True)
class MotionSequence:
    """Continuous motion, frame-major: frames[i] is the pose at frame i."""

    frames: np.ndarray
    frame_rate: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "frames", _as_finite_matrix(self.frames, "frames"))
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class LatentSequence:
    """Downsampled latent vectors, one row per motion token."""

    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vectors", _as_finite_matrix(self.vectors, "vectors"))

    @property
    def length(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class DatasetRecord:
    """One annotated sample: text, its ordered segments, and a motion file."""

    id: str
    raw_text: str
    text_segments: list[str]
    motion_path: str
    precomputed_embeddings: list[list[float]] | None = None

    def __post_init__(self):
        if len(self.text_segments) < 1:
            raise ValueError(f"record {self.id}: needs at least one text segment")
        if any(not s for s in self.text_segments):
            raise ValueError(f"record {self.id}: empty text segment")
        if self.precomputed_embeddings is not None:
            dims = {len(e) for e in self.precomputed_embeddings}
            if len(dims) > 1:
                raise ValueError(f"record {self.id}: embeddings with mixed dimensions")


@dataclass(frozen=True)
class SyntheticSpec:
    """Piecewise-constant regimes plus Gaussian noise, with known boundaries."""

    regime_count: int
    frames_per_regime: list[int]
    dim: int
    regime_means: list[np.ndarray] = field(default_factory=list)
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.regime_count != len(self.frames_per_regime) or self.regime_count != len(self.regime_means):
            raise ValueError("regime_count must match frames_per_regime and regime_means lengths")
        if any(f < 1 for f in self.frames_per_regime):
            raise ValueError("every regime needs at least one frame")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        for m in self.regime_means:
            if len(np.atleast_1d(m)) != self.dim:
                raise ValueError("regime mean dimension mismatch")


def save_motion(m: MotionSequence, path) -> None:
    """Write a motion to the fixed little-endian binary format.

    Layout: magic "SGMO", uint32 N, uint32 D, then N*D float32 row-major.
    """
    frames = np.ascontiguousarray(m.frames, dtype="<f4")
    n, d = frames.shape
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", n, d))
            fh.write(frames.tobytes())
    except OSError as exc:
        raise MotionFormatError(f"cannot write motion file {path}: {exc}") from exc


def load_motion(path) -> MotionSequence:
    """Read a motion written by :func:`save_motion`."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise MotionFormatError(f"cannot read motion file {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic bytes (not a SGMO motion file)")
    n, d = struct.unpack_from("<II", blob, 4)
    expected = 12 + 4 * n * d
    if len(blob) < expected:
        raise TruncatedPayloadError(f"{path}: truncated payload ({len(blob)} of {expected} bytes)")
    frames = np.frombuffer(blob, dtype="<f4", count=n * d, offset=12).reshape(n, d)
    if not np.all(np.isfinite(frames)):
        raise NonFiniteValueError(f"{path}: non-finite value in payload")
    return MotionSequence(frames=frames.copy())


def synth_motion(spec: SyntheticSpec) -> tuple[MotionSequence, list[int]]:
    """Generate a piecewise-constant-plus-noise motion with known boundaries.

    Returns the motion and the cumulative frame indices where regimes change
    (empty for a single regime).  Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(spec.seed)
    chunks = []
    for count, mean in zip(spec.frames_per_regime, spec.regime_means):
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        block = np.tile(mean, (count, 1))
        if spec.noise_std > 0:
            block = block + rng.normal(0.0, spec.noise_std, size=block.shape)
        else:
            # keep the rng stream position independent of noise_std
            rng.normal(0.0, 1.0, size=block.shape)
        chunks.append(block)
    frames = np.vstack(chunks)
    boundaries = list(np.cumsum(spec.frames_per_regime)[:-1].astype(int))
    return MotionSequence(frames=frames), boundaries


def project_latent(m: MotionSequence, ratio: int = DEFAULT_DOWNSAMPLE_RATIO) -> LatentSequence:
    """Block-mean downsample: latent i = mean of frames [i*ratio, (i+1)*ratio).

    Trailing ``N mod ratio`` frames are dropped.
    """
    if ratio < 1:
        raise ValueError("ratio must be a positive integer")
    n_frames = m.num_frames
    if n_frames < ratio:
        raise ValueError(f"motion has {n_frames} frames, fewer than ratio {ratio}")
    n = n_frames // ratio
    trimmed = m.frames[: n * ratio].reshape(n, ratio, m.dim)
    return LatentSequence(vectors=trimmed.mean(axis=1))


def reconstruct_motion(v: LatentSequence, ratio: int = DEFAULT_DOWNSAMPLE_RATIO) -> MotionSequence:
    """Repeat each latent vector ratio times: N = n * ratio."""
    if ratio < 1:
        raise ValueError("ratio must be a positive integer")
    return MotionSequence(frames=np.repeat(v.vectors, ratio, axis=0))


# --- dataset JSON-lines I/O -------------------------------------------------

def write_dataset(records: list[DatasetRecord], path) -> None:
    """One JSON object per line: id, text, segments, motion[, embeddings]."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj = {
                "id": r.id,
                "text": r.raw_text,
                "segments": list(r.text_segments),
                "motion": r.motion_path,
            }
            if r.precomputed_embeddings is not None:
                obj["embeddings"] = r.precomputed_embeddings
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_dataset(path) -> list[DatasetRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            records.append(
                DatasetRecord(
                    id=obj["id"],
                    raw_text=obj["text"],
                    text_segments=list(obj["segments"]),
                    motion_path=obj["motion"],
                    precomputed_embeddings=obj.get("embeddings"),
                )
            )
    return records
