"""Audio loading, log-mel features, and the ULMF feature-file format.

The feature file is the seam between this pipeline and any external
frame-feature extractor: anything that writes a valid ULMF file can feed
the quantizer, no matter how the features were computed.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import FeatureFileError, WavFormatError

REQUIRED_SAMPLE_RATE = 16000

ULMF_MAGIC = b"ULMF"
ULMF_VERSION = 1


@dataclass
class AudioBuffer:
    """Mono 16 kHz waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != REQUIRED_SAMPLE_RATE:
            raise WavFormatError(
                f"sample_rate={self.sample_rate}, expected {REQUIRED_SAMPLE_RATE}"
            )
        if not np.all(np.isfinite(self.samples)):
            raise WavFormatError("samples contain non-finite values")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    window_ms: int = 25
    hop_ms: int = 20
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.hop_ms > self.window_ms:
            raise ValueError(f"hop_ms={self.hop_ms} exceeds window_ms={self.window_ms}")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def window_samples(self) -> int:
        return REQUIRED_SAMPLE_RATE * self.window_ms // 1000

    @property
    def hop_samples(self) -> int:
        return REQUIRED_SAMPLE_RATE * self.hop_ms // 1000

    @property
    def frame_rate(self) -> float:
        return 1000.0 / self.hop_ms


@dataclass
class FeatureMatrix:
    """T x D frame features plus provenance.

    Values are held in float64; the on-disk payload is float32, so a
    write/read round trip is exact precisely when every value is
    float32-representable (always true for data that came from a file).
    """

    frames: np.ndarray
    frame_rate: float
    source_tag: str = ""

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        # keep the header-representable value so round trips are exact
        self.frame_rate = float(np.float32(self.frame_rate))
        if self.frames.size == 0:
            raise FeatureFileError("feature matrix must have T >= 1 and D >= 1")
        if not np.all(np.isfinite(self.frames)):
            raise FeatureFileError("feature matrix contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (
            self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
            and self.frame_rate == other.frame_rate
            and self.source_tag == other.source_tag
        )


def load_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file that must be PCM 16-bit, mono, 16 kHz.

    Samples are normalized to [-1, 1] by dividing by 32768. Anything that
    violates the precondition raises WavFormatError naming the field.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise WavFormatError(f"compression={wf.getcomptype()!r}, expected PCM ('NONE')")
            if wf.getnchannels() != 1:
                raise WavFormatError(f"channels={wf.getnchannels()}, expected 1")
            if wf.getsampwidth() != 2:
                raise WavFormatError(f"bit_depth={8 * wf.getsampwidth()}, expected 16")
            if wf.getframerate() != REQUIRED_SAMPLE_RATE:
                raise WavFormatError(
                    f"sample_rate={wf.getframerate()}, expected {REQUIRED_SAMPLE_RATE}"
                )
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"malformed header: {exc}") from exc
    except EOFError as exc:
        raise WavFormatError(f"malformed header: {exc}") from exc
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float64) / 32768.0, REQUIRED_SAMPLE_RATE)


def save_wav(path, audio: AudioBuffer) -> None:
    """Inverse of load_wav, mainly for tests and synthetic fixtures."""
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate)
        wf.writeframes(pcm.tobytes())


def mel_scale(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular mel filters on the rfft bin grid, each with unit area.

    Unit area means sum(weights) * bin_spacing_hz == 1 per filter.
    """
    n_bins = n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * (REQUIRED_SAMPLE_RATE / n_fft)
    edges = mel_to_hz(np.linspace(mel_scale(fmin), mel_scale(fmax), n_mels + 2))
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_hz - lo) / max(center - lo, 1e-12)
        down = (hi - bin_hz) / max(hi - center, 1e-12)
        tri = np.maximum(0.0, np.minimum(up, down))
        area = tri.sum() * (REQUIRED_SAMPLE_RATE / n_fft)
        if area > 0:
            tri /= area
        bank[m] = tri
    return bank


def logmel(audio: AudioBuffer, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    """Log mel-filterbank energies at the configured frame rate.

    Hann window, magnitude-squared spectrum, unit-area triangular mel
    filters, natural log with a floor. Frame count is
    floor((n_samples - win) / hop) + 1; no padding or centering.
    """
    cfg = cfg or FeatureConfig()
    win, hop = cfg.window_samples, cfg.hop_samples
    x = audio.samples
    if len(x) < win:
        raise WavFormatError(
            f"audio has {len(x)} samples, shorter than one {win}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    window = np.hanning(win)
    spectrum = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    bank = mel_filterbank(cfg.n_mels, win, cfg.fmin, cfg.fmax)
    energies = spectrum @ bank.T
    feats = np.log(np.maximum(energies, cfg.log_floor))
    return FeatureMatrix(feats, cfg.frame_rate, source_tag=f"logmel{cfg.n_mels}")


def write_features(m: FeatureMatrix, path) -> None:
    """Serialize to the ULMF format (header + float32 row-major payload)."""
    tag = m.source_tag.encode("utf-8")
    header = ULMF_MAGIC + struct.pack(
        "<IIIfI", ULMF_VERSION, m.n_frames, m.dim, np.float32(m.frame_rate), len(tag)
    )
    payload = np.ascontiguousarray(m.frames, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(tag)
        fh.write(payload)


def read_features(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != ULMF_MAGIC:
        raise FeatureFileError(f"bad magic {blob[:4]!r}, expected {ULMF_MAGIC!r}")
    if len(blob) < 24:
        raise FeatureFileError("truncated header")
    version, n_frames, dim, frame_rate, tag_len = struct.unpack("<IIIfI", blob[4:24])
    if version != ULMF_VERSION:
        raise FeatureFileError(f"version mismatch: file={version}, expected {ULMF_VERSION}")
    tag_end = 24 + tag_len
    payload_end = tag_end + 4 * n_frames * dim
    if len(blob) < payload_end:
        raise FeatureFileError(
            f"truncated payload: need {payload_end} bytes, file has {len(blob)}"
        )
    tag = blob[24:tag_end].decode("utf-8")
    frames = np.frombuffer(blob[tag_end:payload_end], dtype="<f4").reshape(n_frames, dim)
    return FeatureMatrix(frames.astype(np.float64), frame_rate, source_tag=tag)
