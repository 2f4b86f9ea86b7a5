"""PCM WAV parsing and MFCC feature extraction.

The pipeline is pre-emphasis, framing, Hamming window, power spectrum,
triangular mel filterbank, floored log, orthonormal DCT-II, optional cepstral
mean normalization, then delta and delta-delta streams.
"""

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from qari.errors import (
    AudioTooShortError,
    EmptyAudioError,
    EmptyInputError,
    NotRiffError,
    TruncatedChunkError,
    UnsupportedFormatError,
    WrongSampleRateError,
)

SAMPLE_RATE = 16000
PCM_FORMAT = 1


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate_hz != SAMPLE_RATE:
            raise WrongSampleRateError(
                f"expected {SAMPLE_RATE} Hz audio, got {self.sample_rate_hz} Hz")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class FrontendConfig:
    pre_emphasis: float = 0.97
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    n_mel_filters: int = 26
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    n_cepstra: int = 13
    delta_window: int = 2
    cmn_enabled: bool = True
    log_floor: float = 1e-10
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        if self.fft_size < self.frame_len:
            raise ValueError(
                f"fft_size {self.fft_size} is shorter than the frame ({self.frame_len} samples)")
        if self.fmax_hz > self.sample_rate_hz / 2:
            raise ValueError("fmax_hz exceeds the Nyquist frequency")
        if not 0 <= self.fmin_hz < self.fmax_hz:
            raise ValueError("need 0 <= fmin_hz < fmax_hz")
        if self.n_cepstra > self.n_mel_filters:
            raise ValueError("n_cepstra cannot exceed n_mel_filters")
        if self.delta_window < 1:
            raise ValueError("delta_window must be >= 1")

    @property
    def frame_len(self):
        return int(round(self.frame_len_ms * self.sample_rate_hz / 1000))

    @property
    def hop(self):
        return int(round(self.hop_ms * self.sample_rate_hz / 1000))

    @property
    def feature_dim(self):
        return 3 * self.n_cepstra

    def fingerprint(self):
        """Canonical one-line serialization, stored alongside trained models."""
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_fingerprint(cls, text):
        return cls(**json.loads(text))


@dataclass
class FeatureSequence:
    """L x (3 * n_cepstra) matrix of MFCC + delta + delta-delta frames."""

    frames: np.ndarray
    source_id: str = ""

    def __len__(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


# ---------------------------------------------------------------------------
# WAV container

def decode_wav(data):
    """Parse a RIFF/WAVE byte string holding 16 kHz mono PCM16 audio."""
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise NotRiffError("missing RIFF/WAVE signature")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        body_end = body_start + size
        if body_end > len(data):
            raise TruncatedChunkError(
                f"chunk {chunk_id!r} declares {size} bytes, only {len(data) - body_start} present")
        if chunk_id == b"fmt ":
            if size < 16:
                raise TruncatedChunkError("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", data, body_start)
        elif chunk_id == b"data":
            if fmt is None:
                raise UnsupportedFormatError("data chunk precedes fmt chunk")
            pcm = data[body_start:body_end]
            break
        # chunks are word aligned
        pos = body_end + (size & 1)

    if fmt is None:
        raise TruncatedChunkError("no fmt chunk found")
    if pcm is None:
        raise TruncatedChunkError("no data chunk found")

    format_code, channels, rate, _byte_rate, _align, bits = fmt
    if format_code != PCM_FORMAT:
        raise UnsupportedFormatError(f"format code {format_code} is not PCM")
    if channels != 1:
        raise UnsupportedFormatError(f"{channels} channels, expected mono")
    if bits != 16:
        raise UnsupportedFormatError(f"{bits} bits per sample, expected 16")
    if rate != SAMPLE_RATE:
        raise WrongSampleRateError(f"sample rate {rate} Hz, expected {SAMPLE_RATE}")
    if len(pcm) % 2:
        raise TruncatedChunkError("odd byte count in 16-bit data chunk")
    if not pcm:
        raise EmptyAudioError("data chunk holds zero samples")

    samples = np.frombuffer(pcm, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples, rate)


def encode_wav(samples, sample_rate_hz=SAMPLE_RATE):
    """Canonical 44-byte-header PCM16 mono WAV. Samples are clipped to [-1, 1)."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 32767 / 32768)
    pcm = np.round(x * 32768.0).astype("<i2").tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, PCM_FORMAT, 1, sample_rate_hz,
                                    2 * sample_rate_hz, 2, 16)
    header += b"data" + struct.pack("<I", len(pcm))
    return header + pcm


def read_wav(path):
    with open(path, "rb") as f:
        return decode_wav(f.read())


# ---------------------------------------------------------------------------
# MFCC pieces

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_center_frequencies(cfg):
    """Centre frequency (Hz) of each mel filter, ascending."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz),
                                  cfg.n_mel_filters + 2))
    return edges[1:-1]


def mel_filterbank(cfg):
    """(n_mel_filters, fft_size // 2 + 1) matrix of triangular filter weights.

    Each triangle is evaluated at the FFT bin frequencies, so every weight is
    non-negative and each row rises to its centre and falls after it.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz),
                                  cfg.n_mel_filters + 2))
    bin_hz = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate_hz / cfg.fft_size
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lower) / (centre - lower)
    falling = (upper - bin_hz) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def dct_matrix(n_out, n_in):
    """First `n_out` rows of the orthonormal DCT-II basis of size `n_in`."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    basis = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    basis[0] /= np.sqrt(2.0)
    return basis


def frame_count(n_samples, frame_len, hop):
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def pre_emphasize(x, coeff):
    x = np.asarray(x, dtype=np.float64)
    if coeff == 0 or x.size == 0:
        return x.copy()
    return np.concatenate([x[:1], x[1:] - coeff * x[:-1]])


def frame_signal(x, frame_len, hop):
    n_frames = frame_count(len(x), frame_len, hop)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def power_spectrum(frames, fft_size):
    windowed = frames * np.hamming(frames.shape[1])
    return np.abs(np.fft.rfft(windowed, fft_size)) ** 2


def filterbank_energies(audio, cfg):
    """Mel filterbank energies per frame, before the log."""
    frame_len, hop = cfg.frame_len, cfg.hop
    if len(audio.samples) < frame_len:
        raise AudioTooShortError(
            f"{len(audio.samples)} samples is shorter than one {frame_len}-sample frame")
    emphasized = pre_emphasize(audio.samples, cfg.pre_emphasis)
    frames = frame_signal(emphasized, frame_len, hop)
    return power_spectrum(frames, cfg.fft_size) @ mel_filterbank(cfg).T


def static_cepstra(audio, cfg):
    log_fbank = np.log(np.maximum(filterbank_energies(audio, cfg), cfg.log_floor))
    return log_fbank @ dct_matrix(cfg.n_cepstra, cfg.n_mel_filters).T


def compute_deltas(static_frames, window):
    """Regression deltas over +-window frames, replicating the edge frames."""
    c = np.asarray(static_frames, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] == 0:
        raise EmptyInputError("cannot take deltas of zero frames")
    if window < 1:
        raise ValueError("window must be >= 1")
    n = c.shape[0]
    padded = np.concatenate([np.repeat(c[:1], window, axis=0), c,
                             np.repeat(c[-1:], window, axis=0)])
    denom = 2.0 * sum(k * k for k in range(1, window + 1))
    out = np.zeros_like(c)
    for k in range(1, window + 1):
        out += k * (padded[window + k:window + k + n] - padded[window - k:window - k + n])
    return out / denom


def cepstral_mean_normalize(static_frames):
    c = np.asarray(static_frames, dtype=np.float64)
    if c.shape[0] == 0:
        raise EmptyInputError("cannot normalize zero frames")
    return c - c.mean(axis=0, keepdims=True)


def extract_features(audio, cfg=None, source_id=""):
    cfg = cfg or FrontendConfig()
    if audio.sample_rate_hz != cfg.sample_rate_hz:
        raise WrongSampleRateError(
            f"audio at {audio.sample_rate_hz} Hz, front end configured for {cfg.sample_rate_hz}")
    statics = static_cepstra(audio, cfg)
    if cfg.cmn_enabled:
        statics = cepstral_mean_normalize(statics)
    deltas = compute_deltas(statics, cfg.delta_window)
    accel = compute_deltas(deltas, cfg.delta_window)
    return FeatureSequence(np.hstack([statics, deltas, accel]), source_id)


def features_from_wav(path, cfg=None, source_id=None):
    return extract_features(read_wav(path), cfg, source_id if source_id is not None else str(path))


def format_features(seq):
    """Text form: `MFCC <L> <dim>` header, one space-separated frame per line."""
    lines = [f"MFCC {len(seq)} {seq.dim}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in seq.frames)
    return "\n".join(lines) + "\n"


def parse_features(text, source_id=""):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty feature file")
    tag, n, dim = lines[0].split()
    if tag != "MFCC":
        raise ValueError(f"bad feature header {lines[0]!r}")
    n, dim = int(n), int(dim)
    frames = np.array([[float(v) for v in ln.split()] for ln in lines[1:]], dtype=float)
    if frames.shape != (n, dim):
        raise ValueError(f"header says {n}x{dim}, body is {frames.shape}")
    return FeatureSequence(frames.reshape(n, dim), source_id)
