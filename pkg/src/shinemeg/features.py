"""Audio-derived auxiliary targets: speech envelope and mel bands.

Both features are produced at the MEG rate by integer decimation of the
audio rate, so ``out_rate_hz`` must divide ``rate_hz``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .exceptions import (
    CorruptFile,
    InvalidConfig,
    LengthMismatch,
    MissingField,
    NonBinaryLabels,
    RateMismatch,
    ShapeMismatch,
)
from .signal_core import ScoreSequence, zscore_normalize

ENVELOPE_CUTOFF_HZ = 25.0
ENVELOPE_POWER = 0.6
MEL_FMIN = 50.0
MEL_FMAX = 8000.0
N_MEL = 10
N_FFT = 512

EXTENDED_ROLES = ("envelope",) + tuple(f"mel_{i}" for i in range(1, N_MEL + 1)) + ("binary",)
STANDARD_ROLES = ("binary",)
MODES = ("standard", "extended")


@dataclass(frozen=True)
class AudioWaveform:
    samples: np.ndarray
    rate_hz: float

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float32)
        if x.ndim != 1 or x.size == 0:
            raise ShapeMismatch("audio must be a non-empty mono vector")
        if not self.rate_hz > 0:
            raise InvalidConfig("audio rate must be positive")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class CompositeTarget:
    bands: np.ndarray
    roles: tuple
    rate_hz: float

    @property
    def binary(self) -> np.ndarray:
        return self.bands[self.roles.index("binary")]


def _decimation(rate_hz, out_rate_hz) -> int:
    if not out_rate_hz > 0 or out_rate_hz >= rate_hz:
        raise RateMismatch(f"output rate {out_rate_hz} must be positive and below {rate_hz}")
    factor = rate_hz / out_rate_hz
    if abs(factor - round(factor)) > 1e-9:
        raise RateMismatch(f"{rate_hz} Hz is not an integer multiple of {out_rate_hz} Hz")
    return int(round(factor))


def compute_envelope(a: AudioWaveform, out_rate_hz: float = 250.0) -> ScoreSequence:
    """Rectify, low-pass at 25 Hz (one pole), decimate, compress with x**0.6."""
    q = _decimation(a.rate_hz, out_rate_hz)
    rect = np.abs(a.samples.astype(np.float64))
    alpha = 1.0 - np.exp(-2.0 * np.pi * ENVELOPE_CUTOFF_HZ / a.rate_hz)
    smooth = signal.lfilter([alpha], [1.0, alpha - 1.0], rect)
    n_out = len(a) // q
    dec = np.maximum(smooth[: n_out * q : q], 0.0)
    return ScoreSequence(np.power(dec, ENVELOPE_POWER), out_rate_hz)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bands: int, n_fft: int, rate_hz: float, fmin=MEL_FMIN, fmax=MEL_FMAX) -> np.ndarray:
    """Triangular filters (HTK mel scale), shape ``n_bands x (n_fft//2 + 1)``."""
    fmax = min(fmax, rate_hz / 2.0)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / rate_hz)
    fb = np.zeros((n_bands, freqs.size))
    for i in range(n_bands):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def mel_center_frequencies(n_bands: int = N_MEL, rate_hz: float = 16000.0) -> np.ndarray:
    fmax = min(MEL_FMAX, rate_hz / 2.0)
    return mel_to_hz(np.linspace(hz_to_mel(MEL_FMIN), hz_to_mel(fmax), n_bands + 2))[1:-1]


def compute_mel_bands(a: AudioWaveform, n_bands: int = N_MEL, out_rate_hz: float = 250.0, n_fft: int = N_FFT) -> np.ndarray:
    """Log-compressed mel energies with one frame per output sample.

    Frames are Hann-windowed, ``n_fft`` long, hop ``rate_hz / out_rate_hz``,
    centred on each output sample with zero padding at the ends.
    """
    if n_bands < 1:
        raise InvalidConfig("n_bands must be >= 1")
    hop = _decimation(a.rate_hz, out_rate_hz)
    n_frames = len(a) // hop
    padded = np.pad(a.samples.astype(np.float64), (n_fft // 2, n_fft))
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[: n_frames * hop : hop]
    spec = np.abs(np.fft.rfft(frames * np.hanning(n_fft), axis=1))
    energies = mel_filterbank(n_bands, n_fft, a.rate_hz) @ spec.T
    return np.log1p(energies).astype(np.float32)


def build_composite_target(env, mel, binary, mode: str = "extended", standardize: bool = True) -> CompositeTarget:
    """Stack (envelope, mel_1..mel_n, binary) rows, or binary alone.

    Envelope and mel rows are z-scored over their full length when
    ``standardize`` is set; the binary row is never touched.
    """
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}")
    b = binary.values if isinstance(binary, ScoreSequence) else np.asarray(binary)
    rate = binary.rate_hz if isinstance(binary, ScoreSequence) else None
    if not np.isin(b, (0, 1)).all():
        raise NonBinaryLabels("binary row must contain only 0 and 1")
    b = b.astype(np.float32)
    if mode == "standard":
        return CompositeTarget(b[None, :], STANDARD_ROLES, rate)

    e = env.values if isinstance(env, ScoreSequence) else np.asarray(env, dtype=np.float32)
    if isinstance(env, ScoreSequence) and rate is not None and env.rate_hz != rate:
        raise RateMismatch("envelope and binary rates differ")
    m = np.atleast_2d(np.asarray(mel, dtype=np.float32))
    if m.shape[0] != N_MEL:
        raise ShapeMismatch(f"expected {N_MEL} mel rows, got {m.shape[0]}")
    if not (e.shape[-1] == m.shape[-1] == b.shape[-1]):
        raise LengthMismatch(f"lengths differ: envelope {e.shape[-1]}, mel {m.shape[-1]}, binary {b.shape[-1]}")
    aux = np.vstack([e[None, :], m]).astype(np.float32)
    if standardize:
        aux = zscore_normalize(aux)
    return CompositeTarget(np.vstack([aux, b[None, :]]), EXTENDED_ROLES, rate)


def read_audio(path) -> AudioWaveform:
    """Read raw float32 LE audio with a ``.json`` sidecar, or a WAV file."""
    path = Path(path)
    if path.suffix.lower() == ".wav":
        from scipy.io import wavfile

        rate, data = wavfile.read(path)
        data = np.asarray(data)
        if data.ndim > 1:
            data = data.mean(axis=1)
        if np.issubdtype(data.dtype, np.integer):
            data = data / float(np.iinfo(data.dtype).max)
        return AudioWaveform(data.astype(np.float32), float(rate))
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise MissingField(f"{sidecar} missing")
    meta = json.loads(sidecar.read_text())
    if "rate_hz" not in meta:
        raise MissingField(f"{sidecar}: rate_hz missing")
    raw = path.read_bytes()
    if len(raw) % 4:
        raise CorruptFile(f"{path}: size is not a multiple of 4 bytes")
    return AudioWaveform(np.frombuffer(raw, dtype="<f4").copy(), float(meta["rate_hz"]))


def write_audio(a: AudioWaveform, path) -> None:
    path = Path(path)
    path.write_bytes(a.samples.astype("<f4").tobytes())
    path.with_suffix(".json").write_text(json.dumps({"rate_hz": a.rate_hz, "n_samples": len(a)}))
