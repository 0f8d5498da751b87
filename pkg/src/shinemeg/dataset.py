"""Sessions on disk, 30 s windowing, leave-session-out splits, synthetic MEG.

A session directory holds::

    meta.json      {session_id, rate_hz, n_channels, n_samples, rows}
    meg.f32        C x T row-major little-endian float32
    labels.u8      one byte per sample (0 silence, 1 speech)
    envelope.f32   optional, T float32
    mel.f32        optional, 10 x T row-major float32
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .exceptions import (
    CorruptFile,
    InvalidConfig,
    LengthMismatch,
    MissingField,
    NonBinaryLabels,
    SessionTooShort,
    ShapeMismatch,
    TooFewSessions,
)
from .features import MODES, N_MEL, build_composite_target
from .signal_core import row_stats, zscore_normalize

DEFAULT_RATE_HZ = 250.0
META_FIELDS = ("session_id", "rate_hz", "n_channels", "n_samples", "rows")


@dataclass
class SessionRecord:
    session_id: str
    meg: np.ndarray
    labels: np.ndarray
    rate_hz: float = DEFAULT_RATE_HZ
    envelope: np.ndarray | None = None
    mel: np.ndarray | None = None

    def __post_init__(self):
        self.meg = np.atleast_2d(np.asarray(self.meg, dtype=np.float32))
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ShapeMismatch("labels must be a vector")
        if not np.isin(labels, (0, 1)).all():
            raise NonBinaryLabels(f"session {self.session_id}: labels must be 0/1")
        self.labels = labels.astype(np.uint8)
        if self.meg.shape[1] != self.labels.size:
            raise LengthMismatch(f"meg has {self.meg.shape[1]} samples, labels {self.labels.size}")
        if not self.rate_hz > 0:
            raise InvalidConfig("rate_hz must be positive")
        if self.envelope is not None:
            self.envelope = np.asarray(self.envelope, dtype=np.float32).ravel()
            if self.envelope.size != self.n_samples:
                raise LengthMismatch("envelope length differs from labels")
        if self.mel is not None:
            self.mel = np.atleast_2d(np.asarray(self.mel, dtype=np.float32))
            if self.mel.shape != (N_MEL, self.n_samples):
                raise ShapeMismatch(f"mel must be {N_MEL} x {self.n_samples}, got {self.mel.shape}")

    @property
    def n_channels(self) -> int:
        return self.meg.shape[0]

    @property
    def n_samples(self) -> int:
        return self.labels.size

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.rate_hz

    @property
    def has_aux(self) -> bool:
        return self.envelope is not None and self.mel is not None


@dataclass
class TrainingWindow:
    meg: np.ndarray
    target: np.ndarray
    session_id: str
    start_sample: int


@dataclass(frozen=True)
class SplitPlan:
    train_sessions: tuple
    val_sessions: tuple
    seed: int

    def to_dict(self):
        return {"train_sessions": list(self.train_sessions), "val_sessions": list(self.val_sessions), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(tuple(d["train_sessions"]), tuple(d["val_sessions"]), int(d["seed"]))
        except KeyError as exc:
            raise MissingField(f"split plan missing {exc}") from exc


# -- storage ---------------------------------------------------------------


def write_session(s: SessionRecord, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = ["meg", "labels"]
    (d / "meg.f32").write_bytes(np.ascontiguousarray(s.meg, dtype="<f4").tobytes())
    (d / "labels.u8").write_bytes(s.labels.astype(np.uint8).tobytes())
    if s.envelope is not None:
        (d / "envelope.f32").write_bytes(s.envelope.astype("<f4").tobytes())
        rows.append("envelope")
    if s.mel is not None:
        (d / "mel.f32").write_bytes(np.ascontiguousarray(s.mel, dtype="<f4").tobytes())
        rows.append("mel")
    meta = {
        "session_id": s.session_id,
        "rate_hz": s.rate_hz,
        "n_channels": s.n_channels,
        "n_samples": s.n_samples,
        "rows": rows,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return d


def _read_payload(path: Path, dtype, count: int) -> np.ndarray:
    if not path.exists():
        raise MissingField(f"{path.name} missing in {path.parent}")
    raw = path.read_bytes()
    expected = count * np.dtype(dtype).itemsize
    if len(raw) != expected:
        raise CorruptFile(f"{path}: {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=dtype).copy()


def load_session(directory, normalize: bool = False) -> SessionRecord:
    """Read a session directory.

    With ``normalize`` the MEG channels are z-scored using statistics of
    this session only; otherwise the payload is returned bit-exact.
    """
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise MissingField(f"meta.json missing in {d}")
    try:
        meta = json.loads(meta_path.read_text())
    except ValueError as exc:
        raise CorruptFile(f"{meta_path}: invalid JSON") from exc
    for key in META_FIELDS:
        if key not in meta:
            raise MissingField(f"{meta_path}: field {key!r} missing")
    c, t = int(meta["n_channels"]), int(meta["n_samples"])
    rows = meta["rows"]
    meg = _read_payload(d / "meg.f32", "<f4", c * t).reshape(c, t)
    labels = _read_payload(d / "labels.u8", np.uint8, t)
    env = _read_payload(d / "envelope.f32", "<f4", t) if "envelope" in rows else None
    mel = _read_payload(d / "mel.f32", "<f4", N_MEL * t).reshape(N_MEL, t) if "mel" in rows else None
    s = SessionRecord(str(meta["session_id"]), meg, labels, float(meta["rate_hz"]), env, mel)
    return normalize_session(s) if normalize else s


def normalize_session(s: SessionRecord) -> SessionRecord:
    return replace(s, meg=zscore_normalize(s.meg, row_stats(s.meg)))


def list_sessions(root) -> list[Path]:
    """Session directories under ``root``, sorted by name."""
    root = Path(root)
    if not root.is_dir():
        raise MissingField(f"data root {root} does not exist")
    return sorted(p for p in root.iterdir() if (p / "meta.json").exists())


def load_corpus(root, normalize: bool = True) -> dict[str, SessionRecord]:
    out = {}
    for p in list_sessions(root):
        s = load_session(p, normalize=normalize)
        out[s.session_id] = s
    return out


# -- windows ---------------------------------------------------------------


def window_starts(n_samples: int, window: int, stride: int) -> list[int]:
    """Regular starts plus one end-anchored start if the tail is uncovered."""
    if window <= 0 or stride <= 0:
        raise InvalidConfig("window and stride must be positive")
    if n_samples < window:
        raise SessionTooShort(f"{n_samples} samples < one window of {window}")
    starts = list(range(0, n_samples - window + 1, stride))
    if starts[-1] + window < n_samples:
        starts.append(n_samples - window)
    return starts


def session_target(s: SessionRecord, mode: str) -> np.ndarray:
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}")
    if mode == "extended" and not s.has_aux:
        raise MissingField(f"session {s.session_id} has no envelope/mel rows for extended mode")
    return build_composite_target(s.envelope, s.mel, s.labels, mode).bands


def make_windows(s: SessionRecord, window_seconds: float = 30.0, stride_seconds: float = 30.0, mode: str = "standard") -> list[TrainingWindow]:
    w = int(round(window_seconds * s.rate_hz))
    stride = int(round(stride_seconds * s.rate_hz))
    starts = window_starts(s.n_samples, w, stride)
    target = session_target(s, mode)
    return [TrainingWindow(s.meg[:, a:a + w], target[:, a:a + w], s.session_id, a) for a in starts]


# -- splits ----------------------------------------------------------------


def leave_session_out_split(session_ids, n_val: int = 8, seed: int = 0) -> SplitPlan:
    given = [str(x) for x in session_ids]
    ids = sorted(set(given))
    if len(ids) != len(given):
        raise InvalidConfig("duplicate session ids")
    if n_val < 1:
        raise InvalidConfig("n_val must be >= 1")
    if n_val >= len(ids):
        raise TooFewSessions(f"need more than {n_val} sessions, got {len(ids)}")
    rng = np.random.default_rng(seed)
    picked = set(rng.choice(len(ids), size=n_val, replace=False).tolist())
    val = tuple(ids[i] for i in sorted(picked))
    train = tuple(ids[i] for i in range(len(ids)) if i not in picked)
    return SplitPlan(train, val, int(seed))


# -- synthetic corpus ------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings for envelope-following synthetic MEG.

    ``head_seed`` fixes the mixing matrix and channel lags, i.e. the
    simulated subject, so every session drawn with the same ``head_seed``
    shares one forward model. ``snr`` is a per-channel power ratio;
    ``float('inf')`` disables noise.
    """

    duration_s: float = 120.0
    rate_hz: float = DEFAULT_RATE_HZ
    n_channels: int = 32
    snr: float = 1.0
    speech_median_s: float = 2.5
    silence_median_s: float = 0.8
    duration_sigma: float = 0.5
    max_lag_ms: float = 40.0
    noise_exponent: float = 1.0
    aux_informative: bool = True
    head_seed: int = 0

    def validate(self, window_seconds: float = 30.0):
        if self.n_channels < 1:
            raise InvalidConfig("n_channels must be >= 1")
        if not self.rate_hz > 0:
            raise InvalidConfig("rate_hz must be positive")
        if self.duration_s < window_seconds:
            raise InvalidConfig(f"duration {self.duration_s} s is shorter than one {window_seconds} s window")
        if not self.snr > 0:
            raise InvalidConfig("snr must be positive")
        if self.speech_median_s <= 0 or self.silence_median_s <= 0 or self.duration_sigma < 0:
            raise InvalidConfig("segment duration parameters must be positive")


def _segment_labels(rng, n, rate, cfg: SynthConfig):
    labels = np.zeros(n, dtype=np.uint8)
    pos, speech = 0, bool(rng.integers(2))
    while pos < n:
        median = cfg.speech_median_s if speech else cfg.silence_median_s
        length = max(1, int(round(rng.lognormal(np.log(median), cfg.duration_sigma) * rate)))
        labels[pos:pos + length] = speech
        pos += length
        speech = not speech
    return labels


def _slow_modulation(rng, n, rate, cutoff_hz, rows=1):
    sos = signal.butter(2, cutoff_hz, fs=rate, output="sos")
    x = signal.sosfiltfilt(sos, rng.standard_normal((rows, n)), axis=1)
    x /= x.std(axis=1, keepdims=True) + 1e-12
    return np.exp(0.5 * x)


def pink_noise(rng, rows, n, exponent=1.0):
    """Gaussian noise with power spectrum proportional to 1/f**exponent."""
    spec = rng.standard_normal((rows, n // 2 + 1)) + 1j * rng.standard_normal((rows, n // 2 + 1))
    f = np.fft.rfftfreq(n)
    f[0] = f[1]
    spec *= f ** (-exponent / 2.0)
    x = np.fft.irfft(spec, n=n, axis=1)
    return x / x.std(axis=1, keepdims=True)


def synth_latents(rng, labels, rate):
    """Binary row, envelope and band rows tied to the speech segments."""
    n = labels.size
    b = labels.astype(np.float64)
    sos = signal.butter(2, 8.0, fs=rate, output="sos")
    env = signal.sosfiltfilt(sos, b * _slow_modulation(rng, n, rate, 4.0)[0])
    bands = signal.sosfiltfilt(sos, b * _slow_modulation(rng, n, rate, 3.0, rows=N_MEL), axis=1)
    return b, np.maximum(env, 0.0), np.maximum(bands, 0.0)


def head_model(cfg: SynthConfig, n_latent: int):
    """Mixing matrix (C x n_latent) and per-channel lags in samples."""
    rng = np.random.default_rng([cfg.head_seed, 0x5EED])
    mixing = rng.standard_normal((cfg.n_channels, n_latent))
    max_lag = int(round(cfg.max_lag_ms * 1e-3 * cfg.rate_hz))
    lags = rng.integers(0, max_lag + 1, size=cfg.n_channels)
    return mixing, lags


def synth_session(cfg: SynthConfig, seed: int, session_id: str | None = None) -> SessionRecord:
    """Simulate one session of envelope-following MEG.

    Speech/silence runs have log-normal durations. The binary, envelope and
    band latents are standardized, mixed into ``n_channels`` sensors by the
    head model with a per-channel lag of up to ``max_lag_ms``, and pink noise
    is added at ``snr``.
    """
    cfg.validate()
    rng = np.random.default_rng([cfg.head_seed, int(seed)])
    n = int(round(cfg.duration_s * cfg.rate_hz))
    labels = _segment_labels(rng, n, cfg.rate_hz, cfg)
    b, env, bands = synth_latents(rng, labels, cfg.rate_hz)
    latents = zscore_normalize(np.vstack([b, env, bands])).astype(np.float64)

    mixing, lags = head_model(cfg, latents.shape[0])
    clean = np.empty((cfg.n_channels, n))
    for c in range(cfg.n_channels):
        src = mixing[c] @ latents
        lag = int(lags[c])
        clean[c] = np.concatenate([np.full(lag, src[0]), src[: n - lag]]) if lag else src

    meg = clean
    if np.isfinite(cfg.snr):
        noise = pink_noise(rng, cfg.n_channels, n, cfg.noise_exponent)
        scale = clean.std(axis=1, keepdims=True) / np.sqrt(cfg.snr)
        meg = clean + noise * scale

    if not cfg.aux_informative:
        env = np.abs(pink_noise(rng, 1, n)[0])
        bands = np.abs(pink_noise(rng, N_MEL, n))
    sid = session_id if session_id is not None else f"synth-{int(seed):04d}"
    return SessionRecord(sid, meg.astype(np.float32), labels, cfg.rate_hz, env.astype(np.float32), bands.astype(np.float32))


def synth_corpus(out_dir, n_sessions: int, cfg: SynthConfig, seed: int = 0) -> list[Path]:
    """Write ``n_sessions`` synthetic sessions under ``out_dir``."""
    out = Path(out_dir)
    paths = []
    for i in range(n_sessions):
        s = synth_session(cfg, seed=seed * 100003 + i, session_id=f"sess-{i:03d}")
        paths.append(write_session(s, out / s.session_id))
    return paths


def pnpl_adapter_notes() -> str:
    """Field mapping for converting a LibriBrain/pnpl export into this layout.

    No reader is shipped. A converter should write, per run: the MEG array
    (306 x T at 250 Hz) to ``meg.f32``, the speech/silence label track to
    ``labels.u8``, and the run identifier as ``session_id``. Official test
    runs are kept in a separate data root.
    """
    return pnpl_adapter_notes.__doc__
