"""Score-averaging ensembles over prediction traces."""
from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import list_sessions, load_session
from .exceptions import (
    AllZeroWeights,
    ConfigParse,
    EmptyInput,
    InvalidConfig,
    LengthMismatch,
    MissingField,
    MixedSessions,
)
from .inference import PredictionTrace, evaluate_traces, read_trace
from .signal_core import zscore_normalize

NORMALIZATIONS = ("none", "zscore-per-trace")


@dataclass(frozen=True)
class EnsembleSpec:
    trace_paths: tuple
    weights: tuple | None = None
    normalization: str = "zscore-per-trace"

    def __post_init__(self):
        object.__setattr__(self, "trace_paths", tuple(str(p) for p in self.trace_paths))
        if not self.trace_paths:
            raise EmptyInput("ensemble needs at least one trace")
        if self.normalization not in NORMALIZATIONS:
            raise InvalidConfig(f"normalization must be one of {NORMALIZATIONS}")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != len(self.trace_paths):
                raise LengthMismatch(f"{len(w)} weights for {len(self.trace_paths)} traces")
            if any(x < 0 for x in w):
                raise InvalidConfig("weights must be nonnegative")
            if sum(w) <= 0:
                raise AllZeroWeights("weights sum to zero")
            object.__setattr__(self, "weights", w)

    def to_dict(self):
        return {"traces": list(self.trace_paths), "weights": list(self.weights) if self.weights else None, "normalization": self.normalization}


def _digest(items, normalization) -> str:
    h = hashlib.sha256(normalization.encode())
    for key, w in items:
        h.update(f"{key}:{w!r};".encode())
    return "ens-" + h.hexdigest()[:12]


def combine_traces(traces, weights=None, normalization: str = "zscore-per-trace", keys=None) -> PredictionTrace:
    """Weighted mean of traces from one session.

    Inputs are reduced in sorted ``keys`` order (default: model id, then
    scores), so the result does not depend on the order they were given.
    """
    traces = list(traces)
    if not traces:
        raise EmptyInput("ensemble needs at least one trace")
    if normalization not in NORMALIZATIONS:
        raise InvalidConfig(f"normalization must be one of {NORMALIZATIONS}")
    weights = [1.0] * len(traces) if weights is None else [float(w) for w in weights]
    if len(weights) != len(traces):
        raise LengthMismatch("one weight per trace required")
    if any(w < 0 for w in weights):
        raise InvalidConfig("weights must be nonnegative")
    if sum(weights) <= 0:
        raise AllZeroWeights("weights sum to zero")
    ref = traces[0]
    for t in traces[1:]:
        if t.session_id != ref.session_id:
            raise MixedSessions(f"traces from {ref.session_id} and {t.session_id}")
        if t.rate_hz != ref.rate_hz:
            raise MixedSessions(f"rates {ref.rate_hz} and {t.rate_hz} differ")
        if len(t) != len(ref):
            raise LengthMismatch(f"trace lengths {len(ref)} and {len(t)} differ")

    if keys is None:
        keys = [(t.model_id, t.scores.tobytes()) for t in traces]
    order = sorted(range(len(traces)), key=lambda i: (keys[i], weights[i]))
    acc = np.zeros(len(ref), dtype=np.float64)
    total = 0.0
    for i in order:
        x = traces[i].scores.astype(np.float64)
        if normalization == "zscore-per-trace":
            x = zscore_normalize(x).astype(np.float64)
        acc += weights[i] * x
        total += weights[i]
    digest_keys = [(traces[i].model_id if not isinstance(keys[i], str) else keys[i], weights[i]) for i in order]
    return PredictionTrace(ref.session_id, (acc / total).astype(np.float32), ref.rate_hz, _digest(digest_keys, normalization))


def average_traces(spec: EnsembleSpec) -> PredictionTrace:
    traces = [read_trace(p) for p in spec.trace_paths]
    return combine_traces(traces, spec.weights, spec.normalization, keys=[str(p) for p in spec.trace_paths])


def average_by_session(spec: EnsembleSpec) -> dict[str, PredictionTrace]:
    """Group the spec's traces by session and average each group."""
    groups = defaultdict(list)
    weights = spec.weights or (1.0,) * len(spec.trace_paths)
    for path, w in zip(spec.trace_paths, weights):
        t = read_trace(path)
        groups[t.session_id].append((path, t, w))
    models = {sid: sorted(t.model_id for _, t, _ in g) for sid, g in groups.items()}
    if len({tuple(m) for m in models.values()}) > 1:
        raise MixedSessions("sessions are covered by different model sets")
    out = {}
    for sid, g in sorted(groups.items()):
        out[sid] = combine_traces([t for _, t, _ in g], [w for *_, w in g], spec.normalization, keys=[str(p) for p, _, _ in g])
    return out


def load_labels(data_root, session_ids=None) -> dict[str, np.ndarray]:
    labels = {}
    for p in list_sessions(data_root):
        s = load_session(p)
        if session_ids is None or s.session_id in session_ids:
            labels[s.session_id] = s.labels
    return labels


def ensemble_evaluate(spec: EnsembleSpec, labels_root, calibrate_ids, eval_ids=None):
    """Average per session, calibrate on ``calibrate_ids``, score ``eval_ids``.

    ``eval_ids`` defaults to every traced session outside the calibration set.
    Returns ``(threshold, rows, averaged_traces)``.
    """
    averaged = average_by_session(spec)
    calibrate_ids = sorted(calibrate_ids)
    if eval_ids is None:
        eval_ids = sorted(set(averaged) - set(calibrate_ids))
    labels = load_labels(labels_root, set(calibrate_ids) | set(eval_ids))
    threshold, rows = evaluate_traces(averaged, labels, calibrate_ids, eval_ids)
    return threshold, rows, averaged


def read_manifest(path) -> dict:
    """Parse an ensemble manifest.

    Keys: ``traces`` (list of paths, relative to the manifest), optional
    ``weights``, ``normalization``, ``calibrate_on`` (session ids or a split
    file whose ``val_sessions`` are used) and ``evaluate_on``.
    """
    path = Path(path)
    try:
        m = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise MissingField(f"manifest {path} not found") from exc
    except ValueError as exc:
        raise ConfigParse(f"{path}: invalid JSON") from exc
    if "traces" not in m:
        raise MissingField(f"{path}: 'traces' missing")
    base = path.parent
    m["traces"] = [str(p if Path(p).is_absolute() else base / p) for p in m["traces"]]
    cal = m.get("calibrate_on")
    if isinstance(cal, str):
        split_path = Path(cal) if Path(cal).is_absolute() else base / cal
        m["calibrate_on"] = json.loads(split_path.read_text())["val_sessions"]
    return m
