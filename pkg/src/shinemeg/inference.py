"""Whole-session prediction, thresholding and F1-macro scoring.

Sessions are decoded with overlapping 30 s windows every 20 s. Each window
keeps only its central part (5 s trimmed per side), and with stride equal to
``window - 2 * trim`` those central parts tile the session interior. The
first and last ``trim`` seconds of the session come from the untrimmed edges
of the first and last windows, so every sample is scored exactly once.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import SessionRecord, window_starts
from .exceptions import (
    CorruptFile,
    EmptyInput,
    InconsistentGeometry,
    InvalidConfig,
    LengthMismatch,
    MissingField,
    SessionTooShort,
    SingleClassLabels,
)
from .signal_core import zscore_normalize

N_QUANTILES = 201
CLASSES = ("speech", "silence")


@dataclass
class PredictionTrace:
    session_id: str
    scores: np.ndarray
    rate_hz: float
    model_id: str = "model"

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float32).ravel()
        if not np.isfinite(self.scores).all():
            raise InvalidConfig(f"trace {self.session_id}/{self.model_id} has non-finite scores")

    def __len__(self):
        return self.scores.size


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class counts. ``speech`` treats label 1 as positive, ``silence`` label 0."""

    speech: tuple
    silence: tuple

    def counts(self, cls: str) -> dict:
        tp, fp, fn, tn = getattr(self, cls)
        return {"TP": tp, "FP": fp, "FN": fn, "TN": tn}

    @property
    def total(self) -> int:
        return int(sum(self.speech))


# -- stitching -------------------------------------------------------------


def stitch_plan(n_samples: int, window: int, stride: int, trim: int, strict: bool = True) -> list[tuple[int, int, int]]:
    """``(window_start, lo, hi)`` triples whose ``[lo, hi)`` partition the session.

    Window ``k`` owns ``[start_k + trim, start_k + window - trim)`` except that
    the first window extends down to 0, the last up to ``n_samples``, and an
    end-anchored window takes over where its predecessor stopped.
    """
    if trim < 0 or 2 * trim >= window:
        raise InvalidConfig(f"trim {trim} incompatible with window {window}")
    if strict and stride != window - 2 * trim:
        raise InconsistentGeometry(f"stride {stride} != window - 2*trim = {window - 2 * trim}")
    if stride > window - 2 * trim:
        raise InconsistentGeometry("stride larger than the retained segment leaves gaps")
    starts = window_starts(n_samples, window, stride)
    plan, prev_hi = [], 0
    for k, a in enumerate(starts):
        hi = n_samples if k == len(starts) - 1 else a + window - trim
        plan.append((a, prev_hi, hi))
        prev_hi = hi
    return plan


def _window_scores(model, windows_meg, batch_size):
    import torch

    was_training = model.training
    model.eval()
    outs = []
    try:
        with torch.no_grad():
            for i in range(0, len(windows_meg), batch_size):
                batch = torch.from_numpy(np.stack(windows_meg[i:i + batch_size]))
                outs.append(model(batch)[:, -1, :].numpy())
    finally:
        model.train(was_training)
    return np.concatenate(outs, axis=0)


def predict_session(
    model,
    s: SessionRecord,
    window_seconds: float = 30.0,
    stride_seconds: float = 20.0,
    trim_seconds: float = 5.0,
    strict: bool = True,
    model_id: str = "model",
    batch_size: int = 8,
    standardize_windows: bool = True,
) -> PredictionTrace:
    """Continuous binary-row scores for a whole (normalized) session.

    Each window's output is z-scored before stitching; the training loss is
    blind to per-window offset and gain, so this puts windows on a common
    scale.
    """
    w = int(round(window_seconds * s.rate_hz))
    stride = int(round(stride_seconds * s.rate_hz))
    trim = int(round(trim_seconds * s.rate_hz))
    if s.n_samples < w:
        raise SessionTooShort(f"session {s.session_id}: {s.duration_s:.1f} s < {window_seconds} s")
    plan = stitch_plan(s.n_samples, w, stride, trim, strict)
    raw = _window_scores(model, [s.meg[:, a:a + w] for a, _, _ in plan], batch_size)
    if standardize_windows:
        raw = zscore_normalize(raw)
    scores = np.empty(s.n_samples, dtype=np.float32)
    for (a, lo, hi), out in zip(plan, raw):
        scores[lo:hi] = out[lo - a:hi - a]
    return PredictionTrace(s.session_id, scores, s.rate_hz, model_id)


def predict_sessions(model, sessions, jobs: int = 1, **kw) -> list[PredictionTrace]:
    if jobs <= 1:
        return [predict_session(model, s, **kw) for s in sessions]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda s: predict_session(model, s, **kw), sessions))


# -- metrics ---------------------------------------------------------------


def binarize(trace, threshold: float) -> np.ndarray:
    scores = trace.scores if isinstance(trace, PredictionTrace) else np.asarray(trace)
    # compare in float64 so a float64 threshold is not rounded to float32
    return (scores.astype(np.float64) > float(threshold)).astype(np.uint8)


def confusion(pred, truth) -> ConfusionCounts:
    p = np.asarray(pred).astype(bool).ravel()
    t = np.asarray(truth).astype(bool).ravel()
    if p.shape != t.shape:
        raise LengthMismatch(f"pred has {p.size} samples, truth {t.size}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = p.size - tp - fp - fn
    return ConfusionCounts(speech=(tp, fp, fn, tn), silence=(tn, fn, fp, tp))


def f1_score_class(c: ConfusionCounts, cls: str) -> float:
    tp, fp, fn, _ = getattr(c, cls)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_macro(c: ConfusionCounts) -> float:
    """Unweighted mean of speech and silence F1; an empty class scores 0."""
    return (f1_score_class(c, "speech") + f1_score_class(c, "silence")) / 2.0


def _f1_macro_sweep(scores, truth, thresholds):
    # Counts for every threshold via one sort: pred = score > thr.
    order = np.sort(scores)
    n = scores.size
    pos_scores = np.sort(scores[truth])
    n_pos = pos_scores.size
    pred_pos = n - np.searchsorted(order, thresholds, side="right")
    tp = n_pos - np.searchsorted(pos_scores, thresholds, side="right")
    fp = pred_pos - tp
    fn = n_pos - tp
    tn = n - tp - fp - fn
    with np.errstate(invalid="ignore", divide="ignore"):
        f_sp = np.where(2 * tp + fp + fn > 0, 2 * tp / (2 * tp + fp + fn), 0.0)
        f_si = np.where(2 * tn + fn + fp > 0, 2 * tn / (2 * tn + fn + fp), 0.0)
    return (f_sp + f_si) / 2.0


def threshold_candidates(scores) -> np.ndarray:
    return np.quantile(np.asarray(scores, dtype=np.float64), np.linspace(0.0, 1.0, N_QUANTILES))


def select_threshold(trace, labels) -> float:
    """Score quantile (of 201, step 0.005) that maximizes F1-macro.

    Ties go to the candidate closest to the median.
    """
    scores = np.asarray(trace.scores if isinstance(trace, PredictionTrace) else trace, dtype=np.float64).ravel()
    truth = np.asarray(labels).astype(bool).ravel()
    if scores.size != truth.size:
        raise LengthMismatch(f"{scores.size} scores vs {truth.size} labels")
    if truth.all() or not truth.any():
        raise SingleClassLabels("threshold calibration needs both classes")
    cands = threshold_candidates(scores)
    f1 = _f1_macro_sweep(scores, truth, cands)
    best = np.flatnonzero(f1 == f1.max())
    mid = (N_QUANTILES - 1) / 2
    return float(cands[best[np.argmin(np.abs(best - mid))]])


def score_report(pred, truth) -> dict:
    c = confusion(pred, truth)
    return {
        "f1_macro": f1_macro(c),
        "f1_speech": f1_score_class(c, "speech"),
        "f1_silence": f1_score_class(c, "silence"),
    }


def evaluate_traces(traces: dict, labels: dict, calibrate_ids, eval_ids, threshold: float | None = None):
    """Calibrate one threshold on pooled calibration sessions, score the rest.

    Returns ``(threshold, rows)`` where each row has ``session_id``,
    ``threshold``, ``f1_macro``, ``f1_speech``, ``f1_silence``. The final row,
    ``session_id == "__pooled__"``, scores all evaluation samples together.
    """
    eval_ids = sorted(eval_ids)
    if not eval_ids:
        raise EmptyInput("no evaluation sessions")
    for sid in list(calibrate_ids) + eval_ids:
        if sid not in traces:
            raise MissingField(f"no trace for session {sid}")
        if sid not in labels:
            raise MissingField(f"no labels for session {sid}")
        if len(traces[sid]) != len(labels[sid]):
            raise LengthMismatch(f"session {sid}: trace {len(traces[sid])} vs labels {len(labels[sid])}")
    if threshold is None:
        cal = sorted(calibrate_ids)
        if not cal:
            raise EmptyInput("no calibration sessions")
        threshold = select_threshold(
            np.concatenate([traces[s].scores for s in cal]), np.concatenate([labels[s] for s in cal])
        )
    rows = []
    for sid in eval_ids:
        rows.append({"session_id": sid, "threshold": threshold, **score_report(binarize(traces[sid], threshold), labels[sid])})
    pooled_pred = np.concatenate([binarize(traces[s], threshold) for s in eval_ids])
    pooled_truth = np.concatenate([labels[s] for s in eval_ids])
    rows.append({"session_id": "__pooled__", "threshold": threshold, **score_report(pooled_pred, pooled_truth)})
    return threshold, rows


METRIC_COLUMNS = ("session_id", "threshold", "f1_macro", "f1_speech", "f1_silence")


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in METRIC_COLUMNS})


# -- trace files -----------------------------------------------------------


def trace_path(directory, session_id: str, model_id: str) -> Path:
    return Path(directory) / f"{session_id}.{model_id}.f32"


def write_trace(trace: PredictionTrace, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = trace_path(d, trace.session_id, trace.model_id)
    path.write_bytes(trace.scores.astype("<f4").tobytes())
    meta = {"session_id": trace.session_id, "model_id": trace.model_id, "rate_hz": trace.rate_hz, "n_samples": len(trace)}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def read_trace(path) -> PredictionTrace:
    path = Path(path)
    sidecar = path.with_suffix(".json")
    if not path.exists():
        raise MissingField(f"{path} missing")
    if not sidecar.exists():
        raise MissingField(f"{sidecar} missing")
    meta = json.loads(sidecar.read_text())
    for key in ("session_id", "model_id", "rate_hz", "n_samples"):
        if key not in meta:
            raise MissingField(f"{sidecar}: field {key!r} missing")
    raw = path.read_bytes()
    if len(raw) != 4 * int(meta["n_samples"]):
        raise CorruptFile(f"{path}: {len(raw)} bytes, expected {4 * int(meta['n_samples'])}")
    return PredictionTrace(meta["session_id"], np.frombuffer(raw, dtype="<f4").copy(), float(meta["rate_hz"]), meta["model_id"])


def list_traces(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise MissingField(f"trace directory {d} does not exist")
    return sorted(d.glob("*.f32"))
