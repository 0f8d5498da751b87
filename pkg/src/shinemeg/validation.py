"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import SessionRecord, load_session
from .exceptions import EmptyInput, InvalidConfig, NonBinaryLabels, ShapeMismatch


def check_sessions(X, n_channels: int | None = None) -> list[SessionRecord]:
    """Coerce ``X`` to a list of sessions.

    Accepts a single session, or an iterable of ``SessionRecord``, session
    directories, or ``(meg, labels)`` pairs (ids are assigned by position).
    """
    if isinstance(X, (SessionRecord, str, Path)):
        X = [X]
    out = []
    for i, item in enumerate(X):
        if isinstance(item, SessionRecord):
            s = item
        elif isinstance(item, (str, Path)):
            s = load_session(item)
        elif isinstance(item, tuple) and len(item) == 2:
            s = SessionRecord(f"session-{i:03d}", item[0], item[1])
        else:
            raise InvalidConfig(f"cannot interpret item {i} of type {type(item).__name__} as a session")
        if n_channels is not None and s.n_channels != n_channels:
            raise ShapeMismatch(f"session {s.session_id}: {s.n_channels} channels, expected {n_channels}")
        out.append(s)
    if not out:
        raise EmptyInput("no sessions given")
    ids = [s.session_id for s in out]
    if len(set(ids)) != len(ids):
        raise InvalidConfig("session ids must be unique")
    return out


def check_meg(meg, n_channels: int | None = None) -> np.ndarray:
    x = np.asarray(meg, dtype=np.float32)
    if x.ndim != 2:
        raise ShapeMismatch(f"MEG must be C x T, got shape {x.shape}")
    if n_channels is not None and x.shape[0] != n_channels:
        raise ShapeMismatch(f"expected {n_channels} channels, got {x.shape[0]}")
    if not np.isfinite(x).all():
        raise InvalidConfig("MEG contains non-finite values")
    return x


def check_binary(labels) -> np.ndarray:
    y = np.asarray(labels).ravel()
    if not np.isin(y, (0, 1)).all():
        raise NonBinaryLabels("labels must be 0/1")
    return y.astype(np.uint8)


def check_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise EmptyInput("empty score vector")
    if not np.isfinite(s).all():
        raise InvalidConfig("scores contain non-finite values")
    return s
