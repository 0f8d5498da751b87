"""scikit-learn style wrappers.

``ShineDecoder`` takes lists of sessions as ``X`` (labels live inside each
session, so ``y`` is ignored) and yields one score or label vector per
session. ``ThresholdCalibrator`` maps continuous scores to binary labels.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import leave_session_out_split, normalize_session
from .inference import (
    PredictionTrace,
    _f1_macro_sweep,
    binarize,
    confusion,
    f1_macro,
    predict_session,
    select_threshold,
)
from .model import ModelConfig, init_model
from .training import TrainConfig, fit_windows, windows_for
from .validation import check_binary, check_scores, check_sessions


class ShineDecoder(BaseEstimator):
    """Speech/silence decoder trained as sequence reconstruction.

    Parameters mirror :class:`ModelConfig` and :class:`TrainConfig`;
    ``in_channels`` is taken from the data at fit time. After ``fit`` the
    estimator holds ``model_``, ``history_`` (a ``TrainReport``),
    ``threshold_`` (calibrated on the validation sessions) and
    ``n_channels_in_``.
    """

    def __init__(
        self,
        d_init=64,
        n_blocks=6,
        block_width=64,
        tconv_kernel=3,
        context_kernel=9,
        attn_heads=1,
        lstm_hidden=64,
        mode="standard",
        lr=1e-3,
        weight_decay=0.01,
        max_epochs=20,
        batch_size=8,
        patience=4,
        n_val_sessions=8,
        window_seconds=30.0,
        stride_seconds=30.0,
        infer_stride_seconds=20.0,
        trim_seconds=5.0,
        clip_norm=1.0,
        random_state=0,
    ):
        self.d_init = d_init
        self.n_blocks = n_blocks
        self.block_width = block_width
        self.tconv_kernel = tconv_kernel
        self.context_kernel = context_kernel
        self.attn_heads = attn_heads
        self.lstm_hidden = lstm_hidden
        self.mode = mode
        self.lr = lr
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.patience = patience
        self.n_val_sessions = n_val_sessions
        self.window_seconds = window_seconds
        self.stride_seconds = stride_seconds
        self.infer_stride_seconds = infer_stride_seconds
        self.trim_seconds = trim_seconds
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _configs(self, n_channels):
        train_cfg = TrainConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            patience=self.patience,
            n_val_sessions=self.n_val_sessions,
            mode=self.mode,
            seed=self.random_state,
            clip_norm=self.clip_norm,
            window_seconds=self.window_seconds,
            stride_seconds=self.stride_seconds,
        )
        model_cfg = ModelConfig(
            in_channels=n_channels,
            d_init=self.d_init,
            n_blocks=self.n_blocks,
            block_width=self.block_width,
            tconv_kernel=self.tconv_kernel,
            context_kernel=self.context_kernel,
            attn_heads=self.attn_heads,
            lstm_hidden=self.lstm_hidden,
            out_channels=train_cfg.out_channels,
            seed=self.random_state,
        )
        return model_cfg, train_cfg

    def fit(self, X, y=None, val_sessions=None):
        """Train on sessions ``X``.

        ``val_sessions`` (sessions, not ids) are used for early stopping and
        threshold calibration; if omitted, ``n_val_sessions`` are held out
        of ``X`` by a seeded leave-session-out split.
        """
        sessions = [normalize_session(s) for s in check_sessions(X)]
        n_channels = sessions[0].n_channels
        check_sessions(sessions, n_channels)
        if val_sessions is None:
            plan = leave_session_out_split([s.session_id for s in sessions], self.n_val_sessions, self.random_state)
            by_id = {s.session_id: s for s in sessions}
            train_s = [by_id[i] for i in plan.train_sessions]
            val_s = [by_id[i] for i in plan.val_sessions]
        else:
            train_s = sessions
            val_s = [normalize_session(s) for s in check_sessions(val_sessions, n_channels)]

        model_cfg, train_cfg = self._configs(n_channels)
        pool = {s.session_id: s for s in train_s + val_s}
        self.model_ = init_model(model_cfg)
        self.history_ = fit_windows(
            self.model_,
            windows_for(pool, [s.session_id for s in train_s], train_cfg),
            windows_for(pool, [s.session_id for s in val_s], train_cfg),
            train_cfg,
        )
        self.n_channels_in_ = n_channels
        traces = [self._trace(s) for s in val_s]
        self.threshold_ = select_threshold(
            np.concatenate([t.scores for t in traces]), np.concatenate([s.labels for s in val_s])
        )
        return self

    def _trace(self, s) -> PredictionTrace:
        return predict_session(
            self.model_,
            s,
            window_seconds=self.window_seconds,
            stride_seconds=self.infer_stride_seconds,
            trim_seconds=self.trim_seconds,
        )

    def decision_function(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        sessions = check_sessions(X, self.n_channels_in_)
        return [self._trace(normalize_session(s)).scores for s in sessions]

    def predict(self, X) -> list[np.ndarray]:
        return [binarize(s, self.threshold_) for s in self.decision_function(X)]

    def score(self, X, y=None) -> float:
        """Pooled F1-macro over all samples of ``X``."""
        sessions = check_sessions(X)
        pred = np.concatenate(self.predict(sessions))
        truth = np.concatenate([s.labels for s in sessions])
        return f1_macro(confusion(pred, truth))


class ThresholdCalibrator(ClassifierMixin, BaseEstimator):
    """Pick the quantile threshold that maximizes F1-macro.

    With ``allow_inversion`` the sweep also tries the negated scores and
    keeps whichever polarity scores higher (``polarity_`` is then -1).
    """

    def __init__(self, allow_inversion=False):
        self.allow_inversion = allow_inversion

    def fit(self, X, y):
        scores = check_scores(X)
        truth = check_binary(y)
        self.threshold_ = select_threshold(scores, truth)
        self.polarity_ = 1
        self.f1_ = self._best_f1(scores, truth, self.threshold_)
        if self.allow_inversion:
            flipped = select_threshold(-scores, truth)
            f1 = self._best_f1(-scores, truth, flipped)
            if f1 > self.f1_:
                self.threshold_, self.polarity_, self.f1_ = flipped, -1, f1
        self.classes_ = np.array([0, 1])
        return self

    @staticmethod
    def _best_f1(scores, truth, threshold):
        return float(_f1_macro_sweep(scores, truth.astype(bool), np.array([threshold]))[0])

    def decision_function(self, X):
        check_is_fitted(self, "threshold_")
        return self.polarity_ * check_scores(X)

    def predict(self, X):
        return binarize(self.decision_function(X), self.threshold_)


__all__ = ["ShineDecoder", "ThresholdCalibrator"]
