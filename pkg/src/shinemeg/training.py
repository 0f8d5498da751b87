"""AdamW training on the negative-Pearson objective with session hold-out."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .dataset import SplitPlan, TrainingWindow, leave_session_out_split, load_corpus, make_windows
from .exceptions import (
    AllWindowsDegenerate,
    ConfigParse,
    EmptyInput,
    InvalidConfig,
    NonFiniteLoss,
    ShapeMismatch,
    TooFewSessions,
)
from .features import MODES
from .model import ModelConfig, ShineModel, init_model, save_checkpoint
from .signal_core import neg_pearson_loss_torch, pearson_corr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    max_epochs: int = 20
    batch_size: int = 8
    patience: int = 4
    n_val_sessions: int = 8
    mode: str = "standard"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    window_seconds: float = 30.0
    stride_seconds: float = 30.0
    resplit_each_epoch: bool = False
    constant_rows: str = "skip"

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidConfig("lr must be positive")
        if self.weight_decay < 0:
            raise InvalidConfig("weight_decay must be nonnegative")
        if int(self.max_epochs) < 1:
            raise InvalidConfig("max_epochs must be >= 1")
        if int(self.batch_size) < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if int(self.patience) < 1:
            raise InvalidConfig("patience must be >= 1")
        if int(self.n_val_sessions) < 1:
            raise InvalidConfig("n_val_sessions must be >= 1")
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}")
        if self.window_seconds <= 0 or self.stride_seconds <= 0:
            raise InvalidConfig("window and stride must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise InvalidConfig("clip_norm must be positive or None")

    @property
    def out_channels(self) -> int:
        return 12 if self.mode == "extended" else 1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigParse(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_pearson: list = field(default_factory=list)
    best_epoch: int = -1
    checkpoint_path: str | None = None
    train_sessions: tuple = ()
    val_sessions: tuple = ()

    @property
    def best_val_pearson(self) -> float:
        return self.val_pearson[self.best_epoch]

    def to_dict(self):
        d = asdict(self)
        d["train_sessions"] = list(self.train_sessions)
        d["val_sessions"] = list(self.val_sessions)
        return d


def _stack(windows, attr):
    return torch.from_numpy(np.stack([getattr(w, attr) for w in windows]).astype(np.float32))


def predict_windows(model: ShineModel, windows, batch_size: int = 8) -> np.ndarray:
    """Inference-mode outputs for a list of windows, ``(N, K, W)``."""
    was_training = model.training
    model.eval()
    outs = []
    try:
        with torch.no_grad():
            for i in range(0, len(windows), batch_size):
                outs.append(model(_stack(windows[i:i + batch_size], "meg")).numpy())
    finally:
        model.train(was_training)
    return np.concatenate(outs, axis=0)


def validate_detailed(model: ShineModel, windows, batch_size: int = 8) -> tuple[float, int]:
    """Mean binary-row Pearson over windows and the number of skipped windows.

    Only the last output row (the binary sequence) is scored. Windows whose
    binary target is constant are skipped.
    """
    if not windows:
        raise EmptyInput("validate needs at least one window")
    preds = predict_windows(model, windows, batch_size)
    scores, skipped = [], 0
    for w, p in zip(windows, preds):
        truth = w.target[-1]
        if truth.min() == truth.max():
            skipped += 1
            continue
        if p[-1].min() == p[-1].max():
            scores.append(0.0)
            continue
        scores.append(pearson_corr(p[-1], truth))
    if not scores:
        raise AllWindowsDegenerate(f"all {len(windows)} validation windows have constant binary targets")
    return float(np.mean(scores)), skipped


def validate(model: ShineModel, windows, batch_size: int = 8) -> float:
    return validate_detailed(model, windows, batch_size)[0]


def make_optimizer(model, cfg: TrainConfig):
    return torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps, weight_decay=cfg.weight_decay
    )


def train_step(model, optimizer, batch, cfg: TrainConfig) -> float:
    model.train()
    optimizer.zero_grad()
    loss = neg_pearson_loss_torch(model(_stack(batch, "meg")), _stack(batch, "target"), cfg.constant_rows)
    value = float(loss.detach())
    if not math.isfinite(value):
        ids = sorted({w.session_id for w in batch})
        raise NonFiniteLoss(f"loss={value} on windows from sessions {ids}")
    loss.backward()
    if cfg.clip_norm:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
    optimizer.step()
    return value


def fit_windows(
    model: ShineModel,
    train_windows,
    val_windows,
    cfg: TrainConfig,
    run_dir=None,
    window_source=None,
) -> TrainReport:
    """Optimize ``model`` in place and leave it holding the best-epoch weights.

    ``window_source`` (epoch -> (train, val)) replaces the fixed window
    lists when validation sessions are redrawn every epoch.
    """
    if model.config.out_channels != cfg.out_channels:
        raise InvalidConfig(f"{cfg.mode} mode needs out_channels={cfg.out_channels}")
    run_dir = Path(run_dir) if run_dir is not None else None
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(model, cfg)
    report = TrainReport(
        train_sessions=tuple(sorted({w.session_id for w in train_windows})),
        val_sessions=tuple(sorted({w.session_id for w in val_windows})),
    )
    best_state, best_score, stale = None, -np.inf, 0

    for epoch in range(cfg.max_epochs):
        if window_source is not None and epoch > 0:
            train_windows, val_windows = window_source(epoch)
        _assert_disjoint(train_windows, val_windows)
        order = rng.permutation(len(train_windows))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_windows[j] for j in order[i:i + cfg.batch_size]]
            losses.append(train_step(model, optimizer, batch, cfg))
        score = validate(model, val_windows, cfg.batch_size)
        report.train_loss.append(float(np.mean(losses)))
        report.val_pearson.append(score)
        log.info("epoch %d train_loss %.4f val_pearson %.4f", epoch, report.train_loss[-1], score)

        if score > best_score:
            best_score, stale = score, 0
            report.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            if run_dir is not None:
                save_checkpoint(model, run_dir / "best.ckpt", extra={"epoch": epoch, "val_pearson": score})
        else:
            stale += 1
        if run_dir is not None:
            save_checkpoint(model, run_dir / "last.ckpt", extra={"epoch": epoch, "val_pearson": score})
            _write_metrics(run_dir / "metrics.csv", report)
        if stale >= cfg.patience:
            log.info("early stop after epoch %d", epoch)
            break

    model.load_state_dict(best_state)
    model.eval()
    if run_dir is not None:
        report.checkpoint_path = str(run_dir / "best.ckpt")
    return report


def _assert_disjoint(train_windows, val_windows):
    overlap = {w.session_id for w in train_windows} & {w.session_id for w in val_windows}
    if overlap:
        raise InvalidConfig(f"sessions in both train and validation: {sorted(overlap)}")


def _write_metrics(path, report: TrainReport):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_pearson"])
        for i, (l, v) in enumerate(zip(report.train_loss, report.val_pearson)):
            writer.writerow([i, repr(l), repr(v)])


def windows_for(sessions, ids, cfg: TrainConfig) -> list[TrainingWindow]:
    out = []
    for sid in sorted(ids):
        out.extend(make_windows(sessions[sid], cfg.window_seconds, cfg.stride_seconds, cfg.mode))
    return out


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, data_root, run_dir=None, split: SplitPlan | None = None) -> TrainReport:
    """Train on every session under ``data_root`` covered by the split.

    Without an explicit ``split`` one is drawn with
    ``train_cfg.n_val_sessions`` validation sessions. Writes ``config.json``,
    ``metrics.csv``, ``best.ckpt`` and ``last.ckpt`` into ``run_dir``.
    """
    sessions = load_corpus(data_root, normalize=True)
    if split is None:
        if len(sessions) < train_cfg.n_val_sessions + 1:
            raise TooFewSessions(f"{len(sessions)} sessions, need at least {train_cfg.n_val_sessions + 1}")
        split = leave_session_out_split(sessions, train_cfg.n_val_sessions, train_cfg.seed)
    missing = (set(split.train_sessions) | set(split.val_sessions)) - set(sessions)
    if missing:
        raise TooFewSessions(f"split names sessions not found in {data_root}: {sorted(missing)}")
    if not split.train_sessions:
        raise TooFewSessions("split has no training sessions")
    for sid in list(split.train_sessions) + list(split.val_sessions):
        if sessions[sid].n_channels != model_cfg.in_channels:
            raise ShapeMismatch(f"session {sid} has {sessions[sid].n_channels} channels, model expects {model_cfg.in_channels}")

    source = None
    if train_cfg.resplit_each_epoch:
        pool = sorted(set(split.train_sessions) | set(split.val_sessions))
        n_val = len(split.val_sessions)

        def source(epoch):
            plan = leave_session_out_split(pool, n_val, train_cfg.seed + epoch)
            return windows_for(sessions, plan.train_sessions, train_cfg), windows_for(sessions, plan.val_sessions, train_cfg)

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        config = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "split": split.to_dict()}
        (run_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))

    model = init_model(model_cfg)
    report = fit_windows(
        model,
        windows_for(sessions, split.train_sessions, train_cfg),
        windows_for(sessions, split.val_sessions, train_cfg),
        train_cfg,
        run_dir=run_dir,
        window_source=source,
    )
    report.train_sessions, report.val_sessions = tuple(split.train_sessions), tuple(split.val_sessions)
    if run_dir is not None:
        (run_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return report
