"""Numerical primitives shared across the package.

Correlations use population (1/N) moments. Sequences are stored as
float32; every reduction is accumulated in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import (
    DegenerateTarget,
    InvalidConfig,
    LengthMismatch,
    ShapeMismatch,
    TooShort,
    ZeroVariance,
)

LOSS_EPS = 1e-8
ZSCORE_EPS = 1e-8
CONSTANT_ROW_POLICIES = ("skip", "error")


@dataclass(frozen=True)
class ScoreSequence:
    """A per-sample score track at a fixed sampling rate."""

    values: np.ndarray
    rate_hz: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 1 or values.size == 0:
            raise ShapeMismatch("ScoreSequence values must be a non-empty 1-D vector")
        if not self.rate_hz > 0:
            raise InvalidConfig(f"rate_hz must be positive, got {self.rate_hz}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


def pearson_corr(x, y) -> float:
    """Sample Pearson correlation of two equal-length vectors.

    Raises ``ZeroVariance`` instead of returning NaN when either input is
    constant.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise LengthMismatch(f"lengths differ: {x.size} vs {y.size}")
    if x.size < 2:
        raise TooShort("pearson_corr needs at least two samples")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("correlation undefined for a constant input")
    r = np.dot(xc, yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def _check_policy(policy):
    if policy not in CONSTANT_ROW_POLICIES:
        raise InvalidConfig(f"constant-row policy must be one of {CONSTANT_ROW_POLICIES}")


def neg_pearson_loss(pred, target, constant_rows: str = "skip", return_grad: bool = False):
    """Mean over rows of the negative Pearson correlation (NumPy reference).

    ``pred`` and ``target`` are K x T. The denominator carries a ``1e-8``
    guard so the value stays finite for constant predictions. Rows whose
    target is constant are skipped or rejected depending on
    ``constant_rows``. With ``return_grad`` the closed-form gradient with
    respect to ``pred`` is returned alongside the loss.
    """
    _check_policy(constant_rows)
    p = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if p.shape != t.shape:
        raise ShapeMismatch(f"pred {p.shape} vs target {t.shape}")
    n = p.shape[1]
    if n < 2:
        raise TooShort("loss needs T >= 2")

    pc = p - p.mean(axis=1, keepdims=True)
    tc = t - t.mean(axis=1, keepdims=True)
    var_p = np.mean(pc * pc, axis=1)
    var_t = np.mean(tc * tc, axis=1)
    valid = var_t > 0
    if not valid.all() and constant_rows == "error":
        raise DegenerateTarget(f"constant target rows: {np.flatnonzero(~valid).tolist()}")

    grad = np.zeros_like(p)
    if not valid.any():
        return (0.0, grad) if return_grad else 0.0

    sd_p = np.sqrt(var_p)
    sd_t = np.sqrt(var_t)
    cov = np.mean(pc * tc, axis=1)
    denom = sd_p * sd_t + LOSS_EPS
    r = cov / denom
    k_valid = int(valid.sum())
    loss = float(-np.sum(r[valid]) / k_valid)
    if not return_grad:
        return loss

    # d r / d p = tc / (N d) - cov * sd_t / d^2 * pc / (N sd_p)
    for k in np.flatnonzero(valid):
        dr = tc[k] / (n * denom[k])
        if sd_p[k] > 0:
            dr = dr - cov[k] * sd_t[k] / denom[k] ** 2 * pc[k] / (n * sd_p[k])
        grad[k] = -dr / k_valid
    return loss, grad


def neg_pearson_loss_torch(pred: torch.Tensor, target: torch.Tensor, constant_rows: str = "skip") -> torch.Tensor:
    """Differentiable batch version of :func:`neg_pearson_loss`.

    Accepts ``(K, T)`` or ``(B, K, T)``. The per-window loss averages the
    non-degenerate rows; the batch loss averages windows that have at least
    one usable row.
    """
    _check_policy(constant_rows)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if pred.dim() == 2:
        pred, target = pred.unsqueeze(0), target.unsqueeze(0)
    if pred.shape[-1] < 2:
        raise TooShort("loss needs T >= 2")
    acc = torch.float64 if pred.dtype == torch.float64 else torch.float32
    p = pred.to(acc)
    t = target.to(acc)
    pc = p - p.mean(dim=-1, keepdim=True)
    tc = t - t.mean(dim=-1, keepdim=True)
    var_t = (tc * tc).mean(dim=-1)
    valid = var_t > 0
    if constant_rows == "error" and not bool(valid.all()):
        raise DegenerateTarget("constant target row in batch")
    var_p = (pc * pc).mean(dim=-1)
    cov = (pc * tc).mean(dim=-1)
    # sqrt has an infinite derivative at 0; clamp keeps constant predictions finite
    sd_p = torch.sqrt(var_p.clamp_min(1e-30))
    r = cov / (sd_p * torch.sqrt(var_t) + LOSS_EPS)
    r = torch.where(valid, r, torch.zeros_like(r))
    n_valid = valid.sum(dim=-1)
    window_ok = n_valid > 0
    if not bool(window_ok.any()):
        return (pred * 0).sum()
    per_window = -r.sum(dim=-1) / n_valid.clamp_min(1)
    return per_window[window_ok].mean()


def row_stats(x) -> tuple[np.ndarray, np.ndarray]:
    """Per-row mean and population std of a C x T matrix (float64)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return x.mean(axis=1), x.std(axis=1)


def zscore_normalize(x, stats=None) -> np.ndarray:
    """Standardize each row with ``stats = (mean, std)``.

    When ``stats`` is omitted the row's own statistics are used. Standard
    deviations below ``1e-8`` are replaced by 1, so constant rows map to
    zeros.
    """
    x = np.asarray(x)
    squeeze = x.ndim == 1
    x2 = np.atleast_2d(x).astype(np.float64)
    mean, std = row_stats(x2) if stats is None else stats
    mean = np.asarray(mean, dtype=np.float64).reshape(-1, 1)
    std = np.asarray(std, dtype=np.float64).reshape(-1, 1)
    if mean.shape[0] != x2.shape[0] or std.shape[0] != x2.shape[0]:
        raise ShapeMismatch("stats must have one entry per row")
    std = np.where(std < ZSCORE_EPS, 1.0, std)
    out = ((x2 - mean) / std).astype(np.float32)
    return out[0] if squeeze else out


def trim_edges(s: ScoreSequence, trim_seconds: float) -> ScoreSequence:
    if trim_seconds < 0:
        raise InvalidConfig("trim_seconds must be nonnegative")
    n = int(round(trim_seconds * s.rate_hz))
    if n == 0:
        return s
    if len(s) <= 2 * n:
        raise TooShort(f"trimming {n} samples per side leaves nothing of {len(s)}")
    return ScoreSequence(s.values[n:-n], s.rate_hz)
