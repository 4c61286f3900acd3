"""Frame-level anomaly scores from snippet fusion losses, and ROC metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Normalizer:
    min: float
    max: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.min) and np.isfinite(self.max)):
            raise ValueError(f"normalizer bounds must be finite, got {self.min}, {self.max}")
        if self.max < self.min:
            raise ValueError(f"normalizer max {self.max} below min {self.min}")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        span = self.max - self.min
        if span == 0:
            return np.zeros_like(x)
        return np.clip((x - self.min) / span, 0.0, 1.0)


@dataclass
class ScoreSeries:
    scores: np.ndarray  # (total_frames,)
    lambda_mov: float
    end_frames: np.ndarray  # snippet end frame for each smoothed value
    smoothed: np.ndarray  # one value per snippet
    labels: np.ndarray | None = None


def anomaly_scores(
    raw,
    normalizer: Normalizer,
    lambda_mov: float = 0.2,
    total_frames: int | None = None,
    m: int = 20,
    tau: int = 1,
    end_frames=None,
) -> ScoreSeries:
    """Exponentially smoothed, min-max normalized fusion losses mapped onto frames.

    The snippet ending at frame ``t`` (0-based) scores frame ``t``; frames before
    the first snippet end take its score, frames between snippet ends hold the
    latest one.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("no snippet losses to score")
    if not 0.0 < lambda_mov <= 1.0:
        raise ValueError(f"lambda_mov must be in (0, 1], got {lambda_mov}")
    if end_frames is None:
        end_frames = (m - 1) + tau * np.arange(raw.size)
    end_frames = np.asarray(end_frames, dtype=np.int64)
    if total_frames is None:
        total_frames = int(end_frames[-1]) + 1
    n = normalizer(raw)
    smoothed = np.empty_like(n)
    smoothed[0] = n[0]
    for k in range(1, n.size):
        smoothed[k] = (1.0 - lambda_mov) * smoothed[k - 1] + lambda_mov * n[k]
    # index of the latest snippet ending at or before each frame
    owner = np.searchsorted(end_frames, np.arange(total_frames), side="right") - 1
    scores = smoothed[np.maximum(owner, 0)]
    return ScoreSeries(scores, lambda_mov, end_frames, smoothed)


def _check_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores vs {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if labels.min() == labels.max():
        raise ValueError("ROC needs both positive and negative labels")
    return scores, labels.astype(bool)


def roc_curve(scores, labels):
    """ROC points over every distinct threshold, from (0, 0) to (1, 1).

    A frame is flagged when ``score >= threshold``.
    """
    scores, labels = _check_labels(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(y)[last]
    fps = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tps / y.sum()]
    fpr = np.r_[0.0, fps / (~y).sum()]
    thresholds = np.r_[np.inf, s[last]]
    return fpr, tpr, thresholds


def roc_auc(scores, labels) -> float:
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def _equal_error(scores, labels):
    """Interpolated ``(fpr, tpr, threshold)`` where FPR crosses 1 - TPR."""
    fpr, tpr, thr = roc_curve(scores, labels)
    gap = fpr - (1.0 - tpr)  # non-decreasing along the curve
    i = int(np.argmax(gap >= 0))
    if i == 0:
        return float(fpr[0]), float(tpr[0]), float(thr[0])
    a = -gap[i - 1] / (gap[i] - gap[i - 1])
    t0 = thr[i - 1] if np.isfinite(thr[i - 1]) else thr[i]
    return (
        float(fpr[i - 1] + a * (fpr[i] - fpr[i - 1])),
        float(tpr[i - 1] + a * (tpr[i] - tpr[i - 1])),
        float(t0 + a * (thr[i] - t0)),
    )


def roc_eer(scores, labels, return_threshold: bool = False):
    """Equal error rate, linearly interpolated where FPR crosses 1 - TPR."""
    eer, _, t = _equal_error(scores, labels)
    return (eer, t) if return_threshold else eer


def eer_point(scores, labels) -> tuple[float, float]:
    """``(fpr, tpr)`` of the interpolated equal-error point."""
    fpr, tpr, _ = _equal_error(scores, labels)
    return fpr, tpr


def evaluation_report(scores, labels) -> dict:
    fpr, tpr, thr = roc_curve(scores, labels)
    auc = roc_auc(scores, labels)
    eer, eer_thr = roc_eer(scores, labels, return_threshold=True)
    return {
        "auc": auc,
        "auc_percent": 100.0 * auc,
        "eer": eer,
        "eer_percent": 100.0 * eer,
        "eer_threshold": eer_thr,
        "n_frames": int(np.asarray(labels).size),
        "n_abnormal": int(np.asarray(labels).sum()),
        "roc": {
            "threshold": [None if not np.isfinite(t) else float(t) for t in thr],
            "fpr": fpr.tolist(),
            "tpr": tpr.tolist(),
        },
    }
