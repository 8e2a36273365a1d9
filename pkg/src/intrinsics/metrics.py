"""Evaluation metrics: WHDR on sparse judgements, LMSE on dense ground truth.

WHDR scores a reflectance estimate against weighted human brightness
comparisons; LMSE scores it against a dense reference with a free scale
per local window. Both return a MetricReport; helpers emit JSON-lines
and a CSV summary for batch runs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imgcore import ImageBuffer

DARKER_LABELS = ("1", "2", "E")
DEFAULT_DELTA = 0.10
LMSE_WINDOW = 20
LMSE_STEP = 10
_LUM_EPS = 1e-4


@dataclass(frozen=True)
class JudgementSet:
    """Sparse pairwise brightness comparisons in normalized coordinates.

    point1/point2 rows are (x, y) in [0, 1]^2; darker holds "1", "2" or
    "E" (equal); weights are non-negative confidences.
    """

    point1: np.ndarray  # (n, 2)
    point2: np.ndarray  # (n, 2)
    darker: tuple[str, ...]
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        p1 = np.asarray(self.point1, dtype=np.float64).reshape(-1, 2)
        p2 = np.asarray(self.point2, dtype=np.float64).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if not (len(p1) == len(p2) == len(w) == len(self.darker)):
            raise ValueError("comparison fields must have equal length")
        for pts in (p1, p2):
            if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
                raise ValueError("points must lie in the unit square")
        if not np.all(np.isfinite(w)) or (w < 0).any():
            raise ValueError("weights must be finite and non-negative")
        bad = set(self.darker) - set(DARKER_LABELS)
        if bad:
            raise ValueError(f"unknown darker labels: {sorted(bad)}")
        object.__setattr__(self, "point1", p1)
        object.__setattr__(self, "point2", p2)
        object.__setattr__(self, "darker", tuple(self.darker))
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class MetricReport:
    """A single metric value plus the context needed to reproduce it."""

    metric: str
    value: float
    count: int
    params: dict = field(default_factory=dict)
    valid: bool = True

    @property
    def percentage(self) -> float:
        return 100.0 * self.value


def parse_iiw_json(path) -> JudgementSet:
    """Read IIW-style annotations: points by id, comparisons by point id."""
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed judgement JSON {path}: {exc}") from exc
    points = {p["id"]: (float(p["x"]), float(p["y"])) for p in payload.get("intrinsic_points", [])}
    p1, p2, darker, weights = [], [], [], []
    for comp in payload.get("intrinsic_comparisons", []):
        for key in ("point1", "point2"):
            if comp[key] not in points:
                raise ValueError(f"comparison references unknown point id {comp[key]!r}")
        p1.append(points[comp["point1"]])
        p2.append(points[comp["point2"]])
        darker.append(str(comp["darker"]))
        weights.append(float(comp.get("darker_score", 1.0)))
    return JudgementSet(
        np.array(p1, dtype=np.float64).reshape(-1, 2),
        np.array(p2, dtype=np.float64).reshape(-1, 2),
        tuple(darker),
        np.array(weights, dtype=np.float64),
    )


def _sample_luminance(data: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Mean-RGB at the pixel containing each normalized (x, y) point."""
    height, width = data.shape[:2]
    cols = np.minimum((points[:, 0] * width).astype(int), width - 1)
    rows = np.minimum((points[:, 1] * height).astype(int), height - 1)
    return np.maximum(data[rows, cols].mean(axis=-1), _LUM_EPS)


def predict_darker(reflectance: ImageBuffer, judgements: JudgementSet, delta: float = DEFAULT_DELTA) -> tuple[str, ...]:
    """Per comparison: which point looks darker at the given threshold."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    data = reflectance.data if isinstance(reflectance, ImageBuffer) else np.asarray(reflectance)
    lum1 = _sample_luminance(data, judgements.point1)
    lum2 = _sample_luminance(data, judgements.point2)
    ratio = lum1 / lum2
    out = np.where(ratio > 1.0 + delta, "2", np.where(ratio < 1.0 / (1.0 + delta), "1", "E"))
    return tuple(out.tolist())


def whdr(reflectance: ImageBuffer, judgements: JudgementSet, delta: float = DEFAULT_DELTA) -> MetricReport:
    """Weighted fraction of comparisons the estimate gets wrong.

    Luminance ratios beyond 1 + delta (either way) predict a strict
    ordering, anything closer predicts "equal"; disagreements with the
    human label accumulate their weights. An empty or zero-weight set
    yields an invalid report rather than an error.
    """
    params = {"delta": delta}
    total = judgements.weights.sum()
    if len(judgements) == 0 or total <= 0.0:
        return MetricReport("whdr", 0.0, 0, params, valid=False)
    predicted = predict_darker(reflectance, judgements, delta)
    mismatch = np.array([p != h for p, h in zip(predicted, judgements.darker)])
    value = float(judgements.weights[mismatch].sum() / total)
    return MetricReport("whdr", value, len(judgements), params)


def lmse(pred, gt, window: int = LMSE_WINDOW, step: int = LMSE_STEP) -> MetricReport:
    """Scale-invariant local MSE, averaged over channels.

    Every window gets a free non-negative scale fitted by least squares
    before the squared error is accumulated; the per-channel total is
    normalized by the ground-truth energy over the scored windows.
    All-zero ground-truth windows are skipped.
    """
    if window < 1 or step < 1:
        raise ValueError("window and step must be >= 1")
    p = pred.data if isinstance(pred, ImageBuffer) else np.asarray(pred, dtype=np.float64)
    g = gt.data if isinstance(gt, ImageBuffer) else np.asarray(gt, dtype=np.float64)
    if p.ndim == 2:
        p = p[:, :, None]
    if g.ndim == 2:
        g = g[:, :, None]
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    height, width, channels = g.shape
    per_channel = []
    scored = 0
    for c in range(channels):
        ssq = total = 0.0
        for y in range(0, max(height - window, 0) + 1, step):
            for x in range(0, max(width - window, 0) + 1, step):
                gw = g[y : y + window, x : x + window, c].ravel()
                pw = p[y : y + window, x : x + window, c].ravel()
                energy = float(gw @ gw)
                if energy < 1e-12:
                    continue
                denom = float(pw @ pw)
                alpha = float(pw @ gw) / denom if denom > 1e-12 else 0.0
                ssq += float((alpha * pw - gw) @ (alpha * pw - gw))
                total += energy
                scored += 1
        if total > 0.0:
            per_channel.append(ssq / total)
    params = {"window": window, "step": step}
    if not per_channel:
        return MetricReport("lmse", 0.0, 0, params, valid=False)
    return MetricReport("lmse", float(np.mean(per_channel)), scored, params)


def write_reports_jsonl(path, rows: list[tuple[str, MetricReport]]) -> None:
    """One JSON object per line: {image, metric, value, params}."""
    lines = [
        json.dumps(
            {"image": name, "metric": rep.metric, "value": rep.value, "params": rep.params}
        )
        for name, rep in rows
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def write_summary_csv(path, rows: list[tuple[str, MetricReport]]) -> None:
    """Per-image rows plus an unweighted mean row per metric."""
    by_metric: dict[str, list[float]] = {}
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["image", "metric", "value", "count"])
        for name, rep in rows:
            writer.writerow([name, rep.metric, f"{rep.value:.6f}", rep.count])
            if rep.valid:
                by_metric.setdefault(rep.metric, []).append(rep.value)
        for metric in sorted(by_metric):
            values = by_metric[metric]
            writer.writerow(["mean", metric, f"{np.mean(values):.6f}", len(values)])
