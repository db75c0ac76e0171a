"""Pixel-wise anomaly segmentation metrics: AUROC, AUPR, AUPRO, and the
single-component AUROC ranking.

Conventions, chosen to match the probabilistic definitions exactly:

- ROC groups tied scores into one threshold step, which makes the trapezoidal
  area equal the pair-counting statistic (ties counted half).
- PR area is the step-wise sum of precision times recall increments over
  descending unique thresholds; no interpolation.
- PRO averages per-region overlap across 8-connected ground-truth components,
  is traced against the false-positive rate on normal pixels, then integrated
  up to an FPR cap (0.3 by default) and normalized by the cap. When a batch
  has more than 5000 unique scores the sweep uses 5000 evenly spaced
  quantiles instead of every value.

Score maps are upsampled to mask resolution before any metric is computed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import MetricUndefinedError, ShapeError
from .tensor_io import PixelLabels

MAX_PRO_THRESHOLDS = 5000
DEFAULT_FPR_LIMIT = 0.3

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass
class ScoredPixels:
    """Flattened pairing of scores with boolean labels (true = anomalous)."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels, dtype=bool).ravel()
        if self.scores.shape != self.labels.shape:
            raise ShapeError(
                f"{self.scores.size} scores vs {self.labels.size} labels"
            )
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")

    def require_both_classes(self) -> None:
        n_pos = int(self.labels.sum())
        if n_pos == 0 or n_pos == self.labels.size:
            raise MetricUndefinedError(
                "curve metrics need at least one positive and one negative pixel"
            )


@dataclass
class MetricsReport:
    """The three segmentation metrics plus the per-component AUROC ranking."""

    auroc: float
    aupr: float
    aupro: float
    fpr_limit: float
    per_component_auroc: list[tuple[int, float]]

    def to_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "aupr": self.aupr,
            "aupro": self.aupro,
            "fpr_limit": self.fpr_limit,
            "per_component_auroc": [[c, v] for c, v in self.per_component_auroc],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        return cls(
            auroc=float(doc["auroc"]),
            aupr=float(doc["aupr"]),
            aupro=float(doc["aupro"]),
            fpr_limit=float(doc["fpr_limit"]),
            per_component_auroc=[(int(c), float(v)) for c, v in doc["per_component_auroc"]],
        )


def _curve_points(pixels: ScoredPixels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative TP and FP counts at each distinct descending threshold."""
    order = np.argsort(-pixels.scores, kind="mergesort")
    scores = pixels.scores[order]
    hits = pixels.labels[order].astype(np.float64)
    # last index of each tied group
    step_ends = np.r_[np.nonzero(np.diff(scores))[0], scores.size - 1]
    tp = np.cumsum(hits)[step_ends]
    fp = (step_ends + 1) - tp
    return scores[step_ends], tp, fp


def auroc(pixels: ScoredPixels) -> float:
    """Area under the ROC curve, tied scores grouped into single steps."""
    pixels.require_both_classes()
    _, tp, fp = _curve_points(pixels)
    n_pos = tp[-1]
    n_neg = fp[-1]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return float(np.trapezoid(tpr, fpr))


def aupr(pixels: ScoredPixels) -> float:
    """Area under precision-recall, step-wise over descending unique thresholds."""
    pixels.require_both_classes()
    _, tp, fp = _curve_points(pixels)
    n_pos = tp[-1]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    recall_steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(precision * recall_steps))


def _pro_thresholds(scores: np.ndarray) -> np.ndarray:
    """Descending sweep thresholds: every unique value, or 5000 quantiles."""
    unique = np.unique(scores)
    if unique.size <= MAX_PRO_THRESHOLDS:
        return unique[::-1]
    qs = np.linspace(0.0, 1.0, MAX_PRO_THRESHOLDS)
    return np.unique(np.quantile(scores, qs))[::-1]


def aupro(
    score_maps: np.ndarray,
    labels: PixelLabels,
    fpr_limit: float = DEFAULT_FPR_LIMIT,
) -> float:
    """Area under the per-region-overlap curve, normalized to the FPR cap.

    ``score_maps`` must already be at mask resolution (B x H_img x W_img).
    For each threshold, PRO is the mean over ground-truth connected components
    of the fraction of that region's pixels at or above the threshold, and FPR
    is the fraction of normal pixels at or above it.
    """
    if not 0.0 < fpr_limit <= 1.0:
        raise ValueError(f"fpr_limit must be in (0, 1], got {fpr_limit}")
    score_maps = np.asarray(score_maps, dtype=np.float64)
    if score_maps.shape != labels.masks.shape:
        raise ShapeError(
            f"score maps {score_maps.shape} vs masks {labels.masks.shape}"
        )

    region_scores = []
    for mask, smap in zip(labels.masks, score_maps):
        lab, n_regions = ndimage.label(mask, structure=_EIGHT_CONNECTED)
        for region in range(1, n_regions + 1):
            region_scores.append(np.sort(smap[lab == region]))
    if not region_scores:
        raise MetricUndefinedError("AUPRO needs at least one anomalous region")

    normal_scores = np.sort(score_maps[~labels.masks])
    thresholds = _pro_thresholds(score_maps.ravel())

    # count of values >= t via searchsorted on the ascending sorted arrays
    pro = np.zeros(thresholds.size)
    for scores in region_scores:
        above = scores.size - np.searchsorted(scores, thresholds, side="left")
        pro += above / scores.size
    pro /= len(region_scores)
    above_normal = normal_scores.size - np.searchsorted(normal_scores, thresholds, side="left")
    fpr = above_normal / normal_scores.size

    fpr = np.r_[0.0, fpr]
    pro = np.r_[0.0, pro]
    return _area_under_limit(fpr, pro, fpr_limit)


def _area_under_limit(fpr: np.ndarray, pro: np.ndarray, fpr_limit: float) -> float:
    """Trapezoidal area of PRO over FPR in [0, fpr_limit], normalized by the limit."""
    if fpr[-1] > fpr_limit:
        # interpolate the curve at the cap, then truncate
        idx = int(np.searchsorted(fpr, fpr_limit, side="right"))
        f0, f1 = fpr[idx - 1], fpr[idx]
        p0, p1 = pro[idx - 1], pro[idx]
        p_at = p0 if f1 == f0 else p0 + (p1 - p0) * (fpr_limit - f0) / (f1 - f0)
        fpr = np.r_[fpr[:idx], fpr_limit]
        pro = np.r_[pro[:idx], p_at]
    return float(np.trapezoid(pro, fpr) / fpr_limit)


def paired_pixels(score_maps: np.ndarray, labels: PixelLabels) -> ScoredPixels:
    """Flatten score maps against masks of the same resolution."""
    score_maps = np.asarray(score_maps, dtype=np.float64)
    if score_maps.shape != labels.masks.shape:
        raise ShapeError(
            f"score maps {score_maps.shape} vs masks {labels.masks.shape}"
        )
    return ScoredPixels(score_maps.ravel(), labels.masks.ravel())


def rank_components(
    y_sq: np.ndarray,
    labels: PixelLabels,
    image_size: tuple[int, int],
    threads: int = 1,
) -> list[tuple[int, float]]:
    """Rank whitened components by single-component AUROC, best first.

    Each component's squared map (B x H x W) is bilinearly upsampled to image
    resolution and scored as if it alone were the anomaly map. Ties break by
    ascending component index.
    """
    from .viz import upsample_batch  # local import to avoid a module cycle

    y_sq = np.asarray(y_sq, dtype=np.float64)
    if y_sq.ndim != 4:
        raise ShapeError(f"y_sq must be B x C x H x W, got rank {y_sq.ndim}")
    n_components = y_sq.shape[1]
    flat_labels = labels.masks.ravel()

    def score_one(c: int) -> float:
        upsampled = upsample_batch(y_sq[:, c], image_size)
        return auroc(ScoredPixels(upsampled.ravel(), flat_labels))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(score_one, range(n_components)))
    else:
        values = [score_one(c) for c in range(n_components)]
    ranking = sorted(range(n_components), key=lambda c: (-values[c], c))
    return [(c, values[c]) for c in ranking]


def evaluate(
    score_maps: np.ndarray,
    y_sq: np.ndarray,
    labels: PixelLabels,
    image_size: tuple[int, int],
    fpr_limit: float = DEFAULT_FPR_LIMIT,
    threads: int = 1,
) -> MetricsReport:
    """Full report on a test split: the three metrics plus component ranking.

    ``score_maps`` and ``y_sq`` arrive at feature resolution and are upsampled
    here; masks are at image resolution already.
    """
    from .viz import upsample_batch

    upsampled = upsample_batch(np.asarray(score_maps, dtype=np.float64), image_size)
    pixels = paired_pixels(upsampled, labels)
    return MetricsReport(
        auroc=auroc(pixels),
        aupr=aupr(pixels),
        aupro=aupro(upsampled, labels, fpr_limit=fpr_limit),
        fpr_limit=fpr_limit,
        per_component_auroc=rank_components(y_sq, labels, image_size, threads=threads),
    )
