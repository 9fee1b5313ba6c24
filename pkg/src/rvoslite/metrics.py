"""Region similarity J, contour accuracy F, and their mean J&F.

Conventions (fixed here, stated in every report header):
  - per-frame scores averaged over all frames;
  - a frame where both masks are empty scores 1, one-sided empty scores 0;
  - boundaries are foreground pixels 4-adjacent to background or to the
    image border;
  - default contour tolerance is ceil(0.008 * image diagonal) pixels;
  - ground truth of a multi-target expression is the pixel-wise union of
    its objects' masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data import DatasetManifest


class MetricsError(ValueError):
    pass


class CoverageError(MetricsError):
    """Predictions missing for some expressions."""

    def __init__(self, missing_ids: list[str]):
        self.missing_ids = list(missing_ids)
        super().__init__(f"missing predictions for expressions: {', '.join(self.missing_ids)}")


def default_tolerance(height: int, width: int) -> int:
    return int(np.ceil(0.008 * np.sqrt(height ** 2 + width ** 2)))


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricsError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.ndim != 3:
        raise MetricsError(f"expected T×H×W masks, got shape {pred.shape}")
    return pred.astype(bool), gt.astype(bool)


def region_similarity(pred: np.ndarray, gt: np.ndarray) -> float:
    """Per-frame intersection-over-union averaged over frames."""
    pred, gt = _check_pair(pred, gt)
    scores = []
    for p, g in zip(pred, gt):
        union = np.logical_or(p, g).sum()
        if union == 0:
            scores.append(1.0)
        else:
            scores.append(np.logical_and(p, g).sum() / union)
    return float(np.mean(scores))


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels 4-adjacent to background or to the image border."""
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] &
                padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def _frame_contour_f(pred: np.ndarray, gt: np.ndarray, tolerance: float) -> float:
    bp = boundary_pixels(pred)
    bg = boundary_pixels(gt)
    np_, ng = bp.sum(), bg.sum()
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    # exact Euclidean distance to the nearest boundary pixel of the other mask
    dist_to_gt = ndimage.distance_transform_edt(~bg)
    dist_to_pred = ndimage.distance_transform_edt(~bp)
    precision = (dist_to_gt[bp] <= tolerance).mean()
    recall = (dist_to_pred[bg] <= tolerance).mean()
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def contour_accuracy(pred: np.ndarray, gt: np.ndarray,
                     tolerance: float | None = None) -> float:
    """Boundary F-measure at the given pixel tolerance, averaged over frames."""
    pred, gt = _check_pair(pred, gt)
    if tolerance is None:
        tolerance = default_tolerance(pred.shape[1], pred.shape[2])
    if tolerance < 0:
        raise MetricsError("tolerance must be >= 0")
    return float(np.mean([_frame_contour_f(p, g, tolerance) for p, g in zip(pred, gt)]))


def jf_score(pred: np.ndarray, gt: np.ndarray,
             tolerance: float | None = None) -> tuple[float, float, float]:
    j = region_similarity(pred, gt)
    f = contour_accuracy(pred, gt, tolerance)
    return j, f, (j + f) / 2


@dataclass
class MetricsReport:
    per_expression: dict[str, dict[str, float]]
    aggregate: dict[str, float]
    n_expressions: int
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "per_expression": self.per_expression,
            "aggregate": self.aggregate,
            "n_expressions": self.n_expressions,
            "tolerance": self.tolerance,
        }

    def to_markdown(self) -> str:
        lines = [
            "# Evaluation report",
            "",
            f"Conventions: per-frame averaging; both-empty frame scores 1, one-sided "
            f"empty scores 0; 4-adjacency boundaries; contour tolerance "
            f"{self.tolerance} px; multi-target ground truth is the union of "
            f"object masks.",
            "",
            "| expression | J | F | J&F |",
            "|---|---|---|---|",
        ]
        for eid in sorted(self.per_expression):
            m = self.per_expression[eid]
            lines.append(f"| {eid} | {m['J']:.4f} | {m['F']:.4f} | {m['JF']:.4f} |")
        a = self.aggregate
        lines.append(f"| **mean ({self.n_expressions})** | **{a['J']:.4f}** | "
                     f"**{a['F']:.4f}** | **{a['JF']:.4f}** |")
        return "\n".join(lines) + "\n"


def evaluate_dataset(predictions: dict[str, dict], manifest: DatasetManifest,
                     tolerance: float | None = None) -> MetricsReport:
    """Score predictions against a manifest.

    predictions maps expression_id to {"frame_indices": [...], "masks": T×H×W array}.
    Ground truth per expression is the union of its target objects' masks at the
    prediction's frame indices.
    """
    missing = [e.expression_id for e in manifest.expressions
               if e.expression_id not in predictions]
    if missing:
        raise CoverageError(sorted(missing))

    per_expression = {}
    tol_used = tolerance
    for sample in sorted(manifest.expressions, key=lambda e: e.expression_id):
        rec = predictions[sample.expression_id]
        pred = np.asarray(rec["masks"])
        frame_indices = list(rec["frame_indices"])
        gt = manifest.expression_target_masks(sample, frame_indices).max(axis=0)
        if pred.shape != gt.shape:
            raise MetricsError(
                f"expression '{sample.expression_id}': prediction shape {pred.shape} "
                f"does not match ground truth {gt.shape}")
        if tol_used is None:
            tol_used = default_tolerance(gt.shape[1], gt.shape[2])
        j, f, jf = jf_score(pred, gt, tol_used)
        per_expression[sample.expression_id] = {"J": j, "F": f, "JF": jf}

    if tol_used is None:  # empty manifest
        tol_used = 0
    n = len(per_expression)
    aggregate = {
        "J": float(np.mean([m["J"] for m in per_expression.values()])) if n else 0.0,
        "F": float(np.mean([m["F"] for m in per_expression.values()])) if n else 0.0,
    }
    aggregate["JF"] = (aggregate["J"] + aggregate["F"]) / 2
    return MetricsReport(per_expression, aggregate, n, float(tol_used))
