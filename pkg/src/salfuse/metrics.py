"""Pixel-level evaluation: F-measure with adaptive thresholds, mean
absolute error, convergence summaries, and CSV reporting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGroundTruth, InputError


def f_measure(sal: np.ndarray, gt: np.ndarray, beta2: float = 0.3) -> float:
    """Precision-weighted F score at the adaptive threshold.

    The saliency map is binarized at twice its mean value (capped at 1);
    beta2 < 1 emphasizes precision.  An empty prediction or one with no true
    positives scores 0.  A ground truth with no foreground has no defined
    score and raises EmptyGroundTruth so callers can skip the image.
    """
    sal_arr = np.asarray(sal, dtype=np.float64)
    gt_arr = np.asarray(gt).astype(bool)
    if sal_arr.shape != gt_arr.shape:
        raise InputError(
            f"saliency shape {sal_arr.shape} does not match gt shape {gt_arr.shape}"
        )
    if not gt_arr.any():
        raise EmptyGroundTruth("ground truth contains no foreground pixels")

    threshold = min(2.0 * sal_arr.mean(), 1.0)
    pred = sal_arr >= threshold

    tp = float(np.logical_and(pred, gt_arr).sum())
    fp = float(np.logical_and(pred, ~gt_arr).sum())
    fn = float(np.logical_and(~pred, gt_arr).sum())

    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn)
    denom = beta2 * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta2) * precision * recall / denom


def mae(sal: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute per-pixel difference between map and ground truth."""
    a = np.asarray(sal, dtype=np.float64)
    b = np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def convergence_trace(
    trace: np.ndarray, tol: float = 0.01
) -> tuple[np.ndarray, bool]:
    """Return the reference-change series and whether it ended below tol."""
    series = np.asarray(trace, dtype=np.float64)
    converged = bool(series.size == 0 or series[-1] <= tol)
    return series, converged


@dataclass
class EvalReport:
    """Per-image scores plus aggregate means, in a stable order."""

    methods: list[str]
    rows: list[tuple[str, str, float, float]] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def add(self, image: str, method: str, f: float, err: float) -> None:
        self.rows.append((image, method, f, err))

    def mark_skipped(self, image: str) -> None:
        if image not in self.skipped:
            self.skipped.append(image)

    def aggregates(self) -> list[tuple[str, float, float]]:
        out = []
        for method in self.methods:
            scores = [(f, e) for _, m, f, e in self.rows if m == method]
            if not scores:
                continue
            fs, errs = zip(*scores)
            out.append((method, sum(fs) / len(fs), sum(errs) / len(errs)))
        return out

    def to_csv(self) -> str:
        """Deterministic CSV: data rows in insertion order, then one mean
        row per method.  UTF-8, LF line endings."""
        lines = ["image,method,f_measure,mae"]
        for image, method, f, err in self.rows:
            lines.append(f"{image},{method},{f:.6f},{err:.6f}")
        for method, f, err in self.aggregates():
            lines.append(f"(mean),{method},{f:.6f},{err:.6f}")
        return "\n".join(lines) + "\n"


def build_report(
    scores: dict[str, dict[str, tuple[float, float]]],
    methods: list[str],
    skipped: list[str] | None = None,
) -> EvalReport:
    """Assemble a report from {image: {method: (f, mae)}} score maps.

    Images appear in sorted order, methods in the requested order.
    """
    if not scores and not skipped:
        raise InputError("nothing to report: no evaluated images")
    report = EvalReport(methods=list(methods))
    for image in sorted(scores):
        per_method = scores[image]
        for method in methods:
            if method in per_method:
                f, err = per_method[method]
                report.add(image, method, f, err)
    for image in skipped or []:
        report.mark_skipped(image)
    return report
