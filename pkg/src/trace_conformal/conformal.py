"""Split conformal calibration, membership, and coverage.

Works with any scalar nonconformity score: calibrate on held-out scores,
threshold at the ceil((1-alpha)(n+1))-th smallest, and declare a point
covered when its score does not exceed the threshold.  The threshold is
+inf when the rank exceeds n_cal, in which case the region is the whole
space and is reported as such rather than clamped to the max score.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class CalibrationResult:
    sorted_scores: np.ndarray
    alpha: float
    n_cal: int
    threshold: float

    @property
    def rank(self) -> int:
        return math.ceil((1.0 - self.alpha) * (self.n_cal + 1))


@dataclass(frozen=True)
class RegionHandle:
    """A calibrated region: everything with score(x, y) <= threshold."""

    score_fn: object
    threshold: float


def conformal_rank(n_cal: int, alpha: float) -> int:
    return math.ceil((1.0 - alpha) * (n_cal + 1))


def calibrate(scores, alpha: float) -> CalibrationResult:
    """Order-statistic threshold for miscoverage level alpha."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.size < 1:
        raise InvalidArgumentError("calibration scores must be a non-empty 1-d array")
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    if not np.all(np.isfinite(scores)):
        raise InvalidArgumentError("calibration scores must all be finite")
    srt = np.sort(scores)
    n = srt.size
    k = conformal_rank(n, alpha)
    threshold = float(srt[k - 1]) if k <= n else math.inf
    return CalibrationResult(sorted_scores=srt, alpha=float(alpha), n_cal=n, threshold=threshold)


def _evaluate(score_fn, x, y) -> float:
    if hasattr(score_fn, "score_one"):
        return float(score_fn.score_one(x, y))
    return float(score_fn(x, y))


def contains(region: RegionHandle, x, y) -> bool:
    """Membership with ties included (closed region); +inf covers everything."""
    if math.isinf(region.threshold):
        return True
    return _evaluate(region.score_fn, x, y) <= region.threshold


def membership_from_scores(scores, threshold: float) -> np.ndarray:
    """Vector form of :func:`contains` for precomputed scores."""
    scores = np.asarray(scores, dtype=float)
    if math.isinf(threshold):
        return np.ones(scores.shape, dtype=bool)
    return scores <= threshold


def coverage(region: RegionHandle, test_pairs) -> float:
    """Fraction of (x, y) pairs inside the region."""
    pairs = list(test_pairs)
    if not pairs:
        raise InvalidArgumentError("test set must be non-empty")
    hits = sum(1 for x, y in pairs if contains(region, x, y))
    return hits / len(pairs)


def coverage_from_scores(scores, threshold: float) -> float:
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise InvalidArgumentError("test set must be non-empty")
    return float(np.mean(membership_from_scores(scores, threshold)))


def calibration_to_json(
    result: CalibrationResult,
    path: str | Path | None = None,
    score_kind: str | None = None,
    bank_hash: str | None = None,
) -> str:
    """Serialize the calibration outcome (threshold as string to keep inf)."""
    doc = {
        "alpha": result.alpha,
        "n_cal": result.n_cal,
        "rank": result.rank,
        "threshold": repr(result.threshold),
        "score_kind": score_kind,
        "bank_hash": bank_hash,
    }
    text = json.dumps(doc, indent=1)
    if path is not None:
        Path(path).write_text(text)
    return text


def calibration_from_json(source: str | Path) -> dict:
    """Parse the JSON summary back to a dict with a float threshold.

    Accepts the JSON text itself or a path to it.
    """
    if isinstance(source, str) and source.lstrip().startswith("{"):
        text = source
    else:
        text = Path(source).read_text()
    doc = json.loads(text)
    doc["threshold"] = float(doc["threshold"])
    return doc
