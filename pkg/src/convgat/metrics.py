"""F1, confidence intervals and context-sensitive / context-free breakdowns."""

from __future__ import annotations

import logging
import math
from typing import Optional, Sequence

from .errors import ArgumentError

logger = logging.getLogger(__name__)

# the value used for the ten-run intervals we report against; the two-sided
# 95% critical value for df=9 is 2.262
T_CRITICAL = 2.228


def f1_score(preds: Sequence[int], labels: Sequence[int]) -> float:
    """F1 of the positive (abusive) class."""
    if len(preds) != len(labels):
        raise ArgumentError("preds and labels differ in length")
    tp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 1)
    fp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 0)
    fn = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 1)
    if tp + fp + fn == 0:
        logger.warning("f1_score: no positive predictions or labels; returning 0")
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def mean_ci(values: Sequence[float], t: float = T_CRITICAL) -> tuple:
    """(mean, t * s / sqrt(n)) with s the sample standard deviation."""
    n = len(values)
    if n < 2:
        raise ArgumentError("mean_ci needs at least two values")
    mean = math.fsum(values) / n
    s = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
    return mean, t * s / math.sqrt(n)


def format_ci(mean: float, halfwidth: float, digits: int = 4) -> str:
    return f"{mean:.{digits}f} ± {halfwidth:.{digits}f}"


def percent_correct(rows) -> Optional[float]:
    rows = list(rows)
    if not rows:
        return None
    return 100.0 * sum(1 for r in rows if r["pred"] == r["label"]) / len(rows)


def css_cfs_report(report) -> tuple:
    """Percent correct on context-sensitive and on context-free samples.

    Samples without a context flag count as context-free. An empty partition
    yields ``None`` rather than 0.
    """
    rows = report.samples if hasattr(report, "samples") else report
    css = [r for r in rows if r.get("context_sensitive") is True]
    cfs = [r for r in rows if r.get("context_sensitive") is not True]
    return percent_correct(css), percent_correct(cfs)
