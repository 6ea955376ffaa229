"""Correlation baseline: blame a feature when it tracks task duration.

A feature is named as a straggler's cause when its Pearson correlation with
task duration across the stage is strong enough and the straggler's value
sits above a stage quantile.
"""

from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence

from .detect import find_stragglers
from .model import FeatureVector, TaskRecord
from .rootcause import global_quantile


class UndefinedCorrelation(ValueError):
    """One of the sequences has zero variance."""


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    if len(xs) != len(ys):
        raise ValueError("sequences differ in length")
    n = len(xs)
    if n < 2:
        raise ValueError("need at least two observations")
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelation("zero variance")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def pcc_identify(
    stage_tasks: Sequence[TaskRecord],
    feature_vectors: Mapping[str, FeatureVector],
    feature_name: str,
    lambda_ca: float,
    lambda_cq: float,
    multiplier: float = 1.5,
    stragglers: Optional[Sequence[str]] = None,
) -> set[str]:
    """Ids of stragglers blamed on ``feature_name``.

    Tasks missing the feature are left out of both the correlation and the
    quantile. ``stragglers`` may be passed to skip re-detection.
    """
    rows = [(t, feature_vectors[t.task_id][feature_name]) for t in stage_tasks]
    rows = [(t, v) for t, v in rows if v is not None]
    if len(rows) < 2:
        return set()
    values = [v for _, v in rows]
    try:
        rho = pearson(values, [t.duration for t, _ in rows])
    except UndefinedCorrelation:
        return set()
    if not abs(rho) > lambda_ca:
        return set()
    cutoff = global_quantile(values, lambda_cq)
    if stragglers is None:
        stragglers = [t.task_id for t, _ in find_stragglers(stage_tasks, multiplier)]
    slow = set(stragglers)
    return {t.task_id for t, v in rows if t.task_id in slow and v > cutoff}
