"""Per-task feature extraction.

Resource features are windowed means of the node's samples over the task
lifetime; framework features are the task's counters normalized against the
stage (bytes) or against the task's own duration (time).
"""

from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence

from .model import (
    BYTE_COUNTERS,
    DEGENERATE_LARGE,
    FEATURE_CATEGORIES,
    RESOURCE_FEATURES,
    TIME_COUNTERS,
    FeatureValue,
    FeatureVector,
    Locality,
    MetricKind,
    MetricSeries,
)


def _window_mean(series: Optional[MetricSeries], t0: int, t1: int, kind: MetricKind) -> Optional[float]:
    if t0 >= t1:
        raise ValueError(f"window start {t0} must be before end {t1}")
    if series is None:
        return None
    if series.kind is not kind:
        raise ValueError(f"expected a {kind.value} series, got {series.kind.value}")
    i, j = series.span(t0, t1)
    if i == j:
        return None
    return math.fsum(series.values[i:j]) / (j - i)


def cpu_feature(series: Optional[MetricSeries], t0: int, t1: int) -> Optional[float]:
    """Mean user-CPU fraction over ``[t0, t1]``; ``None`` when no sample falls inside."""
    return _window_mean(series, t0, t1, MetricKind.CPU)


def disk_feature(series: Optional[MetricSeries], t0: int, t1: int) -> Optional[float]:
    return _window_mean(series, t0, t1, MetricKind.DISK)


def network_feature(series: Optional[MetricSeries], t0: int, t1: int) -> Optional[float]:
    """Mean bytes/s (sent + received) over ``[t0, t1]``."""
    return _window_mean(series, t0, t1, MetricKind.NETWORK)


RESOURCE_EXTRACTORS = {
    "cpu": cpu_feature,
    "disk": disk_feature,
    "network": network_feature,
}


def locality_feature(loc: Locality) -> int:
    if loc is Locality.PROCESS_LOCAL:
        return 0
    if loc is Locality.NODE_LOCAL:
        return 1
    return 2


def bytes_factor(value: float, stage_avg: float) -> float:
    """``value / stage_avg``.

    ``0 / 0`` is 1.0 (the task matches its stage). ``x / 0`` with ``x > 0``
    returns :data:`DEGENERATE_LARGE`; check with :func:`is_degenerate`.
    """
    if value < 0 or stage_avg < 0:
        raise ValueError(f"byte counts must be non-negative (value={value}, avg={stage_avg})")
    if stage_avg == 0:
        return 1.0 if value == 0 else DEGENERATE_LARGE
    return value / stage_avg


def is_degenerate(factor: float) -> bool:
    return factor >= DEGENERATE_LARGE


def time_factor(t: float, task_duration: float) -> float:
    if task_duration <= 0:
        raise ValueError("task duration must be positive")
    if t < 0:
        raise ValueError(f"time counter must be non-negative, got {t}")
    if t > task_duration:
        raise ValueError(f"time counter {t} exceeds task duration {task_duration}")
    return t / task_duration


def stage_averages(stage_tasks: Sequence) -> dict[str, float]:
    """Mean of every byte counter over the stage, the task itself included."""
    if not stage_tasks:
        raise ValueError("stage has no tasks")
    n = len(stage_tasks)
    return {name: math.fsum(getattr(t, name) for t in stage_tasks) / n for name in BYTE_COUNTERS}


def build_feature_vector(
    task,
    stage_tasks: Sequence,
    metrics: Mapping[MetricKind, MetricSeries],
    averages: Optional[Mapping[str, float]] = None,
) -> FeatureVector:
    """Compute all twelve features of ``task``.

    ``metrics`` holds the task's node series keyed by kind; kinds that are
    absent, or whose samples do not overlap the task, yield missing resource
    entries. ``averages`` may be passed in to avoid recomputing
    :func:`stage_averages` for every task of a large stage.
    """
    if averages is None:
        if not any(t is task or t == task for t in stage_tasks):
            raise ValueError(f"task {task.task_id} is not part of the given stage")
        averages = stage_averages(stage_tasks)
    entries = {"locality": FeatureValue(float(locality_feature(task.locality)), FEATURE_CATEGORIES["locality"])}
    for name, kind in RESOURCE_FEATURES.items():
        value = RESOURCE_EXTRACTORS[name](metrics.get(kind), task.start_time, task.end_time)
        entries[name] = FeatureValue(value, FEATURE_CATEGORIES[name])
    for name in BYTE_COUNTERS:
        factor = bytes_factor(getattr(task, name), averages[name])
        entries[name] = FeatureValue(factor, FEATURE_CATEGORIES[name], degenerate=is_degenerate(factor))
    duration = task.duration
    for name in TIME_COUNTERS:
        entries[name] = FeatureValue(time_factor(getattr(task, name), duration), FEATURE_CATEGORIES[name])
    return FeatureVector(task.task_id, entries)


def stage_feature_vectors(stage_tasks: Sequence, bundle_metrics: Mapping) -> dict[str, FeatureVector]:
    """Feature vectors for a whole stage, keyed by task id.

    ``bundle_metrics`` is the ``(node_id, kind) -> MetricSeries`` index of a
    trace bundle.
    """
    averages = stage_averages(stage_tasks)
    by_node: dict[str, dict[MetricKind, MetricSeries]] = {}
    out = {}
    for task in stage_tasks:
        node_series = by_node.get(task.node_id)
        if node_series is None:
            node_series = {
                kind: bundle_metrics[(task.node_id, kind)]
                for kind in MetricKind
                if (task.node_id, kind) in bundle_metrics
            }
            by_node[task.node_id] = node_series
        out[task.task_id] = build_feature_vector(task, stage_tasks, node_series, averages)
    return out
