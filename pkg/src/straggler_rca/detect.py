"""Straggler detection and peer-group construction within a stage."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .model import TaskRecord


@dataclass(frozen=True)
class PeerGroups:
    intra_node: tuple[str, ...]
    inter_node: tuple[str, ...]


def median_duration(stage_tasks: Sequence[TaskRecord]) -> float:
    if not stage_tasks:
        raise ValueError("cannot take the median of an empty stage")
    durations = sorted(t.duration for t in stage_tasks)
    n = len(durations)
    mid = n // 2
    if n % 2:
        return durations[mid]
    return (durations[mid - 1] + durations[mid]) / 2


def find_stragglers(stage_tasks: Sequence[TaskRecord], multiplier: float = 1.5) -> list[tuple[TaskRecord, float]]:
    """Tasks whose duration is strictly greater than ``multiplier`` x the stage median.

    Returns ``(task, straggler_scale)`` pairs in stage order, where the scale
    is duration over median.
    """
    if not multiplier > 1:
        raise ValueError("multiplier must be > 1")
    median = median_duration(stage_tasks)
    cutoff = multiplier * median
    return [(t, t.duration / median) for t in stage_tasks if t.duration > cutoff]


def peer_groups(task: TaskRecord, stage_tasks: Sequence[TaskRecord]) -> PeerGroups:
    if not any(t.task_id == task.task_id for t in stage_tasks):
        raise ValueError(f"task {task.task_id} is not in the stage")
    intra, inter = [], []
    for other in stage_tasks:
        if other.task_id == task.task_id:
            continue
        (intra if other.node_id == task.node_id else inter).append(other.task_id)
    return PeerGroups(tuple(intra), tuple(inter))
