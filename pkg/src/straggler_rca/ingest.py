"""Readers and writers for the on-disk trace formats.

Two inputs make up a trace:

* an event log, JSON-lines, one task per line (format ``events/1``);
* a metrics log, CSV with header ``timestamp_ms,node_id,kind,value``
  (format ``metrics/1``).

Both share one clock: milliseconds since a per-trace epoch. See
``docs/FORMATS.md`` for the full description.
"""

from __future__ import annotations

import csv
import io
import json
import re
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Optional, Union

from .model import (
    COUNTERS,
    GroundTruthSchedule,
    Locality,
    MetricKind,
    MetricSeries,
    ModelError,
    ScheduleEntry,
    TaskRecord,
)

EVENTS_FORMAT = "events/1"
METRICS_FORMAT = "metrics/1"
SCHEDULE_FORMAT = "schedule/1"

METRICS_HEADER = ["timestamp_ms", "node_id", "kind", "value"]
SCHEDULE_HEADER = ["node_id", "kind", "start_ms", "end_ms", "magnitude"]
REQUIRED_EVENT_KEYS = ("task_id", "stage_id", "node_id", "start_time", "end_time")

Stream = Union[IO[str], IO[bytes], Iterable[str], Iterable[bytes]]


class ParseError(ValueError):
    """An input file could not be turned into domain values."""


def natural_key(ident: str):
    """Sort key that orders ``t2`` before ``t10``."""
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in re.split(r"(\d+)", ident) if p)


def _lines(stream: Stream) -> Iterator[str]:
    for raw in stream:
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        yield raw


def _as_int(value, what: str) -> int:
    if isinstance(value, bool):
        raise ValueError(f"{what} must be a number")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value)
    raise ValueError(f"{what} must be an integer, got {value!r}")


def parse_event_log(stream: Stream) -> list[TaskRecord]:
    tasks = []
    for lineno, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(f"line {lineno}: expected a JSON object")
        task_id = obj.get("task_id", "?")
        absent = [k for k in REQUIRED_EVENT_KEYS if k not in obj]
        if absent:
            raise ParseError(f"line {lineno} (task {task_id}): missing {', '.join(absent)}")
        try:
            kwargs = {
                "task_id": str(obj["task_id"]),
                "stage_id": str(obj["stage_id"]),
                "node_id": str(obj["node_id"]),
                "start_time": _as_int(obj["start_time"], "start_time"),
                "end_time": _as_int(obj["end_time"], "end_time"),
                "locality": Locality.parse(obj.get("locality") or "NOPREF"),
            }
            for name in COUNTERS:
                kwargs[name] = _as_int(obj.get(name, 0), name)
            tasks.append(TaskRecord(**kwargs))
        except (ModelError, ValueError) as exc:
            raise ParseError(f"line {lineno} (task {task_id}): {exc}") from None
    return tasks


def task_to_json(task: TaskRecord) -> dict:
    obj = {
        "task_id": task.task_id,
        "stage_id": task.stage_id,
        "node_id": task.node_id,
        "start_time": task.start_time,
        "end_time": task.end_time,
        "locality": task.locality.value,
    }
    for name in COUNTERS:
        obj[name] = getattr(task, name)
    return obj


def write_event_log(tasks: Iterable[TaskRecord], stream: IO[str]) -> None:
    for task in tasks:
        stream.write(json.dumps(task_to_json(task), separators=(",", ":")))
        stream.write("\n")


def _csv_rows(stream: Stream, header: list[str], what: str) -> Iterator[tuple[int, list[str]]]:
    reader = csv.reader(_lines(stream))
    try:
        first = next(reader)
    except StopIteration:
        raise ParseError(f"{what}: empty input, expected header {','.join(header)}") from None
    if [h.strip() for h in first] != header:
        raise ParseError(f"{what}: header must be exactly {','.join(header)}, got {','.join(first)}")
    for row in reader:
        if not row or not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"{what} row {reader.line_num}: expected {len(header)} fields, got {len(row)}")
        yield reader.line_num, [cell.strip() for cell in row]


def parse_metrics(stream: Stream) -> dict[tuple[str, MetricKind], MetricSeries]:
    samples: dict[tuple[str, MetricKind], list[tuple[int, float]]] = defaultdict(list)
    for rowno, (ts, node, kind_raw, value_raw) in _csv_rows(stream, METRICS_HEADER, "metrics"):
        try:
            t = int(ts)
            value = float(value_raw)
            kind = MetricKind.parse(kind_raw)
        except (ValueError, ModelError) as exc:
            raise ParseError(f"metrics row {rowno}: {exc}") from None
        if not node:
            raise ParseError(f"metrics row {rowno}: empty node_id")
        if kind.bounded and not 0.0 <= value <= 1.0:
            raise ParseError(f"metrics row {rowno}: {kind.value} value {value} outside [0, 1]")
        if value < 0 or value != value:
            raise ParseError(f"metrics row {rowno}: invalid {kind.value} value {value}")
        series = samples[(node, kind)]
        if series and t <= series[-1][0]:
            raise ParseError(
                f"metrics row {rowno}: timestamp {t} for {node}/{kind.value} is not after {series[-1][0]}"
            )
        series.append((t, value))

    result = {}
    for key in sorted(samples, key=lambda k: (natural_key(k[0]), k[1].value)):
        points = samples[key]
        gaps = [b[0] - a[0] for a, b in zip(points, points[1:])]
        period = statistics.median(gaps) if gaps else 1000
        result[key] = MetricSeries(key[0], key[1], tuple(points), nominal_period=period)
    return result


def write_metrics(metrics: Mapping[tuple[str, MetricKind], MetricSeries], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for key in sorted(metrics, key=lambda k: (natural_key(k[0]), k[1].value)):
        series = metrics[key]
        for t, v in series.samples:
            writer.writerow([t, series.node_id, series.kind.value, repr(v)])


def window(series: MetricSeries, t0: int, t1: int) -> tuple[tuple[int, float], ...]:
    """Samples with ``t0 <= timestamp <= t1``."""
    if t0 >= t1:
        raise ValueError(f"window start {t0} must be before end {t1}")
    i, j = series.span(t0, t1)
    return series.samples[i:j]


def parse_schedule(stream: Stream) -> GroundTruthSchedule:
    entries = []
    for rowno, (node, kind_raw, start, end, magnitude) in _csv_rows(stream, SCHEDULE_HEADER, "schedule"):
        try:
            entries.append(
                ScheduleEntry(node, MetricKind.parse(kind_raw), int(start), int(end), float(magnitude or 0))
            )
        except (ValueError, ModelError) as exc:
            raise ParseError(f"schedule row {rowno}: {exc}") from None
    return GroundTruthSchedule(tuple(entries))


def write_schedule(schedule: GroundTruthSchedule, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SCHEDULE_HEADER)
    for e in schedule:
        writer.writerow([e.node_id, e.kind.value, e.start, e.end, repr(float(e.magnitude))])


@dataclass(frozen=True)
class TraceBundle:
    """Tasks grouped by stage plus the node metrics they are analyzed against.

    Stages and the tasks inside them are held in natural id order, so the
    bundle does not depend on the order records were read in.
    """

    stages: dict[str, tuple[TaskRecord, ...]]
    metrics: dict[tuple[str, MetricKind], MetricSeries] = field(default_factory=dict)
    nodes_without_metrics: tuple[str, ...] = ()
    epoch: int = 0

    @classmethod
    def from_tasks(
        cls,
        tasks: Iterable[TaskRecord],
        metrics: Optional[Mapping[tuple[str, MetricKind], MetricSeries]] = None,
        epoch: int = 0,
    ) -> "TraceBundle":
        grouped: dict[str, list[TaskRecord]] = defaultdict(list)
        seen = set()
        for task in tasks:
            if task.task_id in seen:
                raise ModelError(f"duplicate task_id {task.task_id}")
            seen.add(task.task_id)
            grouped[task.stage_id].append(task)
        stages = {
            sid: tuple(sorted(grouped[sid], key=lambda t: natural_key(t.task_id)))
            for sid in sorted(grouped, key=natural_key)
        }
        metrics = dict(metrics or {})
        metrics = {k: metrics[k] for k in sorted(metrics, key=lambda k: (natural_key(k[0]), k[1].value))}
        covered = {node for node, _ in metrics}
        task_nodes = {t.node_id for group in stages.values() for t in group}
        missing = tuple(sorted(task_nodes - covered, key=natural_key))
        return cls(stages=stages, metrics=metrics, nodes_without_metrics=missing, epoch=epoch)

    def __post_init__(self):
        for sid, group in self.stages.items():
            if not group:
                raise ModelError(f"stage {sid} is empty")

    @property
    def tasks(self) -> list[TaskRecord]:
        return [t for group in self.stages.values() for t in group]

    @property
    def nodes(self) -> list[str]:
        found = {t.node_id for t in self.tasks} | {node for node, _ in self.metrics}
        return sorted(found, key=natural_key)

    def node_metrics(self, node_id: str) -> dict[MetricKind, MetricSeries]:
        return {kind: s for (node, kind), s in self.metrics.items() if node == node_id}

    def task(self, task_id: str) -> TaskRecord:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)


def load_bundle(event_path, metrics_path=None) -> TraceBundle:
    event_path = Path(event_path)
    with event_path.open("rb") as fh:
        try:
            tasks = parse_event_log(fh)
        except ParseError as exc:
            raise ParseError(f"{event_path}: {exc}") from None
    if not tasks:
        raise ParseError(f"{event_path}: event log contains no tasks")
    metrics = {}
    if metrics_path is not None:
        metrics_path = Path(metrics_path)
        with metrics_path.open("rb") as fh:
            try:
                metrics = parse_metrics(fh)
            except ParseError as exc:
                raise ParseError(f"{metrics_path}: {exc}") from None
    return TraceBundle.from_tasks(tasks, metrics)


def save_bundle(bundle: TraceBundle, event_path, metrics_path) -> None:
    with open(event_path, "w", encoding="utf-8", newline="\n") as fh:
        write_event_log(bundle.tasks, fh)
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
        write_metrics(bundle.metrics, fh)


def load_schedule(path) -> GroundTruthSchedule:
    path = Path(path)
    with path.open("rb") as fh:
        try:
            return parse_schedule(fh)
        except ParseError as exc:
            raise ParseError(f"{path}: {exc}") from None


def save_schedule(schedule: GroundTruthSchedule, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_schedule(schedule, fh)


def dumps_events(tasks: Iterable[TaskRecord]) -> str:
    buf = io.StringIO()
    write_event_log(tasks, buf)
    return buf.getvalue()


def dumps_metrics(metrics: Mapping[tuple[str, MetricKind], MetricSeries]) -> str:
    buf = io.StringIO()
    write_metrics(metrics, buf)
    return buf.getvalue()
