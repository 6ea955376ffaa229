"""Seeded synthetic traces with injected resource anomalies.

Stands in for a real cluster run: tasks are laid out stage by stage on a set
of nodes, nodes get a noisy baseline utilization, and a schedule of anomaly
intervals raises utilization on chosen nodes while slowing the tasks that
overlap them. Because the schedule is known exactly, so is the ground truth.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .ingest import TraceBundle, parse_schedule
from .model import (
    BYTE_COUNTERS,
    COUNTERS,
    TIME_COUNTERS,
    GroundTruthSchedule,
    Locality,
    MetricKind,
    MetricSeries,
    ModelError,
    ScheduleEntry,
    TaskRecord,
)

MiB = 1 << 20


@dataclass(frozen=True)
class Dist:
    """``mean`` perturbed uniformly by up to ``jitter`` x mean either way."""

    mean: float
    jitter: float = 0.0

    def __post_init__(self):
        if self.mean < 0 or self.jitter < 0:
            raise ModelError(f"distribution needs mean >= 0 and jitter >= 0, got {self}")

    def draw(self, rng: np.random.Generator, size=None):
        return self.mean * (1 + self.jitter * rng.uniform(-1.0, 1.0, size))


DEFAULT_COUNTERS = {
    "read_bytes": Dist(64 * MiB, 0.1),
    "shuffle_read_bytes": Dist(32 * MiB, 0.1),
    "shuffle_write_bytes": Dist(16 * MiB, 0.1),
    "memory_bytes_spilled": Dist(0),
    "disk_bytes_spilled": Dist(0),
    # time counters are drawn as a share of the task duration
    "jvm_gc_time": Dist(0.05, 0.5),
    "serialize_time": Dist(0.01, 0.5),
    "deserialize_time": Dist(0.02, 0.5),
}
DEFAULT_LOCALITY = {
    Locality.PROCESS_LOCAL: 0.6,
    Locality.NODE_LOCAL: 0.3,
    Locality.RACK_LOCAL: 0.05,
    Locality.ANY: 0.05,
    Locality.NOPREF: 0.0,
}
DEFAULT_BASELINE = {
    MetricKind.CPU: Dist(0.3, 0.15),
    MetricKind.DISK: Dist(0.2, 0.2),
    MetricKind.NETWORK: Dist(2e6, 0.2),
}
DEFAULT_MAGNITUDE = {
    MetricKind.CPU: 0.4,
    MetricKind.DISK: 0.5,
    MetricKind.NETWORK: 8e6,
}


@dataclass(frozen=True)
class StageSpec:
    task_count: int
    base_duration_ms: int = 3500
    duration_jitter: float = 0.1
    counters: Mapping[str, Dist] = field(default_factory=lambda: dict(DEFAULT_COUNTERS))
    locality_mix: Mapping[Locality, float] = field(default_factory=lambda: dict(DEFAULT_LOCALITY))
    # share of tasks hit by data skew: duration and shuffle read both scaled
    skew_probability: float = 0.0
    skew_factor: float = 2.5
    # share of resource-heavy tasks: duration scaled, and the task loads its
    # own node (one randomly chosen resource) for exactly its lifetime
    heavy_probability: float = 0.0
    heavy_factor: float = 2.0

    def __post_init__(self):
        if self.task_count < 1:
            raise ModelError("task_count must be >= 1")
        if self.base_duration_ms < 1:
            raise ModelError("base_duration_ms must be >= 1")
        if not 0 <= self.duration_jitter < 1:
            raise ModelError("duration_jitter must be in [0, 1)")
        counters = dict(DEFAULT_COUNTERS)
        counters.update(self.counters)
        unknown = set(counters) - set(COUNTERS)
        if unknown:
            raise ModelError(f"unknown counters {sorted(unknown)}")
        object.__setattr__(self, "counters", counters)
        mix = {Locality(k): float(v) for k, v in self.locality_mix.items()}
        if any(p < 0 for p in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-9:
            raise ModelError("locality probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "locality_mix", {loc: mix.get(loc, 0.0) for loc in Locality})
        if not 0 <= self.skew_probability <= 1:
            raise ModelError("skew_probability must be in [0, 1]")
        if self.skew_factor < 1:
            raise ModelError("skew_factor must be >= 1")
        if not 0 <= self.heavy_probability <= 1:
            raise ModelError("heavy_probability must be in [0, 1]")
        if self.heavy_factor < 1:
            raise ModelError("heavy_factor must be >= 1")


@dataclass(frozen=True)
class TraceSpec:
    node_count: int
    stages: tuple[StageSpec, ...]
    baseline: Mapping[MetricKind, Dist] = field(default_factory=lambda: dict(DEFAULT_BASELINE))
    sample_period_ms: int = 1000
    seed: int = 0
    slots_per_node: int = 1
    # metric coverage past the last task end, so edge windows have context
    tail_ms: int = 5000
    # share of tasks whose round-robin node is shuffled among themselves
    placement_perturbation: float = 0.2
    # utilization a heavy task adds to its node
    heavy_load: Mapping[MetricKind, float] = field(default_factory=lambda: dict(DEFAULT_MAGNITUDE))

    def __post_init__(self):
        if self.node_count < 1:
            raise ModelError("node_count must be >= 1")
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ModelError("at least one stage is required")
        baseline = dict(DEFAULT_BASELINE)
        baseline.update({MetricKind(k): v for k, v in self.baseline.items()})
        object.__setattr__(self, "baseline", baseline)
        load = dict(DEFAULT_MAGNITUDE)
        load.update({MetricKind(k): float(v) for k, v in self.heavy_load.items()})
        object.__setattr__(self, "heavy_load", load)
        if self.sample_period_ms < 1 or self.slots_per_node < 1 or self.tail_ms < 0:
            raise ModelError("sample_period_ms and slots_per_node must be >= 1, tail_ms >= 0")
        if not 0 <= self.placement_perturbation <= 1:
            raise ModelError("placement_perturbation must be in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ModelError("seed must be an unsigned 64-bit integer")

    @property
    def node_ids(self) -> list[str]:
        return [f"n{i + 1}" for i in range(self.node_count)]

    @classmethod
    def from_dict(cls, data: Mapping) -> "TraceSpec":
        def dist(raw) -> Dist:
            if isinstance(raw, (int, float)):
                return Dist(float(raw))
            return Dist(float(raw["mean"]), float(raw.get("jitter", 0.0)))

        stages = []
        for raw in data["stages"]:
            raw = dict(raw)
            repeat = int(raw.pop("repeat", 1))
            if "counters" in raw:
                raw["counters"] = {k: dist(v) for k, v in raw["counters"].items()}
            if "locality_mix" in raw:
                raw["locality_mix"] = {Locality.parse(k): float(v) for k, v in raw["locality_mix"].items()}
            stages.extend([StageSpec(**raw)] * repeat)
        kwargs = {k: data[k] for k in ("node_count", "sample_period_ms", "seed", "slots_per_node",
                                       "tail_ms", "placement_perturbation") if k in data}
        if "baseline" in data:
            kwargs["baseline"] = {MetricKind.parse(k): dist(v) for k, v in data["baseline"].items()}
        if "heavy_load" in data:
            kwargs["heavy_load"] = {MetricKind.parse(k): float(v) for k, v in data["heavy_load"].items()}
        return cls(stages=tuple(stages), **kwargs)

    def to_dict(self) -> dict:
        def dist(d: Dist) -> dict:
            return {"mean": d.mean, "jitter": d.jitter}

        return {
            "node_count": self.node_count,
            "sample_period_ms": self.sample_period_ms,
            "seed": self.seed,
            "slots_per_node": self.slots_per_node,
            "tail_ms": self.tail_ms,
            "placement_perturbation": self.placement_perturbation,
            "baseline": {k.value: dist(v) for k, v in self.baseline.items()},
            "heavy_load": {k.value: v for k, v in self.heavy_load.items()},
            "stages": [
                {
                    "task_count": s.task_count,
                    "base_duration_ms": s.base_duration_ms,
                    "duration_jitter": s.duration_jitter,
                    "skew_probability": s.skew_probability,
                    "skew_factor": s.skew_factor,
                    "heavy_probability": s.heavy_probability,
                    "heavy_factor": s.heavy_factor,
                    "counters": {k: dist(v) for k, v in s.counters.items()},
                    "locality_mix": {k.value: v for k, v in s.locality_mix.items()},
                }
                for s in self.stages
            ],
        }


@dataclass(frozen=True)
class ResponseModel:
    """How much an anomaly slows the part of a task it overlaps."""

    cpu: float = 1.5
    disk: float = 2.0
    network: float = 1.05

    def __post_init__(self):
        if min(self.cpu, self.disk, self.network) < 1:
            raise ModelError("response factors must be >= 1")

    def factor(self, kind: MetricKind) -> float:
        return {MetricKind.CPU: self.cpu, MetricKind.DISK: self.disk, MetricKind.NETWORK: self.network}[kind]


def _placement(n: int, nodes: int, perturbation: float, rng: np.random.Generator) -> list[int]:
    assign = np.arange(n) % nodes
    k = int(round(perturbation * n))
    if k > 1:
        # permuting a subset keeps every node's task count intact
        picked = rng.choice(n, size=k, replace=False)
        assign[picked] = assign[rng.permutation(picked)]
    return assign.tolist()


def gen_trace(spec: TraceSpec) -> TraceBundle:
    rng = np.random.default_rng(spec.seed)
    nodes = spec.node_ids
    tasks = []
    loads: dict[tuple[str, MetricKind], list] = {}
    clock = 0
    serial = 0
    for s, stage in enumerate(spec.stages):
        n = stage.task_count
        placement = _placement(n, spec.node_count, spec.placement_perturbation, rng)
        durations = stage.base_duration_ms * (1 + stage.duration_jitter * rng.uniform(-1.0, 1.0, n))
        skewed = rng.random(n) < stage.skew_probability
        durations = np.where(skewed, durations * stage.skew_factor, durations)
        heavy = rng.random(n) < stage.heavy_probability
        heavy_kinds = rng.integers(0, len(MetricKind), n)
        durations = np.where(heavy, durations * stage.heavy_factor, durations)
        durations = np.maximum(1, np.rint(durations)).astype(int)
        counters = {name: stage.counters[name].draw(rng, n) for name in COUNTERS}
        counters["shuffle_read_bytes"] = np.where(
            skewed, counters["shuffle_read_bytes"] * stage.skew_factor, counters["shuffle_read_bytes"]
        )
        locs = list(stage.locality_mix)
        probs = np.array([stage.locality_mix[l] for l in locs])
        picks = rng.choice(len(locs), size=n, p=probs / probs.sum())

        slots = {node: [clock] * spec.slots_per_node for node in range(spec.node_count)}
        stage_end = clock
        for i in range(n):
            node = placement[i]
            start = heapq.heappop(slots[node])
            duration = int(durations[i])
            end = start + duration
            heapq.heappush(slots[node], end)
            if heavy[i]:
                kind = list(MetricKind)[int(heavy_kinds[i])]
                loads.setdefault((nodes[node], kind), []).append((start, end, spec.heavy_load[kind]))
            stage_end = max(stage_end, end)
            record = {
                name: max(0, int(round(counters[name][i]))) for name in BYTE_COUNTERS
            }
            for name in TIME_COUNTERS:
                share = min(1.0, max(0.0, float(counters[name][i])))
                record[name] = int(share * duration)
            tasks.append(
                TaskRecord(
                    task_id=f"t{serial}",
                    stage_id=f"s{s}",
                    node_id=nodes[node],
                    start_time=int(start),
                    end_time=int(end),
                    locality=locs[int(picks[i])],
                    **record,
                )
            )
            serial += 1
        clock = stage_end

    horizon = clock + spec.tail_ms
    stamps = np.arange(0, horizon + 1, spec.sample_period_ms)
    metrics = {}
    for node in nodes:
        for kind in MetricKind:
            values = spec.baseline[kind].draw(rng, len(stamps))
            values = np.clip(values, 0.0, 1.0) if kind.bounded else np.maximum(values, 0.0)
            series = MetricSeries(
                node, kind, tuple(zip(stamps.tolist(), values.tolist())), nominal_period=spec.sample_period_ms
            )
            if (node, kind) in loads:
                series = _raise_series(series, loads[(node, kind)])
            metrics[(node, kind)] = series
    return TraceBundle.from_tasks(tasks, metrics)


def horizon(bundle: TraceBundle) -> tuple[int, int]:
    """Time range covered by the bundle's metrics (or tasks, without metrics)."""
    if bundle.metrics:
        return (
            min(s.timestamps[0] for s in bundle.metrics.values() if len(s)),
            max(s.timestamps[-1] for s in bundle.metrics.values() if len(s)),
        )
    tasks = bundle.tasks
    return min(t.start_time for t in tasks), max(t.end_time for t in tasks)


def _overlap(a0: int, a1: int, b0: int, b1: int) -> int:
    return max(0, min(a1, b1) - max(a0, b0))


def _raise_series(series: MetricSeries, intervals: Iterable[tuple[int, int, float]]) -> MetricSeries:
    times = np.asarray(series.timestamps)
    values = np.asarray(series.values, dtype=float)
    delta = np.zeros_like(values)
    for start, end, magnitude in intervals:
        delta[(times >= start) & (times <= end)] += magnitude
    if not delta.any():
        return series
    raised = values + delta
    raised = np.clip(raised, 0.0, 1.0) if series.kind.bounded else np.maximum(raised, 0.0)
    # untouched samples keep their exact original value
    raised = np.where(delta != 0, raised, values)
    return MetricSeries(
        series.node_id, series.kind, tuple(zip(series.timestamps, raised.tolist())), series.nominal_period
    )


def inject(
    bundle: TraceBundle, schedule: GroundTruthSchedule, response: ResponseModel = ResponseModel()
) -> TraceBundle:
    """Apply ``schedule`` to ``bundle``.

    Samples of the named node and kind inside each ``[start, end]`` are raised
    by the entry's magnitude. A task on that node is lengthened by
    ``(factor - 1) x overlap`` for every entry its original lifetime overlaps.
    Later tasks are not re-scheduled.
    """
    lo, hi = horizon(bundle)
    for e in schedule:
        if e.start < lo or e.end > hi:
            raise ValueError(
                f"anomaly on {e.node_id} [{e.start}, {e.end}] lies outside the trace horizon [{lo}, {hi}]"
            )

    metrics = dict(bundle.metrics)
    for key, series in bundle.metrics.items():
        entries = [(e.start, e.end, e.magnitude) for e in schedule if (e.node_id, e.kind) == key]
        if entries:
            metrics[key] = _raise_series(series, entries)

    by_node: dict[str, list[ScheduleEntry]] = {}
    for e in schedule:
        by_node.setdefault(e.node_id, []).append(e)
    tasks = []
    for task in bundle.tasks:
        extra = 0.0
        for e in by_node.get(task.node_id, ()):
            extra += (response.factor(e.kind) - 1) * _overlap(task.start_time, task.end_time, e.start, e.end)
        if extra:
            task = replace(task, end_time=task.end_time + int(round(extra)))
        tasks.append(task)
    return TraceBundle.from_tasks(tasks, metrics, epoch=bundle.epoch)


def label_tasks(bundle: TraceBundle, schedule: GroundTruthSchedule) -> dict[str, frozenset[MetricKind]]:
    """Anomaly kinds whose interval overlaps each task's lifetime on its node.

    Only tasks with at least one label appear in the result.
    """
    by_node: dict[str, list[ScheduleEntry]] = {}
    for e in schedule:
        by_node.setdefault(e.node_id, []).append(e)
    labels = {}
    for task in bundle.tasks:
        kinds = frozenset(
            e.kind for e in by_node.get(task.node_id, ()) if task.start_time <= e.end and e.start <= task.end_time
        )
        if kinds:
            labels[task.task_id] = kinds
    return labels


def add_self_load(
    bundle: TraceBundle,
    task_ids: Sequence[str],
    kind: MetricKind,
    magnitude: Optional[float] = None,
    stretch: float = 2.5,
) -> TraceBundle:
    """Turn tasks into stragglers that load their own node.

    Each named task is lengthened by ``stretch`` and its node's ``kind``
    utilization is raised by ``magnitude`` exactly over the task's new
    lifetime: the rise coincides with task start and the drop with task end.
    """
    if stretch < 1:
        raise ValueError("stretch must be >= 1")
    magnitude = DEFAULT_MAGNITUDE[kind] if magnitude is None else magnitude
    wanted = set(task_ids)
    tasks, loads = [], {}
    for task in bundle.tasks:
        if task.task_id in wanted:
            end = task.start_time + int(round(task.duration * stretch))
            task = replace(task, end_time=max(end, task.end_time))
            loads.setdefault((task.node_id, kind), []).append((task.start_time, task.end_time, magnitude))
            wanted.discard(task.task_id)
        tasks.append(task)
    if wanted:
        raise KeyError(f"unknown task ids {sorted(wanted)}")
    metrics = dict(bundle.metrics)
    for key, intervals in loads.items():
        if key in metrics:
            metrics[key] = _raise_series(metrics[key], intervals)
    return TraceBundle.from_tasks(tasks, metrics, epoch=bundle.epoch)


def multi_node_schedule() -> GroundTruthSchedule:
    """The bundled multi-node example: thirteen ten-second anomalies over five nodes."""
    text = resources.files("straggler_rca").joinpath("data/multi_node_schedule.csv").read_text("utf-8")
    return parse_schedule(text.splitlines())


def intermittent_schedule(
    node_id: str,
    kind: MetricKind,
    until_ms: int,
    on_ms: int = 10_000,
    off_ms: int = 20_000,
    offset_ms: int = 10_000,
    magnitude: Optional[float] = None,
) -> GroundTruthSchedule:
    """Repeated ``on_ms`` anomalies of one kind on one node, ending by ``until_ms``."""
    magnitude = DEFAULT_MAGNITUDE[kind] if magnitude is None else magnitude
    entries = []
    start = offset_ms
    while start + on_ms <= until_ms:
        entries.append(ScheduleEntry(node_id, kind, start, start + on_ms, magnitude))
        start += on_ms + off_ms
    return GroundTruthSchedule(tuple(entries))
