"""Domain types shared by ingestion, analysis and evaluation.

Everything here is an immutable value object. Constructors validate their
invariants and raise :class:`ModelError` on violation, so a value that exists
is a value that is valid.
"""

from __future__ import annotations

import bisect
import enum
import math
import sys
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Sequence


class ModelError(ValueError):
    """A domain value was constructed with an invariant violation."""


class Locality(str, enum.Enum):
    PROCESS_LOCAL = "PROCESS_LOCAL"
    NODE_LOCAL = "NODE_LOCAL"
    RACK_LOCAL = "RACK_LOCAL"
    ANY = "ANY"
    NOPREF = "NOPREF"

    @classmethod
    def parse(cls, raw: str) -> "Locality":
        # Spark prints both "NO_PREF" and "NOPREF" depending on version.
        key = str(raw).strip().upper().replace(" ", "_")
        if key == "NO_PREF":
            key = "NOPREF"
        try:
            return cls(key)
        except ValueError:
            raise ModelError(f"unknown locality {raw!r}") from None


class MetricKind(str, enum.Enum):
    CPU = "cpu"
    DISK = "disk"
    NETWORK = "network"

    @classmethod
    def parse(cls, raw: str) -> "MetricKind":
        try:
            return cls(str(raw).strip().lower())
        except ValueError:
            raise ModelError(f"unknown metric kind {raw!r}") from None

    @property
    def bounded(self) -> bool:
        """CPU and disk samples are utilization fractions in [0, 1]."""
        return self is not MetricKind.NETWORK


class FeatureCategory(str, enum.Enum):
    DISCRETE = "discrete"
    NUMERIC = "numeric"
    RESOURCE = "resource"
    TIME = "time"


class PeerGroup(str, enum.Enum):
    INTRA_NODE = "intra_node"
    INTER_NODE = "inter_node"
    GLOBAL = "global"


class FilterReason(str, enum.Enum):
    EDGE_SELF_CAUSED = "EDGE_SELF_CAUSED"
    BELOW_TIME_BOUND = "BELOW_TIME_BOUND"
    BELOW_QUANTILE = "BELOW_QUANTILE"
    BELOW_PEER_THRESHOLD = "BELOW_PEER_THRESHOLD"
    LOCALITY_MAJORITY_REMOTE = "LOCALITY_MAJORITY_REMOTE"
    # peer group (or normal-task set) is empty, so the comparison cannot fire
    NO_PEERS = "NO_PEERS"


BYTE_COUNTERS = (
    "read_bytes",
    "shuffle_read_bytes",
    "shuffle_write_bytes",
    "memory_bytes_spilled",
    "disk_bytes_spilled",
)
TIME_COUNTERS = ("jvm_gc_time", "serialize_time", "deserialize_time")
COUNTERS = BYTE_COUNTERS + TIME_COUNTERS

RESOURCE_FEATURES = {
    "cpu": MetricKind.CPU,
    "disk": MetricKind.DISK,
    "network": MetricKind.NETWORK,
}
FEATURE_NAMES = ("locality", "cpu", "disk", "network") + COUNTERS

FEATURE_CATEGORIES: Mapping[str, FeatureCategory] = {
    "locality": FeatureCategory.DISCRETE,
    **{name: FeatureCategory.RESOURCE for name in RESOURCE_FEATURES},
    **{name: FeatureCategory.NUMERIC for name in BYTE_COUNTERS},
    **{name: FeatureCategory.TIME for name in TIME_COUNTERS},
}

# Stand-in for x/0 byte factors: finite, so comparisons stay total-ordered,
# and larger than any threshold a real factor can produce.
DEGENERATE_LARGE = sys.float_info.max


def _check_id(name: str, value) -> None:
    if not isinstance(value, str) or not value:
        raise ModelError(f"{name} must be a non-empty string, got {value!r}")


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    stage_id: str
    node_id: str
    start_time: int
    end_time: int
    locality: Locality = Locality.NOPREF
    read_bytes: int = 0
    shuffle_read_bytes: int = 0
    shuffle_write_bytes: int = 0
    memory_bytes_spilled: int = 0
    disk_bytes_spilled: int = 0
    jvm_gc_time: int = 0
    serialize_time: int = 0
    deserialize_time: int = 0

    def __post_init__(self):
        for name in ("task_id", "stage_id", "node_id"):
            _check_id(name, getattr(self, name))
        if not isinstance(self.locality, Locality):
            raise ModelError(f"task {self.task_id}: locality must be a Locality")
        for name in ("start_time", "end_time") + COUNTERS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ModelError(f"task {self.task_id}: {name} must be an integer, got {value!r}")
        if self.end_time <= self.start_time:
            raise ModelError(
                f"task {self.task_id}: end_time ({self.end_time}) must be greater than "
                f"start_time ({self.start_time})"
            )
        for name in COUNTERS:
            if getattr(self, name) < 0:
                raise ModelError(f"task {self.task_id}: {name} must be >= 0")
        duration = self.duration
        for name in TIME_COUNTERS:
            if getattr(self, name) > duration:
                raise ModelError(
                    f"task {self.task_id}: {name} ({getattr(self, name)}) exceeds "
                    f"task duration ({duration})"
                )

    @property
    def duration(self) -> int:
        return self.end_time - self.start_time


def task_duration(task: TaskRecord) -> int:
    return task.end_time - task.start_time


@dataclass(frozen=True)
class MetricSeries:
    """Sampled utilization of one resource on one node.

    ``samples`` are ``(timestamp_ms, value)`` pairs with strictly increasing
    timestamps. CPU and disk values are busy fractions; network values are
    bytes per second (sent plus received).
    """

    node_id: str
    kind: MetricKind
    samples: tuple[tuple[int, float], ...]
    nominal_period: float = 1000
    _times: tuple[int, ...] = field(init=False, repr=False, compare=False)
    _values: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_id("node_id", self.node_id)
        if not isinstance(self.kind, MetricKind):
            raise ModelError("kind must be a MetricKind")
        samples = tuple((int(t), float(v)) for t, v in self.samples)
        times = tuple(t for t, _ in samples)
        values = tuple(v for _, v in samples)
        for i in range(1, len(times)):
            if times[i] <= times[i - 1]:
                raise ModelError(
                    f"{self.node_id}/{self.kind.value}: timestamps must be strictly "
                    f"increasing ({times[i - 1]} then {times[i]})"
                )
        for t, v in samples:
            if not math.isfinite(v):
                raise ModelError(f"{self.node_id}/{self.kind.value}: non-finite value at {t}")
            if self.kind.bounded and not 0.0 <= v <= 1.0:
                raise ModelError(
                    f"{self.node_id}/{self.kind.value}: value {v} at {t} outside [0, 1]"
                )
            if v < 0:
                raise ModelError(f"{self.node_id}/{self.kind.value}: negative value {v} at {t}")
        if not self.nominal_period > 0:
            raise ModelError("nominal_period must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "_times", times)
        object.__setattr__(self, "_values", values)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def timestamps(self) -> tuple[int, ...]:
        return self._times

    @property
    def values(self) -> tuple[float, ...]:
        return self._values

    def span(self, lo: int, hi: int, *, lo_open: bool = False, hi_open: bool = False) -> tuple[int, int]:
        """Index range ``[i, j)`` of samples between ``lo`` and ``hi``."""
        if lo_open:
            i = bisect.bisect_right(self._times, lo)
        else:
            i = bisect.bisect_left(self._times, lo)
        if hi_open:
            j = bisect.bisect_left(self._times, hi)
        else:
            j = bisect.bisect_right(self._times, hi)
        return i, max(i, j)


@dataclass(frozen=True)
class FeatureValue:
    value: Optional[float]
    category: FeatureCategory
    degenerate: bool = False

    @property
    def missing(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class FeatureVector:
    task_id: str
    entries: Mapping[str, FeatureValue]

    def __post_init__(self):
        if set(self.entries) != set(FEATURE_NAMES):
            extra = sorted(set(self.entries) - set(FEATURE_NAMES))
            absent = sorted(set(FEATURE_NAMES) - set(self.entries))
            raise ModelError(f"feature vector {self.task_id}: unexpected {extra}, absent {absent}")
        for name, entry in self.entries.items():
            if entry.category is not FEATURE_CATEGORIES[name]:
                raise ModelError(f"feature {name} must be {FEATURE_CATEGORIES[name].value}")
            if entry.missing and entry.category is not FeatureCategory.RESOURCE:
                raise ModelError(f"feature {name} cannot be missing")
        if self.entries["locality"].value not in (0, 1, 2):
            raise ModelError("locality feature must be 0, 1 or 2")
        # freeze a private copy in canonical order
        object.__setattr__(self, "entries", {name: self.entries[name] for name in FEATURE_NAMES})

    def __getitem__(self, name: str) -> Optional[float]:
        return self.entries[name].value

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def present(self) -> dict[str, float]:
        return {k: e.value for k, e in self.entries.items() if not e.missing}

    def missing(self) -> tuple[str, ...]:
        return tuple(k for k, e in self.entries.items() if e.missing)


class EdgeRule(str, enum.Enum):
    """Which context shape marks a resource reading as self-caused.

    ``BOTH_BELOW`` filters when utilization before and after the task is
    lower than during it (a rise at start and a drop at end). ``BOTH_ABOVE``
    is the literal inverse reading and exists only for comparison runs.
    """

    BOTH_BELOW = "both_below"
    BOTH_ABOVE = "both_above"


class PeerAggregator(str, enum.Enum):
    MEAN = "mean"
    MEDIAN = "median"


@dataclass(frozen=True)
class AnalysisConfig:
    straggler_multiplier: float = 1.5
    quantile_lambda_q: float = 0.9
    peer_lambda_p: float = 1.5
    time_lower_bound: float = 0.2
    edge_lambda_e: float = 0.5
    edge_width: int = 5000
    peer_aggregator: PeerAggregator = PeerAggregator.MEAN
    edge_detection: bool = True
    edge_rule: EdgeRule = EdgeRule.BOTH_BELOW
    exempt_nopref: bool = False

    def __post_init__(self):
        object.__setattr__(self, "peer_aggregator", PeerAggregator(self.peer_aggregator))
        object.__setattr__(self, "edge_rule", EdgeRule(self.edge_rule))
        if not self.straggler_multiplier > 1:
            raise ModelError("straggler_multiplier must be > 1")
        if not 0 < self.quantile_lambda_q < 1:
            raise ModelError("quantile_lambda_q must be in (0, 1)")
        if not self.peer_lambda_p > 0:
            raise ModelError("peer_lambda_p must be > 0")
        if not 0 <= self.time_lower_bound <= 1:
            raise ModelError("time_lower_bound must be in [0, 1]")
        if not 0 < self.edge_lambda_e <= 1:
            raise ModelError("edge_lambda_e must be in (0, 1]")
        if isinstance(self.edge_width, bool) or not isinstance(self.edge_width, int) or self.edge_width <= 0:
            raise ModelError("edge_width must be a positive integer (ms)")

    def to_dict(self) -> dict:
        return {
            "straggler_multiplier": self.straggler_multiplier,
            "quantile_lambda_q": self.quantile_lambda_q,
            "peer_lambda_p": self.peer_lambda_p,
            "time_lower_bound": self.time_lower_bound,
            "edge_lambda_e": self.edge_lambda_e,
            "edge_width": self.edge_width,
            "peer_aggregator": self.peer_aggregator.value,
            "edge_detection": self.edge_detection,
            "edge_rule": self.edge_rule.value,
            "exempt_nopref": self.exempt_nopref,
        }


@dataclass(frozen=True)
class Cause:
    feature: str
    category: FeatureCategory
    value: float
    peer_group: PeerGroup
    evidence: str


@dataclass(frozen=True)
class Filtered:
    feature: str
    reason: FilterReason
    peer_group: PeerGroup


@dataclass(frozen=True)
class RootCauseReport:
    task_id: str
    stage_id: str
    node_id: str
    duration: int
    straggler_scale: float
    causes: tuple[Cause, ...] = ()
    filtered: tuple[Filtered, ...] = ()

    def __post_init__(self):
        if not self.straggler_scale > 0:
            raise ModelError("straggler_scale must be positive")
        seen = set()
        for item in self.causes + self.filtered:
            key = (item.feature, item.peer_group)
            if key in seen:
                raise ModelError(
                    f"report {self.task_id}: {item.feature} listed twice for {item.peer_group.value}"
                )
            seen.add(key)

    @property
    def cause_features(self) -> tuple[str, ...]:
        """Distinct flagged feature names, in evaluation order."""
        return tuple(dict.fromkeys(c.feature for c in self.causes))

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "stage_id": self.stage_id,
            "node_id": self.node_id,
            "duration_ms": self.duration,
            "straggler_scale": self.straggler_scale,
            "causes": [
                {
                    "feature": c.feature,
                    "category": c.category.value,
                    "value": c.value,
                    "peer_group": c.peer_group.value,
                    "evidence": c.evidence,
                }
                for c in self.causes
            ],
            "filtered": [
                {"feature": f.feature, "reason": f.reason.value, "peer_group": f.peer_group.value}
                for f in self.filtered
            ],
        }


@dataclass(frozen=True)
class ScheduleEntry:
    node_id: str
    kind: MetricKind
    start: int
    end: int
    magnitude: float = 0.0

    def __post_init__(self):
        _check_id("node_id", self.node_id)
        if not isinstance(self.kind, MetricKind):
            raise ModelError("kind must be a MetricKind")
        if not self.start < self.end:
            raise ModelError(
                f"schedule entry on {self.node_id}: start ({self.start}) must be before end ({self.end})"
            )
        if not math.isfinite(self.magnitude):
            raise ModelError("magnitude must be finite")


@dataclass(frozen=True)
class GroundTruthSchedule:
    entries: tuple[ScheduleEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __iter__(self) -> Iterator[ScheduleEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def nodes(self) -> set[str]:
        return {e.node_id for e in self.entries}

    def for_node(self, node_id: str) -> tuple[ScheduleEntry, ...]:
        return tuple(e for e in self.entries if e.node_id == node_id)

    def restrict(self, nodes: Sequence[str] = None, kinds: Sequence[MetricKind] = None) -> "GroundTruthSchedule":
        return GroundTruthSchedule(
            tuple(
                e
                for e in self.entries
                if (nodes is None or e.node_id in nodes) and (kinds is None or e.kind in kinds)
            )
        )


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ModelError(f"{name} must be a non-negative integer")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn
        )

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}
