"""Root-cause identification for stragglers.

Each straggler feature is compared with the rest of its stage:

* numeric and time features must exceed the stage quantile *and* a multiple
  of their peers' aggregate, peers being either the other tasks on the same
  node or the tasks on other nodes (both are tried, either may fire);
* time features must additionally exceed an absolute share of the task
  duration;
* resource features that pass are dropped again if the node's utilization
  rose at task start and fell at task end (the task caused it itself);
* a remote locality is blamed only when most normal tasks read locally.
"""

from __future__ import annotations

import enum
import math
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .detect import find_stragglers, median_duration
from .features import stage_feature_vectors
from .ingest import TraceBundle
from .model import (
    DEGENERATE_LARGE,
    FEATURE_CATEGORIES,
    FEATURE_NAMES,
    RESOURCE_FEATURES,
    AnalysisConfig,
    Cause,
    EdgeRule,
    FeatureCategory,
    FeatureVector,
    Filtered,
    FilterReason,
    Locality,
    MetricKind,
    MetricSeries,
    PeerAggregator,
    PeerGroup,
    RootCauseReport,
    TaskRecord,
)

# every feature except locality goes through the quantile/peer comparison
RULE_FEATURES = tuple(name for name in FEATURE_NAMES if name != "locality")


class AnalysisInvariantError(RuntimeError):
    """The analyzer produced a result that breaks its own guarantees."""


class Verdict(str, enum.Enum):
    TRIGGERED = "TRIGGERED"
    BELOW_QUANTILE = "BELOW_QUANTILE"
    BELOW_PEER_THRESHOLD = "BELOW_PEER_THRESHOLD"
    NO_PEERS = "NO_PEERS"


class EdgeVerdict(str, enum.Enum):
    EXTERNAL = "EXTERNAL"
    SELF_CAUSED = "SELF_CAUSED"
    INSUFFICIENT_CONTEXT = "INSUFFICIENT_CONTEXT"


def global_quantile(values: Sequence[float], q: float) -> float:
    """Empirical quantile, linear interpolation between order statistics."""
    if len(values) == 0:
        raise ValueError("quantile of an empty sequence")
    if not 0 <= q <= 1:
        raise ValueError(f"q must be within [0, 1], got {q}")
    ordered = sorted(values)
    pos = q * (len(ordered) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(ordered) - 1)
    frac = pos - lo
    if frac == 0 or ordered[hi] == ordered[lo]:
        return ordered[lo]
    return ordered[lo] + (ordered[hi] - ordered[lo]) * frac


def _exceeds(value: float, threshold: float) -> bool:
    return value >= DEGENERATE_LARGE or value > threshold


def _verdict(value: float, peer_aggregate: Optional[float], quantile: float, peer_lambda: float) -> Verdict:
    if peer_aggregate is None:
        return Verdict.NO_PEERS
    if not _exceeds(value, quantile):
        return Verdict.BELOW_QUANTILE
    if not _exceeds(value, peer_aggregate * peer_lambda):
        return Verdict.BELOW_PEER_THRESHOLD
    return Verdict.TRIGGERED


def aggregate(values: Sequence[float], how: PeerAggregator = PeerAggregator.MEAN) -> float:
    if PeerAggregator(how) is PeerAggregator.MEDIAN:
        ordered = sorted(values)
        n = len(ordered)
        return ordered[n // 2] if n % 2 else (ordered[n // 2 - 1] + ordered[n // 2]) / 2
    return math.fsum(values) / len(values)


def numeric_rule(f: float, peers: Sequence[float], all_values: Sequence[float], cfg: AnalysisConfig) -> Verdict:
    if not peers:
        return Verdict.NO_PEERS
    quantile = global_quantile(all_values, cfg.quantile_lambda_q)
    return _verdict(f, aggregate(peers, cfg.peer_aggregator), quantile, cfg.peer_lambda_p)


def time_rule(f: float, bound: float = 0.2) -> bool:
    return f > bound


def _mean_between(series: MetricSeries, lo: int, hi: int, **openness) -> Optional[float]:
    i, j = series.span(lo, hi, **openness)
    if i == j:
        return None
    return math.fsum(series.values[i:j]) / (j - i)


def edge_filter(series: MetricSeries, t0: int, t1: int, cfg: AnalysisConfig) -> EdgeVerdict:
    """Decide whether the utilization seen during ``[t0, t1]`` came from the task itself.

    Compares the mean over the task window with the means over
    ``[t0 - edge_width, t0)`` and ``(t1, t1 + edge_width]``.
    """
    if t0 >= t1:
        raise ValueError(f"window start {t0} must be before end {t1}")
    during = _mean_between(series, t0, t1)
    head = _mean_between(series, t0 - cfg.edge_width, t0, hi_open=True)
    tail = _mean_between(series, t1, t1 + cfg.edge_width, lo_open=True)
    if during is None or head is None or tail is None:
        return EdgeVerdict.INSUFFICIENT_CONTEXT
    level = cfg.edge_lambda_e * during
    if cfg.edge_rule is EdgeRule.BOTH_BELOW:
        self_caused = head < level and tail < level
    else:
        self_caused = head > level and tail > level
    return EdgeVerdict.SELF_CAUSED if self_caused else EdgeVerdict.EXTERNAL


def locality_rule(straggler_locality: int, normal_localities: Sequence[int]) -> bool:
    if straggler_locality != 2 or len(normal_localities) == 0:
        return False
    return sum(normal_localities) < len(normal_localities) / 2


class StageAnalysis:
    """Precomputed view of one stage, reusable across threshold settings.

    Holds the stage's feature matrix (NaN where a resource feature is
    missing), node assignment and durations so that evaluating a straggler
    against its peers is a handful of vector operations.
    """

    def __init__(
        self,
        stage_tasks: Sequence[TaskRecord],
        feature_vectors: Mapping[str, FeatureVector],
        metrics: Mapping[tuple[str, MetricKind], MetricSeries],
    ):
        if not stage_tasks:
            raise ValueError("stage has no tasks")
        self.tasks = tuple(stage_tasks)
        self.index = {t.task_id: i for i, t in enumerate(self.tasks)}
        self.feature_vectors = feature_vectors
        codes = {}
        self.node_codes = np.array([codes.setdefault(t.node_id, len(codes)) for t in self.tasks])
        self.values = np.array(
            [
                [np.nan if feature_vectors[t.task_id][name] is None else feature_vectors[t.task_id][name]
                 for name in RULE_FEATURES]
                for t in self.tasks
            ],
            dtype=float,
        ).reshape(len(self.tasks), len(RULE_FEATURES))
        self.locality = np.array([feature_vectors[t.task_id]["locality"] for t in self.tasks], dtype=int)
        self.median = median_duration(self.tasks)
        self.metrics = metrics
        self._quantiles: dict[float, list[Optional[float]]] = {}
        self._stragglers: dict[float, list[tuple[int, float]]] = {}
        self._edges: dict[tuple[int, str, int, float, EdgeRule], EdgeVerdict] = {}

    @property
    def stage_id(self) -> str:
        return self.tasks[0].stage_id

    def stragglers(self, multiplier: float) -> list[tuple[int, float]]:
        if multiplier not in self._stragglers:
            found = find_stragglers(self.tasks, multiplier)
            self._stragglers[multiplier] = [(self.index[t.task_id], scale) for t, scale in found]
        return self._stragglers[multiplier]

    def quantiles(self, q: float) -> list[Optional[float]]:
        if q not in self._quantiles:
            out = []
            for col in range(len(RULE_FEATURES)):
                column = self.values[:, col]
                present = column[~np.isnan(column)]
                out.append(global_quantile(present.tolist(), q) if present.size else None)
            self._quantiles[q] = out
        return self._quantiles[q]

    def _peer_aggregates(self, mask: np.ndarray, how: PeerAggregator) -> list[Optional[float]]:
        block = self.values[mask]
        counts = (~np.isnan(block)).sum(axis=0)
        with np.errstate(all="ignore"):
            if how is PeerAggregator.MEDIAN:
                agg = np.array(
                    [np.median(block[~np.isnan(block[:, c]), c]) if counts[c] else np.nan
                     for c in range(block.shape[1])]
                )
            else:
                agg = np.nansum(block, axis=0) / np.where(counts > 0, counts, 1)
        return [float(a) if n else None for a, n in zip(agg, counts)]

    def edge(self, i: int, kind: MetricKind, cfg: AnalysisConfig) -> EdgeVerdict:
        key = (i, kind.value, cfg.edge_width, cfg.edge_lambda_e, cfg.edge_rule)
        if key not in self._edges:
            task = self.tasks[i]
            series = self.metrics.get((task.node_id, kind))
            if series is None:
                verdict = EdgeVerdict.INSUFFICIENT_CONTEXT
            else:
                verdict = edge_filter(series, task.start_time, task.end_time, cfg)
            self._edges[key] = verdict
        return self._edges[key]

    def report(self, i: int, scale: float, cfg: AnalysisConfig) -> RootCauseReport:
        task = self.tasks[i]
        causes: list[Cause] = []
        filtered: list[Filtered] = []

        # locality: a candidate only when the straggler read remotely
        loc = int(self.locality[i])
        exempt = cfg.exempt_nopref and task.locality is Locality.NOPREF
        if loc == 2 and not exempt:
            straggling = {j for j, _ in self.stragglers(cfg.straggler_multiplier)}
            normals = [int(self.locality[j]) for j in range(len(self.tasks)) if j not in straggling]
            if not normals:
                filtered.append(Filtered("locality", FilterReason.NO_PEERS, PeerGroup.GLOBAL))
            elif locality_rule(loc, normals):
                causes.append(Cause("locality", FeatureCategory.DISCRETE, float(loc), PeerGroup.GLOBAL, "locality_rule"))
            else:
                filtered.append(Filtered("locality", FilterReason.LOCALITY_MAJORITY_REMOTE, PeerGroup.GLOBAL))

        same_node = self.node_codes == self.node_codes[i]
        not_self = np.ones(len(self.tasks), dtype=bool)
        not_self[i] = False
        groups = (
            (PeerGroup.INTRA_NODE, same_node & not_self),
            (PeerGroup.INTER_NODE, ~same_node),
        )
        aggregates = {g: self._peer_aggregates(mask, cfg.peer_aggregator) for g, mask in groups}
        quantiles = self.quantiles(cfg.quantile_lambda_q)

        for col, name in enumerate(RULE_FEATURES):
            value = float(self.values[i, col])
            if math.isnan(value):
                continue
            category = FEATURE_CATEGORIES[name]
            for group, _ in groups:
                if category is FeatureCategory.TIME and not time_rule(value, cfg.time_lower_bound):
                    filtered.append(Filtered(name, FilterReason.BELOW_TIME_BOUND, group))
                    continue
                verdict = _verdict(value, aggregates[group][col], quantiles[col], cfg.peer_lambda_p)
                if verdict is not Verdict.TRIGGERED:
                    filtered.append(Filtered(name, FilterReason(verdict.value), group))
                    continue
                evidence = "numeric_rule"
                if category is FeatureCategory.TIME:
                    evidence = "numeric_rule+time_bound"
                elif category is FeatureCategory.RESOURCE and cfg.edge_detection:
                    edge = self.edge(i, RESOURCE_FEATURES[name], cfg)
                    if edge is EdgeVerdict.SELF_CAUSED:
                        filtered.append(Filtered(name, FilterReason.EDGE_SELF_CAUSED, group))
                        continue
                    evidence = "numeric_rule+edge_" + edge.value.lower()
                causes.append(Cause(name, category, value, group, evidence))

        if not scale > cfg.straggler_multiplier:
            raise AnalysisInvariantError(
                f"task {task.task_id}: straggler scale {scale} not above {cfg.straggler_multiplier}"
            )
        return RootCauseReport(
            task_id=task.task_id,
            stage_id=task.stage_id,
            node_id=task.node_id,
            duration=task.duration,
            straggler_scale=scale,
            causes=tuple(causes),
            filtered=tuple(filtered),
        )

    def reports(self, cfg: AnalysisConfig) -> list[RootCauseReport]:
        return [self.report(i, scale, cfg) for i, scale in self.stragglers(cfg.straggler_multiplier)]


def analyze_task(
    task: TaskRecord,
    stage_tasks: Sequence[TaskRecord],
    feature_vectors: Mapping[str, FeatureVector],
    metrics: Mapping[tuple[str, MetricKind], MetricSeries],
    cfg: AnalysisConfig = AnalysisConfig(),
) -> RootCauseReport:
    """Explain one straggler. ``metrics`` is keyed by ``(node_id, kind)``."""
    stage = StageAnalysis(stage_tasks, feature_vectors, metrics)
    if task.task_id not in stage.index:
        raise ValueError(f"task {task.task_id} is not in the stage")
    i = stage.index[task.task_id]
    for j, scale in stage.stragglers(cfg.straggler_multiplier):
        if j == i:
            return stage.report(i, scale, cfg)
    raise ValueError(f"task {task.task_id} is not a straggler")


def prepare(bundle: TraceBundle) -> list[StageAnalysis]:
    """Feature pools for every stage of ``bundle``, in stage order."""
    return [
        StageAnalysis(tasks, stage_feature_vectors(tasks, bundle.metrics), bundle.metrics)
        for tasks in bundle.stages.values()
    ]


def analyze_stages(stages: Iterable[StageAnalysis], cfg: AnalysisConfig) -> list[RootCauseReport]:
    out = []
    for stage in stages:
        out.extend(stage.reports(cfg))
    return out


def analyze_bundle(bundle: TraceBundle, cfg: AnalysisConfig = AnalysisConfig()) -> list[RootCauseReport]:
    """Detect and explain every straggler, ordered by stage id then task id."""
    return analyze_stages(prepare(bundle), cfg)
