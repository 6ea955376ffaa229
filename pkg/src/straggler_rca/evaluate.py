"""Scoring against injected ground truth: confusion counts, rates, ROC and AUC.

Scoring is per ``(straggler task, resource kind)`` pair. Framework-feature
causes never enter the score, since injections only ever perturb resources.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .ingest import TraceBundle
from .model import RESOURCE_FEATURES, AnalysisConfig, ConfusionMatrix, MetricKind, RootCauseReport
from .pcc import pcc_identify
from .rootcause import StageAnalysis, analyze_stages, prepare

Pair = tuple[str, MetricKind]


class Method(str, enum.Enum):
    RULES = "rules"
    PCC = "pcc"


@dataclass(frozen=True)
class Rates:
    fpr: Optional[float]
    tpr: Optional[float]
    acc: Optional[float]

    def to_dict(self) -> dict:
        return {"fpr": self.fpr, "tpr": self.tpr, "acc": self.acc}


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    thresholds: tuple[float, float] = (float("nan"), float("nan"))


@dataclass(frozen=True)
class Grid:
    """Cartesian threshold grid.

    For the rule method ``first`` holds quantile levels and ``second`` peer
    multipliers; for the correlation method ``first`` holds minimum
    ``|rho|`` values and ``second`` quantile levels.
    """

    first: tuple[float, ...]
    second: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "first", tuple(float(x) for x in self.first))
        object.__setattr__(self, "second", tuple(float(x) for x in self.second))
        if not self.first or not self.second:
            raise ValueError("threshold grid must not be empty")

    def cells(self) -> list[tuple[float, float]]:
        return list(itertools.product(self.first, self.second))

    def to_dict(self) -> dict:
        return {"first": list(self.first), "second": list(self.second)}


DEFAULT_GRIDS = {
    Method.RULES: Grid(
        (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99),
        (0.5, 0.8, 1.0, 1.1, 1.25, 1.5, 2.0, 3.0, 5.0, 10.0),
    ),
    Method.PCC: Grid(
        (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
        (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99),
    ),
}


def confusion(predicted: Iterable[Pair], truth: Mapping[str, Iterable[MetricKind]], universe: Iterable[Pair]) -> ConfusionMatrix:
    universe = set(universe)
    predicted = set(predicted)
    stray = predicted - universe
    if stray:
        raise ValueError(f"{len(stray)} predictions fall outside the evaluated universe, e.g. {sorted(stray)[0]}")
    tp = tn = fp = fn = 0
    for task_id, kind in universe:
        labeled = kind in truth.get(task_id, ())
        if (task_id, kind) in predicted:
            if labeled:
                tp += 1
            else:
                fp += 1
        elif labeled:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def rates(m: ConfusionMatrix) -> Rates:
    fpr = m.fp / (m.fp + m.tn) if m.fp + m.tn else None
    tpr = m.tp / (m.tp + m.fn) if m.tp + m.fn else None
    acc = (m.tp + m.tn) / m.total if m.total else None
    return Rates(fpr, tpr, acc)


def auc(points: Iterable) -> float:
    """Area under the upper envelope of ROC points, anchored at (0,0) and (1,1).

    Points may be :class:`RocPoint` or ``(fpr, tpr)`` pairs. Dominated points
    are dropped; consecutive envelope points are joined by straight lines.
    """
    pts = [(p.fpr, p.tpr) if isinstance(p, RocPoint) else (float(p[0]), float(p[1])) for p in points]
    if not pts:
        raise ValueError("auc needs at least one point")
    pts += [(0.0, 0.0), (1.0, 1.0)]
    pts.sort(key=lambda p: (p[0], -p[1]))
    envelope = []
    best = -1.0
    for x, y in pts:
        if y > best:
            envelope.append((x, y))
            best = y
    if envelope[-1][0] < 1.0:
        envelope.append((1.0, best))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(envelope, envelope[1:]):
        area += (x1 - x0) * (y0 + y1) / 2
    return min(1.0, max(0.0, area))


def universe_of(stages: Sequence[StageAnalysis], multiplier: float) -> set[Pair]:
    """Every (straggler, resource kind) pair of the bundle."""
    out = set()
    for stage in stages:
        for i, _ in stage.stragglers(multiplier):
            for kind in MetricKind:
                out.add((stage.tasks[i].task_id, kind))
    return out


def rules_predictions(reports: Iterable[RootCauseReport]) -> set[Pair]:
    return {
        (r.task_id, RESOURCE_FEATURES[c.feature])
        for r in reports
        for c in r.causes
        if c.feature in RESOURCE_FEATURES
    }


def pcc_predictions(stages: Sequence[StageAnalysis], lambda_ca: float, lambda_cq: float, multiplier: float) -> set[Pair]:
    out = set()
    for stage in stages:
        stragglers = [stage.tasks[i].task_id for i, _ in stage.stragglers(multiplier)]
        if not stragglers:
            continue
        vectors = stage.feature_vectors
        for name, kind in RESOURCE_FEATURES.items():
            for task_id in pcc_identify(stage.tasks, vectors, name, lambda_ca, lambda_cq, stragglers=stragglers):
                out.add((task_id, kind))
    return out


def predict(
    stages: Sequence[StageAnalysis], method: Method, cfg: AnalysisConfig, thresholds: Optional[tuple[float, float]] = None
) -> set[Pair]:
    """Resource-kind predictions of one method at one threshold setting.

    Without ``thresholds`` the rule method uses ``cfg`` as is and the
    correlation method uses ``(0.5, cfg.quantile_lambda_q)``.
    """
    method = Method(method)
    if method is Method.RULES:
        if thresholds is not None:
            cfg = cfg_with(cfg, quantile_lambda_q=thresholds[0], peer_lambda_p=thresholds[1])
        return rules_predictions(analyze_stages(stages, cfg))
    ca, cq = thresholds if thresholds is not None else (0.5, cfg.quantile_lambda_q)
    return pcc_predictions(stages, ca, cq, cfg.straggler_multiplier)


def cfg_with(cfg: AnalysisConfig, **changes) -> AnalysisConfig:
    data = cfg.to_dict()
    data.update(changes)
    return AnalysisConfig(**data)


def roc_sweep(
    bundle: Optional[TraceBundle],
    truth: Mapping[str, Iterable[MetricKind]],
    method: Method,
    grid: Grid,
    cfg: AnalysisConfig = AnalysisConfig(),
    stages: Optional[Sequence[StageAnalysis]] = None,
) -> list[RocPoint]:
    """One ROC point per grid cell, sorted by fpr then tpr.

    Pass ``stages`` (from :func:`prepare`) to reuse feature pools across
    sweeps of the same bundle.
    """
    if stages is None:
        stages = prepare(bundle)
    universe = universe_of(stages, cfg.straggler_multiplier)
    points = []
    for cell in grid.cells():
        r = rates(confusion(predict(stages, method, cfg, cell), truth, universe))
        if r.fpr is None or r.tpr is None:
            raise ValueError("ROC needs at least one positive and one negative (straggler, kind) pair")
        points.append(RocPoint(r.fpr, r.tpr, cell))
    points.sort(key=lambda p: (p.fpr, p.tpr, p.thresholds))
    return points


def evaluate(
    bundle: TraceBundle,
    truth: Mapping[str, Iterable[MetricKind]],
    methods: Sequence[Method],
    cfg: AnalysisConfig = AnalysisConfig(),
    grids: Optional[Mapping[Method, Grid]] = None,
    stages: Optional[Sequence[StageAnalysis]] = None,
) -> dict:
    """Confusion counts at the configured thresholds plus ROC/AUC per method."""
    grids = {**DEFAULT_GRIDS, **(grids or {})}
    if stages is None:
        stages = prepare(bundle)
    universe = universe_of(stages, cfg.straggler_multiplier)
    result = {}
    for method in methods:
        method = Method(method)
        m = confusion(predict(stages, method, cfg), truth, universe)
        entry = {"confusion": m.to_dict(), "rates": rates(m).to_dict()}
        try:
            points = roc_sweep(bundle, truth, method, grids[method], cfg, stages=stages)
        except ValueError as exc:
            entry.update({"roc": [], "auc": None, "note": str(exc)})
        else:
            entry["roc"] = [{"fpr": p.fpr, "tpr": p.tpr, "thresholds": list(p.thresholds)} for p in points]
            entry["auc"] = auc(points)
            entry["grid"] = grids[method].to_dict()
        result[method.value] = entry
    return result
