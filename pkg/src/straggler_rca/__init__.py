"""Offline root-cause analysis of stragglers in task traces."""

from .detect import PeerGroups, find_stragglers, median_duration, peer_groups
from .evaluate import Grid, Method, RocPoint, auc, confusion, rates, roc_sweep
from .features import build_feature_vector, stage_feature_vectors
from .ingest import ParseError, TraceBundle, load_bundle, parse_event_log, parse_metrics, window
from .model import (
    AnalysisConfig,
    ConfusionMatrix,
    FeatureCategory,
    FeatureVector,
    GroundTruthSchedule,
    Locality,
    MetricKind,
    MetricSeries,
    ModelError,
    RootCauseReport,
    ScheduleEntry,
    TaskRecord,
    task_duration,
)
from .pcc import pcc_identify, pearson
from .rootcause import analyze_bundle, analyze_task
from .synth import ResponseModel, StageSpec, TraceSpec, gen_trace, inject, label_tasks

__version__ = "0.1.0"
