"""Seeded synthetic workloads used by the acceptance suite."""

from straggler_rca.model import MetricKind
from straggler_rca.synth import (
    StageSpec,
    TraceSpec,
    add_self_load,
    gen_trace,
    horizon,
    inject,
    intermittent_schedule,
    label_tasks,
    multi_node_schedule,
)

SEEDS = tuple(range(10))
NODES = ("n1", "n2", "n3", "n4", "n5")
# n3 is left without anomalies so it can serve as the clean control node
UNINJECTED = "n3"


def desk_spec(seed: int) -> TraceSpec:
    """5 nodes, 4 stages of 50 tasks, a little data skew and a few self-loading tasks."""
    stage = StageSpec(50, skew_probability=0.04, heavy_probability=0.04)
    return TraceSpec(len(NODES), (stage,) * 4, seed=seed)


def detection_schedule():
    return multi_node_schedule().restrict(nodes=[n for n in NODES if n != UNINJECTED])


def detection_bundle(seed: int):
    """Returns (clean bundle, injected bundle, schedule, labels)."""
    clean = gen_trace(desk_spec(seed))
    schedule = detection_schedule()
    injected = inject(clean, schedule)
    return clean, injected, schedule, label_tasks(injected, schedule)


def self_load_bundle(seed: int):
    """Detection bundle plus two tasks on the clean node that load it themselves."""
    _, bundle, schedule, labels = detection_bundle(seed)
    kind = list(MetricKind)[seed % 3]
    picks = []
    for sid in ("s1", "s2"):
        picks.append(next(t.task_id for t in bundle.stages[sid] if t.node_id == UNINJECTED))
    loaded = add_self_load(bundle, picks, kind)
    return loaded, schedule, label_tasks(loaded, schedule), picks


def single_kind_bundle(seed: int, kind: MetricKind):
    """Intermittent anomalies of one kind on n1, 10 s on and 20 s off."""
    clean = gen_trace(desk_spec(seed))
    schedule = intermittent_schedule("n1", kind, horizon(clean)[1])
    bundle = inject(clean, schedule)
    return bundle, label_tasks(bundle, schedule)


def scale_spec(seed: int = 0) -> TraceSpec:
    """10,000 tasks on 5 nodes."""
    stage = StageSpec(500, skew_probability=0.04, heavy_probability=0.04)
    return TraceSpec(len(NODES), (stage,) * 20, seed=seed)
