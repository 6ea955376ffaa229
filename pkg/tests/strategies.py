"""Hypothesis strategies shared by the property suites."""

from hypothesis import strategies as st

from straggler_rca.model import Locality, MetricKind, MetricSeries, TaskRecord

ids = st.integers(0, 10**6).map(str)
localities = st.sampled_from(list(Locality))


@st.composite
def metric_series(draw, kind=None, node="n1", min_size=0, max_size=40):
    kind = draw(st.sampled_from(list(MetricKind))) if kind is None else kind
    gaps = draw(st.lists(st.integers(1, 3000), min_size=min_size, max_size=max_size))
    t = draw(st.integers(0, 5000))
    times = []
    for g in gaps:
        t += g
        times.append(t)
    if kind.bounded:
        values = st.floats(0, 1, allow_nan=False)
    else:
        values = st.floats(0, 1e9, allow_nan=False)
    vals = draw(st.lists(values, min_size=len(times), max_size=len(times)))
    return MetricSeries(node, kind, tuple(zip(times, vals)))


@st.composite
def tasks(draw, tid="t0", stage="s0", nodes=("n1", "n2", "n3"), max_start=100_000, max_duration=50_000):
    start = draw(st.integers(0, max_start))
    duration = draw(st.integers(1, max_duration))
    counter = st.integers(0, 10**9)
    timer = st.integers(0, duration)
    return TaskRecord(
        tid,
        stage,
        draw(st.sampled_from(nodes)),
        start,
        start + duration,
        draw(localities),
        read_bytes=draw(counter),
        shuffle_read_bytes=draw(counter),
        shuffle_write_bytes=draw(counter),
        memory_bytes_spilled=draw(st.one_of(st.just(0), counter)),
        disk_bytes_spilled=draw(st.one_of(st.just(0), counter)),
        jvm_gc_time=draw(timer),
        serialize_time=draw(timer),
        deserialize_time=draw(timer),
    )


@st.composite
def stages(draw, min_size=1, max_size=12, stage="s0", nodes=("n1", "n2", "n3")):
    n = draw(st.integers(min_size, max_size))
    return [draw(tasks(tid=f"t{i}", stage=stage, nodes=nodes)) for i in range(n)]
