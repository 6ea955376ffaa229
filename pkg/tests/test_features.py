import math
import random

import pytest
from hypothesis import given, strategies as st

from conftest import flat, series, task
from strategies import metric_series, stages
from straggler_rca.features import (
    build_feature_vector,
    bytes_factor,
    cpu_feature,
    disk_feature,
    is_degenerate,
    locality_feature,
    network_feature,
    stage_averages,
    stage_feature_vectors,
    time_factor,
)
from straggler_rca.model import BYTE_COUNTERS, FEATURE_CATEGORIES, FEATURE_NAMES, Locality, MetricKind

EXTRACT = {MetricKind.CPU: cpu_feature, MetricKind.DISK: disk_feature, MetricKind.NETWORK: network_feature}


def naive_mean(s, t0, t1):
    total, n = 0.0, 0
    for t, v in s.samples:
        if t0 <= t <= t1:
            total += v
            n += 1
    return total / n if n else None


def test_cpu_examples():
    assert cpu_feature(flat("cpu", 0.5, 10_000), 0, 10_000) == 0.5
    s = series("cpu", [(0, 0.2), (1000, 0.4), (2000, 0.6)])
    assert cpu_feature(s, 0, 2000) == pytest.approx(0.4)
    assert cpu_feature(s, 3000, 4000) is None


def test_disk_examples():
    assert disk_feature(flat("disk", 0.9, 5000), 0, 5000) == 0.9
    assert disk_feature(series("disk", [(0, 0.0), (1000, 1.0)]), 0, 1000) == 0.5
    assert disk_feature(series("disk", [(0, 0.0)]), 10, 20) is None


def test_network_examples():
    assert network_feature(flat("network", 100.0, 3000), 0, 3000) == 100.0
    assert network_feature(series("network", [(0, 0.0), (1000, 200.0)]), 0, 1000) == 100.0
    assert network_feature(series("network", [(0, 1.0)]), 1, 2) is None


def test_resource_feature_errors():
    s = flat("cpu", 0.5, 3000)
    with pytest.raises(ValueError):
        cpu_feature(s, 10, 10)
    with pytest.raises(ValueError):
        disk_feature(s, 0, 10)
    assert cpu_feature(None, 0, 10) is None


def test_locality_mapping():
    assert locality_feature(Locality.PROCESS_LOCAL) == 0
    assert locality_feature(Locality.NODE_LOCAL) == 1
    for loc in (Locality.RACK_LOCAL, Locality.ANY, Locality.NOPREF):
        assert locality_feature(loc) == 2


def test_bytes_factor_examples():
    assert bytes_factor(200, 100) == 2.0
    assert bytes_factor(0, 0) == 1.0
    assert is_degenerate(bytes_factor(5, 0))
    assert not is_degenerate(bytes_factor(5, 1))
    with pytest.raises(ValueError):
        bytes_factor(-1, 10)


def test_time_factor_examples():
    assert time_factor(500, 2000) == 0.25
    assert time_factor(0, 2000) == 0.0
    assert time_factor(2000, 2000) == 1.0
    with pytest.raises(ValueError):
        time_factor(2001, 2000)


def test_single_task_stage_factors_are_one():
    t = task("t", 0, 1000, read_bytes=5, shuffle_read_bytes=7, shuffle_write_bytes=0)
    fv = build_feature_vector(t, [t], {})
    for name in BYTE_COUNTERS:
        assert fv[name] == 1.0


def test_missing_metrics_leave_nine_features():
    t = task("t", 50_000, 51_000)
    fv = build_feature_vector(t, [t], {MetricKind.CPU: flat("cpu", 0.5, 10_000)})
    assert set(fv.missing()) == {"cpu", "disk", "network"}
    assert len(fv.present()) == 9


def test_shuffle_read_factors():
    ts = [task(f"t{i}", 0, 1000, shuffle_read_bytes=b) for i, b in enumerate((100, 100, 400))]
    got = [build_feature_vector(t, ts, {})["shuffle_read_bytes"] for t in ts]
    assert got == [0.5, 0.5, 2.0]


def test_full_vector_categories():
    t = task("t", 0, 2000, jvm_gc_time=500, read_bytes=10)
    metrics = {k: flat(k.value, 0.5, 3000) for k in MetricKind}
    fv = build_feature_vector(t, [t], metrics)
    assert set(fv.entries) == set(FEATURE_NAMES)
    assert all(fv.entries[n].category is FEATURE_CATEGORIES[n] for n in FEATURE_NAMES)
    assert fv["jvm_gc_time"] == 0.25
    assert fv["locality"] == 0


def test_task_must_be_in_stage():
    with pytest.raises(ValueError):
        build_feature_vector(task("x", 0, 10), [task("y", 0, 10)], {})


@given(metric_series(), st.integers(-1000, 120_000), st.integers(1, 40_000))
def test_resource_features_match_naive_loop(s, t0, width):
    got = EXTRACT[s.kind](s, t0, t0 + width)
    want = naive_mean(s, t0, t0 + width)
    if want is None:
        assert got is None
    else:
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)
        if s.kind.bounded:
            assert 0 <= got <= 1


@given(stages(min_size=1, max_size=10))
def test_byte_factor_mean_is_one(stage):
    vectors = stage_feature_vectors(stage, {})
    averages = stage_averages(stage)
    for name in BYTE_COUNTERS:
        if averages[name] > 0:
            mean = math.fsum(vectors[t.task_id][name] for t in stage) / len(stage)
            assert mean == pytest.approx(1.0, abs=1e-9)


@given(stages(min_size=1, max_size=10))
def test_feature_ranges(stage):
    metrics = {(n, k): flat(k.value, 0.5 if k.bounded else 1e6, 160_000, node=n) for n in ("n1", "n2", "n3") for k in MetricKind}
    for fv in stage_feature_vectors(stage, metrics).values():
        assert fv["locality"] in (0, 1, 2)
        for name in ("cpu", "disk"):
            assert fv[name] is None or 0 <= fv[name] <= 1
        for name in ("jvm_gc_time", "serialize_time", "deserialize_time"):
            assert 0 <= fv[name] <= 1


@given(stages(min_size=2, max_size=10), st.randoms(use_true_random=False))
def test_permuting_stage_keeps_vectors(stage, rnd):
    metrics = {("n1", MetricKind.CPU): flat("cpu", 0.3, 160_000)}
    shuffled = list(stage)
    rnd.shuffle(shuffled)
    assert stage_feature_vectors(stage, metrics) == stage_feature_vectors(shuffled, metrics)


def test_factor_oracle_on_random_stages():
    rng = random.Random(7)
    for _ in range(200):
        n = rng.randint(1, 15)
        ts = [task(f"t{i}", 0, 1000, read_bytes=rng.randint(0, 3) * rng.randint(0, 10**6)) for i in range(n)]
        avg = sum(t.read_bytes for t in ts) / n
        for t in ts:
            got = build_feature_vector(t, ts, {})["read_bytes"]
            if avg == 0:
                assert got == 1.0
            else:
                assert got == pytest.approx(t.read_bytes / avg, rel=1e-9)
