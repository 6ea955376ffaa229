import json

import pytest
from hypothesis import given, strategies as st

from conftest import flat, series, task
from straggler_rca.features import stage_feature_vectors
from straggler_rca.ingest import TraceBundle
from straggler_rca.model import (
    FEATURE_CATEGORIES,
    AnalysisConfig,
    EdgeRule,
    FeatureCategory,
    FilterReason,
    Locality,
    MetricKind,
    PeerAggregator,
    PeerGroup,
)
from straggler_rca.rootcause import (
    EdgeVerdict,
    Verdict,
    analyze_bundle,
    analyze_task,
    edge_filter,
    global_quantile,
    locality_rule,
    numeric_rule,
    time_rule,
)
from straggler_rca.synth import StageSpec, TraceSpec, gen_trace

CFG = AnalysisConfig()


def test_quantile_examples():
    assert global_quantile(list(range(1, 11)), 0.5) == 5.5
    assert global_quantile([3.0] * 7, 0.37) == 3.0
    assert global_quantile([0, 10], 0.9) == pytest.approx(9.0)
    with pytest.raises(ValueError):
        global_quantile([], 0.5)


def test_numeric_rule_examples():
    # quantile of all_values pinned at 8 by using a constant population
    assert numeric_rule(10, [2, 2], [8] * 10, CFG) is Verdict.TRIGGERED
    assert numeric_rule(10, [8, 8], [8] * 10, CFG) is Verdict.BELOW_PEER_THRESHOLD
    assert numeric_rule(5, [1, 1], [8] * 10, CFG) is Verdict.BELOW_QUANTILE
    assert numeric_rule(10, [], [8] * 10, CFG) is Verdict.NO_PEERS


def test_numeric_rule_median_aggregator():
    cfg = AnalysisConfig(peer_aggregator=PeerAggregator.MEDIAN)
    # mean of peers is 11 (threshold 16.5) but the median is 1 (threshold 1.5)
    assert numeric_rule(10, [1, 1, 31], [0] * 10, CFG) is Verdict.BELOW_PEER_THRESHOLD
    assert numeric_rule(10, [1, 1, 31], [0] * 10, cfg) is Verdict.TRIGGERED


def test_time_rule_examples():
    assert time_rule(0.25)
    assert not time_rule(0.2)
    assert not time_rule(0.0)


def _profile(before, during, after, t0=10_000, t1=20_000):
    pts = [(t, before) for t in range(0, t0, 1000)]
    pts += [(t, during) for t in range(t0, t1 + 1, 1000)]
    pts += [(t, after) for t in range(t1 + 1000, t1 + 10_001, 1000)]
    return series("cpu", pts)


def test_edge_filter_examples():
    assert edge_filter(_profile(0.9, 0.9, 0.9), 10_000, 20_000, CFG) is EdgeVerdict.EXTERNAL
    assert edge_filter(_profile(0.1, 0.9, 0.1), 10_000, 20_000, CFG) is EdgeVerdict.SELF_CAUSED
    s = flat("cpu", 0.9, 20_000)
    assert edge_filter(s, 0, 5000, CFG) is EdgeVerdict.INSUFFICIENT_CONTEXT
    assert edge_filter(s, 16_000, 20_000, CFG) is EdgeVerdict.INSUFFICIENT_CONTEXT
    with pytest.raises(ValueError):
        edge_filter(s, 10, 10, CFG)


def test_edge_filter_one_sided_rise_is_external():
    # load already present before the task: not attributable to the task
    assert edge_filter(_profile(0.9, 0.9, 0.1), 10_000, 20_000, CFG) is EdgeVerdict.EXTERNAL


def test_edge_rule_alternative_direction():
    cfg = AnalysisConfig(edge_rule=EdgeRule.BOTH_ABOVE)
    assert edge_filter(_profile(0.9, 0.9, 0.9), 10_000, 20_000, cfg) is EdgeVerdict.SELF_CAUSED
    assert edge_filter(_profile(0.1, 0.9, 0.1), 10_000, 20_000, cfg) is EdgeVerdict.EXTERNAL


def test_locality_rule_examples():
    assert locality_rule(2, [0] * 7 + [1] * 3)
    assert not locality_rule(1, [0] * 10)
    assert not locality_rule(2, [2] * 10)
    assert not locality_rule(2, [])


def _vectors(stage, metrics=None):
    return stage_feature_vectors(stage, metrics or {})


def _analyze(stage, tid, metrics=None, cfg=CFG):
    t = next(x for x in stage if x.task_id == tid)
    return analyze_task(t, stage, _vectors(stage, metrics), metrics or {}, cfg)


def test_shuffle_read_cause():
    stage = [task("t0", 0, 3000, node="n1", shuffle_read_bytes=300)]
    stage += [task(f"t{i}", 0, 1000, node=f"n{i % 3 + 1}", shuffle_read_bytes=100) for i in range(1, 10)]
    r = _analyze(stage, "t0")
    assert "shuffle_read_bytes" in r.cause_features
    assert r.straggler_scale == 3.0
    groups = {c.peer_group for c in r.causes if c.feature == "shuffle_read_bytes"}
    assert groups == {PeerGroup.INTRA_NODE, PeerGroup.INTER_NODE}


def test_gc_below_time_bound():
    stage = [task("t0", 0, 2000, jvm_gc_time=300)]
    stage += [task(f"t{i}", 0, 1000, node="n2", jvm_gc_time=10) for i in range(1, 6)]
    r = _analyze(stage, "t0")
    assert "jvm_gc_time" not in r.cause_features
    reasons = {f.reason for f in r.filtered if f.feature == "jvm_gc_time"}
    assert reasons == {FilterReason.BELOW_TIME_BOUND}


def test_gc_above_time_bound_is_cause():
    stage = [task("t0", 0, 2000, jvm_gc_time=600)]
    stage += [task(f"t{i}", 0, 1000, node="n2", jvm_gc_time=10) for i in range(1, 6)]
    r = _analyze(stage, "t0")
    [c] = [c for c in r.causes if c.feature == "jvm_gc_time"]
    assert c.evidence == "numeric_rule+time_bound" and c.peer_group is PeerGroup.INTER_NODE


def _cpu_stage(profile):
    stage = [task("t0", 10_000, 13_000, node="n1")]
    stage += [task(f"t{i}", 10_000, 11_000, node=f"n{2 + i % 2}") for i in range(1, 10)]
    metrics = {("n1", MetricKind.CPU): profile}
    for n in ("n2", "n3"):
        metrics[(n, MetricKind.CPU)] = flat("cpu", 0.1, 30_000, node=n)
    return stage, metrics


def _self_loaded():
    return series("cpu", [(t, 0.9 if 10_000 <= t <= 13_000 else 0.1) for t in range(0, 30_001, 1000)])


def test_self_caused_cpu_is_filtered():
    stage, metrics = _cpu_stage(_self_loaded())
    r = _analyze(stage, "t0", metrics)
    assert "cpu" not in r.cause_features
    assert {(f.reason, f.peer_group) for f in r.filtered if f.feature == "cpu"} == {
        (FilterReason.NO_PEERS, PeerGroup.INTRA_NODE),
        (FilterReason.EDGE_SELF_CAUSED, PeerGroup.INTER_NODE),
    }
    off = _analyze(stage, "t0", metrics, AnalysisConfig(edge_detection=False))
    assert [c.evidence for c in off.causes if c.feature == "cpu"] == ["numeric_rule"]


def test_external_cpu_is_kept():
    stage, metrics = _cpu_stage(series("cpu", [(t, 0.9 if 5_000 <= t <= 20_000 else 0.1) for t in range(0, 30_001, 1000)]))
    r = _analyze(stage, "t0", metrics)
    [c] = [c for c in r.causes if c.feature == "cpu"]
    assert c.evidence == "numeric_rule+edge_external"


def test_locality_cause():
    stage = [task("t0", 0, 3000, locality=Locality.RACK_LOCAL)]
    stage += [task(f"t{i}", 0, 1000, node="n2") for i in range(1, 8)]
    r = _analyze(stage, "t0")
    assert "locality" in r.cause_features
    nopref = [task("t0", 0, 3000, locality=Locality.NOPREF)] + stage[1:]
    assert "locality" in _analyze(nopref, "t0").cause_features
    exempt = _analyze(nopref, "t0", cfg=AnalysisConfig(exempt_nopref=True))
    assert "locality" not in exempt.cause_features
    assert all(f.feature != "locality" for f in exempt.filtered)


def test_non_straggler_rejected():
    stage = [task("t0", 0, 1000), task("t1", 0, 1000)]
    with pytest.raises(ValueError):
        _analyze(stage, "t0")


def test_bundle_order_and_missing_metrics():
    b = gen_trace(TraceSpec(3, (StageSpec(20, skew_probability=0.3),) * 3, seed=4))
    reports = analyze_bundle(b)
    keys = [(r.stage_id, b.stages[r.stage_id].index(b.task(r.task_id))) for r in reports]
    assert keys == sorted(keys)
    bare = TraceBundle.from_tasks(b.tasks, {})
    for r in analyze_bundle(bare):
        assert not {"cpu", "disk", "network"} & ({c.feature for c in r.causes} | {f.feature for f in r.filtered})


# property suites over generated bundles

@st.composite
def bundles(draw):
    seed = draw(st.integers(0, 2**32))
    count = draw(st.integers(5, 30))
    skew = draw(st.sampled_from([0.0, 0.1, 0.3]))
    heavy = draw(st.sampled_from([0.0, 0.1, 0.3]))
    nodes = draw(st.integers(1, 4))
    return gen_trace(TraceSpec(nodes, (StageSpec(count, skew_probability=skew, heavy_probability=heavy),) * 2, seed=seed))


def _cause_set(reports):
    return {(r.task_id, c.feature, c.peer_group) for r in reports for c in r.causes}


@given(bundles(), st.sampled_from([0.3, 0.5, 0.8, 0.9]), st.floats(0.01, 0.09), st.floats(0.5, 3), st.floats(0, 2))
def test_raising_lambdas_never_adds_causes(b, q, dq, p, dp):
    base = _cause_set(analyze_bundle(b, AnalysisConfig(quantile_lambda_q=q, peer_lambda_p=p)))
    assert _cause_set(analyze_bundle(b, AnalysisConfig(quantile_lambda_q=q + dq, peer_lambda_p=p))) <= base
    assert _cause_set(analyze_bundle(b, AnalysisConfig(quantile_lambda_q=q, peer_lambda_p=p + dp))) <= base


@given(bundles())
def test_edge_detection_only_removes_resource_causes(b):
    on = _cause_set(analyze_bundle(b, AnalysisConfig(edge_detection=True)))
    off = _cause_set(analyze_bundle(b, AnalysisConfig(edge_detection=False)))
    assert on <= off
    assert all(FEATURE_CATEGORIES[f] is FeatureCategory.RESOURCE for _, f, _ in off - on)


@given(bundles())
def test_reports_are_deterministic(b):
    dump = lambda: json.dumps([r.to_dict() for r in analyze_bundle(b)])
    assert dump() == dump()


@given(bundles())
def test_every_candidate_accounted_once(b):
    for r in analyze_bundle(b):
        assert r.straggler_scale > CFG.straggler_multiplier
        seen = [(c.feature, c.peer_group) for c in r.causes] + [(f.feature, f.peer_group) for f in r.filtered]
        assert len(seen) == len(set(seen))
        for c in r.causes:
            assert c.peer_group in PeerGroup and c.evidence
        present = {name for name in FEATURE_CATEGORIES if name != "locality"}
        for name in present:
            groups = {g for f, g in seen if f == name}
            assert groups in (set(), {PeerGroup.INTRA_NODE, PeerGroup.INTER_NODE})


@given(st.integers(3, 20), st.integers(1, 3), st.integers(1, 10**6), st.floats(0, 1), st.sampled_from(list(Locality)))
def test_uniform_stage_flags_nothing(n, nodes, rb, cpu, loc):
    # one slow task is needed for analysis to run at all; all features stay identical
    stage = [task(f"t{i}", 10_000, 11_000, node=f"n{i % nodes + 1}", locality=loc, read_bytes=rb, jvm_gc_time=300)
             for i in range(n)]
    stage[0] = task("t0", 10_000, 12_000, node="n1", locality=loc, read_bytes=rb, jvm_gc_time=600)
    metrics = {(f"n{k + 1}", kind): flat(kind.value, cpu, 30_000, node=f"n{k + 1}") for k in range(nodes) for kind in MetricKind}
    r = _analyze(stage, "t0", metrics)
    # gc share is 0.3 for every task, so the slow task differs only in duration
    assert r.causes == ()
