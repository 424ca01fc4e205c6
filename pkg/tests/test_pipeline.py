import heapq
import json
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dropagg.pipeline import (
    RESOURCES, PipelinePlan, ProfileSample, SingularFitError, StageSpec, check_schedule, chunk_and_concat,
    chunk_sizes, concat, fit_betas, load_samples, load_stages, optimal_chunks, schedule, stage_latency,
)

TABLE1 = ("c-comp", "comm", "s-comp", "comm", "c-comp")


def event_sim(stages, d, m):
    """Discrete-event oracle: each resource serves its tasks in (stage, chunk) order, one at a time."""
    tau = [stage_latency(s, d, m) for s in stages]
    queues = {r: [] for r in RESOURCES}
    for s, spec in enumerate(stages):
        for c in range(m):
            queues[spec.resource].append((s, c))
    done = {}
    busy = {r: None for r in RESOURCES}
    events = []
    now = 0.0

    def try_start():
        for r in RESOURCES:
            if busy[r] is None and queues[r]:
                s, c = queues[r][0]
                if s == 0 or (s - 1, c) in done:
                    queues[r].pop(0)
                    busy[r] = (s, c)
                    heapq.heappush(events, (now + tau[s], s, c, r))

    try_start()
    while events:
        now, s, c, r = heapq.heappop(events)
        done[(s, c)] = now
        busy[r] = None
        # release every task finishing at this instant before starting new ones
        while events and events[0][0] == now:
            _, s2, c2, r2 = heapq.heappop(events)
            done[(s2, c2)] = now
            busy[r2] = None
        try_start()
    assert all(not q for q in queues.values())
    return max(done.values())


def random_workflow(r: random.Random, n_stages):
    labels = [r.choice(RESOURCES)]
    while len(labels) < n_stages:
        labels.append(r.choice([x for x in RESOURCES if x != labels[-1]]))
    return [StageSpec(i + 1, lab, r.uniform(0, 1e-3), r.uniform(0, 0.05), r.uniform(0, 0.5))
            for i, lab in enumerate(labels)]


def test_stage_latency_examples():
    assert stage_latency(StageSpec(1, "comm", 1, 0, 0), 100, 4) == 25
    assert stage_latency(StageSpec(1, "comm", 0, 2, 3), 1, 5) == 13
    assert stage_latency(StageSpec(1, "comm", 2, 1, 0.5), 60, 3) == 43.5
    with pytest.raises(ValueError):
        stage_latency(StageSpec(1, "comm"), 0, 1)


def test_stage_validation():
    with pytest.raises(ValueError):
        StageSpec(1, "gpu")
    with pytest.raises(ValueError):
        StageSpec(1, "comm", beta1=-1)
    with pytest.raises(ValueError):
        schedule([StageSpec(1, "comm"), StageSpec(2, "comm")], 10, 1)
    with pytest.raises(ValueError):
        schedule([], 10, 1)


def test_single_chunk_is_sequential():
    r = random.Random(0)
    for _ in range(50):
        st_ = random_workflow(r, r.randint(1, 6))
        d = r.randint(1, 10 ** 5)
        assert schedule(st_, d, 1).completion == pytest.approx(sum(stage_latency(s, d, 1) for s in st_), rel=1e-12)


def test_matches_event_simulation():
    r = random.Random(1)
    for _ in range(200):
        stages = random_workflow(r, r.randint(1, 6))
        d, m = r.randint(1, 10 ** 5), r.randint(1, 8)
        plan = schedule(stages, d, m)
        check_schedule(plan, stages)
        assert plan.completion == event_sim(stages, d, m)


def test_table1_shape_m3():
    stages = [StageSpec(i + 1, lab, 1e-4 * (i + 1), 0.01, 0.05) for i, lab in enumerate(TABLE1)]
    plan = schedule(stages, 10_000, 3)
    assert plan.completion == event_sim(stages, 10_000, 3)
    assert len(plan.schedule) == 15


def test_pipelining_helps_without_overheads():
    st_ = [StageSpec(1, "c-comp", 1.0), StageSpec(2, "comm", 1.0)]
    base = schedule(st_, 100, 1).completion
    for m in range(2, 12):
        assert schedule(st_, 100, m).completion < base


def validate_independently(plan, stages):
    pos = {s.id: i for i, s in enumerate(stages)}
    ent = plan.schedule
    for a in ent:
        for b in ent:
            if a is b:
                continue
            if a.resource == b.resource:
                assert a.finish <= b.begin or b.finish <= a.begin
            if a.chunk == b.chunk and pos[a.stage] < pos[b.stage]:
                assert a.finish <= b.begin


@given(st.integers(0, 10 ** 6), st.integers(1, 6), st.integers(1, 8))
def test_schedule_valid_property(seed, n, m):
    stages = random_workflow(random.Random(seed), n)
    plan = schedule(stages, 5000, m)
    validate_independently(plan, stages)
    assert plan.completion == max(e.finish for e in plan.schedule)


def test_check_schedule_catches_overlap():
    stages = [StageSpec(1, "c-comp", 0, 0, 1), StageSpec(2, "comm", 0, 0, 1)]
    plan = schedule(stages, 10, 2)
    bad = PipelinePlan(plan.m, plan.d, list(plan.schedule), plan.completion)
    e = bad.schedule[1]
    bad.schedule[1] = type(e)(e.stage, e.chunk, e.resource, 0.5, 1.5)
    with pytest.raises(AssertionError):
        check_schedule(bad, stages)


def test_optimal_chunks():
    heavy = [StageSpec(1, "c-comp", 1e-6, 100.0, 0), StageSpec(2, "comm", 1e-6, 100.0, 0)]
    assert optimal_chunks(heavy, 1000) == 1
    linear = [StageSpec(1, "c-comp", 1.0), StageSpec(2, "comm", 1.0), StageSpec(3, "s-comp", 1.0)]
    assert optimal_chunks(linear, 1000) == 20
    r = random.Random(4)
    for _ in range(30):
        stages = [StageSpec(i + 1, lab, r.uniform(0, 1e-4), r.uniform(0, 0.02), r.uniform(0, 0.1))
                  for i, lab in enumerate(TABLE1)]
        times = {m: event_sim(stages, 20_000, m) for m in range(1, 21)}
        best = min(times.values())
        assert optimal_chunks(stages, 20_000) == min(m for m, t in times.items() if t == best)
        assert times[optimal_chunks(stages, 20_000)] <= times[1]


def test_fit_betas_exact():
    beta = (3.5e-6, 2.2e-3, 0.125)
    samples = [ProfileSample(d, m, beta[0] * d / m + beta[1] * m + beta[2])
               for d in (1000, 5000, 20000) for m in (1, 2, 4, 8)]
    got = fit_betas(samples)
    for g, b in zip(got, beta):
        assert abs(g - b) <= 1e-6 * abs(b)


def test_fit_betas_noisy():
    rng = np.random.default_rng(0)
    beta = (2e-5, 5e-3, 0.2)
    samples = []
    for d in (1000, 10000, 50000, 100000):
        for m in range(1, 21):
            tau = beta[0] * d / m + beta[1] * m + beta[2]
            for _ in range(3):
                samples.append(ProfileSample(d, m, tau * (1 + 0.01 * rng.standard_normal())))
    for g, b in zip(fit_betas(samples), beta):
        assert abs(g - b) <= 0.05 * b


def test_fit_betas_singular():
    with pytest.raises(SingularFitError):
        fit_betas([ProfileSample(100, 2, 1.0)] * 5)
    with pytest.raises(SingularFitError):
        fit_betas([ProfileSample(100, 2, 1.0), ProfileSample(200, 4, 1.0)])
    with pytest.raises(ValueError):
        ProfileSample(100, 2, -1.0)


def test_chunking():
    assert chunk_sizes(10, 3) == [4, 3, 3]
    x = np.arange(7)
    assert [c.tolist() for c in chunk_and_concat(x, 1)] == [x.tolist()]
    assert [c.tolist() for c in chunk_and_concat(x, 7)] == [[i] for i in range(7)]
    with pytest.raises(ValueError):
        chunk_sizes(3, 4)


@given(st.integers(1, 200), st.integers(0, 10 ** 6), st.integers(1, 6))
def test_chunk_sum_identity(d, seed, n):
    m = 1 + seed % d
    R = np.uint64(1 << 20)
    rng = np.random.default_rng(seed)
    vecs = [rng.integers(0, 1 << 20, d, dtype=np.uint64) for _ in range(n)]
    full = sum(vecs, np.zeros(d, dtype=np.uint64)) % R
    chunked = [chunk_and_concat(v, m) for v in vecs]
    sums = [sum((c[i] for c in chunked), np.zeros_like(chunked[0][i])) % R for i in range(m)]
    np.testing.assert_array_equal(concat(sums), full)


def test_file_loaders(tmp_path):
    recs = [{"id": i + 1, "resource": lab, "beta1": 1e-5, "beta2": 0.001, "beta3": 0.01} for i, lab in enumerate(TABLE1)]
    p = tmp_path / "s.json"
    p.write_text(json.dumps(recs))
    assert [s.resource for s in load_stages(p)] == list(TABLE1)
    t = tmp_path / "s.toml"
    t.write_text("".join(f'[[stage]]\nid = {i + 1}\nresource = "{lab}"\nbeta1 = 1e-5\n' for i, lab in enumerate(TABLE1)))
    assert len(load_stages(t)) == 5
    c = tmp_path / "p.csv"
    c.write_text("d,m,tau\n100,1,1.0\n200,2,1.5\n")
    assert load_samples(c)[1] == ProfileSample(200, 2, 1.5)


def test_plan_export():
    stages = [StageSpec(1, "c-comp", 0, 0, 1), StageSpec(2, "comm", 0, 0, 2)]
    rec = json.loads(schedule(stages, 10, 2).to_json())
    assert rec["completion"] == 5 and len(rec["schedule"]) == 4
    assert set(rec["schedule"][0]) == {"stage", "chunk", "resource", "begin", "finish"}
