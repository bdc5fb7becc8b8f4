import numpy as np
import pytest
from routes.trace.controller import (
    annotate_cold,
    build_cold_table,
    fingerprint,
    generate_trace,
    load_cold_logs,
    load_trace,
    long_tail_subset,
    split_by_pod,
    write_cold_logs,
    write_trace,
)
from routes.trace.model import ArrivalModel, ColdStartEntry, SyntheticSpec
from util.exception import DataError

HEADER = "ts_ms,function_id,pod_id,cpu_cores,mem_mb,exec_ms,runtime_tag,trigger_tag\n"


def write(tmp_path, name, content):
    path = tmp_path / name
    path.write_text(content)
    return path


def test_load_trace_sorts_by_timestamp(tmp_path):
    path = write(
        tmp_path,
        "trace.csv",
        HEADER
        + "2000,f1,p1,1,128,50,python,http\n"
        + "0,f1,p1,1,128,50,python,http\n"
        + "1000,f2,p2,0.5,256,20,node,timer\n",
    )

    trace = load_trace(path)

    assert [i.ts_ms for i in trace] == [0, 1000, 2000]
    assert trace[1].pod_id == "p2"
    assert all(i.cold_ms is None for i in trace)


def test_load_trace_names_row_and_field(tmp_path):
    path = write(
        tmp_path,
        "trace.csv",
        HEADER + "0,f1,p1,1,128,50,python,http\n" + "10,f1,p1,1,128,-5,python,http\n",
    )

    with pytest.raises(DataError) as e:
        load_trace(path)

    assert "row 2" in e.value.detail
    assert "exec_ms" in e.value.detail


def test_load_trace_rejects_pod_under_two_functions(tmp_path):
    path = write(
        tmp_path,
        "trace.csv",
        HEADER + "0,f1,p1,1,128,50,python,http\n" + "10,f2,p1,1,128,50,python,http\n",
    )

    with pytest.raises(DataError, match="pod bound to two functions"):
        load_trace(path)


def test_load_trace_missing_column_and_file(tmp_path):
    path = write(tmp_path, "trace.csv", "ts_ms,function_id\n0,f1\n")

    with pytest.raises(DataError, match="pod_id"):
        load_trace(path)

    with pytest.raises(DataError, match="not found"):
        load_trace(tmp_path / "missing.csv")


def test_load_trace_keeps_unicode_separators_inside_quotes(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text(
        HEADER
        + '0,f1,p1,1,128,50,"py\u2028thon",http\n'
        + '10,f1,p1,1,128,50,"py\u2028thon","ti\x1cmer"\n',
        encoding="utf-8",
    )

    trace = load_trace(path)

    assert len(trace) == 2
    assert trace[0].runtime_tag == "py\u2028thon"
    assert trace[1].trigger_tag == "ti\x1cmer"


def test_cold_table_mean_of_logs(make_invocation):
    logs = [
        ColdStartEntry(runtime_tag="python", trigger_tag="http", cold_ms=100),
        ColdStartEntry(runtime_tag="python", trigger_tag="http", cold_ms=300),
    ]

    table = build_cold_table([make_invocation(0)], logs)

    assert table.lookup("python", "http") == 200.0
    assert ("python", "http") in table


def test_cold_table_median_statistic(make_invocation):
    logs = [ColdStartEntry(runtime_tag="python", trigger_tag="http", cold_ms=v) for v in (100, 200, 900)]

    table = build_cold_table([make_invocation(0)], logs, statistic="median")

    assert table.lookup("python", "http") == 200.0


def test_cold_table_empty_logs_uses_default():
    table = build_cold_table([], [], default_ms=1000.0)

    assert table.entries == []
    assert table.fallback_ms == 1000.0
    assert table.lookup("go", "timer") == 1000.0


def test_cold_table_ignores_keys_outside_training(make_invocation):
    logs = [
        ColdStartEntry(runtime_tag="python", trigger_tag="http", cold_ms=100),
        ColdStartEntry(runtime_tag="go", trigger_tag="timer", cold_ms=5000),
    ]

    table = build_cold_table([make_invocation(0)], logs)

    assert ("go", "timer") not in table
    # fallback is the mean of the kept records only
    assert table.lookup("go", "timer") == 100.0


def test_annotate_cold_sets_every_invocation(make_invocation):
    table = build_cold_table([], [], default_ms=750.0)

    annotated = annotate_cold([make_invocation(0, cold_ms=None), make_invocation(1, cold_ms=None)], table)

    assert [i.cold_ms for i in annotated] == [750.0, 750.0]


def pods_trace(make_invocation, n_pods):
    return [make_invocation(t, pod=f"pod-{p}", function=f"fn-{p}") for t in range(3) for p in range(n_pods)]


def test_split_by_pod_counts(make_invocation):
    trace = pods_trace(make_invocation, 10)

    split = split_by_pod(trace, (0.8, 0.1, 0.1), seed=7)

    pods = [{i.pod_id for i in part} for part in (split.train, split.validation, split.test)]
    assert [len(p) for p in pods] == [8, 1, 1]
    assert not (pods[0] & pods[1] or pods[0] & pods[2] or pods[1] & pods[2])
    assert len(split.partition("all")) == len(trace)
    assert [i.ts_ms for i in split.train] == sorted(i.ts_ms for i in split.train)


def test_split_by_pod_is_deterministic(make_invocation):
    trace = pods_trace(make_invocation, 10)

    assert split_by_pod(trace, seed=7) == split_by_pod(trace, seed=7)
    assert split_by_pod(trace, seed=7).split_seed == 7


def test_split_by_pod_rejects_bad_ratios(make_invocation):
    with pytest.raises(DataError, match="ratios must sum to 1"):
        split_by_pod([make_invocation(0)], (0.5, 0.5, 0.5))

    with pytest.raises(DataError):
        split_by_pod([], (0.8, 0.1, 0.1))


def test_generate_deterministic_trace():
    spec = SyntheticSpec(arrival_model=ArrivalModel.deterministic, interval_s=10, duration_s=60)

    generated = generate_trace(spec)

    assert [i.ts_ms for i in generated.invocations] == [0, 10_000, 20_000, 30_000, 40_000, 50_000]
    assert {i.pod_id for i in generated.invocations} == {"pod-000-000"}
    assert all(i.cold_ms is not None for i in generated.invocations)


def test_generate_poisson_count_within_four_sigma():
    spec = SyntheticSpec(arrival_model=ArrivalModel.poisson, rate_hz=1.0, duration_s=3600, seed=11)

    count = len(generate_trace(spec).invocations)

    assert 3600 - 240 <= count <= 3600 + 240


def test_generate_trace_seeds():
    spec = SyntheticSpec(duration_s=300, n_pods_per_function=2, seed=1)

    first = generate_trace(spec)
    again = generate_trace(spec)
    other = generate_trace(spec.copy(update={"seed": 2}))

    assert first.invocations == again.invocations
    assert first.fingerprint == again.fingerprint
    assert first.fingerprint != other.fingerprint


def test_generate_trace_respects_ranges():
    spec = SyntheticSpec(
        duration_s=600,
        n_functions=3,
        n_pods_per_function=2,
        arrival_model=ArrivalModel.bimodal,
        burst_rate_hz=0.5,
        lull_rate_hz=0.02,
        period_s=120,
        cold_latency_range_ms=(200, 400),
        seed=3,
    )

    generated = generate_trace(spec)

    assert generated.invocations
    for i in generated.invocations:
        assert 200 <= i.cold_ms <= 400
        assert 0.5 <= i.cpu_cores <= 2.0
        assert 128 <= i.mem_mb <= 1024
        assert 50 <= i.exec_ms <= 500
        assert 0 <= i.ts_ms < 600_000
    assert len({i.pod_id for i in generated.invocations}) <= 6


def test_bimodal_bursts_are_denser():
    spec = SyntheticSpec(
        duration_s=7200,
        arrival_model=ArrivalModel.bimodal,
        burst_rate_hz=0.5,
        lull_rate_hz=0.01,
        period_s=600,
        seed=5,
    )

    phases = np.array([(i.ts_ms / 1000.0) % 600 for i in generate_trace(spec).invocations])

    assert (phases < 300).sum() > 10 * (phases >= 300).sum()


def test_synthetic_spec_rejects_inverted_range():
    with pytest.raises(ValueError):
        SyntheticSpec(duration_s=10, cold_latency_range_ms=(500, 100))


def test_trace_and_cold_log_files_round_trip(tmp_path):
    generated = generate_trace(SyntheticSpec(duration_s=120, rate_hz=0.2, seed=4))

    write_trace(generated.invocations, tmp_path / "trace.csv")
    write_cold_logs(generated.cold_logs, tmp_path / "cold.csv")

    table = build_cold_table([], load_cold_logs(tmp_path / "cold.csv"))
    loaded = load_trace(tmp_path / "trace.csv", table)

    assert fingerprint(loaded) == generated.fingerprint
    assert [i.cold_ms for i in loaded] == [i.cold_ms for i in generated.invocations]


def test_long_tail_subset(make_invocation):
    trace = [make_invocation(t, cold_ms=float(100 * (t + 1))) for t in range(10)]

    tail = long_tail_subset(trace, 0.9)

    assert [i.cold_ms for i in tail] == [1000.0]
    assert long_tail_subset(trace, 0.0) == trace


def test_fingerprint_ignores_order(make_invocation):
    trace = [make_invocation(0), make_invocation(1, pod="p2", function="f2")]

    assert fingerprint(trace) == fingerprint(list(reversed(trace)))
    assert fingerprint(trace) != fingerprint(trace[:1])
