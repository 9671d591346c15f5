import json
import math
import threading
from http.client import HTTPConnection

import pytest
from hypothesis import given, settings, strategies as st

from servingbench import batchserver
from servingbench.batchserver import (BatchPolicy, PROFILES, adapt_window,
                                      predict, profile_latency,
                                      profile_throughput)
from servingbench.errors import ParameterError

# Frozen oracle: geometric-mean interpolant between L(2) and L(4) for the
# slowest profile.
BASE_L3 = 894.427806735


def test_profile_latency_exact_at_calibrated_sizes():
    assert profile_latency(PROFILES["base-fp32"], 1) == 2177.49
    assert profile_latency(PROFILES["fp16-onnx"], 32) == 0.53
    assert profile_latency(PROFILES["opt-onnx"], 8) == 2.1


def test_profile_latency_log_linear_interpolation():
    got = profile_latency(PROFILES["base-fp32"], 3)
    assert got == pytest.approx(BASE_L3, rel=1e-9)
    assert 727.27 < got < 1197.24
    # Independent recomputation at another midpoint.
    lo, hi = 500.12, 266.99  # sizes 8 and 16; midpoint 12 is not log-central
    t = (math.log(12) - math.log(8)) / (math.log(16) - math.log(8))
    expected = math.exp(math.log(lo) + t * (math.log(hi) - math.log(lo)))
    assert profile_latency(PROFILES["base-fp32"], 12) == pytest.approx(expected)


def test_profile_latency_clamped_above_32():
    p = PROFILES["fp32-onnx"]
    assert profile_latency(p, 33) == profile_latency(p, 32)
    assert profile_latency(p, 1024) == 2.43


def test_profile_latency_range_check():
    with pytest.raises(ParameterError):
        profile_latency(PROFILES["fp16-onnx"], 0)
    with pytest.raises(ParameterError):
        profile_latency(PROFILES["fp16-onnx"], 1025)


def test_profile_throughput_is_inverse_latency():
    for name, profile in PROFILES.items():
        for b in batchserver.CALIBRATED_BATCH_SIZES:
            assert profile_throughput(profile, b) == pytest.approx(
                1000.0 / profile_latency(profile, b))
            assert profile_throughput(profile, b) > 0


def test_profile_validation():
    with pytest.raises(ParameterError):
        batchserver.BackendProfile("bad", {1: 1.0, 2: 2.0})
    with pytest.raises(ParameterError):
        batchserver.BackendProfile("bad", {b: -1.0 for b in (1, 2, 4, 8, 16, 32)})


def test_policy_validation():
    with pytest.raises(ParameterError):
        BatchPolicy(max_batch_size=0, max_batch_window=10.0)
    with pytest.raises(ParameterError):
        BatchPolicy(max_batch_size=2000, max_batch_window=10.0)
    with pytest.raises(ParameterError):
        BatchPolicy(max_batch_size=1, max_batch_window=200.0,
                    window_ceiling=100.0)


def test_predict_deterministic_and_order_preserving():
    texts = ["alpha", "beta", "alpha", ""]
    out = predict(PROFILES["fp16-onnx"], texts)
    assert len(out) == 4
    assert out[0] == out[2]
    assert all(r["label"] in batchserver.LABELS for r in out)
    assert out == predict(PROFILES["fp16-onnx"], texts)
    with pytest.raises(ParameterError):
        predict(PROFILES["fp16-onnx"], [])


def test_adapt_window_constant_gaps():
    policy = BatchPolicy(max_batch_size=32, max_batch_window=10.0,
                         adaptive=True, window_floor=1.0, window_ceiling=200.0)
    assert adapt_window([100.0] * 20, policy) == pytest.approx(50.0)


def test_adapt_window_floor_clamp():
    policy = BatchPolicy(max_batch_size=32, max_batch_window=10.0,
                         adaptive=True, window_floor=5.0, window_ceiling=100.0)
    assert adapt_window([0.1] * 20, policy) == 5.0


def test_adapt_window_inactive_or_empty():
    off = BatchPolicy(max_batch_size=32, max_batch_window=10.0, adaptive=False)
    assert adapt_window([100.0] * 20, off) == 10.0
    on = BatchPolicy(max_batch_size=32, max_batch_window=10.0, adaptive=True)
    assert adapt_window([], on, current=7.0) == 7.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 10_000.0), min_size=1, max_size=64))
def test_adapt_window_always_clamped(gaps):
    policy = BatchPolicy(max_batch_size=32, max_batch_window=10.0,
                         adaptive=True, window_floor=1.0, window_ceiling=100.0)
    assert 1.0 <= adapt_window(gaps, policy) <= 100.0


def post(port, payload, path="/analyze-sentiment", method="POST"):
    conn = HTTPConnection("127.0.0.1", port, timeout=10)
    try:
        conn.request(method, path, body=payload,
                     headers={"Content-Type": "application/json"})
        resp = conn.getresponse()
        return resp.status, resp.read()
    finally:
        conn.close()


@pytest.fixture
def fp16_server():
    policy = BatchPolicy(max_batch_size=32, max_batch_window=10.0)
    with batchserver.BatchServer(policy, PROFILES["fp16-onnx"], port=0) as srv:
        yield srv


def test_healthz_and_error_paths(fp16_server):
    port = fp16_server.port
    status, body = post(port, None, path="/healthz", method="GET")
    assert status == 200 and json.loads(body) == {"status": "ok"}
    assert post(port, None, path="/nope", method="GET")[0] == 404
    assert post(port, b'{"text": "x"}', path="/other")[0] == 404
    assert post(port, b"not json")[0] == 400
    assert post(port, b'{"wrong": 1}')[0] == 400


def test_single_request_roundtrip(fp16_server):
    status, body = post(fp16_server.port, b'{"text": "hello"}')
    assert status == 200
    result = json.loads(body)
    assert result["label"] in batchserver.LABELS
    assert result["score"] == 1.0
    assert result == predict(PROFILES["fp16-onnx"], ["hello"])[0]


def test_simultaneous_full_batch():
    policy = BatchPolicy(max_batch_size=32, max_batch_window=100.0)
    with batchserver.BatchServer(policy, PROFILES["fp16-onnx"], port=0) as srv:
        barrier = threading.Barrier(32)
        results = [None] * 32

        def shoot(i):
            barrier.wait()
            results[i] = post(srv.port, json.dumps({"text": f"t{i}"}).encode())

        threads = [threading.Thread(target=shoot, args=(i,)) for i in range(32)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(code == 200 for code, _ in results)
        traces = srv.traces
    assert sum(tr.batch_size for tr in traces) == 32
    assert max(tr.batch_size for tr in traces) <= 32
    big = max(traces, key=lambda tr: tr.batch_size)
    # Most arrivals coalesce into one size-triggered batch whose service
    # time is the per-sample latency times the batch size.
    assert big.trigger in (batchserver.TRIGGER_SIZE_FULL,
                           batchserver.TRIGGER_WINDOW_EXPIRED)
    expected = profile_latency(PROFILES["fp16-onnx"], big.batch_size) * big.batch_size
    assert big.service_time == pytest.approx(expected)


def test_batch_size_one_disables_batching():
    policy = BatchPolicy(max_batch_size=1, max_batch_window=10.0)
    with batchserver.BatchServer(policy, PROFILES["fp16-onnx"], port=0) as srv:
        for i in range(5):
            status, _ = post(srv.port, json.dumps({"text": f"t{i}"}).encode())
            assert status == 200
        assert all(tr.batch_size == 1 for tr in srv.traces)
        assert len(srv.traces) == 5


def test_count_conservation_under_concurrency():
    # Every accepted request gets exactly one response: 200 requests across
    # 20 keep-alive-free clients, checked against the trace ledger.
    policy = BatchPolicy(max_batch_size=8, max_batch_window=5.0)
    with batchserver.BatchServer(policy, PROFILES["fp16-onnx"], port=0) as srv:
        ok = [0] * 20

        def client(i):
            for j in range(10):
                code, body = post(srv.port,
                                  json.dumps({"text": f"c{i}-{j}"}).encode())
                if code == 200 and "label" in json.loads(body):
                    ok[i] += 1

        threads = [threading.Thread(target=client, args=(i,)) for i in range(20)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sum(ok) == 200
        assert sum(tr.batch_size for tr in srv.traces) == 200
        assert all(tr.batch_size <= 8 for tr in srv.traces)


def test_startup_delay_returns_503():
    policy = BatchPolicy(max_batch_size=1, max_batch_window=10.0)
    with batchserver.BatchServer(policy, PROFILES["fp16-onnx"], port=0,
                                 startup_delay=30.0) as srv:
        status, body = post(srv.port, b'{"text": "x"}')
        assert status == 503
        # Health stays live during warmup; readiness gating is on the
        # inference path only.
        assert post(srv.port, None, path="/healthz", method="GET")[0] == 200


def test_trace_file(tmp_path):
    trace_path = tmp_path / "traces.jsonl"
    policy = BatchPolicy(max_batch_size=1, max_batch_window=10.0)
    with batchserver.BatchServer(policy, PROFILES["fp16-onnx"], port=0,
                                 trace_path=str(trace_path)) as srv:
        post(srv.port, b'{"text": "x"}')
    lines = trace_path.read_text().strip().split("\n")
    assert len(lines) == 1
    trace = json.loads(lines[0])
    assert trace["batch_size"] == 1
    assert trace["trigger"] == batchserver.TRIGGER_SIZE_FULL
