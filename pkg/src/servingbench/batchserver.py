"""Embedded inference service with adaptive request batching.

The backend is synthetic: instead of running a model, it sleeps for the
calibrated per-sample latency of a named hardware/runtime profile, so the
service reproduces measured latency/throughput behavior without a GPU.
Batches execute serially on a single model lane.  A dispatcher forms a
batch when the queue reaches ``max_batch_size`` or the oldest queued
request has waited the current batch window.

``time_scale`` compresses real time exactly as in the load generator: all
service sleeps and window waits are multiplied by it.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import socket
import socketserver
import threading
import time
from collections import deque
from dataclasses import dataclass
from http.client import HTTPConnection
from urllib.parse import urlsplit

from .errors import ParameterError
from .timing import precise_sleep, spin_budget

CALIBRATED_BATCH_SIZES = (1, 2, 4, 8, 16, 32)

TRIGGER_SIZE_FULL = "size_full"
TRIGGER_WINDOW_EXPIRED = "window_expired"
TRIGGER_SHUTDOWN = "shutdown"

LABELS = ("negative", "neutral", "positive")

DEFAULT_QUEUE_CAP = 10_000

_STATUS_PHRASES = {200: "OK", 400: "Bad Request", 404: "Not Found",
                   502: "Bad Gateway", 503: "Service Unavailable"}


@dataclass(frozen=True)
class BatchPolicy:
    max_batch_size: int
    max_batch_window: float  # milliseconds
    adaptive: bool = False
    window_floor: float = 1.0
    window_ceiling: float = 100.0

    def __post_init__(self):
        if not 1 <= self.max_batch_size <= 1024:
            raise ParameterError("max_batch_size must be in [1, 1024]")
        if not self.window_floor <= self.max_batch_window <= self.window_ceiling:
            raise ParameterError(
                "need window_floor <= max_batch_window <= window_ceiling")

    def to_dict(self) -> dict:
        return {"max_batch_size": self.max_batch_size,
                "max_batch_window": self.max_batch_window,
                "adaptive": self.adaptive,
                "window_floor": self.window_floor,
                "window_ceiling": self.window_ceiling}


@dataclass(frozen=True)
class BackendProfile:
    name: str
    per_sample_latency_ms: dict[int, float]
    # Optional per-batch service-time jitter (truncated Gaussian, ms), used
    # to reproduce the measured response-time spread of slow backends.
    jitter_mean_ms: float = 0.0
    jitter_sigma_ms: float = 0.0

    def __post_init__(self):
        keys = tuple(sorted(self.per_sample_latency_ms))
        if keys != CALIBRATED_BATCH_SIZES:
            raise ParameterError(
                f"profile needs latencies exactly at {CALIBRATED_BATCH_SIZES}")
        if any(v <= 0 for v in self.per_sample_latency_ms.values()):
            raise ParameterError("per-sample latencies must be > 0")


# Calibrated per-sample latencies (ms) by batch size, measured on the
# reference RoBERTa sentiment service.  The base profile also carries a
# service-time jitter calibrated from the measured min/avg/max response
# spread of that deployment.
PROFILES: dict[str, BackendProfile] = {
    "base-fp32": BackendProfile("base-fp32", {
        1: 2177.49, 2: 1197.24, 4: 727.27, 8: 500.12, 16: 266.99, 32: 135.72},
        jitter_mean_ms=440.0, jitter_sigma_ms=420.0),
    "fp32-pytorch": BackendProfile("fp32-pytorch", {
        1: 6.38, 2: 3.40, 4: 2.61, 8: 2.41, 16: 2.22, 32: 2.09}),
    "fp16-pytorch": BackendProfile("fp16-pytorch", {
        1: 6.22, 2: 3.03, 4: 1.53, 8: 0.79, 16: 0.6, 32: 0.56}),
    "fp32-onnx": BackendProfile("fp32-onnx", {
        1: 4.09, 2: 2.97, 4: 2.69, 8: 2.48, 16: 2.49, 32: 2.43}),
    "opt-onnx": BackendProfile("opt-onnx", {
        1: 3.89, 2: 2.73, 4: 2.25, 8: 2.1, 16: 2.09, 32: 2.05}),
    "fp16-onnx": BackendProfile("fp16-onnx", {
        1: 1.95, 2: 1.12, 4: 0.76, 8: 0.57, 16: 0.53, 32: 0.53}),
}


@dataclass
class BatchTrace:
    dispatched_at: float
    batch_size: int
    wait_of_oldest: float  # ms
    service_time: float  # ms
    trigger: str

    def to_dict(self) -> dict:
        return {"dispatched_at": self.dispatched_at,
                "batch_size": self.batch_size,
                "wait_of_oldest": self.wait_of_oldest,
                "service_time": self.service_time,
                "trigger": self.trigger}


def profile_latency(profile: BackendProfile, batch_size: int) -> float:
    """Per-sample latency (ms): exact at calibrated sizes, log-linear in
    between, clamped to the largest calibrated size above it."""
    if not 1 <= batch_size <= 1024:
        raise ParameterError(f"batch_size must be in [1, 1024], got {batch_size}")
    table = profile.per_sample_latency_ms
    if batch_size in table:
        return table[batch_size]
    if batch_size > 32:
        return table[32]
    sizes = CALIBRATED_BATCH_SIZES
    for lo, hi in zip(sizes, sizes[1:]):
        if lo < batch_size < hi:
            t = (math.log(batch_size) - math.log(lo)) / (math.log(hi) - math.log(lo))
            return math.exp(math.log(table[lo])
                            + t * (math.log(table[hi]) - math.log(table[lo])))
    raise ParameterError(f"cannot interpolate batch_size {batch_size}")


def profile_throughput(profile: BackendProfile, batch_size: int) -> float:
    """Samples per second at the given batch size."""
    return 1000.0 / profile_latency(profile, batch_size)


def predict(backend: BackendProfile, texts: list[str]) -> list[dict]:
    """Deterministic stand-in classifier: stable hash of the text picks the
    label; same text always gets the same label."""
    if not texts:
        raise ParameterError("predict needs a non-empty batch")
    out = []
    for text in texts:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        out.append({"label": LABELS[digest[0] % 3], "score": 1.0})
    return out


def adapt_window(recent_arrival_gaps: list[float], policy: BatchPolicy,
                 current: float | None = None) -> float:
    """New batch window (ms): half the EWMA of recent arrival gaps, clamped
    to [window_floor, window_ceiling].  Empty history keeps the current
    window."""
    if not policy.adaptive or not recent_arrival_gaps:
        return current if current is not None else policy.max_batch_window
    ewma = recent_arrival_gaps[0]
    for gap in recent_arrival_gaps[1:]:
        ewma = 0.2 * gap + 0.8 * ewma
    return min(max(0.5 * ewma, policy.window_floor), policy.window_ceiling)


class PassthroughBackend:
    """Forwards each item of a batch to an external sentiment endpoint."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        parts = urlsplit(base_url)
        self.host = parts.hostname or "127.0.0.1"
        self.port = parts.port or 80
        self.path = parts.path or "/analyze-sentiment"
        self.timeout = timeout
        self.name = f"passthrough:{base_url}"

    def infer(self, texts: list[str]) -> list[dict]:
        results = []
        conn = HTTPConnection(self.host, self.port, timeout=self.timeout)
        try:
            for text in texts:
                body = json.dumps({"text": text})
                conn.request("POST", self.path, body=body,
                             headers={"Content-Type": "application/json"})
                resp = conn.getresponse()
                data = resp.read()
                if resp.status != 200:
                    raise RuntimeError(
                        f"passthrough target returned {resp.status}")
                results.append(json.loads(data))
        finally:
            conn.close()
        return results


class _Pending:
    __slots__ = ("text", "enqueued_real", "event", "result")

    def __init__(self, text: str, enqueued_real: float):
        self.text = text
        self.enqueued_real = enqueued_real
        self.event = threading.Event()
        self.result: dict | None = None


class BatchServer:
    """In-process HTTP service; start() binds and returns immediately."""

    def __init__(self, policy: BatchPolicy, backend: BackendProfile,
                 host: str = "127.0.0.1", port: int = 0,
                 time_scale: float = 1.0, queue_cap: int = DEFAULT_QUEUE_CAP,
                 seed: int = 0, startup_delay: float = 0.0,
                 trace_path: str | None = None):
        if time_scale <= 0:
            raise ParameterError("time_scale must be > 0")
        self.policy = policy
        self.backend = backend
        self._synthetic = isinstance(backend, BackendProfile)
        self.time_scale = time_scale
        self.queue_cap = queue_cap
        self.startup_delay = startup_delay
        self.trace_path = trace_path
        self.traces: list[BatchTrace] = []
        self._rng = random.Random(seed)
        self._queue: deque[_Pending] = deque()
        self._cond = threading.Condition()
        self._lane = threading.Lock()
        self._window_ms = policy.max_batch_window
        self._recent_gaps_ms: deque[float] = deque(maxlen=64)
        self._last_arrival_real: float | None = None
        self._stopping = False
        self._t0 = 0.0
        self._ready_at_real = 0.0
        server = self

        # Hand-rolled HTTP/1.1 handler instead of http.server: the stdlib
        # handler runs a few thousand bytecodes of parsing per request
        # (email.parser for headers, line-at-a-time reads, multi-write
        # responses), which costs around a millisecond per request after an
        # idle gap on a small host.  Compressed timelines multiply that by
        # 1/time_scale, so the request loop is kept to a handful of recv and
        # sendall calls.
        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                sock = self.request
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                buf = b""
                while True:
                    while b"\r\n\r\n" not in buf:
                        try:
                            chunk = sock.recv(65536)
                        except OSError:
                            return
                        if not chunk:
                            return
                        buf += chunk
                    head, buf = buf.split(b"\r\n\r\n", 1)
                    lines = head.decode("latin-1").split("\r\n")
                    parts = lines[0].split()
                    if len(parts) != 3:
                        self._reply(sock, 400, b'{"error": "bad request"}',
                                    False)
                        return
                    method, path, version = parts
                    length = 0
                    keep_alive = version != "HTTP/1.0"
                    for line in lines[1:]:
                        name, _, value = line.partition(":")
                        name = name.strip().lower()
                        if name == "content-length":
                            try:
                                length = int(value.strip())
                            except ValueError:
                                length = 0
                        elif name == "connection":
                            keep_alive = value.strip().lower() != "close"
                    while len(buf) < length:
                        try:
                            chunk = sock.recv(65536)
                        except OSError:
                            return
                        if not chunk:
                            return
                        buf += chunk
                    body, buf = buf[:length], buf[length:]
                    code, payload = server._respond(method, path, body)
                    if not self._reply(sock, code, payload, keep_alive):
                        return
                    if not keep_alive:
                        return

            def _reply(self, sock, code: int, body: bytes,
                       keep_alive: bool) -> bool:
                # Single write per response; each extra TCP segment costs
                # the peer another blocking-read wakeup.
                head = (f"HTTP/1.1 {code} {_STATUS_PHRASES.get(code, '')}\r\n"
                        f"Content-Type: application/json\r\n"
                        f"Content-Length: {len(body)}\r\n"
                        f"Connection: "
                        f"{'keep-alive' if keep_alive else 'close'}\r\n\r\n")
                try:
                    sock.sendall(head.encode("latin-1") + body)
                except OSError:
                    return False
                return True

        class Server(socketserver.ThreadingTCPServer):
            # Default listen backlog (5) drops connects when many clients
            # open sockets at once.
            request_queue_size = 128
            daemon_threads = True
            allow_reuse_address = True

        self._httpd = Server((host, port), Handler)
        self.port = self._httpd.server_address[1]
        self._serve_thread: threading.Thread | None = None
        self._dispatch_thread: threading.Thread | None = None

    # -- request path -----------------------------------------------------

    def _respond(self, method: str, path: str, raw: bytes) -> tuple[int, bytes]:
        if method == "GET":
            if path == "/healthz":
                return 200, b'{"status": "ok"}'
            return 404, b'{"error": "not found"}'
        if method != "POST" or path != "/analyze-sentiment":
            return 404, b'{"error": "not found"}'
        if time.perf_counter() < self._ready_at_real:
            return 503, b'{"error": "starting"}'
        try:
            text = json.loads(raw)["text"]
        except (ValueError, KeyError, TypeError):
            return 400, b'{"error": "bad request"}'
        try:
            result = self._handle(text)
        except Exception:
            return 502, b'{"error": "backend failure"}'
        if result is None:
            return 503, b'{"error": "queue full"}'
        return 200, json.dumps(result).encode("utf-8")

    def _service_ms(self, batch_size: int) -> float:
        ms = profile_latency(self.backend, batch_size) * batch_size
        if self.backend.jitter_sigma_ms > 0 or self.backend.jitter_mean_ms > 0:
            with self._cond:  # serialize RNG access
                jitter = self._rng.gauss(self.backend.jitter_mean_ms,
                                         self.backend.jitter_sigma_ms)
            ms += max(0.0, jitter)
        return ms

    def _note_arrival(self, now_real: float):
        if self._last_arrival_real is not None:
            gap_ms = (now_real - self._last_arrival_real) * 1000.0 / self.time_scale
            self._recent_gaps_ms.append(gap_ms)
        self._last_arrival_real = now_real

    def _execute(self, texts: list[str]) -> tuple[list[dict], float, float]:
        """Occupy the model lane for one batch; returns (results,
        service_ms, dispatch time)."""
        if self._synthetic:
            service_ms = self._service_ms(len(texts))
            with self._lane:
                t_disp = time.perf_counter()
                precise_sleep(service_ms / 1000.0 * self.time_scale,
                              spin_budget(self.time_scale))
            results = predict(self.backend, texts)
        else:
            with self._lane:
                t_disp = time.perf_counter()
                results = self.backend.infer(texts)
            service_ms = (time.perf_counter() - t_disp) * 1000.0 / self.time_scale
        return results, service_ms, t_disp

    def _handle(self, text: str) -> dict | None:
        if self.policy.max_batch_size == 1:
            # Batching disabled: serve on the handler thread, no window wait.
            with self._cond:
                self._note_arrival(time.perf_counter())
            results, service_ms, t_disp = self._execute([text])
            self._record_trace(t_disp, 1, 0.0, service_ms, TRIGGER_SIZE_FULL)
            return results[0]
        pending = _Pending(text, time.perf_counter())
        with self._cond:
            if self._stopping or len(self._queue) >= self.queue_cap:
                return None
            self._note_arrival(pending.enqueued_real)
            self._queue.append(pending)
            self._cond.notify()
        pending.event.wait()
        if pending.result is None:
            raise RuntimeError("backend failed for this batch")
        return pending.result

    # -- dispatcher -------------------------------------------------------

    def _dispatch_loop(self):
        max_b = self.policy.max_batch_size
        while True:
            with self._cond:
                while not self._queue and not self._stopping:
                    self._cond.wait(0.05)
                if self._stopping and not self._queue:
                    return
                # Wait for a full batch or window expiry on the oldest entry.
                trigger = TRIGGER_SHUTDOWN if self._stopping else None
                while trigger is None:
                    if len(self._queue) >= max_b:
                        trigger = TRIGGER_SIZE_FULL
                        break
                    window_real = self._window_ms / 1000.0 * self.time_scale
                    deadline = self._queue[0].enqueued_real + window_real
                    remaining = deadline - time.perf_counter()
                    if remaining <= 0:
                        trigger = TRIGGER_WINDOW_EXPIRED
                        break
                    self._cond.wait(remaining)
                    if self._stopping:
                        trigger = TRIGGER_SHUTDOWN
                batch = [self._queue.popleft()
                         for _ in range(min(max_b, len(self._queue)))]
                gaps = list(self._recent_gaps_ms)
            self._run_batch(batch, trigger)
            if self.policy.adaptive:
                self._window_ms = adapt_window(gaps, self.policy,
                                               current=self._window_ms)

    def _run_batch(self, batch: list[_Pending], trigger: str):
        if not batch:
            return
        try:
            results, service_ms, t_disp = self._execute([p.text for p in batch])
        except Exception:
            for pending in batch:
                pending.event.set()  # result stays None -> 502
            return
        wait_ms = (t_disp - batch[0].enqueued_real) * 1000.0 / self.time_scale
        for pending, result in zip(batch, results):
            pending.result = result
            pending.event.set()
        self._record_trace(t_disp, len(batch), wait_ms, service_ms, trigger)

    def _record_trace(self, t_disp_real: float, batch_size: int,
                      wait_ms: float, service_ms: float, trigger: str):
        trace = BatchTrace(
            dispatched_at=(t_disp_real - self._t0) / self.time_scale,
            batch_size=batch_size, wait_of_oldest=wait_ms,
            service_time=service_ms, trigger=trigger)
        with self._cond:
            self.traces.append(trace)
        if self.trace_path:
            with self._cond:
                with open(self.trace_path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(trace.to_dict()) + "\n")

    # -- lifecycle --------------------------------------------------------

    def start(self):
        self._t0 = time.perf_counter()
        self._ready_at_real = self._t0 + self.startup_delay
        self._serve_thread = threading.Thread(target=self._httpd.serve_forever,
                                              daemon=True)
        self._serve_thread.start()
        self._dispatch_thread = threading.Thread(target=self._dispatch_loop,
                                                 daemon=True)
        self._dispatch_thread.start()
        return self

    def stop(self):
        with self._cond:
            self._stopping = True
            self._cond.notify_all()
        if self._dispatch_thread is not None:
            self._dispatch_thread.join(timeout=30)
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._serve_thread is not None:
            self._serve_thread.join(timeout=10)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(policy: BatchPolicy, backend: BackendProfile, host: str = "127.0.0.1",
          port: int = 0, **kwargs) -> BatchServer:
    """Start a batch server; returns the running handle."""
    return BatchServer(policy, backend, host=host, port=port, **kwargs).start()
