"""HTTP load generation driven by an arrival process.

Closed-loop mode sends one request at a time: after each completion the
sender waits a sampled gap before the next send, so the achieved rate is
below the nominal rate whenever the backend is slow.  Open-loop mode sends
on the pre-computed schedule regardless of completions, with in-flight
requests bounded only by ``max_in_flight``.

All recorded times are logical seconds from run start on a monotonic clock.
``time_scale`` compresses real time: sleeps and timeouts are multiplied by
it, and recorded offsets are divided by it, so a run at time_scale=0.01
produces the same logical timeline 100x faster.
"""

from __future__ import annotations

import json
import random
import socket
import threading
import time
from dataclasses import dataclass
from urllib.parse import urlsplit

from . import arrivals
from .arrivals import ArrivalProcess
from .errors import InsufficientDataError, ParameterError
from .timing import cpu_keep_hot, precise_sleep, spin_budget

CLOSED_LOOP = "closed"
OPEN_LOOP = "open"

STATUS_SUCCESS = "success"
STATUS_TIMEOUT = "timeout"
STATUS_TRANSPORT_ERROR = "transport_error"
# HTTP-level failures are recorded as "http_<code>", e.g. "http_503".

DEFAULT_PATH = "/analyze-sentiment"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    process: ArrivalProcess
    total_requests: int
    seed: int
    target_url: str
    corpus_path: str
    corpus_subset_size: int
    corpus_seed: int = 0
    mode: str = CLOSED_LOOP
    request_timeout: float = 30.0
    time_scale: float = 1.0
    max_in_flight: int = 1024

    def __post_init__(self):
        if self.total_requests < 1:
            raise ParameterError("total_requests must be >= 1")
        if self.corpus_subset_size < 1:
            raise ParameterError("corpus_subset_size must be >= 1")
        if self.request_timeout <= 0:
            raise ParameterError("request_timeout must be > 0")
        if self.mode not in (CLOSED_LOOP, OPEN_LOOP):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.time_scale <= 0:
            raise ParameterError("time_scale must be > 0")
        if self.max_in_flight < 1:
            raise ParameterError("max_in_flight must be >= 1")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "process": self.process.to_dict(),
            "total_requests": self.total_requests,
            "seed": self.seed,
            "target_url": self.target_url,
            "corpus_path": self.corpus_path,
            "corpus_subset_size": self.corpus_subset_size,
            "corpus_seed": self.corpus_seed,
            "mode": self.mode,
            "request_timeout": self.request_timeout,
            "time_scale": self.time_scale,
            "max_in_flight": self.max_in_flight,
        }

    @staticmethod
    def from_dict(d: dict) -> "ScenarioConfig":
        d = dict(d)
        d["process"] = ArrivalProcess.from_dict(d["process"])
        return ScenarioConfig(**d)


@dataclass
class RequestRecord:
    index: int
    scheduled_at: float
    sent_at: float
    completed_at: float | None
    status: str
    response_time: float | None  # milliseconds; only when a response arrived
    payload_id: int

    @property
    def is_success(self) -> bool:
        return self.status == STATUS_SUCCESS


def load_corpus(path: str, subset_size: int, corpus_seed: int) -> list[str]:
    """Deterministic pseudo-random subset of a newline-delimited text file.

    Each line is either a raw UTF-8 text or a JSON object with a "text" field.
    """
    texts: list[str] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.lstrip().startswith("{"):
                texts.append(json.loads(line)["text"])
            else:
                texts.append(line)
    if len(texts) < subset_size:
        raise InsufficientDataError(
            f"corpus {path} has {len(texts)} texts, need {subset_size}")
    return random.Random(corpus_seed).sample(texts, subset_size)


def replay_gaps(config: ScenarioConfig) -> list[float]:
    """The exact gap sequence run_scenario will consume for this config."""
    return arrivals.sample(config.process, config.seed, config.total_requests)


def _split_target(url: str) -> tuple[str, int, str]:
    parts = urlsplit(url)
    host = parts.hostname or "127.0.0.1"
    port = parts.port or 80
    path = parts.path or DEFAULT_PATH
    return host, port, path


class _Client:
    """Keep-alive HTTP client posting one JSON payload at a time.

    Implemented on a raw socket so each request goes out as a single TCP
    segment (http.client sends headers and body separately, and every extra
    segment costs the server another blocking-read wakeup, which time-
    compressed runs cannot afford).
    """

    def __init__(self, url: str, timeout: float):
        self.host, self.port, self.path = _split_target(url)
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._buf = b""

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._buf = b""

    def _recv_response(self) -> tuple[int, bytes, bool]:
        """Returns (status_code, body, keep_alive)."""
        sock = self._sock
        while b"\r\n\r\n" not in self._buf:
            chunk = sock.recv(65536)
            if not chunk:
                raise ConnectionError("connection closed mid-response")
            self._buf += chunk
        head, self._buf = self._buf.split(b"\r\n\r\n", 1)
        lines = head.decode("latin-1").split("\r\n")
        code = int(lines[0].split(None, 2)[1])
        length = 0
        keep_alive = True
        for line in lines[1:]:
            name, _, value = line.partition(":")
            name = name.strip().lower()
            if name == "content-length":
                length = int(value.strip())
            elif name == "connection" and value.strip().lower() == "close":
                keep_alive = False
        while len(self._buf) < length:
            chunk = sock.recv(65536)
            if not chunk:
                raise ConnectionError("connection closed mid-body")
            self._buf += chunk
        body, self._buf = self._buf[:length], self._buf[length:]
        return code, body, keep_alive

    def post(self, text: str) -> tuple[str, bool]:
        """Returns (status, response_arrived)."""
        body = json.dumps({"text": text}).encode("utf-8")
        request = (f"POST {self.path} HTTP/1.1\r\n"
                   f"Host: {self.host}:{self.port}\r\n"
                   f"Content-Type: application/json\r\n"
                   f"Content-Length: {len(body)}\r\n\r\n"
                   ).encode("latin-1") + body
        try:
            if self._sock is None:
                self._sock = socket.create_connection(
                    (self.host, self.port), timeout=self.timeout)
                # Small request/response pairs stall on Nagle + delayed ACK.
                self._sock.setsockopt(socket.IPPROTO_TCP,
                                      socket.TCP_NODELAY, 1)
            self._sock.sendall(request)
            code, data, keep_alive = self._recv_response()
            if not keep_alive:
                self.close()
            if code != 200:
                return f"http_{code}", True
            if "label" not in json.loads(data):
                self.close()
                return STATUS_TRANSPORT_ERROR, True
            return STATUS_SUCCESS, True
        except socket.timeout:
            self.close()
            return STATUS_TIMEOUT, False
        except Exception:
            self.close()
            return STATUS_TRANSPORT_ERROR, False


def run_scenario(config: ScenarioConfig) -> list[RequestRecord]:
    payloads = load_corpus(config.corpus_path, config.corpus_subset_size,
                           config.corpus_seed)
    gaps = replay_gaps(config)
    runner = _run_closed_loop if config.mode == CLOSED_LOOP else _run_open_loop
    if config.time_scale < 1.0:
        # Compressed timelines magnify wake-from-idle stalls 1/time_scale-x.
        with cpu_keep_hot():
            return runner(config, gaps, payloads)
    return runner(config, gaps, payloads)


def _run_closed_loop(config: ScenarioConfig, gaps: list[float],
                     payloads: list[str]) -> list[RequestRecord]:
    scale = config.time_scale
    spin_s = spin_budget(scale)
    client = _Client(config.target_url, config.request_timeout * scale)
    records: list[RequestRecord] = []
    t0 = time.perf_counter()
    now = lambda: (time.perf_counter() - t0) / scale
    prev_done = 0.0
    try:
        for i, gap in enumerate(gaps):
            scheduled = prev_done + gap
            delay = scheduled - now()
            if delay > 0:
                precise_sleep(delay * scale, spin_s)
            payload_id = i % len(payloads)
            sent = now()
            status, responded = client.post(payloads[payload_id])
            completed = now()
            rt = (completed - sent) * 1000.0 if responded else None
            records.append(RequestRecord(
                index=i, scheduled_at=scheduled, sent_at=sent,
                completed_at=completed, status=status, response_time=rt,
                payload_id=payload_id))
            prev_done = completed
    finally:
        client.close()
    return records


def _run_open_loop(config: ScenarioConfig, gaps: list[float],
                   payloads: list[str]) -> list[RequestRecord]:
    scale = config.time_scale
    spin_s = spin_budget(scale)
    n = config.total_requests
    records: list[RequestRecord | None] = [None] * n
    sem = threading.BoundedSemaphore(config.max_in_flight)
    t0 = time.perf_counter()
    now = lambda: (time.perf_counter() - t0) / scale

    def worker(i: int, scheduled: float, payload_id: int):
        client = _Client(config.target_url, config.request_timeout * scale)
        try:
            sent = now()
            status, responded = client.post(payloads[payload_id])
            completed = now()
            rt = (completed - sent) * 1000.0 if responded else None
            records[i] = RequestRecord(
                index=i, scheduled_at=scheduled, sent_at=sent,
                completed_at=completed, status=status, response_time=rt,
                payload_id=payload_id)
        finally:
            client.close()
            sem.release()

    threads = []
    schedule = 0.0
    for i, gap in enumerate(gaps):
        schedule += gap
        delay = schedule - now()
        if delay > 0:
            precise_sleep(delay * scale, spin_s)
        sem.acquire()
        t = threading.Thread(target=worker, args=(i, schedule, i % len(payloads)),
                             daemon=True)
        t.start()
        threads.append(t)
    for t in threads:
        t.join()
    return [r for r in records if r is not None]
