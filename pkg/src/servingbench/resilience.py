"""Disruption-and-recovery experiments against the embedded server.

The server runs as a child process watched by a supervisor that probes
/healthz.  Five disruption kinds emulate cluster-level failures on a
single-node, single-replica deployment:

  supervisor-pause   health probing suspended; server untouched
                     (control-plane outage)
  runtime-pause      server process SIGSTOP/SIGCONT; in-flight requests
                     stall but are not dropped (container runtime outage)
  rollout-restart    graceful stop, fresh instance with a readiness delay
  replica-replace    process terminated; probe loop restarts it
  pod-kill           process hard-killed; probe loop restarts it

Probe classification mirrors liveness semantics: a refused connection
(dead process) restarts immediately; a probe timeout (stalled process)
only restarts after ``timeout_threshold`` consecutive misses, so short
runtime pauses cause no restarts.
"""

from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from http.client import HTTPConnection

from .errors import ParameterError
from .loadgen import RequestRecord, ScenarioConfig, run_scenario

SUPERVISOR_PAUSE = "supervisor-pause"
RUNTIME_PAUSE = "runtime-pause"
ROLLOUT_RESTART = "rollout-restart"
REPLICA_REPLACE = "replica-replace"
POD_KILL = "pod-kill"

EVENT_KINDS = (SUPERVISOR_PAUSE, RUNTIME_PAUSE, ROLLOUT_RESTART,
               REPLICA_REPLACE, POD_KILL)
RESTART_KINDS = (ROLLOUT_RESTART, REPLICA_REPLACE, POD_KILL)


@dataclass(frozen=True)
class DisruptionEvent:
    kind: str
    at: float
    duration: float = 0.0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ParameterError(f"unknown disruption kind {self.kind!r}")
        if self.at < 0:
            raise ParameterError("event time must be >= 0")
        if self.duration < 0:
            raise ParameterError("event duration must be >= 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "at": self.at, "duration": self.duration}


def validate_plan(plan: list[DisruptionEvent]) -> None:
    for prev, nxt in zip(plan, plan[1:]):
        if nxt.at < prev.at + prev.duration:
            raise ParameterError(
                f"overlapping events at t={prev.at} and t={nxt.at}")


def load_plan(path: str) -> list[DisruptionEvent]:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    plan = [DisruptionEvent(kind=e["kind"], at=e["at"],
                            duration=e.get("duration", 0.0)) for e in raw]
    validate_plan(plan)
    return plan


@dataclass(frozen=True)
class ServerConfig:
    profile: str
    port: int
    max_batch_size: int = 1
    window_ms: float = 10.0
    adaptive: bool = False
    time_scale: float = 1.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {"profile": self.profile, "port": self.port,
                "max_batch_size": self.max_batch_size,
                "window_ms": self.window_ms, "adaptive": self.adaptive,
                "time_scale": self.time_scale, "seed": self.seed}


@dataclass
class EventOutcome:
    event: DisruptionEvent
    failures_during: int
    downtime: float
    time_to_recovery: float

    def to_dict(self) -> dict:
        return {"event": self.event.to_dict(),
                "failures_during": self.failures_during,
                "downtime": self.downtime,
                "time_to_recovery": self.time_to_recovery}


@dataclass
class RecoveryReport:
    per_event: list[EventOutcome]
    total_failures: int
    final_error_rate: float
    restarts: int

    def to_dict(self) -> dict:
        return {"per_event": [o.to_dict() for o in self.per_event],
                "total_failures": self.total_failures,
                "final_error_rate": self.final_error_rate,
                "restarts": self.restarts}


class SupervisorError(RuntimeError):
    """The supervisor gave up restarting the server."""


class Supervisor:
    def __init__(self, server_config: ServerConfig,
                 health_interval: float = 1.0, readiness_delay: float = 5.0,
                 timeout_threshold: int = 3, max_restart_attempts: int = 10):
        self.config = server_config
        self.health_interval = health_interval
        self.readiness_delay = readiness_delay
        self.probe_timeout = max(0.1, health_interval / 2)
        self.timeout_threshold = timeout_threshold
        self.max_restart_attempts = max_restart_attempts
        self.restart_count = 0
        self.aborted = False
        self._proc: subprocess.Popen | None = None
        self._lock = threading.RLock()
        self._paused = False
        self._running = False
        self._consecutive_timeouts = 0
        self._probe_thread: threading.Thread | None = None

    # -- process management ------------------------------------------------

    def _server_argv(self, startup_delay: float) -> list[str]:
        c = self.config
        argv = [sys.executable, "-m", "servingbench", "serve",
                "--profile", c.profile, "--port", str(c.port),
                "--max-batch", str(c.max_batch_size),
                "--window-ms", str(c.window_ms),
                "--time-scale", str(c.time_scale),
                "--seed", str(c.seed),
                "--startup-delay", str(startup_delay)]
        if c.adaptive:
            argv.append("--adaptive")
        return argv

    def _spawn(self, startup_delay: float) -> bool:
        self._proc = subprocess.Popen(
            self._server_argv(startup_delay),
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        deadline = time.monotonic() + 15.0
        while time.monotonic() < deadline:
            if self._probe() == "ok":
                return True
            if self._proc.poll() is not None:
                return False
            time.sleep(0.05)
        return False

    def _probe(self) -> str:
        """'ok', 'refused', or 'timeout'."""
        conn = HTTPConnection("127.0.0.1", self.config.port,
                              timeout=self.probe_timeout)
        try:
            conn.request("GET", "/healthz")
            resp = conn.getresponse()
            resp.read()
            return "ok" if resp.status == 200 else "refused"
        except (TimeoutError, OSError) as exc:
            if isinstance(exc, (ConnectionRefusedError, ConnectionResetError)):
                return "refused"
            if isinstance(exc, TimeoutError):
                return "timeout"
            return "refused"
        finally:
            conn.close()

    @property
    def pid(self) -> int:
        return self._proc.pid

    @property
    def running(self) -> bool:
        return self._running

    def start(self):
        # Idempotent: supervise() returns a started supervisor, and entering
        # it as a context manager calls start() again.  A second spawn here
        # would orphan the first server process, which then keeps answering
        # health probes for a supervisor that no longer tracks it.
        with self._lock:
            if self._running:
                return self
            if not self._spawn(startup_delay=0.0):
                raise SupervisorError("server failed to start")
            self._running = True
        self._probe_thread = threading.Thread(target=self._probe_loop,
                                              daemon=True)
        self._probe_thread.start()
        return self

    def stop(self):
        self._running = False
        if self._probe_thread is not None:
            self._probe_thread.join(timeout=10)
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                self._proc.terminate()
                try:
                    self._proc.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
                    self._proc.wait()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- probing and recovery ----------------------------------------------

    def pause_probes(self):
        self._paused = True

    def resume_probes(self):
        self._paused = False

    def _probe_loop(self):
        while self._running:
            time.sleep(self.health_interval)
            if not self._running or self._paused:
                continue
            with self._lock:
                if not self._running:
                    return
                state = self._probe()
                if state == "ok":
                    self._consecutive_timeouts = 0
                elif state == "refused":
                    self._restart_locked()
                else:
                    self._consecutive_timeouts += 1
                    if self._consecutive_timeouts >= self.timeout_threshold:
                        self._restart_locked()

    def _restart_locked(self):
        self._consecutive_timeouts = 0
        for attempt in range(self.max_restart_attempts):
            if self._proc is not None and self._proc.poll() is None:
                self._proc.kill()
                self._proc.wait()
            if self._spawn(startup_delay=self.readiness_delay):
                self.restart_count += 1
                return
        self.aborted = True
        self._running = False
        raise SupervisorError(
            f"server did not come back after {self.max_restart_attempts} attempts")

    def rollout(self):
        """Graceful stop, then a fresh instance with the readiness delay."""
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                self._proc.terminate()
                self._proc.wait()
            if not self._spawn(startup_delay=self.readiness_delay):
                self.aborted = True
                raise SupervisorError("rollout failed to start a new instance")
            self.restart_count += 1


def supervise(server_config: ServerConfig, health_interval: float = 1.0,
              readiness_delay: float = 5.0, **kwargs) -> Supervisor:
    """Start the server under supervision; returns the running supervisor."""
    return Supervisor(server_config, health_interval=health_interval,
                      readiness_delay=readiness_delay, **kwargs).start()


def inject(event: DisruptionEvent, supervisor: Supervisor) -> None:
    if not supervisor.running:
        raise ParameterError("supervisor is not running")
    if event.kind == SUPERVISOR_PAUSE:
        supervisor.pause_probes()
        time.sleep(event.duration)
        supervisor.resume_probes()
    elif event.kind == RUNTIME_PAUSE:
        pid = supervisor.pid
        os.kill(pid, signal.SIGSTOP)
        try:
            time.sleep(event.duration)
        finally:
            os.kill(pid, signal.SIGCONT)
    elif event.kind == ROLLOUT_RESTART:
        supervisor.rollout()
    elif event.kind == REPLICA_REPLACE:
        os.kill(supervisor.pid, signal.SIGTERM)
    elif event.kind == POD_KILL:
        os.kill(supervisor.pid, signal.SIGKILL)
    else:
        raise ParameterError(f"unknown disruption kind {event.kind!r}")


def build_recovery_report(records: list[RequestRecord],
                          plan: list[DisruptionEvent], restarts: int,
                          recovery_window: float = 10.0) -> RecoveryReport:
    failures = sorted((r.completed_at for r in records
                       if not r.is_success and r.completed_at is not None))
    per_event: list[EventOutcome] = []
    by_event: dict[int, list[float]] = {i: [] for i in range(len(plan))}
    if plan:
        for t in failures:
            idx = 0
            for i, ev in enumerate(plan):
                if ev.at <= t:
                    idx = i
            by_event[idx].append(t)
        for i, ev in enumerate(plan):
            fs = by_event[i]
            if fs:
                downtime = fs[-1] - fs[0]
                ttr = max(0.0, fs[-1] - ev.at)
            else:
                downtime = ttr = 0.0
            per_event.append(EventOutcome(event=ev, failures_during=len(fs),
                                          downtime=downtime,
                                          time_to_recovery=max(ttr, downtime)))
    ends = [r.completed_at for r in records if r.completed_at is not None]
    final_error_rate = 0.0
    if ends:
        cutoff = max(ends) - recovery_window
        tail = [r for r in records
                if r.completed_at is not None and r.completed_at >= cutoff]
        if tail:
            final_error_rate = sum(1 for r in tail if not r.is_success) / len(tail)
    return RecoveryReport(per_event=per_event, total_failures=len(failures),
                          final_error_rate=final_error_rate, restarts=restarts)


def run_chaos(plan: list[DisruptionEvent], scenario: ScenarioConfig,
              server_config: ServerConfig, health_interval: float = 1.0,
              readiness_delay: float = 5.0, recovery_window: float = 10.0,
              **supervisor_kwargs) -> tuple[RecoveryReport, list[RequestRecord]]:
    """Run continuous load across a disruption plan; the load, the injector,
    and the supervisor run as independent agents."""
    validate_plan(plan)
    sup = supervise(server_config, health_interval=health_interval,
                    readiness_delay=readiness_delay, **supervisor_kwargs)
    records: list[RequestRecord] = []
    load_error: list[BaseException] = []

    def load():
        try:
            records.extend(run_scenario(scenario))
        except BaseException as exc:  # surfaced after join
            load_error.append(exc)

    try:
        load_thread = threading.Thread(target=load, daemon=True)
        t0 = time.perf_counter()
        load_thread.start()
        for event in plan:
            delay = event.at - (time.perf_counter() - t0)
            if delay > 0:
                time.sleep(delay)
            inject(event, sup)
        load_thread.join()
    finally:
        sup.stop()
    if load_error:
        raise load_error[0]
    report = build_recovery_report(records, plan, sup.restart_count,
                                   recovery_window=recovery_window)
    return report, records
