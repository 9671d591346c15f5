"""Sleep with sub-millisecond accuracy.

time.sleep() on this class of host can overshoot a 20 ms request by tens of
milliseconds when the hypervisor coalesces timer wakeups.  At small time
scales that error is multiplied back up into the logical timeline, so the
load generator and the synthetic backend sleep against an absolute
deadline and busy-wait the last few milliseconds.  The busy-wait also
keeps the vCPU from being descheduled right before the caller acts on the
deadline, which would otherwise add a wake-from-idle stall to whatever
follows the sleep.
"""

from __future__ import annotations

import contextlib
import os
import subprocess
import sys
import time

_SPIN_S = 0.003


def precise_sleep(duration: float, spin_s: float = _SPIN_S):
    """One bulk sleep ending spin_s before the deadline, then busy-wait.

    A single syscall keeps the number of timer wakeups (each a stall
    opportunity) at one per sleep.  Callers on a compressed timeline pass a
    larger spin_s; a duration at or below it is busy-waited outright, which
    avoids the timer entirely for the short real-time sleeps such runs are
    made of.
    """
    if duration <= 0:
        return
    deadline = time.perf_counter() + duration
    remaining = duration
    while remaining > spin_s:
        time.sleep(remaining - spin_s)
        remaining = deadline - time.perf_counter()
    while time.perf_counter() < deadline:
        pass


def spin_budget(time_scale: float) -> float:
    """How long a sleep may be busy-waited given the run's time scale."""
    return 0.05 if time_scale < 1.0 else _SPIN_S


def preemption_fraction(sample_s: float = 0.5) -> float:
    """Fraction of a busy-wait window stolen from this vCPU.

    Busy-waits for sample_s and sums clock jumps above 0.2 ms; on an
    oversubscribed host those jumps are time the hypervisor ran someone
    else.  Useful for deciding whether a wall-clock measurement is worth
    trusting.
    """
    stolen = 0.0
    end = time.perf_counter() + sample_s
    prev = time.perf_counter()
    while prev < end:
        cur = time.perf_counter()
        if cur - prev > 0.0002:
            stolen += cur - prev
        prev = cur
    return min(1.0, stolen / sample_s)


@contextlib.contextmanager
def cpu_keep_hot():
    """Hold the CPU busy with a lowest-priority spinner process.

    On virtualized single-core hosts an idle vCPU is descheduled, and the
    next wakeup can stall for tens of milliseconds.  A nice-19 spinner keeps
    the vCPU scheduled while yielding immediately to any thread doing real
    work, which makes sleep/wake timing tight enough for compressed runs.
    """
    # The spinner exits on its own if its parent dies, so a SIGKILLed
    # benchmark run (where this finally block never executes) cannot leave
    # a stray busy-loop behind to distort later measurements.
    spinner_src = (f"import os\n"
                   f"i = 0\n"
                   f"while True:\n"
                   f"    i += 1\n"
                   f"    if i % 5000000 == 0 and os.getppid() != {os.getpid()}:\n"
                   f"        break\n")
    proc = None
    try:
        try:
            proc = subprocess.Popen(
                [sys.executable, "-c", spinner_src],
                preexec_fn=lambda: os.nice(19),
                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        except OSError:
            pass
        yield
    finally:
        if proc is not None:
            proc.kill()
            proc.wait()
