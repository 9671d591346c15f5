"""Command-line entry point.

Subcommands: ``sample`` (gap generation + distribution validation),
``serve`` (host the embedded batch server), ``loadtest`` (drive a target),
``chaos`` (disruption plan under continuous load), ``profile-table``
(latency/throughput tables for the built-in backend profiles).

Exit codes: 0 success, 1 threshold failure, 2 usage/config error.
The environment variable SERVINGBENCH_SEED overrides ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import time
from importlib import resources

from . import __version__, arrivals, batchserver, metrics, resilience, statval
from .arrivals import PRNG_ID
from .errors import InsufficientDataError, ParameterError
from .loadgen import ScenarioConfig, replay_gaps, run_scenario

SCHEMA_VERSION = 1

SCENARIO_PRESETS = {
    "steady": lambda: arrivals.make_exponential(0.5),
    "moderate": lambda: arrivals.make_gamma_scaled(1.2, 2.0),
    "extreme": lambda: arrivals.make_gamma_scaled(0.8, 2.0),
}

DEFAULT_MEAN_TOLERANCE = 0.02
DEFAULT_VARIANCE_TOLERANCE = 0.10
DEFAULT_MAX_DENSITY_GAP = 0.05


def bundled_corpus_path() -> str:
    return str(resources.files("servingbench").joinpath("data/corpus.txt"))


def bundled_plan_path() -> str:
    return str(resources.files("servingbench").joinpath("data/default-plan.json"))


def _base_report(command: str, config_echo: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "toolkit_version": __version__,
        "prng_id": PRNG_ID,
        "config_echo": {"command": command, **config_echo},
    }


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _process_from_args(args) -> arrivals.ArrivalProcess:
    if args.dist == "exp":
        if args.rate is None:
            raise ParameterError("--rate is required for --dist exp")
        return arrivals.make_exponential(args.rate)
    if args.alpha is None or args.mean is None:
        raise ParameterError("--alpha and --mean are required for --dist gamma")
    return arrivals.make_gamma_scaled(args.alpha, args.mean)


def fit_checks(fit: statval.FitReport,
               mean_tolerance: float = DEFAULT_MEAN_TOLERANCE,
               variance_tolerance: float = DEFAULT_VARIANCE_TOLERANCE,
               max_density_gap: float = DEFAULT_MAX_DENSITY_GAP) -> dict:
    mean_ok = abs(fit.empirical.mean - fit.theoretical_mean) \
        <= mean_tolerance * fit.theoretical_mean
    var_ok = abs(fit.empirical.variance - fit.theoretical_variance) \
        <= variance_tolerance * fit.theoretical_variance
    gap_ok = fit.max_abs_density_gap <= max_density_gap
    return {"mean_ok": mean_ok, "variance_ok": var_ok,
            "density_gap_ok": gap_ok,
            "passed": mean_ok and var_ok and gap_ok}


def cmd_sample(args) -> int:
    process = _process_from_args(args)
    samples = arrivals.sample(process, args.seed, args.n)
    fit = statval.fit_report(samples, process)
    checks = fit_checks(fit, max_density_gap=args.max_gap)
    report = _base_report("sample", {
        "dist": args.dist, "process": process.to_dict(),
        "n": args.n, "seed": args.seed, "max_gap": args.max_gap,
    })
    report["fit"] = statval.fit_report_to_dict(fit)
    report["checks"] = checks
    _write_json(args.out, report)
    print(f"wrote {args.out}: mean={fit.empirical.mean:.4f} "
          f"variance={fit.empirical.variance:.4f} "
          f"max_gap={fit.max_abs_density_gap:.4f} "
          f"{'PASS' if checks['passed'] else 'FAIL'}")
    return 0 if checks["passed"] else 1


def cmd_serve(args) -> int:
    policy = batchserver.BatchPolicy(
        max_batch_size=args.max_batch, max_batch_window=args.window_ms,
        adaptive=args.adaptive, window_floor=args.window_floor,
        window_ceiling=args.window_ceiling)
    if args.passthrough:
        backend = batchserver.PassthroughBackend(args.passthrough)
    else:
        if args.profile not in batchserver.PROFILES:
            raise ParameterError(
                f"unknown profile {args.profile!r}; built-in profiles: "
                + ", ".join(sorted(batchserver.PROFILES)))
        backend = batchserver.PROFILES[args.profile]
    server = batchserver.serve(
        policy, backend, port=args.port, time_scale=args.time_scale,
        seed=args.seed, startup_delay=args.startup_delay,
        queue_cap=args.queue_cap, trace_path=args.trace)
    stop = {"flag": False}

    def on_signal(signum, frame):
        stop["flag"] = True

    signal.signal(signal.SIGTERM, on_signal)
    signal.signal(signal.SIGINT, on_signal)
    print(f"serving on port {server.port}", flush=True)
    while not stop["flag"]:
        time.sleep(0.05)
    server.stop()
    return 0


def _scenario_from_args(args, target_url: str) -> ScenarioConfig:
    if args.scenario:
        process = SCENARIO_PRESETS[args.scenario]()
        name = args.scenario
    elif args.dist:
        process = _process_from_args(args)
        name = "custom"
    else:
        process = SCENARIO_PRESETS["steady"]()
        name = "steady"
    corpus = args.corpus or bundled_corpus_path()
    return ScenarioConfig(
        name=name, process=process, total_requests=args.requests,
        seed=args.seed, target_url=target_url, corpus_path=corpus,
        corpus_subset_size=args.subset, corpus_seed=args.corpus_seed,
        mode=args.mode, request_timeout=args.timeout,
        time_scale=args.time_scale)


def cmd_loadtest(args) -> int:
    scenario = _scenario_from_args(args, args.target)
    records = run_scenario(scenario)
    latency_from = "scheduled" if scenario.mode == "open" else "sent"
    summary = metrics.summarize(records, latency_from=latency_from)
    series = metrics.timeseries(records, window=10.0)
    report = _base_report("loadtest", {"scenario": scenario.to_dict()})
    if scenario.total_requests >= 2:
        fit = statval.fit_report(replay_gaps(scenario), scenario.process)
        report["fit"] = statval.fit_report_to_dict(fit)
    report["summary"] = metrics.summary_to_dict(summary)
    report["timeseries"] = metrics.timeseries_to_list(series)
    os.makedirs(args.out, exist_ok=True)
    metrics.write_records_csv(records, os.path.join(args.out, "records.csv"))
    path = os.path.join(args.out, "report.json")
    _write_json(path, report)
    s = report["summary"]
    print(f"wrote {path}: rps={s['rps']:.3f} failure_rate={s['failure_rate']:.4f} "
          f"avg={s['avg'] if s['avg'] is None else round(s['avg'], 2)} ms")
    return 0 if s["failure_rate"] == 0 else 1


def cmd_chaos(args) -> int:
    plan = resilience.load_plan(args.plan or bundled_plan_path())
    server_config = resilience.ServerConfig(
        profile=args.profile, port=args.port, max_batch_size=args.max_batch,
        window_ms=args.window_ms, adaptive=args.adaptive)
    target = f"http://127.0.0.1:{args.port}"
    scenario = _scenario_from_args(args, target)
    recovery, records = resilience.run_chaos(
        plan, scenario, server_config,
        health_interval=args.health_interval,
        readiness_delay=args.readiness_delay,
        recovery_window=args.recovery_window)
    summary = metrics.summarize(records)
    series = metrics.timeseries(records, window=min(10.0, args.recovery_window))
    report = _base_report("chaos", {
        "scenario": scenario.to_dict(),
        "server": server_config.to_dict(),
        "plan": [e.to_dict() for e in plan],
        "health_interval": args.health_interval,
        "readiness_delay": args.readiness_delay,
        "recovery_window": args.recovery_window,
    })
    report["summary"] = metrics.summary_to_dict(summary)
    report["timeseries"] = metrics.timeseries_to_list(series)
    report["recovery"] = recovery.to_dict()
    os.makedirs(args.out, exist_ok=True)
    metrics.write_records_csv(records, os.path.join(args.out, "records.csv"))
    path = os.path.join(args.out, "report.json")
    _write_json(path, report)
    print(f"wrote {path}: restarts={recovery.restarts} "
          f"total_failures={recovery.total_failures} "
          f"final_error_rate={recovery.final_error_rate:.4f}")
    return 0 if recovery.final_error_rate == 0 else 1


def profile_table(names: list[str]) -> dict:
    table = {}
    for name in names:
        profile = batchserver.PROFILES[name]
        table[name] = {
            "latency_ms": {str(b): batchserver.profile_latency(profile, b)
                           for b in batchserver.CALIBRATED_BATCH_SIZES},
            "throughput_sps": {str(b): batchserver.profile_throughput(profile, b)
                               for b in batchserver.CALIBRATED_BATCH_SIZES},
        }
    return {"schema_version": SCHEMA_VERSION, "profiles": table}


def cmd_profile_table(args) -> int:
    if args.profile == "all":
        names = sorted(batchserver.PROFILES)
    elif args.profile in batchserver.PROFILES:
        names = [args.profile]
    else:
        raise ParameterError(
            f"unknown profile {args.profile!r}; built-in profiles: "
            + ", ".join(sorted(batchserver.PROFILES)))
    table = profile_table(names)
    if args.format == "json":
        text = json.dumps(table, indent=2, sort_keys=True) + "\n"
    else:
        lines = ["profile,batch_size,latency_ms_per_sample,throughput_sps"]
        for name in names:
            for b in batchserver.CALIBRATED_BATCH_SIZES:
                lines.append(f"{name},{b},"
                             f"{table['profiles'][name]['latency_ms'][str(b)]},"
                             f"{table['profiles'][name]['throughput_sps'][str(b)]}")
        text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _add_process_flags(p: argparse.ArgumentParser):
    p.add_argument("--dist", choices=["exp", "gamma"])
    p.add_argument("--rate", type=float, help="Exponential rate (per second)")
    p.add_argument("--alpha", type=float, help="Gamma shape")
    p.add_argument("--mean", type=float, help="Gamma target mean (seconds)")


def _add_scenario_flags(p: argparse.ArgumentParser):
    p.add_argument("--scenario", choices=sorted(SCENARIO_PRESETS))
    _add_process_flags(p)
    p.add_argument("--mode", choices=["closed", "open"], default="closed")
    p.add_argument("--requests", type=int, default=900)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--corpus", help="newline-delimited text corpus "
                   "(default: bundled corpus)")
    p.add_argument("--subset", type=int, default=1000)
    p.add_argument("--corpus-seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--time-scale", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="servingbench")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample gaps and validate the fit")
    _add_process_flags(p)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--max-gap", type=float, default=DEFAULT_MAX_DENSITY_GAP)
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("serve", help="run the embedded batch server")
    p.add_argument("--profile", default="fp16-onnx")
    p.add_argument("--passthrough", help="forward to this base URL instead "
                   "of the synthetic backend")
    p.add_argument("--max-batch", type=int, default=32)
    p.add_argument("--window-ms", type=float, default=10.0)
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--window-floor", type=float, default=1.0)
    p.add_argument("--window-ceiling", type=float, default=100.0)
    p.add_argument("--port", type=int, default=3000)
    p.add_argument("--time-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--startup-delay", type=float, default=0.0)
    p.add_argument("--queue-cap", type=int, default=batchserver.DEFAULT_QUEUE_CAP)
    p.add_argument("--trace", help="append batch traces to this JSON-lines file")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("loadtest", help="drive load against a target URL")
    _add_scenario_flags(p)
    p.add_argument("--target", required=True)
    p.add_argument("--out", default="loadtest-out")
    p.set_defaults(func=cmd_loadtest)

    p = sub.add_parser("chaos", help="disruption plan under continuous load")
    _add_scenario_flags(p)
    p.add_argument("--plan", help="JSON disruption plan "
                   "(default: bundled default-plan.json)")
    p.add_argument("--profile", default="fp16-onnx")
    p.add_argument("--port", type=int, default=3000)
    p.add_argument("--max-batch", type=int, default=1)
    p.add_argument("--window-ms", type=float, default=10.0)
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--health-interval", type=float, default=1.0)
    p.add_argument("--readiness-delay", type=float, default=5.0)
    p.add_argument("--recovery-window", type=float, default=10.0)
    p.add_argument("--out", default="chaos-out")
    # Sized to outlast the bundled plan (last event at 54 s) plus recovery,
    # not the 30-minute loadtest default.
    p.set_defaults(func=cmd_chaos, requests=45)

    p = sub.add_parser("profile-table",
                       help="latency/throughput table for built-in profiles")
    p.add_argument("--profile", default="all")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile_table)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    env_seed = os.environ.get("SERVINGBENCH_SEED")
    if env_seed is not None and hasattr(args, "seed"):
        args.seed = int(env_seed)
    try:
        return args.func(args)
    except (ParameterError, InsufficientDataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
