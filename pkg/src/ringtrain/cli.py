"""Single executable: workers, launcher, probes, and simulated experiments.

Exit codes are a stable contract for CI: 0 success, 2 usage/config error,
3 communication failure, 4 embedded assertion failure. ``RINGTRAIN_SEED``
overrides the seed from any config or preset; explicit flags override both.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import signal
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .engine import TrainingConfig, run_training, write_metrics_csv
from .errors import AssertionFailure, CommunicationError
from .harness import (run_aggregation_comparison, run_collective_bench,
                      run_efficiency_sweep, run_rar_vs_tree,
                      run_scaling_experiment, run_thermal_scenario)
from .preset import load_compute, load_net, load_thermal
from .transport.sim import sim_probe_bandwidth
from .transport.tcp import Coordinator, rendezvous, tcp_probe_client, tcp_probe_server

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_COMM = 3
EXIT_ASSERT = 4

SIM_EXPERIMENTS = ("scaling", "collective", "aggregation", "efficiency",
                   "rar-vs-tree", "thermal")


def _resolved_seed(flag_seed: int | None, fallback: int) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("RINGTRAIN_SEED")
    if env is not None:
        return int(env)
    return fallback


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, argv: list[str], seed: int,
                   config_paths: dict[str, str], outputs: list[Path]) -> Path:
    """Record everything needed to reproduce this run byte-for-byte."""
    manifest = {
        "version": __version__,
        "argv": argv,
        "resolved_seed": seed,
        "configs": {name: {"path": str(p), "sha256": _sha256(Path(p))}
                    for name, p in config_paths.items() if Path(p).exists()},
        "outputs": [str(p) for p in outputs],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _parse_host_port(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host, int(port)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ringtrain",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    w = sub.add_parser("worker", help="join a real-mode training group as one rank")
    w.add_argument("--rank", type=int, required=True)
    w.add_argument("--size", type=int, required=True)
    w.add_argument("--coordinator", type=_parse_host_port, required=True)
    w.add_argument("--config", required=True)
    w.add_argument("--out", default=".")
    w.add_argument("--seed", type=int)
    w.add_argument("--timeout", type=float, default=30.0)

    l = sub.add_parser("launch", help="spawn K local workers and aggregate rank 0 metrics")
    l.add_argument("--workers", type=int, required=True)
    l.add_argument("--config", required=True)
    l.add_argument("--out", required=True)
    l.add_argument("--seed", type=int)
    l.add_argument("--timeout", type=float, default=60.0)

    s = sub.add_parser("sim", help="run a simulated experiment, write CSV + sidecar")
    s.add_argument("experiment", choices=SIM_EXPERIMENTS)
    s.add_argument("--out", required=True)
    s.add_argument("--net", default="ethernet", help="net preset name or JSON path")
    s.add_argument("--net2", default="wifi5",
                   help="second net preset for the collective bench")
    s.add_argument("--compute", default="compute_s10")
    s.add_argument("--thermal", default="thermal_s10")
    s.add_argument("--model", default=None)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--k", type=_int_list, default=None,
                   help="comma-separated worker counts (single value for efficiency)")
    s.add_argument("--sizes", type=_int_list, default=None,
                   help="collective bench payload sizes in bytes")
    s.add_argument("--duration", type=float, default=600.0)
    s.add_argument("--fan", action="store_true", help="thermal: run with the fan on")
    s.add_argument("--seed", type=int)

    p = sub.add_parser("probe", help="point-to-point bandwidth probe")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--server", action="store_true")
    mode.add_argument("--client", type=_parse_host_port)
    mode.add_argument("--sim", metavar="NET", help="closed-form probe of a net preset")
    p.add_argument("--bind", type=_parse_host_port, default=("127.0.0.1", 0))
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--seed", type=int)

    r = sub.add_parser("replay", help="re-run a sim-mode command from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    return parser


def cmd_worker(args) -> int:
    config = TrainingConfig.from_json(args.config)
    if args.rank >= args.size or args.size != config.workers:
        print(f"rank/size {args.rank}/{args.size} inconsistent with config "
              f"workers={config.workers}", file=sys.stderr)
        return EXIT_USAGE
    config.seed = _resolved_seed(args.seed, config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    endpoint = rendezvous(args.coordinator, args.rank, args.size, timeout=args.timeout)
    try:
        metrics, model = run_training(config, endpoint, mode="real")
    finally:
        endpoint.close()
    write_metrics_csv(metrics, out / f"metrics_rank{args.rank}.csv")
    np.savez(out / f"weights_rank{args.rank}.npz",
             **{f"w{i}": w for i, w in enumerate(model.weights)})
    return EXIT_OK


def cmd_launch(args, argv: list[str]) -> int:
    config = TrainingConfig.from_json(args.config)
    if config.workers != args.workers:
        print(f"--workers {args.workers} does not match config workers="
              f"{config.workers}", file=sys.stderr)
        return EXIT_USAGE
    seed = _resolved_seed(args.seed, config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    coordinator = Coordinator("127.0.0.1", 0, args.workers, timeout=args.timeout)
    coordinator.start()
    host, port = coordinator.address
    procs = []

    def killall(signum=None, frame=None):
        for p in procs:
            if p.poll() is None:
                p.terminate()
        if signum is not None:
            sys.exit(EXIT_COMM)

    try:
        previous = [signal.signal(s, killall) for s in (signal.SIGINT, signal.SIGTERM)]
    except ValueError:       # not the main thread; skip signal plumbing
        previous = None
    try:
        for rank in range(args.workers):
            cmd = [sys.executable, "-m", "ringtrain", "worker",
                   "--rank", str(rank), "--size", str(args.workers),
                   "--coordinator", f"{host}:{port}", "--config", args.config,
                   "--out", str(out), "--seed", str(seed),
                   "--timeout", str(args.timeout)]
            procs.append(subprocess.Popen(cmd))
        codes = [p.wait() for p in procs]
    finally:
        killall()
        if previous is not None:
            for s, handler in zip((signal.SIGINT, signal.SIGTERM), previous):
                signal.signal(s, handler)
    coordinator.join()
    if any(codes):
        bad = next(i for i, c in enumerate(codes) if c)
        print(f"worker rank {bad} exited with code {codes[bad]}", file=sys.stderr)
        return max(codes)

    report = out / "report.csv"
    report.write_text((out / "metrics_rank0.csv").read_text())
    write_manifest(out, argv, seed, {"training_config": args.config},
                   [report] + [out / f"metrics_rank{r}.csv" for r in range(args.workers)])
    return EXIT_OK


def _run_sim(args) -> tuple[int, list[Path], int]:
    net = load_net(args.net)
    compute = load_compute(args.compute)
    seed = _resolved_seed(args.seed, net.seed)
    net = replace(net, seed=seed)
    out = Path(args.out)

    exp = args.experiment
    if exp == "scaling":
        report = run_scaling_experiment(args.model or "GoogleNet", args.batch,
                                        args.k or [1, 2, 4, 8, 16, 32], net, compute)
    elif exp == "collective":
        net2 = replace(load_net(args.net2), seed=seed + 1)
        sizes = args.sizes or [int(37.5 * 2 ** 20)]
        report = run_collective_bench(sizes, args.k or [2, 4, 8, 16],
                                      {args.net: net, args.net2: net2}, compute)
    elif exp == "aggregation":
        models = [args.model] if args.model else None
        report = run_aggregation_comparison(models, (args.k or [138])[0], net, compute)
    elif exp == "efficiency":
        report = run_efficiency_sweep((args.k or [138])[0], net, compute)
    elif exp == "rar-vs-tree":
        report = run_rar_vs_tree(args.model or "ResNet-152",
                                 args.k or [1, 2, 4, 8, 16, 32, 46], net, compute)
    else:
        thermal, scenario = load_thermal(args.thermal)
        report = run_thermal_scenario(thermal, args.duration, args.fan, **scenario)
    csv_path, meta_path = report.write(out, stem=exp.replace("-", "_"))
    return EXIT_OK, [csv_path, meta_path], seed


def cmd_sim(args, argv: list[str]) -> int:
    code, outputs, seed = _run_sim(args)
    configs = {"net": str(args.net), "compute": str(args.compute)}
    for name in ("net", "compute", "thermal"):
        value = getattr(args, name)
        p = Path(value)
        if p.exists():
            configs[name] = str(p)
    write_manifest(Path(args.out), argv, seed, configs, outputs)
    print(f"wrote {outputs[0]}")
    return code


def cmd_probe(args) -> int:
    if args.server:
        host, port = args.bind
        addr, thread = tcp_probe_server(host, port, sessions=1)
        print(f"probe server listening on {addr[0]}:{addr[1]}", flush=True)
        thread.join()
        return EXIT_OK
    if args.sim:
        profile = load_net(args.sim)
        if args.seed is not None:
            profile = replace(profile, seed=args.seed)
        rates, aborted = [], False
        for i in range(args.repeat):
            rate, bad = sim_probe_bandwidth(replace(profile, seed=profile.seed + i),
                                            args.seconds)
            rates.append(rate)
            aborted = aborted or bad
        label = " (aborted: partial result)" if aborted else ""
        mean = sum(rates) / len(rates)
        std = (sum((r - mean) ** 2 for r in rates) / len(rates)) ** 0.5
        print(f"{mean:.2f} +- {std:.2f} Mbps over {args.repeat} runs{label}")
        return EXIT_OK
    rates = tcp_probe_client(args.client, args.seconds, args.repeat)
    mean = sum(rates) / len(rates)
    std = (sum((r - mean) ** 2 for r in rates) / len(rates)) ** 0.5
    print(f"{mean:.2f} +- {std:.2f} Mbps over {args.repeat} runs")
    return EXIT_OK


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    argv = list(manifest["argv"])
    if "--out" in argv:
        argv[argv.index("--out") + 1] = args.out
    else:
        argv += ["--out", args.out]
    if "--seed" not in argv:
        argv += ["--seed", str(manifest["resolved_seed"])]
    return main(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        if args.command == "worker":
            return cmd_worker(args)
        if args.command == "launch":
            return cmd_launch(args, argv)
        if args.command == "sim":
            return cmd_sim(args, argv)
        if args.command == "probe":
            return cmd_probe(args)
        if args.command == "replay":
            return cmd_replay(args)
        parser.error(f"unknown command {args.command}")
    except AssertionFailure as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except CommunicationError as exc:
        print(f"communication failure: {exc}", file=sys.stderr)
        return EXIT_COMM
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
