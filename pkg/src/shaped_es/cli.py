"""Command line entry point.

    shaped-es run [--config FILE] [key=value ...]
    shaped-es dump-store ROOT [--generation G] [--slot S]
    shaped-es worker --connect HOST:PORT --worker-id N [--env NAME] [--store DIR]
    shaped-es bench-es [--function sphere] [--dim 20] ...

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import ENV_STORE, ConfigError, load_config

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shaped-es", description="Evolution strategies with a behaviour-cloning-shaped search distribution.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("--config", help="flat 'key = value' config file")
    run.add_argument("overrides", nargs="*", metavar="key=value", help="overrides applied after the file")

    dump = sub.add_parser("dump-store", help="dump stored trajectories as CSV")
    dump.add_argument("root")
    dump.add_argument("--generation", type=int)
    dump.add_argument("--slot", type=int)
    dump.add_argument("--output", help="write here instead of stdout")

    worker = sub.add_parser("worker", help="headless worker connecting to a master over TCP")
    worker.add_argument("--connect", required=True, metavar="HOST:PORT")
    worker.add_argument("--worker-id", type=int, required=True)
    worker.add_argument("--env", help="refuse to serve a master running a different env")
    worker.add_argument("--store", help=f"trajectory store root (default: ${ENV_STORE} or the master's)")

    bench = sub.add_parser("bench-es", help="antithetic ES on a synthetic objective")
    bench.add_argument("--function", default="sphere")
    bench.add_argument("--dim", type=int, default=20)
    bench.add_argument("--sigma", type=float, default=0.1)
    bench.add_argument("--pairs", type=int, default=32)
    bench.add_argument("--gamma", type=float, default=0.05)
    bench.add_argument("--iterations", type=int, default=500)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--rank", action="store_true", help="rank-transform fitness before the update")
    return p


def _run(args) -> int:
    from .experiments import run_experiment

    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(cfg)
    except Exception as exc:
        logging.getLogger(__name__).exception("run failed")
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(result.out_dir)
    return EXIT_OK


def _dump(args) -> int:
    from .experiments import dump_store

    if not os.path.isdir(args.root):
        print(f"no store at {args.root}", file=sys.stderr)
        return EXIT_CONFIG
    if args.output:
        with open(args.output, "w", newline="") as fh:
            corrupt = dump_store(args.root, args.generation, args.slot, fh)
    else:
        corrupt = dump_store(args.root, args.generation, args.slot)
    if corrupt:
        print(f"skipped {corrupt} corrupt record(s)", file=sys.stderr)
    return EXIT_OK


def _worker(args) -> int:
    from .runtime.transport import serve_socket_worker

    host, sep, port = args.connect.rpartition(":")
    if not sep or not port.isdigit():
        print(f"--connect expects HOST:PORT, got {args.connect!r}", file=sys.stderr)
        return EXIT_CONFIG
    store = args.store or os.environ.get(ENV_STORE) or None
    try:
        serve_socket_worker(host or "127.0.0.1", int(port), args.worker_id, store, args.env)
    except OSError as exc:
        print(f"worker {args.worker_id}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _bench(args) -> int:
    from .experiments import bench_es

    try:
        out = bench_es(args.function, args.dim, args.sigma, args.pairs, args.gamma, args.iterations, args.seed,
                       rank=args.rank)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(out))
    return EXIT_OK if out["converged"] else EXIT_RUNTIME


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    handlers = {"run": _run, "dump-store": _dump, "worker": _worker, "bench-es": _bench}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
