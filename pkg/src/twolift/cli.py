"""Command line entry point: ``twolift <command> --config FILE --seed S --out DIR``."""
from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from . import experiments as ex
from .config import load_config
from .errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def package_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


class CsvSink:
    """CSV file flushed row by row, closed with a ``# manifest`` line."""

    def __init__(self, path: Path, header: list[str], config_hash: str):
        self.path = path
        self.rows = 0
        self.config_hash = config_hash
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(header)

    def write(self, row) -> None:
        self._writer.writerow([_cell(v) for v in row])
        self.rows += 1
        self._fh.flush()

    def close(self, status: str) -> None:
        if self._fh.closed:
            return
        self._fh.write(f"# manifest config_hash={self.config_hash} version={package_version()} "
                       f"rows={self.rows} status={status}\n")
        self._fh.close()


def _set_threads(requested: int) -> int:
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    threads = limit if requested <= 0 else min(requested, limit)
    numba.set_num_threads(threads)
    return threads


def _plan(command: str, cfg, out: Path, report):
    """(file name, header, row iterator) per output, plus optional side outputs."""
    if command == "gen-env":
        return [("envs.csv", ex.ENV_HEADER, lambda sinks: ex.gen_env(cfg, out))]
    if command == "cutoff":
        return [("mixing_profile.csv", ex.PROFILE_HEADER, None),
                ("cutoff.csv", ex.CUTOFF_HEADER, lambda sinks: ex.cutoff(cfg, sinks["mixing_profile.csv"].write))]
    if command == "rates":
        return [("rates.csv", ex.RATES_HEADER, lambda sinks: ex.rates(cfg, report))]
    if command == "regen":
        return [("regen.csv", ex.REGEN_HEADER, lambda sinks: ex.regen(cfg))]
    if command == "coupling":
        return [("coupling.csv", ex.COUPLING_HEADER, lambda sinks: ex.coupling(cfg))]
    if command == "concentration":
        return [("tails.csv", ex.TAILS_HEADER, lambda sinks: ex.concentration(cfg))]
    if command == "renewal":
        return [("renewal.csv", ex.RENEWAL_HEADER, lambda sinks: ex.renewal(cfg)),
                ("mineka.csv", ex.MINEKA_HEADER, lambda sinks: ex.mineka(cfg))]
    raise ConfigError(f"unknown command {command!r}")


COMMANDS = ("gen-env", "cutoff", "rates", "regen", "coupling", "concentration", "renewal")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twolift", description="Random two-lift experiments; CSV output only.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key = value file; omitted keys take their defaults")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", default=".", help="output directory (created if missing)")
    parser.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    return parser


def run(command: str, config: str | None, seed: int | None, out: str, threads: int | None,
        stream=sys.stderr) -> int:
    try:
        cfg = load_config(config)
        if seed is not None:
            cfg.seed = seed
        if threads is not None:
            cfg.threads = threads
        cfg.validate()
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stream)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: cannot use output directory: {exc}", file=stream)
        return EXIT_CONFIG

    used_threads = _set_threads(cfg.threads)
    lines: list[str] = []

    def report(message: str) -> None:
        lines.append(message)
        print(message, file=stream)

    start = time.perf_counter()
    sinks: dict[str, CsvSink] = {}
    status, code = "complete", EXIT_OK
    try:
        plan = _plan(command, cfg, out_dir, report)
        for name, header, _ in plan:
            sinks[name] = CsvSink(out_dir / name, header, cfg.config_hash())
        for name, _, rows in plan:
            if rows is None:
                continue
            for row in rows(sinks):
                sinks[name].write(row)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stream)
        status, code = "config-error", EXIT_CONFIG
    except Exception as exc:  # runtime failures keep the partial output
        print(f"runtime error: {type(exc).__name__}: {exc}", file=stream)
        status, code = "partial", EXIT_RUNTIME
    finally:
        for sink in sinks.values():
            sink.close(status)
    wall = time.perf_counter() - start
    manifest = [f"command = {command}", f"config_hash = {cfg.config_hash()}", f"version = {package_version()}",
                f"status = {status}", f"threads = {used_threads}", f"wall_seconds = {wall:.3f}"]
    manifest += [f"file = {name} rows={sink.rows}" for name, sink in sinks.items()]
    manifest += [f"check = {line}" for line in lines]
    (out_dir / "manifest.txt").write_text("\n".join(manifest) + "\n\n" + cfg.canonical())
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.seed, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
