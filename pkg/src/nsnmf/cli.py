"""Command-line entry point: ``nsnmf <subcommand> [flags]``.

Settings are resolved as built-in defaults, then the subcommand's section of
an optional TOML ``--config`` file, then explicit flags. The resolved
settings are written next to the output as ``<output>.config.toml``; passing
that file back through ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, TextIO

import numpy as np

from .baselines import GnmfParams, SnmfParams, detect_baseline
from .core import HyperParams, flag_top_n
from .data import DataFormatError, normalize_minmax, read_table
from .evaluation import METHODS, BenchmarkParams, read_manifest, run_benchmark
from .evaluation import default_workers as benchmark_workers
from .offline import SgdSchedule, default_workers, detect_offline
from .online import LiveThreshold, OnlineNSNMF

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("nsnmf")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2


class InputError(Exception):
    """Bad flags, config or input data (exit code 1)."""


@dataclass(frozen=True)
class Option:
    key: str
    default: Any
    type: Callable
    help: str
    choices: tuple | None = None


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


_MODEL = [
    Option("k", 5, int, "number of latent groups K"),
    Option("alpha", 0.8, float, "weight of the data reconstruction term, in (0, 1]"),
    Option("gamma", 0.2, float, "Frobenius-norm regularisation weight"),
]
_SCHEDULE = [
    Option("seed", 0, int, "random seed"),
    Option("max_rounds", 500, int, "maximum optimisation rounds"),
    Option("tol", 1e-5, float, "relative objective change that counts as converged"),
    Option("eps0", 1e-3, float, "initial SGD step size"),
    Option("tau", 100.0, float, "step size decay: eps0 / (1 + t / tau)"),
]
_IO = [
    Option("input", None, str, "input CSV, one observation per row"),
    Option("output", None, str, "score CSV to write (default: standard output)"),
    Option("id_col", None, str, "name or index of an id column (omit for none)"),
    Option("top_n", 10, int, "number of observations to flag"),
    Option("normalize", False, bool, "min-max scale every column to [0, 1] first"),
]

OPTIONS: dict[str, list[Option]] = {
    "detect-offline": _IO + _MODEL + [Option("blocks", 2, int, "blocks per matrix side B")] + _SCHEDULE,
    "detect-online": [
        Option("input", None, str, "input CSV with rows in arrival order"),
        Option("stdin", False, bool, "read CSV rows from standard input instead of --input"),
        Option("output", None, str, "score CSV to write (default: standard output)"),
        Option("id_col", None, str, "name or index of an id column (omit for none)"),
        Option("buffer", 20, int, "buffer size z"),
        *_MODEL,
        Option("mode", "batch", str, "batch: flag top-N after the stream; live: running quantile threshold",
               ("batch", "live")),
        Option("top_n", 10, int, "observations flagged in batch mode"),
        Option("quantile", 0.99, float, "running quantile used by live mode"),
        Option("window", 1000, int, "number of recent scores behind the live quantile"),
        Option("warmup", 20, int, "scores seen before live mode flags anything"),
        Option("seed", 0, int, "random seed"),
    ],
    "baseline": [
        Option("method", "nmf", str, "baseline detector", ("nmf", "gnmf", "snmf")),
        *_IO,
        Option("k", 5, int, "number of latent groups K"),
        Option("lambda", 100.0, float, "GNMF graph regularisation weight"),
        Option("q", 5, int, "GNMF nearest neighbours"),
        Option("sigma", None, float, "SNMF Gaussian width (default: median pairwise distance)"),
        *_SCHEDULE,
    ],
    "benchmark": [
        Option("manifest", None, str, "TOML manifest listing the datasets"),
        Option("methods", ",".join(METHODS), str, "comma-separated detectors"),
        Option("seeds", "10", str, "seed count n (seeds 0..n-1) or a comma-separated list"),
        Option("out", None, str, "output directory"),
        *_MODEL,
        Option("blocks", 2, int, "blocks per matrix side B"),
        Option("buffer", 20, int, "online buffer size z"),
        Option("lambda", 100.0, float, "GNMF graph regularisation weight"),
        Option("q", 5, int, "GNMF nearest neighbours"),
        Option("sigma", None, float, "SNMF Gaussian width (default: median pairwise distance)"),
        *_SCHEDULE[1:],
    ],
}

REQUIRED = {"detect-offline": ("input",), "baseline": ("input",), "benchmark": ("manifest", "out")}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nsnmf", description="Anomaly detection by neighbourhood-structure-assisted NMF.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, options in OPTIONS.items():
        p = sub.add_parser(name, help=_SUMMARY[name], description=_SUMMARY[name])
        p.add_argument("--config", help="TOML file whose [%s] section supplies defaults" % name)
        for o in options:
            text = o.help if o.default is None else f"{o.help} (default: {o.default})"
            if o.type is bool:
                p.add_argument(_flag(o.key), dest=o.key, action="store_true", default=None, help=text)
            else:
                p.add_argument(_flag(o.key), dest=o.key, type=o.type, choices=o.choices, default=None,
                               metavar=o.key.upper(), help=text)
    return parser


_SUMMARY = {
    "detect-offline": "score a CSV with offline NS-NMF (block-parallel SGD)",
    "detect-online": "score a stream of rows with online NS-NMF",
    "baseline": "score a CSV with NMF, GNMF or SNMF",
    "benchmark": "precision at N and Friedman test over a dataset manifest",
}


def resolve_config(command: str, args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then the config file section, then flags given on the command line."""
    options = OPTIONS[command]
    cfg = {o.key: o.default for o in options}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None
        section = doc.get(command, {})
        by_key = {o.key: o for o in options}
        for key, value in section.items():
            key = key.replace("-", "_")
            if key not in by_key:
                raise InputError(f"{path}: unknown setting {key!r} in [{command}]")
            o = by_key[key]
            try:
                cfg[key] = None if value is None else (_bool(value) if o.type is bool else o.type(value))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}: bad value for {key}: {exc}") from None
            if o.choices and cfg[key] not in o.choices:
                raise InputError(f"{path}: {key} must be one of {', '.join(o.choices)}")
    for o in options:
        value = getattr(args, o.key, None)
        if value is not None:
            cfg[o.key] = value
    missing = [k for k in REQUIRED.get(command, ()) if cfg.get(k) is None]
    if missing:
        raise InputError(f"{command}: missing required setting(s): {', '.join(_flag(k) for k in missing)}")
    return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    s = str(v).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{s}"'


def config_to_toml(command: str, cfg: dict[str, Any]) -> str:
    lines = [f"[{command}]"]
    for key, value in cfg.items():
        if value is None:
            lines.append(f"# {key} unset")
        else:
            lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def write_sidecar(command: str, cfg: dict[str, Any], path: Path) -> None:
    """Store resolved settings with absolute paths so the file works from any directory."""
    cfg = dict(cfg)
    for key in ("input", "output", "manifest", "out"):
        if cfg.get(key):
            cfg[key] = str(Path(cfg[key]).resolve())
    path.write_text(config_to_toml(command, cfg))


def _id_col(value):
    if value is None:
        return None
    return int(value) if str(value).lstrip("-").isdigit() else value


def _load_matrix(cfg) -> tuple[np.ndarray, list[str]]:
    path = Path(cfg["input"])
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    try:
        table = read_table(path, id_col=_id_col(cfg.get("id_col")))
    except DataFormatError as exc:
        raise InputError(f"{path}: {exc}") from None
    X = normalize_minmax(table.values) if cfg.get("normalize") else table.values
    if np.any(X < 0):
        raise InputError(f"{path}: negative values; pass --normalize to rescale to [0, 1]")
    return X, table.row_ids


def _schedule(cfg) -> SgdSchedule:
    return SgdSchedule(cfg["eps0"], cfg["tau"], cfg["max_rounds"], cfg["tol"], cfg["seed"])


def _emit(text: str, cfg, command: str) -> None:
    if cfg.get("output"):
        out = Path(cfg["output"])
        out.write_text(text)
        write_sidecar(command, cfg, out.with_name(out.name + ".config.toml"))
    else:
        sys.stdout.write(text)


def cmd_detect_offline(cfg) -> None:
    A, ids = _load_matrix(cfg)
    h = HyperParams(k=cfg["k"], alpha=cfg["alpha"], gamma=cfg["gamma"], blocks=cfg["blocks"], top_n=cfg["top_n"])
    report = detect_offline(A, h, _schedule(cfg), row_ids=ids, workers=default_workers())
    _emit(report.to_csv(), cfg, "detect-offline")


def cmd_baseline(cfg) -> None:
    A, ids = _load_matrix(cfg)
    report = detect_baseline(A, cfg["method"], cfg["top_n"], cfg["k"], _schedule(cfg),
                             GnmfParams(lam=cfg["lambda"], q=cfg["q"]), SnmfParams(cfg["sigma"]), ids)
    _emit(report.to_csv(), cfg, "baseline")


def _stream_rows(cfg) -> tuple[TextIO, bool]:
    if cfg["stdin"]:
        if cfg.get("input"):
            raise InputError("use either --input or --stdin, not both")
        return sys.stdin, False
    if not cfg.get("input"):
        raise InputError("detect-online needs --input or --stdin")
    path = Path(cfg["input"])
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    return open(path, newline=""), True


def _parse_rows(fh: TextIO, id_col):
    """Yield ``(row_id, values)`` per CSV line; a non-numeric first line is a header."""
    reader = csv.reader(fh)
    columns = None
    id_idx = None
    count = 0
    for line, row in enumerate(reader, start=1):
        if not row or not any(c.strip() for c in row):
            continue
        if columns is None:
            columns = [c.strip() for c in row]
            if id_col is not None:
                if isinstance(id_col, int):
                    id_idx = id_col % len(row)
                elif id_col in columns:
                    id_idx = columns.index(id_col)
                else:
                    raise InputError(f"line {line}: no column named {id_col!r}")
            cells = [c for i, c in enumerate(columns) if i != id_idx]
            try:
                [float(c) for c in cells]
            except ValueError:
                continue  # header line
        values = []
        for i, c in enumerate(row):
            if i == id_idx:
                continue
            try:
                v = float(c)
            except ValueError:
                raise InputError(f"line {line}: non-numeric value {c.strip()!r}") from None
            if not np.isfinite(v):
                raise InputError(f"line {line}: missing or non-finite value")
            values.append(v)
        rid = row[id_idx].strip() if id_idx is not None else str(count)
        count += 1
        yield line, rid, np.array(values)


def cmd_detect_online(cfg) -> None:
    fh, close = _stream_rows(cfg)
    out = open(cfg["output"], "w", newline="") if cfg.get("output") else sys.stdout
    try:
        _run_online(cfg, fh, out)
    finally:
        if close:
            fh.close()
        if out is not sys.stdout:
            out.close()
    if cfg.get("output"):
        out_path = Path(cfg["output"])
        write_sidecar("detect-online", cfg, out_path.with_name(out_path.name + ".config.toml"))


def _run_online(cfg, fh: TextIO, out: TextIO) -> None:
    live = cfg["mode"] == "live"
    threshold = LiveThreshold(cfg["quantile"], cfg["window"], cfg["warmup"]) if live else None
    writer = csv.writer(out, lineterminator="\n")
    det = None
    ids: list[str] = []
    if live:
        writer.writerow(["row_id", "score", "flagged"])
    for line, rid, a in _parse_rows(fh, _id_col(cfg.get("id_col"))):
        if det is None:
            det = OnlineNSNMF(len(a), k=cfg["k"], alpha=cfg["alpha"], buffer=cfg["buffer"],
                              gamma=cfg["gamma"], seed=cfg["seed"])
        try:
            before = len(det.scores)
            det.ingest(a)
        except ValueError as exc:
            raise InputError(f"line {line}: {exc}") from None
        ids.append(rid)
        if live:
            for idx in range(before, len(det.scores)):
                s = det.scores[idx]
                writer.writerow([ids[idx], f"{s:.17g}", int(threshold.update(s))])
            out.flush()
    if det is None:
        raise InputError("no observations in the stream")
    if len(det.scores) < len(ids):
        raise InputError(f"stream of {len(ids)} rows is shorter than the buffer size {cfg['buffer']}")
    if not live:
        out.write(flag_top_n(det.scores, cfg["top_n"], ids).to_csv())


def _parse_seeds(text: str) -> list[int]:
    text = str(text).strip()
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        n = int(text)
    except ValueError:
        raise InputError(f"--seeds must be a count or a comma-separated list, got {text!r}") from None
    if n < 1:
        raise InputError("--seeds count must be >= 1")
    return list(range(n))


def cmd_benchmark(cfg) -> None:
    manifest = Path(cfg["manifest"])
    if not manifest.is_file():
        raise InputError(f"manifest not found: {manifest}")
    methods = [m.strip() for m in cfg["methods"].split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise InputError(f"unknown method(s) {', '.join(unknown)}; choose from {', '.join(METHODS)}")
    try:
        entries = read_manifest(manifest)
        for e in entries:
            if not e.path.is_file():
                raise InputError(f"dataset {e.name!r}: file not found: {e.path}")
        datasets = [e.load() for e in entries]
    except (DataFormatError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"{manifest}: {exc}") from None
    params = BenchmarkParams(
        HyperParams(k=cfg["k"], alpha=cfg["alpha"], gamma=cfg["gamma"], blocks=cfg["blocks"], buffer=cfg["buffer"]),
        SgdSchedule(cfg["eps0"], cfg["tau"], cfg["max_rounds"], cfg["tol"]),
        GnmfParams(lam=cfg["lambda"], q=cfg["q"]),
        SnmfParams(cfg["sigma"]),
    )
    out = Path(cfg["out"])
    report = run_benchmark(datasets, methods, params, _parse_seeds(cfg["seeds"]), out,
                           workers=benchmark_workers())
    write_sidecar("benchmark", cfg, out / "config.toml")
    failed = [r for r in report.runs if r.error]
    if failed:
        log.warning("%d of %d runs failed; see runs.csv", len(failed), len(report.runs))
    if report.friedman is not None:
        print(f"Friedman chi2 = {report.friedman.statistic:.6g}, p = {report.friedman.p_value:.6g}")
    if failed and len(failed) == len(report.runs):
        raise RuntimeError("every benchmark run failed")


COMMANDS = {
    "detect-offline": cmd_detect_offline,
    "detect-online": cmd_detect_online,
    "baseline": cmd_baseline,
    "benchmark": cmd_benchmark,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except InputError as exc:
        print(f"nsnmf: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        COMMANDS[args.command](cfg)
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except (InputError, DataFormatError, FileNotFoundError) as exc:
        print(f"nsnmf: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"nsnmf: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:
        print(f"nsnmf: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
