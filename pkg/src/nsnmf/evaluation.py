"""Benchmark harness: labelled datasets, precision at N, rank aggregation and the Friedman test."""

from __future__ import annotations

import csv
import logging
import os
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gammaincc
from scipy.stats import rankdata

from .baselines import GnmfParams, SnmfParams, detect_baseline
from .core import AnomalyReport, HyperParams
from .data import DataFormatError, normalize_minmax, read_table
from .offline import SgdSchedule, detect_offline
from .online import detect_online

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

METHODS = ("ns-nmf", "ns-nmf-online", "nmf", "gnmf", "snmf")


@dataclass
class LabeledDataset:
    name: str
    data: np.ndarray
    labels: np.ndarray
    row_ids: list[str] | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.data.shape[0] != len(self.labels):
            raise ValueError("one label per observation required")
        if self.n_anomalies < 1:
            raise ValueError(f"dataset {self.name!r} has no labelled anomalies")

    @property
    def n_anomalies(self) -> int:
        return int(self.labels.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def load_csv(path: str | PathLike, label_col="label", id_col=None, normalize: bool = False,
             name: str | None = None, header: bool | None = None) -> LabeledDataset:
    """Read a labelled CSV; ``normalize`` rescales every attribute to ``[0, 1]``."""
    table = read_table(path, id_col=id_col, label_col=label_col, header=header)
    X = normalize_minmax(table.values) if normalize else table.values
    return LabeledDataset(name or Path(path).stem, X, table.labels, table.row_ids)


def true_positives(report: AnomalyReport, labels) -> int:
    return int(np.asarray(labels, dtype=bool)[report.flagged].sum())


def precision_at_n(report: AnomalyReport, labels) -> float:
    """Share of true anomalies among the ``N`` flagged rows."""
    return true_positives(report, labels) / report.top_n


def implied_false_alarms(report: AnomalyReport, labels) -> int:
    return report.top_n - true_positives(report, labels)


@dataclass
class RankMatrix:
    """Per-dataset ranks (1 = best) of each method, ties averaged."""

    ranks: np.ndarray
    datasets: list[str] = field(default_factory=list)
    methods: list[str] = field(default_factory=list)

    @property
    def n_datasets(self) -> int:
        return self.ranks.shape[0]

    @property
    def n_methods(self) -> int:
        return self.ranks.shape[1]

    @property
    def mean_ranks(self) -> np.ndarray:
        return self.ranks.mean(axis=0)


def rank_methods(table, datasets: Sequence[str] | None = None, methods: Sequence[str] | None = None,
                 higher_is_better: bool = True) -> RankMatrix:
    """Rank the methods within each dataset row of a performance table."""
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or np.any(np.isnan(table)):
        raise ValueError("performance table must be a complete 2-D array")
    signed = -table if higher_is_better else table
    ranks = np.vstack([rankdata(row, method="average") for row in signed])
    return RankMatrix(ranks, list(datasets or []), list(methods or []))


@dataclass(frozen=True)
class FriedmanResult:
    statistic: float
    p_value: float
    dof: int
    tie_correction: float


def chi2_sf(x: float, dof: int) -> float:
    """Upper tail of the chi-squared distribution via the regularised incomplete gamma function."""
    return float(gammaincc(dof / 2.0, x / 2.0)) if x > 0 else 1.0


def friedman_statistic(ra: RankMatrix, tie_correction: bool = True) -> FriedmanResult:
    """Friedman chi-squared statistic of a rank matrix and its p-value.

    ``12 n_d / (n_a (n_a + 1)) * (sum_l mean_rank_l^2 - n_a (n_a + 1)^2 / 4)``
    with ``n_a - 1`` degrees of freedom. When rows contain tied ranks the
    statistic is divided by the usual tie correction
    ``1 - sum(t^3 - t) / (n_d n_a (n_a^2 - 1))``; pass
    ``tie_correction=False`` for the plain formula.
    """
    R = np.asarray(ra.ranks, dtype=np.float64)
    n_d, n_a = R.shape
    if n_a < 2 or n_d < 2:
        raise ValueError("need at least two methods and two datasets")
    means = R.mean(axis=0)
    chi = 12.0 * n_d / (n_a * (n_a + 1)) * (np.sum(means**2) - n_a * (n_a + 1) ** 2 / 4.0)
    c = 1.0
    if tie_correction:
        ties = 0.0
        for row in R:
            _, counts = np.unique(row, return_counts=True)
            ties += float(np.sum(counts**3 - counts))
        c = 1.0 - ties / (n_d * n_a * (n_a * n_a - 1))
        if c <= 0:
            # every row fully tied: no evidence against the null
            return FriedmanResult(0.0, 1.0, n_a - 1, c)
        chi /= c
    chi = max(float(chi), 0.0)
    return FriedmanResult(chi, chi2_sf(chi, n_a - 1), n_a - 1, c)


# -- benchmark -----------------------------------------------------------------

@dataclass
class DatasetEntry:
    name: str
    path: Path
    label_col: str | int = "label"
    id_col: str | int | None = None
    normalize: bool = True

    def load(self) -> LabeledDataset:
        return load_csv(self.path, self.label_col, self.id_col, self.normalize, self.name)


def read_manifest(path: str | PathLike) -> list[DatasetEntry]:
    """Dataset manifest in TOML::

        [datasets.wbc]
        path = "wbc.csv"          # relative to the manifest
        label_column = "label"
        id_column = "id"          # optional
        normalize = true
    """
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    entries = []
    for name, spec in doc.get("datasets", {}).items():
        if "path" not in spec:
            raise DataFormatError(f"manifest entry {name!r} has no path")
        p = Path(spec["path"])
        entries.append(DatasetEntry(
            name, p if p.is_absolute() else path.parent / p,
            spec.get("label_column", "label"), spec.get("id_column"), bool(spec.get("normalize", True)),
        ))
    if not entries:
        raise DataFormatError(f"{path}: no [datasets.*] entries")
    return entries


@dataclass
class BenchmarkParams:
    hyper: HyperParams = HyperParams()
    schedule: SgdSchedule = SgdSchedule()
    gnmf: GnmfParams = GnmfParams()
    snmf: SnmfParams = SnmfParams()


@dataclass
class RunResult:
    dataset: str
    method: str
    seed: int
    true_positives: int | None
    n_top: int
    error: str | None = None


def run_detector(ds: LabeledDataset, method: str, params: BenchmarkParams, seed: int) -> AnomalyReport:
    """One detector on one dataset with ``N = |O|``."""
    n_top = ds.n_anomalies
    h = params.hyper
    hp = HyperParams(k=h.k, alpha=h.alpha, gamma=h.gamma, blocks=min(h.blocks, *ds.shape),
                     top_n=n_top, buffer=h.buffer)
    s = params.schedule
    schedule = SgdSchedule(s.eps0, s.tau, s.max_rounds, s.tol, seed)
    if method == "ns-nmf":
        return detect_offline(ds.data, hp, schedule, ds.row_ids)
    if method == "ns-nmf-online":
        return detect_online(ds.data, hp, seed=seed, row_ids=ds.row_ids)
    if method in ("nmf", "gnmf", "snmf"):
        return detect_baseline(ds.data, method, n_top, hp.k, schedule, params.gnmf, params.snmf, ds.row_ids)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class BenchmarkReport:
    datasets: list[str]
    methods: list[str]
    runs: list[RunResult]
    counts: np.ndarray       # median over seeds, NaN when every seed failed
    counts_min: np.ndarray
    counts_max: np.ndarray
    n_anomalies: list[int]
    ranks: RankMatrix | None
    friedman: FriedmanResult | None


def run_benchmark(datasets: Sequence[DatasetEntry | LabeledDataset], methods: Sequence[str] = METHODS,
                  params: BenchmarkParams = BenchmarkParams(), seeds: Sequence[int] = (0,),
                  out_dir: str | PathLike | None = None, workers: int = 1) -> BenchmarkReport:
    """Run every (dataset, method, seed) combination and aggregate.

    Counts are medians over seeds. A failing run is logged and recorded with
    its error; the remaining runs continue. When ``out_dir`` is given it
    receives ``counts.csv``, ``ranks.csv``, ``friedman.txt``, ``runs.csv``
    and one score CSV per run under ``scores/``.
    """
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    loaded = [d if isinstance(d, LabeledDataset) else d.load() for d in datasets]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "scores").mkdir(parents=True, exist_ok=True)

    jobs = [(ds, m, s) for ds in loaded for m in methods for s in seeds]

    def run(job):
        ds, m, s = job
        try:
            report = run_detector(ds, m, params, s)
        except Exception as exc:
            logger.error("run %s/%s/seed %d failed: %s", ds.name, m, s, exc)
            return RunResult(ds.name, m, s, None, ds.n_anomalies,
                             "".join(traceback.format_exception_only(type(exc), exc)).strip())
        if out is not None:
            report.to_csv(out / "scores" / f"{ds.name}__{m}__seed{s}.csv")
        return RunResult(ds.name, m, s, true_positives(report, ds.labels), ds.n_anomalies)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run, jobs))
    else:
        runs = [run(j) for j in jobs]

    names = [d.name for d in loaded]
    shape = (len(names), len(methods))
    med, lo, hi = np.full(shape, np.nan), np.full(shape, np.nan), np.full(shape, np.nan)
    for a, name in enumerate(names):
        for b, m in enumerate(methods):
            tp = [r.true_positives for r in runs if r.dataset == name and r.method == m and r.error is None]
            if tp:
                med[a, b], lo[a, b], hi[a, b] = np.median(tp), min(tp), max(tp)

    complete = ~np.any(np.isnan(med), axis=1)
    ranks = friedman = None
    if complete.any():
        ranks = rank_methods(med[complete], [n for n, c in zip(names, complete) if c], list(methods))
        if ranks.n_datasets >= 2 and ranks.n_methods >= 2:
            friedman = friedman_statistic(ranks)
    report = BenchmarkReport(names, list(methods), runs, med, lo, hi,
                             [d.n_anomalies for d in loaded], ranks, friedman)
    if out is not None:
        write_benchmark(report, out)
    return report


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else f"{v:g}"


def write_benchmark(report: BenchmarkReport, out: Path) -> None:
    with open(out / "counts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", *report.methods, *(f"{m}_min" for m in report.methods),
                    *(f"{m}_max" for m in report.methods), "total_anomalies"])
        for a, name in enumerate(report.datasets):
            w.writerow([name, *map(_fmt, report.counts[a]), *map(_fmt, report.counts_min[a]),
                        *map(_fmt, report.counts_max[a]), report.n_anomalies[a]])
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "method", "seed", "true_positives", "n_top", "error"])
        for r in report.runs:
            w.writerow([r.dataset, r.method, r.seed, "" if r.true_positives is None else r.true_positives,
                        r.n_top, r.error or ""])
    with open(out / "ranks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", *report.methods])
        if report.ranks is not None:
            for name, row in zip(report.ranks.datasets, report.ranks.ranks):
                w.writerow([name, *(f"{v:g}" for v in row)])
            w.writerow(["mean", *(f"{v:.4g}" for v in report.ranks.mean_ranks)])
    with open(out / "friedman.txt", "w") as fh:
        f = report.friedman
        if f is None:
            fh.write("not applicable: needs at least two complete datasets and two methods\n")
        else:
            fh.write(f"chi_squared = {f.statistic:.10g}\n")
            fh.write(f"dof = {f.dof}\n")
            fh.write(f"p_value = {f.p_value:.10g}\n")
            fh.write(f"tie_correction = {f.tie_correction:.10g}\n")


def default_workers() -> int:
    env = os.environ.get("NSNMF_THREADS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)
