"""Two-stage experiment runner: the source-model bake-off and the
standard-vs-transfer comparison grid, with repeated seeded runs, sequential
timing, and plain-text / CSV report emission.

Per-run seeds derive from the master seed by hashing the run coordinates, so
any cell is reproducible in isolation. Raw accuracy CSVs are byte-stable
across invocations; wall-clock measurements live in separate timing files.
"""

import hashlib
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigError, TrafficastError
from .estimator import SequenceForecaster
from .metrics import evaluate
from .models import ARCHS
from .pipeline import chronological_split, make_windows
from .transfer import DEFAULT_FREEZE_EPOCHS, PHASE2_LR

DEFAULT_EPOCH_GRID = (50, 100, 150, 200, 250)
DEFAULT_RUNS = 5
MODES = ("standard", "transfer")


def derive_seed(master_seed, *parts):
    """Stable 63-bit seed from the master seed and run coordinates."""
    key = "|".join([str(master_seed), *(str(p) for p in parts)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % (2 ** 63)


def worker_count():
    """Untimed worker pool size from TRAFFICAST_THREADS; default 1."""
    raw = os.environ.get("TRAFFICAST_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"TRAFFICAST_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"TRAFFICAST_THREADS must be >= 1, got {n}")
    return n


# ---------------------------------------------------------------------------
# source bake-off


@dataclass
class SourceRow:
    arch: str
    accuracy: float = None
    mape: float = None
    wall_time_s: float = None
    checkpoint: str = ""
    error: str = ""


@dataclass
class SourceReport:
    rows: list
    config: dict

    def to_json(self):
        return json.dumps({"config": self.config,
                           "rows": [vars(r) for r in self.rows]}, indent=2)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        return cls(rows=[SourceRow(**r) for r in raw["rows"]], config=raw["config"])


def _order_archs(archs):
    requested = list(ARCHS) if archs is None else list(archs)
    unknown = [a for a in requested if a not in ARCHS]
    if unknown:
        raise ConfigError(f"unknown architectures {unknown}; expected {ARCHS}")
    return [a for a in ARCHS if a in requested]


def run_source_experiment(series, archs=None, epochs=100, batch_size=16,
                          window=12, hidden=64, train_frac=0.7, lr=1e-3,
                          seed=0, out_dir=None, epsilon=None):
    """Scale, window, split, train and evaluate each architecture on the
    source series; one checkpoint per architecture when out_dir is given.

    A failing architecture produces an error row instead of aborting the rest.
    """
    ordered = _order_archs(archs)
    windows = make_windows(series, window)
    train_ds, test_ds = chronological_split(windows, train_frac)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for arch in ordered:
        try:
            est = SequenceForecaster(
                arch=arch, window=window, hidden=hidden, epochs=epochs,
                batch_size=batch_size, learning_rate=lr,
                seed=derive_seed(seed, "source", arch))
            est.fit(train_ds.X, train_ds.y)
            result = evaluate(est.model_, test_ds, est.scaler_, epsilon=epsilon)
            ckpt_path = ""
            if out_dir is not None:
                ckpt_path = str(out_dir / f"ckpt_{arch.lower()}.tltp")
                est.to_checkpoint(ckpt_path, source_domain_name=series.name,
                                  train_epochs=epochs)
            rows.append(SourceRow(arch=arch, accuracy=result.accuracy_percent,
                                  mape=result.mape_percent,
                                  wall_time_s=est.history_.wall_time_seconds,
                                  checkpoint=ckpt_path))
        except TrafficastError as exc:
            rows.append(SourceRow(arch=arch, error=str(exc)))
    config = {"series": series.name, "n_values": len(series), "epochs": epochs,
              "batch_size": batch_size, "window": window, "hidden": hidden,
              "train_frac": train_frac, "lr": lr, "seed": seed}
    return SourceReport(rows=rows, config=config)


# ---------------------------------------------------------------------------
# target comparison grid


@dataclass
class RunRecord:
    dataset: str
    model: str
    mode: str
    epochs: int
    run: int
    seed: int
    accuracy: float
    mape: float
    wall_time_s: float
    final_loss: float
    loss_curve: list
    started: float
    ended: float
    error: str = ""


@dataclass
class ComparisonReport:
    """epochs x {standard, transfer} grid over datasets, with raw per-run values."""

    model: str
    datasets: list
    budgets: list
    runs: int
    master_seed: int
    timing_mode: str
    records: list
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self._cells = {}
        for rec in self.records:
            self._cells.setdefault((rec.dataset, rec.epochs, rec.mode), []).append(rec)

    def cell(self, dataset, budget, mode):
        return self._cells.get((dataset, budget, mode), [])

    def mean_accuracy(self, dataset, budget, mode):
        values = [r.accuracy for r in self.cell(dataset, budget, mode) if not r.error]
        return float(np.mean(values)) if values else float("nan")

    def mean_time(self, dataset, budget, mode):
        values = [r.wall_time_s for r in self.cell(dataset, budget, mode) if not r.error]
        return float(np.mean(values)) if values else float("nan")

    def check_complete(self):
        missing = []
        for ds in self.datasets:
            for budget in self.budgets:
                for mode in MODES:
                    cell = [r for r in self.cell(ds, budget, mode) if not r.error]
                    if len(cell) != self.runs:
                        missing.append((ds, budget, mode, len(cell)))
        if missing:
            raise ConfigError(f"incomplete comparison grid: {missing}")

    def overlapped_cells(self):
        """Cells containing a run whose training interval intersected any other run's."""
        spans = [(r.started, r.ended, (r.dataset, r.epochs, r.mode))
                 for r in self.records if not r.error]
        flagged = set()
        spans.sort()
        for (s0, e0, k0), (s1, e1, k1) in zip(spans, spans[1:]):
            if s1 < e0:
                flagged.add(k0)
                flagged.add(k1)
        return flagged


def _comparison_run(args):
    (series, ckpt, mode, budget, run_idx, seed, train_frac, batch_size,
     standard_lr, freeze_epochs, finetune_rate, epsilon) = args
    spec = ckpt.spec
    windows = make_windows(series, spec.window)
    train_ds, test_ds = chronological_split(windows, train_frac)
    common = dict(arch=spec.arch, window=spec.window, hidden=spec.hidden,
                  epochs=budget, batch_size=batch_size, seed=seed,
                  learning_rate=standard_lr)
    if mode == "transfer":
        est = SequenceForecaster(source_checkpoint=ckpt,
                                 freeze_epochs=freeze_epochs,
                                 finetune_rate=finetune_rate, **common)
    else:
        est = SequenceForecaster(**common)
    started = time.monotonic()
    est.fit(train_ds.X, train_ds.y)
    ended = time.monotonic()
    result = evaluate(est.model_, test_ds, est.scaler_, epsilon=epsilon)
    history = est.history_
    return RunRecord(
        dataset=series.name, model=spec.arch, mode=mode, epochs=budget,
        run=run_idx, seed=seed, accuracy=result.accuracy_percent,
        mape=result.mape_percent, wall_time_s=history.wall_time_seconds,
        final_loss=history.per_epoch_loss[-1],
        loss_curve=list(history.per_epoch_loss),
        started=started, ended=ended)


def run_target_comparison(targets, ckpt, epoch_grid=DEFAULT_EPOCH_GRID,
                          runs=DEFAULT_RUNS, master_seed=0, train_frac=0.7,
                          batch_size=16, standard_lr=1e-3,
                          freeze_epochs=DEFAULT_FREEZE_EPOCHS,
                          finetune_rate=PHASE2_LR, timing="strict",
                          workers=None, epsilon=None, allow_partial=False):
    """The full grid: every (dataset, epoch budget, mode) cell gets `runs`
    independent seeded runs. Standard mode trains from scratch at the
    phase-1 rate throughout; transfer mode follows the two-phase protocol.

    With timing="strict" runs execute strictly sequentially so wall times are
    honest; timing="off" allows a process pool (TRAFFICAST_THREADS).
    """
    if timing not in ("strict", "off"):
        raise ConfigError(f"timing must be 'strict' or 'off', got {timing!r}")
    if runs < 1:
        raise ConfigError(f"runs must be >= 1, got {runs}")
    budgets = sorted(set(int(b) for b in epoch_grid), reverse=True)
    if workers is None:
        workers = worker_count()
    if timing == "strict":
        workers = 1

    tasks = []
    for series in targets:
        for budget in budgets:
            for mode in MODES:
                for run_idx in range(runs):
                    seed = derive_seed(master_seed, series.name, budget, mode, run_idx)
                    tasks.append((series, ckpt, mode, budget, run_idx, seed,
                                  train_frac, batch_size, standard_lr,
                                  freeze_epochs, finetune_rate, epsilon))

    records = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = list(pool.map(_comparison_run, tasks))
        records.extend(futures)
    else:
        for task in tasks:
            try:
                records.append(_comparison_run(task))
            except TrafficastError as exc:
                if not allow_partial:
                    raise
                series, _, mode, budget, run_idx, seed = task[:6]
                records.append(RunRecord(
                    dataset=series.name, model=ckpt.spec.arch, mode=mode,
                    epochs=budget, run=run_idx, seed=seed, accuracy=float("nan"),
                    mape=float("nan"), wall_time_s=float("nan"),
                    final_loss=float("nan"), loss_curve=[],
                    started=0.0, ended=0.0, error=str(exc)))

    report = ComparisonReport(
        model=ckpt.spec.arch, datasets=[s.name for s in targets],
        budgets=budgets, runs=runs, master_seed=master_seed,
        timing_mode=timing, records=records,
        config={"train_frac": train_frac, "batch_size": batch_size,
                "standard_lr": standard_lr, "freeze_epochs": freeze_epochs,
                "finetune_rate": finetune_rate, "window": ckpt.spec.window,
                "hidden": ckpt.spec.hidden, "workers": workers})
    if not allow_partial:
        report.check_complete()
    return report


# ---------------------------------------------------------------------------
# report emission


def _fmt(value, width=9):
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return "-".rjust(width)
    return f"{value:.2f}".rjust(width)


def render_source_text(source):
    lines = ["Performance summary, source domain",
             f"{'Model':<18}{'Accuracy (%)':>14}"]
    for row in source.rows:
        if row.error:
            lines.append(f"{row.arch:<18}{'ERROR':>14}  {row.error}")
        else:
            lines.append(f"{row.arch:<18}{row.accuracy:>14.2f}")
    return "\n".join(lines) + "\n"


def render_comparison_text(report):
    block_w = 4 * 10 + 2
    head = (f"Target domain, standard vs transfer learning "
            f"(model {report.model}, {report.runs} runs, timing {report.timing_mode})")
    overlapped = report.overlapped_cells()
    lines = [head, ""]
    row = f"{'':<8}"
    for ds in report.datasets:
        row += f"| {('Dataset ' + ds):<{block_w}}"
    lines.append(row)
    row = f"{'':<8}"
    for _ in report.datasets:
        row += f"| {'Standard':<20}{'Transfer':<20}  "
    lines.append(row)
    row = f"{'Epoch':<8}"
    for _ in report.datasets:
        row += ("| " + f"{'Acc(%)':>9}{'Time(s)':>10}" * 2 + "  ")
    lines.append(row)
    for budget in report.budgets:
        row = f"{budget:<8}"
        for ds in report.datasets:
            cells = []
            for mode in MODES:
                acc = report.mean_accuracy(ds, budget, mode)
                sec = report.mean_time(ds, budget, mode)
                flag = "*" if (ds, budget, mode) in overlapped else ""
                cells.append(_fmt(acc) + _fmt(sec, 10) + flag)
            row += "| " + "".join(c.ljust(20) for c in cells) + "  "
        lines.append(row)
    if overlapped:
        lines.append("")
        lines.append("* cell contains runs whose training intervals overlapped")
    return "\n".join(lines) + "\n"


def emit_report(report, out_dir, source_report=None):
    """Write report.txt, raw/plot CSVs and the metadata sidecar.

    Accuracy files are a pure function of the report object; wall-clock data
    goes to timing_runs.csv / plot_time_*.csv and the only file carrying a
    fresh timestamp is meta.txt.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(report, SourceReport) and source_report is None:
        report, source_report = None, report
    written = []

    text_parts = []
    if source_report is not None:
        text_parts.append(render_source_text(source_report))
    if report is not None:
        text_parts.append(render_comparison_text(report))
    path = out_dir / "report.txt"
    path.write_text("\n".join(text_parts))
    written.append(path)

    if report is not None:
        ordered = sorted(
            report.records,
            key=lambda r: (report.datasets.index(r.dataset),
                           -r.epochs, MODES.index(r.mode), r.run))
        path = out_dir / "raw_runs.csv"
        with open(path, "w") as fh:
            fh.write("dataset,model,mode,epochs,run,accuracy,mape\n")
            for r in ordered:
                fh.write(f"{r.dataset},{r.model},{r.mode},{r.epochs},{r.run},"
                         f"{r.accuracy!r},{r.mape!r}\n")
        written.append(path)

        path = out_dir / "timing_runs.csv"
        with open(path, "w") as fh:
            fh.write("dataset,model,mode,epochs,run,wall_time_s\n")
            for r in ordered:
                fh.write(f"{r.dataset},{r.model},{r.mode},{r.epochs},{r.run},"
                         f"{r.wall_time_s!r}\n")
        written.append(path)

        for ds in report.datasets:
            acc_path = out_dir / f"plot_acc_{ds}.csv"
            with open(acc_path, "w") as fh:
                fh.write("epochs,standard_acc,transfer_acc\n")
                for budget in sorted(report.budgets):
                    fh.write(f"{budget},{report.mean_accuracy(ds, budget, 'standard')!r},"
                             f"{report.mean_accuracy(ds, budget, 'transfer')!r}\n")
            time_path = out_dir / f"plot_time_{ds}.csv"
            with open(time_path, "w") as fh:
                fh.write("epochs,standard_time,transfer_time\n")
                for budget in sorted(report.budgets):
                    fh.write(f"{budget},{report.mean_time(ds, budget, 'standard')!r},"
                             f"{report.mean_time(ds, budget, 'transfer')!r}\n")
            written.extend([acc_path, time_path])

    from . import __version__
    meta_lines = [
        f"trafficast_version={__version__}",
        f"python={platform.python_version()}",
        f"numpy={np.__version__}",
        f"platform={platform.platform()}",
        f"created={datetime.now(timezone.utc).isoformat()}",
    ]
    if report is not None:
        meta_lines += [f"master_seed={report.master_seed}",
                       f"timing={report.timing_mode}",
                       f"runs={report.runs}",
                       f"config={json.dumps(report.config, sort_keys=True)}"]
    if source_report is not None:
        meta_lines.append(f"source_config={json.dumps(source_report.config, sort_keys=True)}")
    path = out_dir / "meta.txt"
    path.write_text("\n".join(meta_lines) + "\n")
    written.append(path)
    return written
