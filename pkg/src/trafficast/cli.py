"""Command-line entry point.

Subcommands: synth (generate a source/target CSV family), train (source
bake-off producing checkpoints), transfer (one transfer run), evaluate
(checkpoint vs CSV), compare (the full standard-vs-transfer grid).

A config file of key=value lines can pre-set any flag of the chosen
subcommand; flags given on the command line take precedence. Exit codes:
0 success, 1 domain error, 2 usage error.
"""

import argparse
import sys
from pathlib import Path

from .errors import ManifestError, TrafficastError
from .estimator import SequenceForecaster
from .harness import (SourceReport, emit_report, run_source_experiment,
                      run_target_comparison, worker_count)
from .metrics import EvalResult, evaluate
from .models import ARCHS
from .pipeline import chronological_split, load_csv, make_windows, save_csv
from .synth import SynthConfig, generate, make_family
from .transfer import load_checkpoint, model_from_checkpoint


class UsageError(Exception):
    pass


def _add_common(p, *flags):
    if "window" in flags:
        p.add_argument("--window", type=int, default=12,
                       help="sliding window width (past samples per row)")
    if "hidden" in flags:
        p.add_argument("--hidden", type=int, default=64,
                       help="hidden state size of the recurrent cells")
    if "train-frac" in flags:
        p.add_argument("--train-frac", type=float, default=0.7,
                       help="chronological fraction of rows used for training")
    if "seed" in flags:
        p.add_argument("--seed", type=int, default=0,
                       help="master seed; fixes every metric output")
    if "out-dir" in flags:
        p.add_argument("--out-dir", required=True,
                       help="directory for emitted files")
    if "mape-epsilon" in flags:
        p.add_argument("--mape-epsilon", type=float, default=None,
                       help="skip MAPE terms with |actual| below this "
                            "(default: zero actuals are an error)")
    if "batch" in flags:
        p.add_argument("--batch", type=int, default=16,
                       help="minibatch size")
    p.add_argument("--config", default=None,
                   help="key=value file supplying flag defaults")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trafficast",
        description="Traffic forecasting: deep sequence models with "
                    "freeze/unfreeze transfer learning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic source/target CSV family")
    p.add_argument("--length", type=int, default=8563,
                   help="number of source samples")
    p.add_argument("--targets", type=int, default=4,
                   help="number of target series (0 for source only)")
    p.add_argument("--base-level", type=float, default=120.0,
                   help="mean traffic level")
    p.add_argument("--daily-amp", type=float, default=35.0,
                   help="daily seasonal amplitude")
    p.add_argument("--weekly-amp", type=float, default=12.0,
                   help="weekly seasonal amplitude")
    p.add_argument("--trend", type=float, default=0.0005,
                   help="linear trend per 5-minute step")
    p.add_argument("--noise-sd", type=float, default=4.0,
                   help="gaussian noise standard deviation")
    p.add_argument("--spike-rate", type=float, default=0.002,
                   help="per-step probability of a traffic spike")
    p.add_argument("--spike-scale", type=float, default=0.8,
                   help="maximum relative spike magnitude")
    p.add_argument("--variation-seed", type=int, default=None,
                   help="seed for target-family perturbations (default: --seed)")
    _add_common(p, "seed", "out-dir")

    p = sub.add_parser("train", help="source bake-off: train and rank all architectures")
    p.add_argument("--data", required=True, help="source series CSV")
    p.add_argument("--archs", default=",".join(ARCHS),
                   help="comma-separated architectures to train")
    p.add_argument("--epochs", type=int, default=100,
                   help="training epochs per architecture")
    p.add_argument("--lr", type=float, default=1e-3,
                   help="learning rate")
    _add_common(p, "window", "hidden", "train-frac", "seed", "out-dir",
                "mape-epsilon", "batch")

    p = sub.add_parser("transfer", help="one two-phase transfer run onto a target CSV")
    p.add_argument("--data", required=True, help="target series CSV")
    p.add_argument("--checkpoint", required=True, help="source checkpoint file")
    p.add_argument("--epochs", type=int, required=True,
                   help="total epochs (must exceed --freeze-epochs)")
    p.add_argument("--freeze-epochs", type=int, default=10,
                   help="phase-1 length with reused layers frozen")
    p.add_argument("--lr", type=float, default=1e-3,
                   help="phase-1 learning rate")
    p.add_argument("--finetune-lr", type=float, default=1e-4,
                   help="phase-2 learning rate after unfreezing")
    _add_common(p, "train-frac", "seed", "out-dir", "mape-epsilon", "batch")

    p = sub.add_parser("evaluate", help="score a checkpoint against a CSV")
    p.add_argument("--data", required=True, help="series CSV to evaluate on")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--arch", default=None, choices=ARCHS,
                   help="expected architecture (manifest error on mismatch)")
    p.add_argument("--expect-window", type=int, default=None,
                   help="expected window size (manifest error on mismatch)")
    p.add_argument("--expect-hidden", type=int, default=None,
                   help="expected hidden size (manifest error on mismatch)")
    p.add_argument("--out-dir", default=None,
                   help="optional directory for eval.csv")
    p.add_argument("--mape-epsilon", type=float, default=None,
                   help="skip MAPE terms with |actual| below this "
                        "(default: zero actuals are an error)")
    p.add_argument("--config", default=None,
                   help="key=value file supplying flag defaults")

    p = sub.add_parser("compare", help="full standard-vs-transfer comparison grid")
    p.add_argument("--targets", required=True,
                   help="comma-separated target CSV paths")
    p.add_argument("--checkpoint", required=True, help="source checkpoint file")
    p.add_argument("--epochs", default="50,100,150,200,250",
                   help="comma-separated epoch budgets")
    p.add_argument("--runs", type=int, default=5,
                   help="repetitions per grid cell, averaged")
    p.add_argument("--lr", type=float, default=1e-3,
                   help="standard-mode (and phase-1) learning rate")
    p.add_argument("--freeze-epochs", type=int, default=10,
                   help="phase-1 length with reused layers frozen")
    p.add_argument("--finetune-lr", type=float, default=1e-4,
                   help="phase-2 learning rate after unfreezing")
    p.add_argument("--timing", choices=("strict", "off"), default="strict",
                   help="strict: sequential runs with honest wall times; "
                        "off: allow the TRAFFICAST_THREADS worker pool")
    p.add_argument("--allow-partial", action="store_true",
                   help="record failing runs as error rows instead of aborting")
    p.add_argument("--source-report", default=None,
                   help="source_report.json to include in report.txt")
    _add_common(p, "train-frac", "seed", "out-dir", "mape-epsilon", "batch")

    return parser


def _load_config_file(path):
    entries = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def _apply_config(argv, parser):
    """Insert config-file entries as flags right after the subcommand, so
    explicit command-line flags (later tokens) win."""
    if "--config" not in " ".join(argv):
        return argv
    command = next((tok for tok in argv if not tok.startswith("-")), None)
    config_path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif tok.startswith("--config="):
            config_path = tok.split("=", 1)[1]
    if config_path is None or command is None:
        return argv
    entries = _load_config_file(config_path)
    subparser = _find_subparser(parser, command)
    if subparser is None:
        return argv
    known = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            known[opt.lstrip("-")] = action
    injected = []
    for key, value in entries.items():
        flag_key = key.replace("_", "-")
        action = known.get(flag_key)
        if action is None:
            raise UsageError(f"config file sets unknown flag {key!r} "
                             f"for subcommand {command!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                injected.append(f"--{flag_key}")
        else:
            injected.extend([f"--{flag_key}", value])
    at = argv.index(command) + 1
    return argv[:at] + injected + argv[at:]


def _find_subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(command)
    return None


def _print_resolved(args):
    print("resolved config:")
    for key in sorted(vars(args)):
        if key in ("command", "config"):
            continue
        print(f"  {key} = {getattr(args, key)}")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(seed=args.seed, length=args.length,
                      base_level=args.base_level, daily_amp=args.daily_amp,
                      weekly_amp=args.weekly_amp, trend_per_step=args.trend,
                      noise_sd=args.noise_sd, spike_rate=args.spike_rate,
                      spike_scale=args.spike_scale)
    variation = args.seed if args.variation_seed is None else args.variation_seed
    if args.targets >= 1:
        source, targets = make_family(cfg, n_targets=args.targets,
                                      variation_seed=variation)
    else:
        source, targets = generate(cfg, name="dataset_a"), []
    for series in [source, *targets]:
        path = out_dir / f"{series.name}.csv"
        save_csv(series, path)
        print(f"wrote {path} ({len(series)} samples)")
    return 0


def _cmd_train(args):
    series = load_csv(args.data)
    archs = [a.strip() for a in args.archs.split(",") if a.strip()]
    report = run_source_experiment(
        series, archs=archs, epochs=args.epochs, batch_size=args.batch,
        window=args.window, hidden=args.hidden, train_frac=args.train_frac,
        lr=args.lr, seed=args.seed, out_dir=args.out_dir,
        epsilon=args.mape_epsilon)
    out_dir = Path(args.out_dir)
    (out_dir / "source_report.json").write_text(report.to_json())
    emit_report(report, out_dir)
    print((out_dir / "report.txt").read_text())
    if any(row.error for row in report.rows):
        failing = [row.arch for row in report.rows if row.error]
        raise TrafficastError(f"train: architectures failed: {failing}")
    return 0


def _cmd_transfer(args):
    ckpt = load_checkpoint(args.checkpoint)
    series = load_csv(args.data)
    windows = make_windows(series, ckpt.spec.window)
    train_ds, test_ds = chronological_split(windows, args.train_frac)
    est = SequenceForecaster(
        arch=ckpt.spec.arch, window=ckpt.spec.window, hidden=ckpt.spec.hidden,
        epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
        seed=args.seed, source_checkpoint=ckpt,
        freeze_epochs=args.freeze_epochs, finetune_rate=args.finetune_lr)
    est.fit(train_ds.X, train_ds.y)
    result = evaluate(est.model_, test_ds, est.scaler_, epsilon=args.mape_epsilon)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "ckpt_transferred.tltp"
    est.to_checkpoint(ckpt_path, source_domain_name=series.name,
                      train_epochs=args.epochs,
                      extra_meta={"transferred_from": str(args.checkpoint)})
    est.history_.save_loss_csv(out_dir / "history.csv")
    with open(out_dir / "eval.csv", "w") as fh:
        fh.write(EvalResult.CSV_HEADER + "\n")
        fh.write(result.csv_row(dataset=series.name, model=ckpt.spec.arch,
                                mode="transfer", epochs=args.epochs, run=0) + "\n")
    print(f"transfer on {series.name}: accuracy {result.accuracy_percent:.2f}% "
          f"(MAPE {result.mape_percent:.2f}%), "
          f"train wall time {est.history_.wall_time_seconds:.2f}s")
    print(f"wrote {ckpt_path}")
    return 0


def _cmd_evaluate(args):
    ckpt = load_checkpoint(args.checkpoint)
    spec = ckpt.spec
    if args.arch is not None and args.arch != spec.arch:
        raise ManifestError(f"evaluate: checkpoint arch {spec.arch}, expected {args.arch}")
    if args.expect_window is not None and args.expect_window != spec.window:
        raise ManifestError(
            f"evaluate: checkpoint window {spec.window}, expected {args.expect_window}")
    if args.expect_hidden is not None and args.expect_hidden != spec.hidden:
        raise ManifestError(
            f"evaluate: checkpoint hidden {spec.hidden}, expected {args.expect_hidden}")
    model = model_from_checkpoint(ckpt)
    series = load_csv(args.data)
    windows = make_windows(series, spec.window)
    result = evaluate(model, windows, ckpt.scaler, epsilon=args.mape_epsilon)
    print(f"evaluate {series.name} with {spec.arch}: "
          f"accuracy {result.accuracy_percent:.4f}% "
          f"(MAPE {result.mape_percent:.4f}%, n_test {result.n_test}, "
          f"skipped {result.n_skipped})")
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "eval.csv", "w") as fh:
            fh.write(EvalResult.CSV_HEADER + "\n")
            fh.write(result.csv_row(dataset=series.name, model=spec.arch,
                                    mode="evaluate", epochs="", run=0) + "\n")
    return 0


def _cmd_compare(args):
    ckpt = load_checkpoint(args.checkpoint)
    target_paths = [p.strip() for p in args.targets.split(",") if p.strip()]
    if not target_paths:
        raise UsageError("compare: --targets needs at least one CSV path")
    targets = [load_csv(p) for p in target_paths]
    try:
        budgets = [int(b) for b in args.epochs.split(",") if b.strip()]
    except ValueError:
        raise UsageError(f"compare: bad --epochs value {args.epochs!r}")
    source_report = None
    if args.source_report:
        source_report = SourceReport.from_json(Path(args.source_report).read_text())
    report = run_target_comparison(
        targets, ckpt, epoch_grid=budgets, runs=args.runs,
        master_seed=args.seed, train_frac=args.train_frac,
        batch_size=args.batch, standard_lr=args.lr,
        freeze_epochs=args.freeze_epochs, finetune_rate=args.finetune_lr,
        timing=args.timing, workers=worker_count(),
        epsilon=args.mape_epsilon, allow_partial=args.allow_partial)
    emit_report(report, args.out_dir, source_report=source_report)
    print((Path(args.out_dir) / "report.txt").read_text())
    print(f"wrote {args.out_dir}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "transfer": _cmd_transfer,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(argv, parser)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        _print_resolved(args)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except TrafficastError as exc:
        command = next((tok for tok in argv if not tok.startswith("-")), "trafficast")
        print(f"error in {command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
