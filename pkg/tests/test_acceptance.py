"""Acceptance criteria, one test per criterion.

Each test prints one `ACCEPTANCE <n> PASS|FAIL` line (visible under
`pytest -s`). The expensive artifacts (the full source-plus-grid comparison
experiment) are module-scoped fixtures shared between criteria.
"""

import time

import numpy as np
import pytest

import trafficast as tf
from trafficast.autodiff import finite_diff_check
from trafficast.cli import main as cli_main
from trafficast.errors import CheckpointIntegrityError
from trafficast.harness import (emit_report, run_source_experiment,
                                run_target_comparison)
from trafficast.metrics import accuracy, mape_percent
from trafficast.models import (ARCHS, ModelSpec, init_model, predict_one)
from trafficast.pipeline import (WindowedDataset, fit_scaler, make_windows,
                                 train_value_slice)
from trafficast.synth import SynthConfig, generate, make_family
from trafficast.training import single_stage_config, train
from trafficast.transfer import (ReusePolicy, checkpoint_bytes,
                                 checkpoint_from_model, load_checkpoint,
                                 model_from_checkpoint, parse_checkpoint,
                                 save_checkpoint, transfer_fit)

GRID_BUDGETS = (50, 100, 150, 200, 250)
GRID_RUNS = 5
GRID_MASTER_SEED = 11


def _verdict(n, ok, desc):
    print(f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {desc}")
    assert ok, f"criterion {n} failed: {desc}"


# ---------------------------------------------------------------------------
# shared expensive artifacts (criteria 7 and 9)


@pytest.fixture(scope="module")
def grid_artifacts(tmp_path_factory):
    """Source model on the 8563-sample series, then the full 200-run grid."""
    out = tmp_path_factory.mktemp("acc7")
    t0 = time.perf_counter()
    family_cfg = SynthConfig(seed=42, noise_sd=5.0, spike_rate=0.002)
    source, targets = make_family(family_cfg, n_targets=4, variation_seed=7)
    assert len(source) == 8563
    assert [len(t) for t in targets] == [363, 369, 358, 365]
    src_report = run_source_experiment(source, archs=["LSTM_EN_DE"], epochs=100,
                                       window=12, hidden=32, seed=0, out_dir=out)
    ckpt = load_checkpoint(src_report.rows[0].checkpoint)
    report = run_target_comparison(targets, ckpt, epoch_grid=GRID_BUDGETS,
                                   runs=GRID_RUNS, master_seed=GRID_MASTER_SEED)
    elapsed = time.perf_counter() - t0
    return {"report": report, "elapsed": elapsed, "source": source}


# ---------------------------------------------------------------------------
# 1. gradient correctness


def test_acceptance_1_gradient_correctness():
    t0 = time.perf_counter()
    worst = 0.0
    for arch in ARCHS:
        for seed in (0, 1, 2):
            rng = np.random.default_rng(1000 + seed)
            spec = ModelSpec(arch=arch, window=int(rng.integers(2, 7)),
                             hidden=int(rng.integers(2, 9)))
            model = init_model(spec, seed)
            window = rng.random(spec.window)
            report = finite_diff_check(lambda: predict_one(model, window),
                                       model.params, h=1e-5, tol=1e-4)
            worst = max(worst, report.max_rel_err)
            assert report.passed, (arch, seed, report.max_rel_err)
    elapsed = time.perf_counter() - t0
    _verdict(1, worst < 1e-4 and elapsed < 60.0,
             f"5 archs x 3 seeds tape-vs-finite-diff max rel err "
             f"{worst:.2e} < 1e-4 in {elapsed:.1f}s < 60s")


# ---------------------------------------------------------------------------
# 2. metric oracle


def test_acceptance_2_metric_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 60))
        actual = rng.random(n) * 200 + 0.5
        pred = actual + rng.normal(0, 20, size=n)
        loop = sum(abs((p - o) / o) for p, o in zip(pred, actual)) / n * 100.0
        worst = max(worst, abs(mape_percent(pred, actual) - loop))
    exact = accuracy(3.94) == 96.06
    _verdict(2, worst <= 1e-12 and exact,
             f"MAPE matches straight-loop oracle to {worst:.1e} <= 1e-12 on "
             f"100 vectors; accuracy(3.94) == 96.06 exactly: {exact}")


# ---------------------------------------------------------------------------
# 3. windowing oracle


def test_acceptance_3_windowing_oracle():
    rng = np.random.default_rng(3)
    checked = 0
    for n in range(2, 21):
        values = rng.random(n)
        for w in range(1, min(6, n)):
            ds = make_windows(values, w)
            X_ref = [[values[i + j] for j in range(w)]
                     for i in range(n - w)]
            y_ref = [values[i + w] for i in range(n - w)]
            assert np.array_equal(ds.X, np.array(X_ref))
            assert np.array_equal(ds.y, np.array(y_ref))
            checked += 1
    _verdict(3, checked > 0,
             f"make_windows equals brute-force enumeration on {checked} "
             f"(n <= 20, w <= 5) cases")


# ---------------------------------------------------------------------------
# 4. overfit sanity


def test_acceptance_4_overfit_sanity():
    series = generate(SynthConfig(seed=0, length=512, base_level=100.0,
                                  daily_amp=30.0, weekly_amp=0.0,
                                  trend_per_step=0.0, noise_sd=0.0,
                                  spike_rate=0.0))
    windows = make_windows(series, 12)
    assert windows.n_rows == 500
    scaler = fit_scaler(train_value_slice(series, windows.n_rows, 12))
    ds = WindowedDataset(scaler.transform(windows.X),
                         scaler.transform(windows.y), 12)
    results = {}
    for arch in ARCHS:
        model = init_model(ModelSpec(arch=arch, window=12, hidden=32), 0)
        hit = {}

        def check(epoch, m, loss):
            if (epoch + 1) % 25:
                return False
            res = tf.evaluate(m, windows, scaler)
            if res.accuracy_percent >= 99.0:
                hit.update(epoch=epoch + 1, acc=res.accuracy_percent)
                return True
            return False

        t0 = time.perf_counter()
        history = train(model, ds,
                        single_stage_config(epochs=2000, lr=3e-3, batch_size=16),
                        epoch_callback=check)
        elapsed = time.perf_counter() - t0
        if not hit:
            res = tf.evaluate(model, windows, scaler)
            if res.accuracy_percent >= 99.0:
                hit.update(epoch=2000, acc=res.accuracy_percent)
        # the learnable-signal loss must be eventually decreasing
        losses = history.per_epoch_loss
        decile = max(1, len(losses) // 10)
        assert min(losses[-decile:]) < min(losses[:decile]), arch
        results[arch] = (hit, elapsed)
    ok = all(hit and elapsed < 300.0 for hit, elapsed in results.values())
    summary = "; ".join(
        f"{arch}: {hit.get('acc', float('nan')):.2f}% @ epoch "
        f"{hit.get('epoch', '>2000')} in {elapsed:.0f}s"
        for arch, (hit, elapsed) in results.items())
    _verdict(4, ok, f"noiseless-sine accuracy >= 99% within 2000 epochs, "
                    f"< 5 min/model -- {summary}")


# ---------------------------------------------------------------------------
# 5. transfer protocol invariants


def test_acceptance_5_transfer_protocol_invariants():
    spec = ModelSpec(arch="LSTM_EN_DE", window=4, hidden=3)
    source = init_model(spec, 3)
    ckpt = checkpoint_from_model(
        source, tf.MinMaxScaler.from_bounds(0.0, 1.0),
        {"source_domain_name": "src", "train_epochs": 1})
    rng = np.random.default_rng(0)
    values = rng.random(64)
    X = np.stack([values[i:i + 4] for i in range(60)])
    ds = WindowedDataset(X=X, y=values[4:].copy(), w=4)

    boundary = {}

    def capture(epoch, model, loss):
        if epoch == 9:
            boundary.update({p.name: p.value.data.copy() for p in model.params})
        return False

    model, history = transfer_fit(ds, ckpt, epochs=50, seed=5,
                                  epoch_callback=capture)
    lr_ok = history.per_epoch_lr == [1e-3] * 10 + [1e-4] * 40
    reused = ReusePolicy.default(spec).reused
    bitwise_ok = all(np.array_equal(boundary[name], ckpt.params[name])
                     for name in reused)
    _verdict(5, lr_ok and bitwise_ok,
             f"after phase 1 all {len(reused)} reused params bitwise equal the "
             f"checkpoint: {bitwise_ok}; lr trace 10x0.001 then 40x0.0001: {lr_ok}")


# ---------------------------------------------------------------------------
# 6. checkpoint round trip


def test_acceptance_6_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    scaler = tf.MinMaxScaler.from_bounds(2.0, 11.0)
    meta = {"source_domain_name": "rt", "train_epochs": 0}
    checked = 0
    for trial in range(20):
        arch = ARCHS[trial % len(ARCHS)]
        spec = ModelSpec(arch=arch, window=int(rng.integers(2, 8)),
                         hidden=int(rng.integers(2, 8)))
        model = init_model(spec, 600 + trial)
        path = tmp_path / f"rt{trial}.tltp"
        save_checkpoint(model, scaler, meta, path)
        loaded = model_from_checkpoint(load_checkpoint(path))
        window = rng.random(spec.window)
        assert np.array_equal(predict_one(loaded, window).data,
                              predict_one(model, window).data)
        checked += 1

    model = init_model(ModelSpec(arch="GRU", window=3, hidden=2), 0)
    blob = bytearray(checkpoint_bytes(model, scaler, meta))
    blob[-2] ^= 0x40  # corrupt the stored CRC
    crc_rejected = False
    try:
        parse_checkpoint(bytes(blob))
    except CheckpointIntegrityError:
        crc_rejected = True
    _verdict(6, checked == 20 and crc_rejected,
             f"{checked}/20 random models predict bitwise after save/load; "
             f"corrupted-CRC file rejected: {crc_rejected}")


# ---------------------------------------------------------------------------
# 7. transfer benefit on the synthetic family


def test_acceptance_7_transfer_benefit_grid(grid_artifacts):
    report = grid_artifacts["report"]
    elapsed = grid_artifacts["elapsed"]
    assert len(report.records) == 200
    failures = []
    for ds in report.datasets:
        for budget in (150, 200, 250):
            std = report.cell(ds, budget, "standard")
            trf = report.cell(ds, budget, "transfer")
            acc_s = report.mean_accuracy(ds, budget, "standard")
            acc_t = report.mean_accuracy(ds, budget, "transfer")
            # per seed: first transfer epoch at or below the paired standard
            # run's final training loss, strictly before the budget's end
            wins = sum(
                1 for s, t in zip(std, trf)
                if any(v <= s.final_loss for v in t.loss_curve[:budget - 1]))
            if acc_t < acc_s - 0.5:
                failures.append(f"{ds}@{budget}: accuracy {acc_t:.2f} < {acc_s:.2f}-0.5")
            if wins < 4:
                failures.append(f"{ds}@{budget}: loss reached early in only {wins}/5 seeds")
    time_ok = elapsed < 1800.0
    if not time_ok:
        failures.append(f"grid took {elapsed:.0f}s >= 1800s")
    _verdict(7, not failures,
             f"12 cells at budgets >= 150: transfer accuracy within 0.5pp and "
             f"early loss-reach in >= 4/5 seeds; 200 runs in {elapsed:.0f}s < 1800s"
             + ("" if not failures else f" -- {failures}"))


# ---------------------------------------------------------------------------
# 8. determinism of `compare`


def test_acceptance_8_compare_determinism(tmp_path):
    data = tmp_path / "data"
    assert cli_main(["synth", "--out-dir", str(data), "--length", "200",
                     "--targets", "2", "--seed", "4"]) == 0
    src = tmp_path / "src"
    assert cli_main(["train", "--data", str(data / "dataset_a.csv"),
                     "--out-dir", str(src), "--archs", "LSTM_EN_DE",
                     "--epochs", "2", "--window", "4", "--hidden", "3",
                     "--seed", "1"]) == 0
    targets = f"{data / 'dataset_b.csv'},{data / 'dataset_c.csv'}"
    outs = []
    for label in ("a", "b"):
        out = tmp_path / label
        assert cli_main(["compare", "--targets", targets,
                         "--checkpoint", str(src / "ckpt_lstm_en_de.tltp"),
                         "--epochs", "12,15", "--runs", "2", "--seed", "9",
                         "--out-dir", str(out)]) == 0
        outs.append(out)
    metric_files = ["raw_runs.csv", "plot_acc_dataset_b.csv",
                    "plot_acc_dataset_c.csv"]
    identical = all((outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
                    for name in metric_files)
    _verdict(8, identical,
             f"two `compare` invocations with master seed 9 emit byte-identical "
             f"metric CSVs: {metric_files}")


# ---------------------------------------------------------------------------
# 9. report shape


def test_acceptance_9_report_shape(grid_artifacts, tmp_path):
    report = grid_artifacts["report"]
    small = generate(SynthConfig(seed=5, length=200, spike_rate=0.0))
    source_report = run_source_experiment(small, epochs=2, window=4, hidden=3,
                                          seed=0)
    emit_report(report, tmp_path, source_report=source_report)
    text = (tmp_path / "report.txt").read_text()
    lines = text.splitlines()

    positions = [next(i for i, ln in enumerate(lines)
                      if ln.startswith(arch + " ")) for arch in ARCHS]
    rows_in_order = positions == sorted(positions) and len(positions) == 5

    dataset_header = next(ln for ln in lines if "Dataset dataset_b" in ln)
    four_blocks = all(f"Dataset dataset_{c}" in dataset_header for c in "bcde")

    budget_rows = [ln.split()[0] for ln in lines
                   if ln.split() and ln.split()[0].isdigit()]
    budgets_ok = budget_rows == ["250", "200", "150", "100", "50"]

    modes_ok = text.count("Standard") >= 4 and text.count("Transfer") >= 4

    _verdict(9, rows_in_order and four_blocks and budgets_ok and modes_ok,
             f"report.txt: 5 source rows in fixed order ({rows_in_order}), "
             f"4 dataset column blocks ({four_blocks}), budgets 250..50 "
             f"({budgets_ok}), standard+transfer columns ({modes_ok})")
