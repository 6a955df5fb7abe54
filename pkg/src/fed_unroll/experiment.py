"""Runs the synthetic protocol end to end and writes metrics, checkpoints and plots."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fed_unroll.config import ExperimentConfig, load_config
from fed_unroll.data import (
    build_dataset,
    generate_sensing_matrix,
    load_matrix_file,
    partition_dataset,
    save_dataset,
    save_matrix_file,
)
from fed_unroll.federation import evaluate, fed_cs_train, write_round_csv
from fed_unroll.ista import IstaConfig, ista_solve_batch
from fed_unroll.layerwise import train_centralized
from fed_unroll.lista import forward, save_checkpoint
from fed_unroll.metrics import nmse_db, psnr
from fed_unroll.plotting import PlotSpec, render_svg

logger = logging.getLogger(__name__)

OUTPUT_ENV = "FED_UNROLL_OUTPUT"
METRIC_COLUMNS = ("experiment_id", "method", "layer", "nmse_db", "psnr")
SWEEP_AXES = {"clients": "K", "epochs": "E", "rounds": "C"}


@dataclass
class MetricRecord:
    experiment_id: str
    method: str
    layer: int
    nmse_db: float
    psnr: float | None = None

    def row(self) -> list:
        return [self.experiment_id, self.method, self.layer, repr(float(self.nmse_db)),
                "" if self.psnr is None else repr(float(self.psnr))]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    output_dir: Path
    records: list[MetricRecord] = field(default_factory=list)

    def curve(self, method: str) -> list[float]:
        return [r.nmse_db for r in self.records if r.method == method]


def resolve_output_dir(cfg: ExperimentConfig, override=None) -> Path:
    if override is not None:
        return Path(override)
    root = os.environ.get(OUTPUT_ENV)
    if root:
        return Path(root) / cfg.experiment_id
    return Path(cfg.output_dir)


def _records(cfg: ExperimentConfig, method: str, x_true, estimates) -> list[MetricRecord]:
    out = []
    for i, x_hat in enumerate(estimates, start=1):
        value = psnr(x_true, x_hat, cfg.psnr_peak) if cfg.report_psnr else None
        out.append(MetricRecord(cfg.experiment_id, method, i, nmse_db(x_true, x_hat), value))
    return out


def write_metrics_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for rec in records:
            writer.writerow(rec.row())


def read_metrics_csv(path) -> list[MetricRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [MetricRecord(r["experiment_id"], r["method"], int(r["layer"]), float(r["nmse_db"]),
                             float(r["psnr"]) if r["psnr"] else None) for r in csv.DictReader(fh)]


def build_problem(cfg: ExperimentConfig):
    """Sensing matrix, training set and the fixed test set for ``cfg``."""
    seeds = cfg.seeds()
    if cfg.matrix_file:
        A = load_matrix_file(cfg.matrix_file)
    else:
        A = generate_sensing_matrix(cfg.M, cfg.N, seeds["matrix"])
    train = build_dataset(A, cfg.train_size, cfg.p, seeds["train_data"], cfg.magnitude)
    test = build_dataset(A, cfg.test_size, cfg.p, seeds["test_data"], cfg.magnitude)
    return A, train, test


def run_experiment(cfg, output_dir=None, verbose: bool = False) -> ExperimentResult:
    """Train Fed-CS and the enabled baselines; ``cfg`` may also be a path to an INI file."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    out = resolve_output_dir(cfg, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    A, train, test = build_problem(cfg)
    train_cfg = cfg.train.with_(seed=cfg.seeds()["training"])
    result = ExperimentResult(cfg, out)

    save_matrix_file(out / "A.txt", np.asarray(A))
    save_dataset(out / "test_set.txt", test)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")

    partition = partition_dataset(train, cfg.K, cfg.client_sizes)
    theta, history = fed_cs_train(train, partition, A, train_cfg, C=cfg.C, workers=cfg.workers)
    save_checkpoint(out / "fedcs.ckpt", theta)
    write_round_csv(out / "rounds.csv", history)
    result.records += _records(cfg, "fedcs", test.x, forward(theta, test.y).x_hat)

    if cfg.run_lista:
        central = train_centralized(train, A, train_cfg)
        save_checkpoint(out / "lista.ckpt", central)
        result.records += _records(cfg, "lista", test.x, forward(central, test.y).x_hat)

    if cfg.run_ista:
        ista_cfg = IstaConfig(lam=cfg.ista_lambda, step=cfg.ista_step, iters=train_cfg.L)
        result.records += _records(cfg, "ista", test.x, ista_solve_batch(A, test.y, ista_cfg))

    metrics_path = out / "metrics.csv"
    write_metrics_csv(metrics_path, result.records)
    render_svg(metrics_path, PlotSpec(x="layer", y="nmse_db", series="method",
                                      title="NMSE vs layers", ylabel="NMSE (dB)"),
               out / "nmse_vs_layers.svg")
    render_svg(metrics_path, PlotSpec(x="layer", y="nmse_db", series="method", where=(("method", "fedcs"),),
                                      x_scale=cfg.C, title="Fed-CS NMSE vs communication rounds",
                                      xlabel="communication rounds", ylabel="NMSE (dB)"),
               out / "nmse_vs_rounds.svg")
    if verbose:
        print(summary_table(result))
    return result


def summary_table(result: ExperimentResult) -> str:
    methods = sorted({r.method for r in result.records})
    depth = max(r.layer for r in result.records)
    lines = ["layer " + " ".join(f"{m:>10}" for m in methods)]
    for layer in range(1, depth + 1):
        cells = []
        for m in methods:
            vals = [r.nmse_db for r in result.records if r.method == m and r.layer == layer]
            cells.append(f"{vals[0]:10.2f}" if vals else " " * 10)
        lines.append(f"{layer:5d} " + " ".join(cells))
    return "\n".join(lines)


def parse_values(text: str) -> list[int]:
    """``"1..4"`` or ``"1,2,4"``."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    return [int(v) for v in text.replace(",", " ").split()]


def sweep(cfg: ExperimentConfig, axis: str, values, output_dir=None, verbose: bool = False) -> list[ExperimentResult]:
    """One run per axis value; all runs share the test set (same master seed)."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {sorted(SWEEP_AXES)}")
    values = [int(v) for v in values]
    if not values or min(values) < 1:
        raise ValueError("sweep values must be positive")
    root = resolve_output_dir(cfg, output_dir)
    root.mkdir(parents=True, exist_ok=True)
    results = []
    for value in values:
        sub = cfg.with_overrides(**{SWEEP_AXES[axis]: value},
                                 experiment_id=f"{cfg.experiment_id}-{axis}{value}")
        results.append(run_experiment(sub, root / f"{axis}_{value}", verbose=verbose))

    combined = root / "sweep.csv"
    with open(combined, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("axis", "value", *METRIC_COLUMNS))
        for value, res in zip(values, results):
            for rec in res.records:
                writer.writerow([axis, value, *rec.row()])
    final = root / "sweep_final.csv"
    with open(final, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("axis", "value", "method", "nmse_db"))
        for value, res in zip(values, results):
            for method in sorted({r.method for r in res.records}):
                writer.writerow([axis, value, method, repr(float(res.curve(method)[-1]))])
    render_svg(combined, PlotSpec(x="layer", y="nmse_db", series="value", where=(("method", "fedcs"),),
                                  title=f"Fed-CS NMSE vs layers by {axis}", ylabel="NMSE (dB)"),
               root / "sweep_layers.svg")
    render_svg(final, PlotSpec(x="value", y="nmse_db", series="method",
                               title=f"final-layer NMSE vs {axis}", xlabel=axis, ylabel="NMSE (dB)"),
               root / f"nmse_vs_{axis}.svg")
    return results
