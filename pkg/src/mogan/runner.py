"""Seeded end-to-end runs, sweeps over (method, K, delta, seed), and plots.

Run directory layout::

    <out_dir>/<run_id>/
        metrics.csv      one row per epoch, appended as epochs finish
        timing.csv       wall-clock seconds per epoch
        samples.npy      latest evaluation draw from the generator
        manifest.json    config echo, K, seed, status, checkpoint paths
        checkpoints/     generator.bin, discriminator_XX.bin
        plots/           written by emit_plots

``metrics.csv`` carries no timing so that identical (config, seed) pairs give
byte-identical files; wall-clock time lives in ``timing.csv``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import numpy as np

from . import gan, moo
from .errors import NumericError, PreconditionError
from .metrics import estimate_moments, frechet_distance, mode_coverage
from .nn import _atomic_write, save_params

log = logging.getLogger(__name__)

WORKERS_ENV = "MOGAN_WORKERS"
PLOT_NAMES = ("losses.svg", "residual.svg", "frechet.svg", "samples.svg")


class TrainingFailure(NumericError):
    """Training hit a numeric problem; ``record`` holds every epoch completed before it."""

    def __init__(self, message: str, record: "RunRecord"):
        super().__init__(message)
        self.record = record


@dataclass
class RunRecord:
    run_id: str
    config: dict
    rows: list[dict] = field(default_factory=list)
    wall_seconds: list[float] = field(default_factory=list)
    checkpoints: dict[str, str] = field(default_factory=dict)
    final_samples: np.ndarray | None = None
    status: str = "ok"
    error: str | None = None

    @property
    def num_discriminators(self) -> int:
        return int(self.config["num_discriminators"])

    def column(self, name: str) -> np.ndarray:
        if self.rows and name not in self.rows[0]:
            raise KeyError(f"run {self.run_id} has no column {name!r}")
        return np.array([row[name] for row in self.rows], dtype=float)

    def final(self, name: str) -> float:
        if not self.rows:
            raise ValueError(f"run {self.run_id} has no epochs")
        return float(self.rows[-1][name])


# ---------------------------------------------------------------------------
# config echo
# ---------------------------------------------------------------------------


def config_to_dict(config: gan.TrainConfig) -> dict:
    d = dataclasses.asdict(config)
    d["gen_hidden"] = list(config.gen_hidden)
    d["disc_hidden"] = list(config.disc_hidden)
    return d


def config_from_dict(d: dict) -> gan.TrainConfig:
    d = dict(d)
    if "data" in d and not isinstance(d["data"], gan.RingData):
        d["data"] = gan.RingData(**d["data"])
    for key in ("gen_hidden", "disc_hidden"):
        if key in d:
            d[key] = tuple(d[key])
    return gan.TrainConfig(**d)


def run_id_for(config: gan.TrainConfig) -> str:
    return f"{config.method}-k{config.num_discriminators}-d{config.delta:g}-s{config.seed}"


# ---------------------------------------------------------------------------
# metrics table
# ---------------------------------------------------------------------------


def metric_columns(k: int) -> list[str]:
    return (
        ["epoch"]
        + [f"loss_{i}" for i in range(1, k + 1)]
        + [f"alpha_{i}" for i in range(1, k + 1)]
        + ["residual", "eta", "frechet", "modes_covered", "reverse_kl"]
    )


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _csv_line(values: Sequence[str]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(values)
    return buf.getvalue()


def read_metrics(path) -> list[dict]:
    """Parse a metrics file, possibly a prefix written by an unfinished run."""
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row: dict[str, Any] = {}
            for key, val in raw.items():
                if key == "epoch" or key == "modes_covered":
                    row[key] = int(val)
                elif val == "":
                    row[key] = None
                else:
                    row[key] = float(val)
            rows.append(row)
    return rows


def load_record(run_dir) -> RunRecord:
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    rows = read_metrics(run_dir / "metrics.csv")
    wall = []
    timing = run_dir / "timing.csv"
    if timing.exists():
        with open(timing, newline="") as fh:
            wall = [float(r["wall_seconds"]) for r in csv.DictReader(fh)]
    samples = run_dir / "samples.npy"
    return RunRecord(
        run_id=manifest["run_id"],
        config=manifest["config"],
        rows=rows,
        wall_seconds=wall,
        checkpoints={k: str(run_dir / v) for k, v in manifest.get("checkpoints", {}).items()},
        final_samples=np.load(samples) if samples.exists() else None,
        status=manifest.get("status", "ok"),
        error=manifest.get("error"),
    )


# ---------------------------------------------------------------------------
# single run
# ---------------------------------------------------------------------------


def evaluate(system: gan.GanSystem, config: gan.TrainConfig, rng: np.random.Generator):
    """Frechet distance and mode coverage on fresh generator and data draws."""
    fake = system.sample(config.eval_samples, rng)
    real = config.data.sample(config.eval_samples, rng)
    fd = frechet_distance(estimate_moments(real), estimate_moments(fake))
    modes = mode_coverage(fake, config.data.centers(), config.data.std, config.mode_threshold)
    return fake, fd, modes


def _epoch_row(epoch: int, reports: list[gan.StepReport], fd: float, modes) -> dict:
    k = reports[0].losses.size
    losses = np.mean([r.losses for r in reports], axis=0)
    weights = np.mean([r.weights for r in reports], axis=0)
    row: dict[str, Any] = {"epoch": epoch}
    row.update({f"loss_{i + 1}": float(losses[i]) for i in range(k)})
    row.update({f"alpha_{i + 1}": float(weights[i]) for i in range(k)})
    row["residual"] = float(np.mean([r.residual for r in reports]))
    etas = [r.eta for r in reports if r.eta is not None]
    row["eta"] = float(np.mean(etas)) if etas else None
    row["frechet"] = float(fd)
    row["modes_covered"] = int(modes.modes_covered)
    row["reverse_kl"] = float(modes.reverse_kl)
    return row


def _save_checkpoints(system: gan.GanSystem, run_dir: Path) -> dict[str, str]:
    ckpt = run_dir / "checkpoints"
    ckpt.mkdir(parents=True, exist_ok=True)
    paths = {"generator": "checkpoints/generator.bin"}
    save_params(run_dir / paths["generator"], system.gen_spec, system.gen_params)
    for k in range(system.num_discriminators):
        name = f"discriminator_{k:02d}"
        paths[name] = f"checkpoints/{name}.bin"
        save_params(run_dir / paths[name], system.disc_spec, system.disc_params[k])
    return paths


def _write_manifest(record: RunRecord, system: gan.GanSystem | None, run_dir: Path) -> None:
    manifest = {
        "run_id": record.run_id,
        "num_discriminators": record.num_discriminators,
        "seed": record.config["seed"],
        "config": record.config,
        "projection_fingerprint": system.bank.fingerprint() if system is not None else None,
        "epochs_completed": len(record.rows),
        "status": record.status,
        "error": record.error,
        "checkpoints": {k: os.path.relpath(v, run_dir) for k, v in record.checkpoints.items()},
    }
    _atomic_write(run_dir / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())


def run_experiment(config: gan.TrainConfig, out_dir=None, run_id: str | None = None) -> RunRecord:
    """Train for ``epochs * steps_per_epoch`` steps, evaluating after every epoch.

    With ``out_dir`` set, the run directory is created under it and kept
    up to date epoch by epoch. Raises :class:`TrainingFailure` on numeric
    trouble, after persisting what was completed.
    """
    run_id = run_id or run_id_for(config)
    record = RunRecord(run_id=run_id, config=config_to_dict(config))
    system = gan.init_system(config)
    eval_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    run_dir = None
    if out_dir is not None:
        run_dir = Path(out_dir) / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        for name in ("metrics.csv", "timing.csv", "samples.npy"):
            (run_dir / name).unlink(missing_ok=True)
        with open(run_dir / "metrics.csv", "w", newline="") as fh:
            fh.write(_csv_line(metric_columns(config.num_discriminators)))
        with open(run_dir / "timing.csv", "w", newline="") as fh:
            fh.write(_csv_line(["epoch", "wall_seconds"]))
        _write_manifest(dataclasses.replace(record, status="running"), system, run_dir)

    start = time.perf_counter()
    columns = metric_columns(config.num_discriminators)
    try:
        for epoch in range(1, config.epochs + 1):
            reports = [gan.train_step(system, config) for _ in range(config.steps_per_epoch)]
            if not reports:
                continue
            fake, fd, modes = evaluate(system, config, eval_rng)
            row = _epoch_row(epoch, reports, fd, modes)
            if not all(np.isfinite(v) for k, v in row.items() if k not in ("eta", "reverse_kl")):
                raise NumericError(f"non-finite metrics at epoch {epoch}")
            record.rows.append(row)
            record.wall_seconds.append(time.perf_counter() - start)
            record.final_samples = fake
            log.info("%s epoch %d: residual=%.4g frechet=%.4g modes=%d",
                     run_id, epoch, row["residual"], fd, modes.modes_covered)
            if run_dir is not None:
                with open(run_dir / "metrics.csv", "a", newline="") as fh:
                    fh.write(_csv_line([_fmt(row[c]) for c in columns]))
                with open(run_dir / "timing.csv", "a", newline="") as fh:
                    fh.write(_csv_line([str(epoch), f"{record.wall_seconds[-1]:.6f}"]))
                buf = io.BytesIO()
                np.save(buf, fake)
                _atomic_write(run_dir / "samples.npy", buf.getvalue())
                record.checkpoints = {
                    k: str(run_dir / v) for k, v in _save_checkpoints(system, run_dir).items()
                }
    except (NumericError, PreconditionError, FloatingPointError) as exc:
        record.status = "failed"
        record.error = f"{type(exc).__name__}: {exc}"
        if run_dir is not None:
            _write_manifest(record, system, run_dir)
        raise TrainingFailure(f"run {run_id} failed: {record.error}", record) from exc

    if run_dir is not None:
        if not record.checkpoints:
            record.checkpoints = {k: str(run_dir / v) for k, v in _save_checkpoints(system, run_dir).items()}
        _write_manifest(record, system, run_dir)
    return record


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    methods: tuple[str, ...]
    num_discriminators: tuple[int, ...]
    deltas: tuple[float, ...]
    seeds: tuple[int, ...]
    base: gan.TrainConfig = field(default_factory=gan.TrainConfig)

    def __post_init__(self):
        for name in ("methods", "num_discriminators", "deltas", "seeds"):
            value = tuple(getattr(self, name))
            if not value:
                raise ValueError(f"sweep list {name!r} must not be empty")
            object.__setattr__(self, name, value)
        if any(not d > 1 for d in self.deltas):
            raise ValueError(f"every delta must exceed 1, got {self.deltas}")
        bad = [m for m in self.methods if m not in gan.METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")

    def cells(self) -> list[gan.TrainConfig]:
        return [
            dataclasses.replace(self.base, method=m, num_discriminators=k, delta=d, seed=s)
            for m in self.methods
            for k in self.num_discriminators
            for d in self.deltas
            for s in self.seeds
        ]


class SweepResult(NamedTuple):
    summary: list[dict]
    records: list[RunRecord]


def _run_cell(args) -> RunRecord:
    config, out_dir = args
    try:
        return run_experiment(config, out_dir)
    except TrainingFailure as exc:
        return exc.record
    except Exception as exc:  # a broken cell must not stop the sweep
        record = RunRecord(run_id=run_id_for(config), config=config_to_dict(config))
        record.status = "failed"
        record.error = f"{type(exc).__name__}: {exc}"
        return record


def worker_count(n_cells: int) -> int:
    cap = os.environ.get(WORKERS_ENV)
    workers = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(workers, n_cells))


def _spread(values: list[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def summarize(records: Sequence[RunRecord]) -> list[dict]:
    """Final Frechet distance mean and spread per (method, K, delta) over seeds."""
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        key = (r.config["method"], r.num_discriminators, float(r.config["delta"]))
        groups.setdefault(key, []).append(r)
    rows = []
    for (method, k, delta), members in groups.items():
        ok = [r for r in members if r.status == "ok" and r.rows]
        finals = [r.final("frechet") for r in ok]
        rows.append({
            "method": method,
            "num_discriminators": k,
            "delta": delta,
            "runs": len(members),
            "failed": len(members) - len(ok),
            "frechet_mean": float(np.mean(finals)) if finals else math.nan,
            "frechet_std": _spread(finals) if finals else math.nan,
            "modes_mean": float(np.mean([r.final("modes_covered") for r in ok])) if ok else math.nan,
        })
    return rows


def spread_by(records: Sequence[RunRecord], key: str = "num_discriminators") -> dict:
    """Spread of final Frechet distance over every other sweep axis, grouped by ``key``.

    Returns ``{value: {"n", "mean", "std", "min", "max"}}`` with ``std`` the
    sample standard deviation.
    """
    groups: dict[Any, list[float]] = {}
    for r in records:
        if r.status != "ok" or not r.rows:
            continue
        groups.setdefault(r.config[key], []).append(r.final("frechet"))
    return {
        value: {
            "n": len(v),
            "mean": float(np.mean(v)),
            "std": _spread(v),
            "min": float(np.min(v)),
            "max": float(np.max(v)),
        }
        for value, v in sorted(groups.items())
    }


def run_sweep(spec: SweepSpec, out_dir=None, workers: int | None = None) -> SweepResult:
    """Run every cell of the sweep; failed cells are recorded and the rest continue."""
    cells = spec.cells()
    workers = workers or worker_count(len(cells))
    jobs = [(c, out_dir) for c in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell, jobs))
    else:
        records = [_run_cell(j) for j in jobs]
    summary = summarize(records)
    if out_dir is not None:
        cols = list(summary[0]) if summary else []
        text = _csv_line(cols) + "".join(_csv_line([_fmt(row[c]) if not isinstance(row[c], str) else row[c] for c in cols]) for row in summary)
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _atomic_write(Path(out_dir) / "summary.csv", text.encode())
    return SweepResult(summary, records)


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------


def _require(record: RunRecord, names: Sequence[str]) -> None:
    if not record.rows:
        raise ValueError(f"run {record.run_id} has no epochs to plot")
    for name in names:
        if name not in record.rows[0]:
            raise KeyError(f"run {record.run_id} is missing field {name!r}")


def emit_plots(records: Sequence[RunRecord], out_dir) -> list[Path]:
    """Write loss, residual, Frechet and sample-scatter SVGs into ``out_dir``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = list(records)
    if not records:
        raise ValueError("emit_plots needs at least one record")
    for r in records:
        k = r.num_discriminators
        _require(r, ["epoch", "residual", "frechet"] + [f"loss_{i}" for i in range(1, k + 1)])
        if r.final_samples is None:
            raise KeyError(f"run {r.run_id} is missing field 'final_samples'")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / name for name in PLOT_NAMES]
    with matplotlib.rc_context({"svg.hashsalt": "mogan", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for r in records:
            epochs = r.column("epoch")
            for i in range(1, r.num_discriminators + 1):
                ax.plot(epochs, r.column(f"loss_{i}"), marker=".", lw=0.8,
                        label=f"{r.run_id} l{i}" if len(records) == 1 else None)
            ax.plot(epochs, np.mean([r.column(f"loss_{i}") for i in range(1, r.num_discriminators + 1)], axis=0),
                    color="k" if len(records) == 1 else None, lw=2, label=f"{r.run_id} mean")
        ax.set_xlabel("epoch")
        ax.set_ylabel("generator loss")
        ax.legend(fontsize=6, ncol=2)
        fig.tight_layout()
        fig.savefig(paths[0], metadata={"Date": None})
        plt.close(fig)

        for path, col, label in ((paths[1], "residual", "update direction norm"),
                                 (paths[2], "frechet", "Frechet distance")):
            fig, ax = plt.subplots(figsize=(6, 4))
            for r in records:
                ax.plot(r.column("epoch"), r.column(col), marker="o", label=r.run_id)
            ax.set_xlabel("epoch")
            ax.set_ylabel(label)
            ax.set_yscale("log" if np.all(np.concatenate([r.column(col) for r in records]) > 0) else "linear")
            ax.legend(fontsize=7)
            fig.tight_layout()
            fig.savefig(path, metadata={"Date": None})
            plt.close(fig)

        fig, axes = plt.subplots(1, len(records), figsize=(4 * len(records), 4), squeeze=False)
        for ax, r in zip(axes[0], records):
            data = gan.RingData(**r.config["data"]) if isinstance(r.config.get("data"), dict) else gan.RingData()
            x = r.final_samples
            ax.scatter(x[:, 0], x[:, 1], s=1, alpha=0.3, label="generated")
            c = data.centers()
            ax.scatter(c[:, 0], c[:, 1], marker="x", color="red", s=40, label="mode centers")
            ax.set_title(r.run_id, fontsize=8)
            ax.set_aspect("equal")
            ax.legend(fontsize=6, loc="upper right")
        fig.tight_layout()
        fig.savefig(paths[3], metadata={"Date": None})
        plt.close(fig)
    return paths
