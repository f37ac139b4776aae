"""Benchmark protocol: models x latent dims x group sizes x seeds per dataset.

Each run trains one model, embeds the full dataset with posterior means and
scores the embedding against the model input. The run table is written in
a fixed order with exact float formatting, so identical plans give
byte-identical tables; wall-clock times go to a separate file because they
are not reproducible.
"""

from __future__ import annotations

import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import load_matrix, save_matrix
from .errors import ConfigError, FormatError
from .models import DEFAULT_KL_WEIGHT, MODEL_KINDS, ModelConfig, embed
from .nn import AdamConfig
from .rnx import evaluate
from .synthetic import gaussian_mixture
from .trainer import TrainConfig, save_checkpoint, train

log = logging.getLogger(__name__)

SYNTHETIC = "synthetic"
RUN_HEADER = "dataset,model,dim,gamma,seed,local_sp,global_sp,status"
TIME_HEADER = "dataset,model,dim,gamma,seed,train_seconds"


@dataclass(frozen=True)
class BenchmarkPlan:
    datasets: tuple[str, ...] = (SYNTHETIC,)
    dims: tuple[int, ...] = (2, 5, 10)
    gammas: tuple[int, ...] = (4, 5, 6)
    models: tuple[str, ...] = ("vae", "groupenc")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    output: str = "benchmark_out"
    epochs: int = 500
    batch_size: int = 512
    learning_rate: float = 0.001
    kl_weight: float = DEFAULT_KL_WEIGHT
    group_strategy: str = "headed"
    subsample: int | None = None
    eval_seed: int = 0
    synthetic_n: int = 5000
    synthetic_dim: int = 50
    synthetic_clusters: int = 10
    synthetic_seed: int = 0
    save_artifacts: bool = True

    def __post_init__(self):
        if not self.dims or not self.seeds or not self.models or not self.datasets:
            raise ConfigError("plan needs non-empty datasets, dims, seeds and models")
        bad = set(self.models) - set(MODEL_KINDS)
        if bad:
            raise ConfigError(f"unknown models {sorted(bad)}")
        if "groupenc" in self.models and not self.gammas:
            raise ConfigError("groupenc runs need at least one gamma")

    def runs(self) -> list["RunSpec"]:
        out = []
        for dataset in self.datasets:
            for dim in self.dims:
                for model in self.models:
                    gammas = self.gammas if model == "groupenc" else (None,)
                    for gamma in gammas:
                        for seed in self.seeds:
                            out.append(RunSpec(dataset, model, dim, gamma, seed))
        return out


@dataclass(frozen=True)
class RunSpec:
    dataset: str
    model: str
    dim: int
    gamma: int | None
    seed: int

    @property
    def tag(self) -> str:
        name = Path(self.dataset).stem if self.dataset != SYNTHETIC else SYNTHETIC
        g = f"_g{self.gamma}" if self.gamma is not None else ""
        return f"{name}_{self.model}{g}_d{self.dim}_s{self.seed}"


@dataclass
class RunRecord:
    dataset: str
    model: str
    dim: int
    gamma: int | None
    seed: int
    local_sp: float
    global_sp: float
    train_seconds: float
    status: str = "ok"

    @property
    def label(self) -> str:
        return "VAE" if self.model == "vae" else f"GroupEnc(gamma={self.gamma})"

    def row(self) -> str:
        gamma = "" if self.gamma is None else str(self.gamma)
        return (f"{self.dataset},{self.model},{self.dim},{gamma},{self.seed},"
                f"{self.local_sp!r},{self.global_sp!r},{self.status}")

    def time_row(self) -> str:
        gamma = "" if self.gamma is None else str(self.gamma)
        return f"{self.dataset},{self.model},{self.dim},{gamma},{self.seed},{self.train_seconds:.3f}"


_LIST_KEYS = {"datasets": str, "dims": int, "gammas": int, "models": str, "seeds": int}
_SCALAR_KEYS = {
    "output": str, "epochs": int, "batch_size": int, "learning_rate": float, "kl_weight": float,
    "group_strategy": str, "subsample": int, "eval_seed": int, "synthetic_n": int, "synthetic_dim": int,
    "synthetic_clusters": int, "synthetic_seed": int, "save_artifacts": lambda s: s.lower() in ("1", "true", "yes"),
}


def parse_plan(text: str, base_dir: Path | None = None) -> BenchmarkPlan:
    """Parse a flat ``key=value`` plan; lists are comma separated, ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"plan line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _LIST_KEYS:
                values[key] = tuple(_LIST_KEYS[key](v.strip()) for v in value.split(",") if v.strip())
            elif key in _SCALAR_KEYS:
                values[key] = None if value.lower() in ("", "none") else _SCALAR_KEYS[key](value)
            else:
                raise FormatError(f"plan line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise FormatError(f"plan line {lineno}: bad value for {key}: {exc}") from exc
    if base_dir is not None and "datasets" in values:
        values["datasets"] = tuple(
            d if d == SYNTHETIC or Path(d).is_absolute() else str(base_dir / d) for d in values["datasets"]
        )
    return BenchmarkPlan(**values)


def load_plan(path) -> BenchmarkPlan:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read plan {path}: {exc}") from exc
    return parse_plan(text, path.parent)


def load_dataset(plan: BenchmarkPlan, dataset: str) -> np.ndarray:
    if dataset == SYNTHETIC:
        x, _ = gaussian_mixture(plan.synthetic_n, plan.synthetic_dim, plan.synthetic_clusters, plan.synthetic_seed)
        return x
    return load_matrix(dataset)


def _run_one(plan: BenchmarkPlan, spec: RunSpec, data: np.ndarray, out_dir: Path | None,
             eval_threads: int | None) -> RunRecord:
    try:
        config = ModelConfig(
            kind=spec.model,
            input_dim=data.shape[1],
            latent_dim=spec.dim,
            gamma=spec.gamma,
            kl_weight=plan.kl_weight,
            group_strategy=plan.group_strategy,
        )
        tc = TrainConfig(epochs=plan.epochs, batch_size=plan.batch_size,
                         adam=AdamConfig(learning_rate=plan.learning_rate), seed=spec.seed)
        t0 = time.perf_counter()
        params, history = train(config, tc, data)
        seconds = time.perf_counter() - t0
        z = embed(params, data, config)
        result = evaluate(data, z, subsample=plan.subsample, seed=plan.eval_seed, n_threads=eval_threads)
        if out_dir is not None:
            save_checkpoint(out_dir / f"{spec.tag}.gmdl", config, params, tc, history)
            save_matrix(out_dir / f"{spec.tag}.embedding.csv", z, "delimited_text")
            (out_dir / f"{spec.tag}.curve.csv").write_text(result.curve_csv())
            (out_dir / f"{spec.tag}.log.csv").write_text(history.to_csv())
        return RunRecord(spec.dataset, spec.model, spec.dim, spec.gamma, spec.seed,
                         result.local_sp, result.global_sp, max(seconds, 1e-9))
    except Exception as exc:  # noqa: BLE001 - failed runs are recorded, the benchmark continues
        log.error("run %s failed: %s", spec.tag, exc)
        status = f"failed:{type(exc).__name__}"
        return RunRecord(spec.dataset, spec.model, spec.dim, spec.gamma, spec.seed,
                         float("nan"), float("nan"), 0.0, status)


def _run_worker(args):
    plan, spec, out_dir = args
    return _run_one(plan, spec, load_dataset(plan, spec.dataset), out_dir, 1)


def run_benchmark(plan: BenchmarkPlan, jobs: int = 1, write: bool = True) -> list[RunRecord]:
    """Execute every run of ``plan``; records come back in plan order."""
    out_dir = Path(plan.output)
    artifacts = out_dir / "runs" if (write and plan.save_artifacts) else None
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        if artifacts is not None:
            artifacts.mkdir(exist_ok=True)
    specs = plan.runs()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_worker, [(plan, s, artifacts) for s in specs]))
    else:
        cache: dict[str, np.ndarray] = {}
        records = []
        for spec in specs:
            if spec.dataset not in cache:
                try:
                    cache[spec.dataset] = load_dataset(plan, spec.dataset)
                except Exception as exc:  # noqa: BLE001
                    log.error("cannot load %s: %s", spec.dataset, exc)
                    records.append(RunRecord(spec.dataset, spec.model, spec.dim, spec.gamma, spec.seed,
                                             float("nan"), float("nan"), 0.0, f"failed:{type(exc).__name__}"))
                    continue
            records.append(_run_one(plan, spec, cache[spec.dataset], artifacts, None))
            log.info("%s local=%.4f global=%.4f", spec.tag, records[-1].local_sp, records[-1].global_sp)
    if write:
        write_outputs(out_dir, records, plan)
    return records


def runs_table(records: list[RunRecord]) -> str:
    return "\n".join([RUN_HEADER, *(r.row() for r in records)]) + "\n"


def times_table(records: list[RunRecord]) -> str:
    return "\n".join([TIME_HEADER, *(r.time_row() for r in records)]) + "\n"


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def summarize(records: list[RunRecord], metric: str) -> dict[tuple[int, str], dict[str, tuple[float, float]]]:
    """Mean and sample stdev of ``metric`` per (dim, model label) and dataset.

    Failed runs are excluded.
    """
    cells: dict[tuple[int, str], dict[str, list[float]]] = {}
    for r in records:
        if r.status != "ok":
            continue
        cells.setdefault((r.dim, r.label), {}).setdefault(r.dataset, []).append(getattr(r, metric))
    return {key: {ds: _mean_std(v) for ds, v in per.items()} for key, per in cells.items()}


def _label_order(label: str) -> tuple[int, int]:
    if label == "VAE":
        return (0, 0)
    return (1, int(label.split("=")[1].rstrip(")")))


def summary_table(records: list[RunRecord], metric: str, digits: int = 3) -> str:
    """Table laid out as dim x model rows with one mean+-std column per dataset."""
    stats = summarize(records, metric)
    datasets = list(dict.fromkeys(r.dataset for r in records))
    names = [Path(d).stem if d != SYNTHETIC else d for d in datasets]
    lines = ["dim,model," + ",".join(names)]
    keys = sorted(stats, key=lambda k: (-k[0], _label_order(k[1])))
    for dim, label in keys:
        cells = []
        for ds in datasets:
            if ds in stats[(dim, label)]:
                m, s = stats[(dim, label)][ds]
                cells.append(f"{m:.{digits}f}+-{s:.{digits}f}")
            else:
                cells.append("")
        lines.append(f"{dim}d,{label}," + ",".join(cells))
    return "\n".join(lines) + "\n"


def write_outputs(out_dir: Path, records: list[RunRecord], plan: BenchmarkPlan) -> None:
    out_dir = Path(out_dir)
    (out_dir / "runs.csv").write_text(runs_table(records))
    (out_dir / "timings.csv").write_text(times_table(records))
    (out_dir / "summary_local_sp.csv").write_text(summary_table(records, "local_sp"))
    (out_dir / "summary_global_sp.csv").write_text(summary_table(records, "global_sp"))
    (out_dir / "summary_train_seconds.csv").write_text(summary_table(records, "train_seconds", digits=1))


def synthetic_plan(**overrides) -> BenchmarkPlan:
    return replace(BenchmarkPlan(), **overrides)
