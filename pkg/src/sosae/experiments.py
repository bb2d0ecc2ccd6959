"""Multi-model pipelines behind the CLI subcommands.

Each pipeline takes a resolved config and writes CSVs into the output
directory. Independent training runs may execute on a thread pool; results
are always gathered in a fixed order, so outputs do not depend on timing.
"""

from __future__ import annotations

import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (
    ExperimentReport,
    activation_profile,
    compressed_length,
    curve_csv,
    flops_usage,
    mean_nonzero,
    memory_bytes,
    probe_model,
    reports_csv,
    truncation_sweep,
)
from .autoencoder import AutoencoderParams, TrainTrace, features, save_checkpoint, train
from .config import ExperimentConfig
from .datasets import Dataset, NoiseSpec, load_idx, synth_blobs
from .search import SearchResult, grid_search, log_csv, random_search, results_csv, sosae_oneshot

log = logging.getLogger("sosae")


@dataclass
class PipelineResult:
    files: list[Path] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def write_atomic(path: Path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg["dataset.kind"] == "synth":
        return synth_blobs(cfg["dataset.synth_n"], cfg["dataset.synth_d"],
                           cfg["dataset.synth_classes"], cfg["seed"],
                           spread=cfg["dataset.synth_spread"],
                           val_fraction=cfg["dataset.val_fraction"],
                           test_fraction=cfg["dataset.test_fraction"])
    return load_idx(cfg["dataset.images"], cfg["dataset.labels"], seed=cfg["seed"],
                    val_fraction=cfg["dataset.val_fraction"],
                    test_fraction=cfg["dataset.test_fraction"],
                    limit=cfg["dataset.limit"] or None,
                    test_images_path=cfg["dataset.test_images"] or None,
                    test_labels_path=cfg["dataset.test_labels"] or None)


def _map(fn, items, threads: int):
    """Apply ``fn`` to each item, returning ``(item, result, error)`` in input order."""
    def guarded(item):
        try:
            return item, fn(item), None
        except Exception as exc:  # isolated per run; reported by the caller
            return item, None, exc
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(guarded, items))
    return [guarded(item) for item in items]


def _record_failure(result: PipelineResult, name: str, exc: Exception) -> None:
    message = f"{type(exc).__name__}: {exc}"
    log.error("%s failed: %s", name, message)
    result.failures.append((name, message))


def evaluate(name: str, params: AutoencoderParams, dataset: Dataset,
             cfg: ExperimentConfig, spec) -> ExperimentReport:
    """Table 1 metrics for one trained model.

    Push-regularized models are truncated to their compressed length; every
    other model keeps its full width, and its FLOPs usage comes from the
    mean count of nonzero code entries.
    """
    eps = cfg["analysis.eps"]
    h = params.h
    x_val = dataset.part("val")[0]
    x_eval = dataset.part(dataset.eval_part())[0]
    probe = cfg.probe_config()
    if spec.uses_push:
        length = compressed_length(activation_profile(params, x_val, eps))
        if length == 0:
            raise RuntimeError(f"{name}: every code position is inactive at eps={eps:g}")
        usage = flops_usage(length, h)
    else:
        length = h
        active = mean_nonzero(features(params, x_eval, spec), eps)
        usage = flops_usage(active, h) if active > 0 else 0.0
    accuracy = probe_model(params, dataset, probe, spec, length)
    return ExperimentReport(name, dataset.name, length, accuracy, usage,
                            memory_bytes(len(x_eval), length))


def _train_model(cfg: ExperimentConfig, dataset: Dataset, model: str,
                 seed: int | None = None, noise: NoiseSpec | None = None):
    h = cfg["model.h_start"]
    tc = cfg.train_config(model, seed=seed, noise=noise, h=h)
    log.info("training %s: h=%d epochs=%d seed=%d noise=%s", model, h, tc.epochs, tc.seed,
             tc.noise.kind)
    params, trace = train(dataset, tc, h)
    return params, trace, tc.regularizer


def trace_csv(trace: TrainTrace) -> str:
    rows = ["epoch,reconstruction_loss,penalty_loss,total_loss,flops\n"]
    for i, r in enumerate(trace.epochs, start=1):
        rows.append(f"{i},{r.reconstruction_loss:.10f},{r.penalty_loss:.10f},"
                    f"{r.total_loss:.10f},{r.flops}\n")
    return "".join(rows)


def run_train(cfg: ExperimentConfig, out: Path, threads: int = 1) -> PipelineResult:
    dataset = load_dataset(cfg)
    model = cfg["model.kind"]
    params, trace, spec = _train_model(cfg, dataset, model)
    result = PipelineResult()
    ckpt = out / "model.ckpt"
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, params)
    result.files.append(ckpt)
    result.files.append(write_atomic(out / "trace.csv", trace_csv(trace)))
    report = evaluate(model, params, dataset, cfg, spec)
    result.files.append(write_atomic(out / "report.csv", reports_csv([report])))
    log.info("%s: compressed_length=%d probe_accuracy=%.4f", model,
             report.compressed_length, report.probe_accuracy)
    return result


def format_table(reports) -> str:
    header = f"{'model':<22}{'length':>8}{'accuracy':>10}{'flops %':>10}{'memory MB':>12}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(f"{r.model:<22}{r.compressed_length:>8}{100 * r.probe_accuracy:>9.2f}%"
                     f"{r.flops_usage_pct:>9.1f}%{r.memory_bytes / 1e6:>12.4f}")
    return "\n".join(lines) + "\n"


def _train_and_evaluate(cfg, dataset, models, threads, result):
    def job(model):
        params, _, spec = _train_model(cfg, dataset, model)
        return params, spec, evaluate(model, params, dataset, cfg, spec)
    done = []
    for model, value, exc in _map(job, models, threads):
        if exc is not None:
            _record_failure(result, model, exc)
        else:
            report = value[2]
            log.info("%s: compressed_length=%d probe_accuracy=%.4f", model,
                     report.compressed_length, report.probe_accuracy)
            done.append((model, *value))
    return done


def run_table1(cfg: ExperimentConfig, out: Path, threads: int = 1) -> PipelineResult:
    dataset = load_dataset(cfg)
    result = PipelineResult()
    done = _train_and_evaluate(cfg, dataset, cfg["table1.models"], threads, result)
    reports = [report for _, _, _, report in done]
    result.files.append(write_atomic(out / "table1.csv", reports_csv(reports)))
    table = format_table(reports)
    result.files.append(write_atomic(out / "table1.txt", table))
    log.info("\n%s", table)
    return result


def default_lengths(h: int) -> list[int]:
    """Ten evenly spaced truncation lengths ending at ``h``, plus length 1."""
    return sorted({1, *(max(1, round(h * i / 10)) for i in range(1, 11))})


def run_fig2(cfg: ExperimentConfig, out: Path, threads: int = 1) -> PipelineResult:
    dataset = load_dataset(cfg)
    h = cfg["model.h_start"]
    lengths = sorted(set(cfg["analysis.lengths"]) | {h}) if cfg["analysis.lengths"] else default_lengths(h)
    result = PipelineResult()
    probe = cfg.probe_config()

    def job(model):
        params, _, spec = _train_model(cfg, dataset, model)
        return truncation_sweep(params, dataset, lengths, probe, spec)

    for model, curve, exc in _map(job, cfg["fig2.models"], threads):
        if exc is not None:
            _record_failure(result, model, exc)
            continue
        result.files.append(write_atomic(out / f"fig2_{model}.csv", curve_csv(curve)))
    return result


FIG3_HEADER = "model,noise_kind,level,seed,compressed_length,probe_accuracy\n"


def run_fig3(cfg: ExperimentConfig, out: Path, threads: int = 1) -> PipelineResult:
    dataset = load_dataset(cfg)
    seeds = [cfg["seed"] + i for i in range(cfg["fig3.seeds"])]
    runs = []
    for kind, levels in (("zero_mask", cfg["fig3.nu_levels"]),
                         ("gaussian", cfg["fig3.sigma_levels"])):
        for level in levels:
            noise = NoiseSpec(kind, nu=level) if kind == "zero_mask" else NoiseSpec(kind, sigma=level)
            for seed in seeds:
                for model in ("sosae", "dae"):
                    runs.append((model, noise, level, seed))

    def job(run):
        model, noise, _, seed = run
        params, _, spec = _train_model(cfg, dataset, model, seed=seed, noise=noise)
        return evaluate(model, params, dataset, cfg.with_overrides(seed=seed), spec)

    result = PipelineResult()
    rows = [FIG3_HEADER]
    for (model, noise, level, seed), report, exc in _map(job, runs, threads):
        name = f"{model}/{noise.kind}={level:g}/seed={seed}"
        if exc is not None:
            _record_failure(result, name, exc)
            continue
        log.info("%s: compressed_length=%d probe_accuracy=%.4f", name,
                 report.compressed_length, report.probe_accuracy)
        rows.append(f"{model},{noise.kind},{level!r},{seed},{report.compressed_length},"
                    f"{report.probe_accuracy:.6f}\n")
    result.files.append(write_atomic(out / "fig3.csv", "".join(rows)))
    return result


def grid_candidates(cfg: ExperimentConfig) -> list[int]:
    step = cfg["search.grid_step"]
    return list(range(max(step, cfg["search.h_min"]), cfg["model.h_start"] + 1, step))


def run_table2(cfg: ExperimentConfig, out: Path, threads: int = 1) -> PipelineResult:
    dataset = load_dataset(cfg)
    h = cfg["model.h_start"]
    tau = cfg["search.tau"]
    shared = cfg.train_config("sosae", h=h)
    methods = {
        "grid": lambda: grid_search(dataset, grid_candidates(cfg), shared, tau, threads),
        "random": lambda: random_search(dataset, (cfg["search.h_min"], h), cfg["search.n_iters"],
                                        cfg["seed"], shared, tau, threads),
        "sosae": lambda: sosae_oneshot(dataset, h, shared, cfg["analysis.eps"])[0],
    }
    result = PipelineResult()
    found: list[SearchResult] = []
    for name, run in methods.items():
        log.info("search method %s", name)
        try:
            found.append(run())
        except Exception as exc:
            _record_failure(result, name, exc)
    for r in found:
        if r.method != "sosae":
            result.files.append(write_atomic(out / f"table2_{r.method}_log.csv", log_csv(r)))
        log.info("%s: iterations=%d tuned=%d flops=%d", r.method, r.iterations,
                 r.tuned_value, r.total_flops)
    result.files.append(write_atomic(out / "table2.csv", results_csv(found)))
    return result


PIPELINES = {
    "train": run_train,
    "table1": run_table1,
    "fig2": run_fig2,
    "fig3": run_fig3,
    "table2": run_table2,
}


def codes_summary(params: AutoencoderParams) -> str:
    rows = [f"d = {params.d}", f"h = {params.h}"]
    for name, array in params.arrays().items():
        rows.append(f"{name}: shape={array.shape} l2={np.linalg.norm(array):.6g} "
                    f"max_abs={np.max(np.abs(array)):.6g}")
    row_norms = np.linalg.norm(params.w_dec, axis=1)
    rows.append(f"decoder rows with norm > 1e-3: {int(np.sum(row_norms > 1e-3))}")
    return "\n".join(rows) + "\n"
