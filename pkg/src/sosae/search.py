"""Hidden-size search: grid and random sweeps versus a single push-regularized run."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import DEFAULT_EPS, activation_profile, compressed_length
from .autoencoder import TrainConfig, encode, decode, train
from .datasets import Dataset
from .numcore import Rng, derive_seed
from .regularizers import RegularizerSpec

DEFAULT_TAU = 0.05


class SearchError(RuntimeError):
    def __init__(self, candidate: int, cause: Exception):
        super().__init__(f"training failed for hidden size {candidate}: {cause}")
        self.candidate = candidate


@dataclass
class SearchResult:
    method: str
    iterations: int
    tuned_value: int
    total_flops: int
    log: list[tuple[int, float, int]] = field(default_factory=list)


def elbow(hs, losses, tau: float = DEFAULT_TAU) -> int:
    """Smallest h whose loss is within (1 + tau) of the loss at the largest h."""
    if len(hs) == 0 or len(hs) != len(losses):
        raise ValueError(f"need equal, non-empty hs and losses, got {len(hs)} and {len(losses)}")
    order = np.argsort(hs, kind="stable")
    hs = np.asarray(hs)[order]
    losses = np.asarray(losses, dtype=np.float64)[order]
    if not np.all(np.isfinite(losses)):
        raise ValueError("losses must be finite")
    target = (1.0 + tau) * losses[-1]
    return int(hs[np.flatnonzero(losses <= target)[0]])


def _val_mae(params, dataset: Dataset) -> float:
    x_val = dataset.part("val")[0]
    return float(np.mean(np.abs(decode(params, encode(params, x_val)) - x_val)))


def _train_candidate(dataset, h, config):
    try:
        params, trace = train(dataset, config, h)
    except Exception as exc:
        raise SearchError(h, exc) from exc
    return h, _val_mae(params, dataset), trace.total_flops


def _sweep(dataset, candidates, config, workers):
    plain = replace(config, regularizer=RegularizerSpec(kind="none"))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            log = list(pool.map(lambda h: _train_candidate(dataset, h, plain), candidates))
    else:
        log = [_train_candidate(dataset, h, plain) for h in candidates]
    return sorted(log)


def grid_search(dataset: Dataset, h_candidates, config: TrainConfig,
                tau: float = DEFAULT_TAU, workers: int = 1) -> SearchResult:
    candidates = [int(h) for h in h_candidates]
    if not candidates:
        raise ValueError("grid search needs at least one candidate")
    if candidates != sorted(candidates):
        raise ValueError("grid candidates must be sorted ascending")
    log = _sweep(dataset, candidates, config, workers)
    tuned = elbow([r[0] for r in log], [r[1] for r in log], tau)
    return SearchResult("grid", len(log), tuned, sum(r[2] for r in log), log)


def sample_candidates(h_range: tuple[int, int], n_iters: int, seed: int) -> list[int]:
    """``n_iters`` distinct sizes drawn uniformly from the inclusive range."""
    lo, hi = h_range
    population = np.arange(lo, hi + 1)
    if not 1 <= n_iters <= population.size:
        raise ValueError(f"n_iters must lie in [1, {population.size}], got {n_iters}")
    picked = Rng(derive_seed(seed, 29)).choice(population, n_iters)
    return sorted(int(h) for h in picked)


def random_search(dataset: Dataset, h_range: tuple[int, int], n_iters: int, seed: int,
                  config: TrainConfig, tau: float = DEFAULT_TAU, workers: int = 1) -> SearchResult:
    candidates = sample_candidates(h_range, n_iters, seed)
    log = _sweep(dataset, candidates, config, workers)
    tuned = elbow([r[0] for r in log], [r[1] for r in log], tau)
    return SearchResult("random", len(log), tuned, sum(r[2] for r in log), log)


def sosae_oneshot(dataset: Dataset, h_start: int, config: TrainConfig,
                  eps: float = DEFAULT_EPS) -> tuple[SearchResult, object]:
    """One push-regularized run; the tuned size is its compressed length.

    Returns the search result and the trained parameters.
    """
    if not config.regularizer.uses_push:
        raise ValueError(f"one-shot sizing needs a push regularizer, got {config.regularizer.kind!r}")
    params, trace = train(dataset, config, h_start)
    profile = activation_profile(params, dataset.part("val")[0], eps)
    length = compressed_length(profile)
    result = SearchResult("sosae", 1, length, trace.total_flops,
                          [(h_start, _val_mae(params, dataset), trace.total_flops)])
    return result, params


def results_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("method", "iterations", "tuned_value", "total_flops"))
    for r in results:
        writer.writerow((r.method, r.iterations, r.tuned_value, r.total_flops))
    return buf.getvalue()


def log_csv(result: SearchResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("h", "val_recon_loss", "flops"))
    for h, loss, flops in result.log:
        writer.writerow((h, f"{loss:.8f}", flops))
    return buf.getvalue()
