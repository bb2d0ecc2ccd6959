import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sosae.analysis import training_flops
from sosae.autoencoder import TrainConfig
from sosae.datasets import synth_blobs
from sosae.regularizers import RegularizerSpec
from sosae.search import (
    SearchError,
    elbow,
    grid_search,
    log_csv,
    random_search,
    results_csv,
    sample_candidates,
    sosae_oneshot,
)

CFG = TrainConfig(epochs=2, batch_size=20, learning_rate=1e-2, seed=0,
                  regularizer=RegularizerSpec("push_contractive"))


@pytest.fixture(scope="module")
def blobs():
    return synth_blobs(120, 6, 3, seed=0)


def test_elbow_hand_scan():
    assert elbow([1, 2, 3, 4, 5], [1.0, 0.30, 0.21, 0.20, 0.20], 0.05) == 3
    assert elbow([3, 5, 9], [0.4, 0.4, 0.4]) == 3
    assert elbow([1, 2, 3], [3.0, 2.0, 1.0], 0.0) == 3


def test_elbow_sorts_its_input():
    assert elbow([5, 1, 3, 2, 4], [0.20, 1.0, 0.21, 0.30, 0.20]) == 3


def test_elbow_synthetic_knee():
    hs = list(range(1, 33))
    losses = [1.0 + 0.5 * max(0, 8 - h) + 1e-3 * (32 - h) / 32 for h in hs]
    assert elbow(hs, losses, 0.05) == 8


def test_elbow_errors():
    with pytest.raises(ValueError):
        elbow([], [])
    with pytest.raises(ValueError):
        elbow([1, 2], [1.0])
    with pytest.raises(ValueError):
        elbow([1, 2], [1.0, float("nan")])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=20), st.floats(0, 1), st.floats(0, 1))
def test_elbow_monotone_in_tau(losses, t1, t2):
    hs = list(range(1, len(losses) + 1))
    lo, hi = sorted((t1, t2))
    assert elbow(hs, losses, hi) <= elbow(hs, losses, lo)


def test_grid_bookkeeping(blobs):
    cands = [2, 4, 6]
    result = grid_search(blobs, cands, CFG)
    n = len(blobs.split.train)
    assert result.method == "grid" and result.iterations == 3
    assert [row[0] for row in result.log] == cands
    assert result.total_flops == sum(training_flops(6, h, n, CFG.epochs) for h in cands)
    assert result.total_flops == sum(row[2] for row in result.log)
    assert result.tuned_value in cands


def test_grid_singleton_and_order(blobs):
    assert grid_search(blobs, [5], CFG).tuned_value == 5
    with pytest.raises(ValueError):
        grid_search(blobs, [4, 2], CFG)
    with pytest.raises(ValueError):
        grid_search(blobs, [], CFG)


def test_grid_to_oneshot_ratio_identity(blobs):
    cands = [2, 4, 6, 8]
    grid = grid_search(blobs, cands, CFG)
    one, _ = sosae_oneshot(blobs, 8, CFG)
    assert grid.total_flops * 8 == one.total_flops * len(cands) * np.mean(cands)


def test_parallel_sweep_matches_serial(blobs):
    serial = grid_search(blobs, [2, 3, 4, 5], CFG)
    parallel = grid_search(blobs, [2, 3, 4, 5], CFG, workers=3)
    assert serial.log == parallel.log


def test_random_candidates():
    assert sample_candidates((1, 10), 4, seed=3) == sample_candidates((1, 10), 4, seed=3)
    assert sample_candidates((1, 10), 10, seed=3) == list(range(1, 11))
    picked = sample_candidates((5, 50), 20, seed=1)
    assert len(set(picked)) == 20 and min(picked) >= 5 and max(picked) <= 50
    with pytest.raises(ValueError):
        sample_candidates((1, 10), 11, seed=0)


def test_random_search_full_range_equals_grid(blobs):
    rand = random_search(blobs, (1, 5), 5, seed=2, config=CFG)
    grid = grid_search(blobs, [1, 2, 3, 4, 5], CFG)
    assert rand.method == "random" and rand.iterations == 5
    assert rand.log == grid.log and rand.tuned_value == grid.tuned_value


def test_oneshot_bookkeeping(blobs):
    result, params = sosae_oneshot(blobs, 8, CFG)
    n = len(blobs.split.train)
    assert result.method == "sosae" and result.iterations == 1
    assert result.total_flops == training_flops(6, 8, n, CFG.epochs)
    assert 0 <= result.tuned_value <= 8 and params.h == 8
    with pytest.raises(ValueError, match="push"):
        sosae_oneshot(blobs, 8, TrainConfig(epochs=1))


def test_failed_candidate_is_annotated(blobs):
    x = blobs.x.copy()
    x[blobs.split.train[0], 0] = np.nan
    broken = type(blobs)(x, blobs.labels, blobs.split, blobs.n_classes)
    with pytest.raises(SearchError, match="hidden size 3"):
        grid_search(broken, [3], CFG)


def test_csv_outputs(blobs):
    grid = grid_search(blobs, [2, 3], CFG)
    text = results_csv([grid])
    assert text.splitlines()[0] == "method,iterations,tuned_value,total_flops"
    assert text.splitlines()[1].startswith("grid,2,")
    log = log_csv(grid).splitlines()
    assert log[0] == "h,val_recon_loss,flops" and len(log) == 3
