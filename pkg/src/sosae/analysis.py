"""Compressed length, truncation, linear probes and cost accounting."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import AutoencoderParams, encode, epoch_flops, features
from .datasets import Dataset
from .numcore import Rng, derive_seed

DEFAULT_EPS = 1e-3
CODE_BYTES = 4  # stored codes are float32

REPORT_HEADER = ("model", "dataset", "compressed_length", "probe_accuracy",
                 "flops_usage_pct", "memory_bytes")


@dataclass
class ActivationProfile:
    mean_abs: np.ndarray
    eps: float = DEFAULT_EPS

    @property
    def active(self) -> np.ndarray:
        return self.mean_abs > self.eps


def activation_profile(params: AutoencoderParams, x: np.ndarray,
                       eps: float = DEFAULT_EPS) -> ActivationProfile:
    return ActivationProfile(np.mean(np.abs(encode(params, x)), axis=0), eps)


def compressed_length(profile: ActivationProfile) -> int:
    """One past the last position whose mean |activation| exceeds eps."""
    if not profile.eps > 0:
        raise ValueError(f"eps must be > 0, got {profile.eps}")
    idx = np.flatnonzero(profile.active)
    return int(idx[-1]) + 1 if idx.size else 0


def stragglers(profile: ActivationProfile) -> int:
    """Active positions that come after the first inactive one."""
    active = profile.active
    if active.all():
        return 0
    first_off = int(np.argmin(active))
    return int(active[first_off:].sum())


def truncate_model(params: AutoencoderParams, length: int) -> AutoencoderParams:
    if not 1 <= length <= params.h:
        raise ValueError(f"truncation length must lie in [1, {params.h}], got {length}")
    return AutoencoderParams(
        params.w_enc[:, :length].copy(),
        params.b_enc[:length].copy(),
        params.w_dec[:length].copy(),
        params.b_dec.copy(),
    )


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    learning_rate: float = 1e-2
    batch_size: int = 100
    seed: int = 0


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def probe_train_eval(features_train: np.ndarray, labels_train: np.ndarray,
                     features_test: np.ndarray, labels_test: np.ndarray,
                     config: ProbeConfig = ProbeConfig(), n_classes: int | None = None) -> float:
    """Fit softmax regression on frozen features with Adam; return test accuracy.

    Weights start at zero, so feature columns that are identically zero never
    move and do not change the result.
    """
    if features_train.shape[1] != features_test.shape[1]:
        raise ValueError(f"feature widths differ: {features_train.shape} vs {features_test.shape}")
    if len(features_train) != len(labels_train) or len(features_test) != len(labels_test):
        raise ValueError("features and labels have different lengths")
    if n_classes is None:
        n_classes = int(max(labels_train.max(), labels_test.max())) + 1
    for y in (labels_train, labels_test):
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise ValueError(f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")
    n, width = features_train.shape
    w = np.zeros((width, n_classes))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[labels_train]
    m_w, v_w = np.zeros_like(w), np.zeros_like(w)
    m_b, v_b = np.zeros_like(b), np.zeros_like(b)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    rng = Rng(derive_seed(config.seed, 17))
    t = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            f = features_train[idx]
            d_z = (_softmax(f @ w + b) - onehot[idx]) / len(idx)
            g_w, g_b = f.T @ d_z, d_z.sum(axis=0)
            t += 1
            bc1, bc2 = 1 - beta1 ** t, 1 - beta2 ** t
            for p, g, m, v in ((w, g_w, m_w, v_w), (b, g_b, m_b, v_b)):
                m *= beta1
                m += (1 - beta1) * g
                v *= beta2
                v += (1 - beta2) * g * g
                p -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)
    pred = np.argmax(features_test @ w + b, axis=1)
    return float(np.mean(pred == labels_test))


def _split_features(params, dataset, spec):
    x_tr, y_tr = dataset.part("train")
    x_te, y_te = dataset.part(dataset.eval_part())
    return features(params, x_tr, spec), y_tr, features(params, x_te, spec), y_te


def probe_model(params: AutoencoderParams, dataset: Dataset,
                config: ProbeConfig = ProbeConfig(), spec=None,
                length: int | None = None) -> float:
    """Probe accuracy of the model's codes: fit on train, score on the held-out split.

    ``length`` keeps only the leading code positions.
    """
    f_tr, y_tr, f_te, y_te = _split_features(params, dataset, spec)
    length = params.h if length is None else length
    if not 1 <= length <= params.h:
        raise ValueError(f"truncation length {length} outside [1, {params.h}]")
    return probe_train_eval(f_tr[:, :length], y_tr, f_te[:, :length], y_te,
                            config, dataset.n_classes)


def truncation_sweep(params: AutoencoderParams, dataset: Dataset, lengths,
                     config: ProbeConfig = ProbeConfig(), spec=None) -> list[tuple[int, float]]:
    """Probe accuracy on codes cut to each length.

    Codes are computed once at full width and then sliced, so a k-sparse
    model keeps the support chosen by its full encoder.
    """
    for length in lengths:
        if not 1 <= length <= params.h:
            raise ValueError(f"truncation length {length} outside [1, {params.h}]")
    f_tr, y_tr, f_te, y_te = _split_features(params, dataset, spec)
    return [(int(n), probe_train_eval(f_tr[:, :n], y_tr, f_te[:, :n], y_te,
                                      config, dataset.n_classes))
            for n in lengths]


def flops_usage(active_len: float, full_len: int) -> float:
    """Percent of full-width inference FLOPs needed for codes of ``active_len``.

    ``active_len`` may be fractional: the mean nonzero count of an
    unstructured sparse code.
    """
    if not 0 < active_len <= full_len:
        raise ValueError(f"need 0 < active_len <= full_len, got {active_len}, {full_len}")
    return 100.0 * active_len / full_len


def mean_nonzero(codes: np.ndarray, eps: float = DEFAULT_EPS) -> float:
    """Mean count per sample of code entries with |value| > eps."""
    return float(np.mean(np.sum(np.abs(codes) > eps, axis=1)))


def memory_bytes(n_samples: int, length: int) -> int:
    return n_samples * length * CODE_BYTES


def training_flops(d: int, h: int, n_samples: int, epochs: int) -> int:
    if min(d, h, n_samples, epochs) < 1:
        raise ValueError("training_flops arguments must be positive")
    return epochs * epoch_flops(d, h, n_samples)


@dataclass
class ExperimentReport:
    model: str
    dataset: str
    compressed_length: int
    probe_accuracy: float
    flops_usage_pct: float
    memory_bytes: int
    truncation_curve: list[tuple[int, float]] = field(default_factory=list)

    def row(self) -> list:
        return [self.model, self.dataset, self.compressed_length,
                f"{self.probe_accuracy:.6f}", f"{self.flops_usage_pct:.4f}", self.memory_bytes]


def reports_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


def curve_csv(curve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("length", "accuracy"))
    for length, acc in curve:
        writer.writerow((length, f"{acc:.6f}"))
    return buf.getvalue()
