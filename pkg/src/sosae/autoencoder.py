"""Shallow sigmoid autoencoder with hand-written backprop and Adam."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import regularizers as reg
from .datasets import Dataset, NoiseSpec, corrupt
from .numcore import Rng, ShapeError, derive_seed, sigmoid

CHECKPOINT_MAGIC = b"SOSAE1\n"

# Fixed sub-stream tags for derive_seed.
_INIT_STREAM = 1
_SHUFFLE_STREAM = 2
_NOISE_STREAM = 3

PARAM_NAMES = ("w_enc", "b_enc", "w_dec", "b_dec")


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: total loss {loss}")
        self.epoch = epoch


@dataclass
class AutoencoderParams:
    w_enc: np.ndarray  # d x h
    b_enc: np.ndarray  # h
    w_dec: np.ndarray  # h x d
    b_dec: np.ndarray  # d

    def __post_init__(self):
        d, h = self.w_enc.shape
        if self.b_enc.shape != (h,) or self.w_dec.shape != (h, d) or self.b_dec.shape != (d,):
            raise ShapeError(
                f"inconsistent parameter shapes: w_enc {self.w_enc.shape}, b_enc {self.b_enc.shape}, "
                f"w_dec {self.w_dec.shape}, b_dec {self.b_dec.shape}"
            )

    @property
    def d(self) -> int:
        return self.w_enc.shape[0]

    @property
    def h(self) -> int:
        return self.w_enc.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(**{k: v.copy() for k, v in self.arrays().items()})

    @classmethod
    def zeros(cls, d: int, h: int) -> "AutoencoderParams":
        return cls(np.zeros((d, h)), np.zeros(h), np.zeros((h, d)), np.zeros(d))

    @classmethod
    def init(cls, d: int, h: int, seed: int) -> "AutoencoderParams":
        """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
        rng = Rng(derive_seed(seed, _INIT_STREAM))
        limit = math.sqrt(6.0 / (d + h))
        w_enc = rng.uniform(-limit, limit, d, h)
        w_dec = rng.uniform(-limit, limit, h, d)
        return cls(w_enc, np.zeros(h), w_dec, np.zeros(d))


Gradients = AutoencoderParams


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 100
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    regularizer: reg.RegularizerSpec = field(default_factory=reg.RegularizerSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    shuffle: bool = True
    recon: str = "mae"

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f"epochs and batch_size must be >= 1, got {self.epochs}, {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError(f"Adam betas must lie in [0, 1), got {self.adam_beta1}, {self.adam_beta2}")
        if self.recon not in ("mae", "mse"):
            raise ValueError(f"recon must be 'mae' or 'mse', got {self.recon!r}")


@dataclass
class EpochRecord:
    reconstruction_loss: float
    penalty_loss: float
    total_loss: float
    flops: int


@dataclass
class TrainTrace:
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.epochs)


def _check_input(params: AutoencoderParams, x: np.ndarray, width: int, what: str):
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what} has shape {x.shape}, expected (batch, {width})")


def encode(params: AutoencoderParams, x: np.ndarray) -> np.ndarray:
    _check_input(params, x, params.d, "input")
    return sigmoid(x @ params.w_enc + params.b_enc)


def decode(params: AutoencoderParams, h: np.ndarray) -> np.ndarray:
    _check_input(params, h, params.h, "code")
    return sigmoid(h @ params.w_dec + params.b_dec)


def _codes(params, x_in, spec):
    """Encoder activations and the (possibly projected) codes fed to the decoder."""
    h = encode(params, x_in)
    if spec.uses_ksparse:
        mask = reg.ksparse_mask(h, spec.k)
        return h, np.where(mask, h, 0.0), mask
    return h, h, None


def features(params: AutoencoderParams, x: np.ndarray,
             spec: reg.RegularizerSpec | None = None) -> np.ndarray:
    """Codes as the decoder sees them: k-sparse models keep only their top k."""
    if spec is None:
        return encode(params, x)
    return _codes(params, x, spec)[1]


def _recon_loss(y, x_clean, recon):
    diff = y - x_clean
    if recon == "mse":
        return float(np.mean(diff * diff))
    return float(np.mean(np.abs(diff)))


def sosae_loss(params: AutoencoderParams, x_clean: np.ndarray, x_in: np.ndarray,
               spec: reg.RegularizerSpec, recon: str = "mae") -> tuple[float, float, float]:
    """Return ``(total, reconstruction, penalty)``."""
    if x_clean.shape != x_in.shape:
        raise ShapeError(f"clean target {x_clean.shape} and input {x_in.shape} differ")
    h, code, _ = _codes(params, x_in, spec)
    rec = _recon_loss(decode(params, code), x_clean, recon)
    pen = reg.activation_penalty(h, spec)
    if spec.uses_contractive:
        pen += spec.beta * reg.contractive_penalty(h, params.w_enc)
    return rec + pen, rec, pen


def backward(params: AutoencoderParams, x_clean: np.ndarray, x_in: np.ndarray,
             spec: reg.RegularizerSpec, recon: str = "mae") -> tuple[Gradients, tuple[float, float, float]]:
    """Exact gradients of the total loss, plus the loss triple from the same pass."""
    if x_clean.shape != x_in.shape:
        raise ShapeError(f"clean target {x_clean.shape} and input {x_in.shape} differ")
    h, code, mask = _codes(params, x_in, spec)
    y = decode(params, code)
    diff = y - x_clean
    if recon == "mse":
        rec = float(np.mean(diff * diff))
        d_y = 2.0 * diff / diff.size
    else:
        rec = float(np.mean(np.abs(diff)))
        d_y = np.sign(diff) / diff.size

    d_z2 = d_y * y * (1.0 - y)
    g_w_dec = code.T @ d_z2
    g_b_dec = d_z2.sum(axis=0)
    d_h = d_z2 @ params.w_dec.T
    if mask is not None:
        d_h *= mask

    pen = reg.activation_penalty(h, spec)
    d_pen = reg.activation_penalty_grad(h, spec)
    if d_pen is not None:
        d_h += d_pen
    g_w_enc_direct = None
    if spec.uses_contractive:
        pen += spec.beta * reg.contractive_penalty(h, params.w_enc)
        c_h, c_w = reg.contractive_grads(h, params.w_enc)
        d_h += spec.beta * c_h
        g_w_enc_direct = spec.beta * c_w

    d_z1 = d_h * h * (1.0 - h)
    g_w_enc = x_in.T @ d_z1
    if g_w_enc_direct is not None:
        g_w_enc += g_w_enc_direct
    g_b_enc = d_z1.sum(axis=0)
    grads = AutoencoderParams(g_w_enc, g_b_enc, g_w_dec, g_b_dec)
    return grads, (rec + pen, rec, pen)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def fresh(cls, params: AutoencoderParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.arrays().items()},
                   {k: np.zeros_like(a) for k, a in params.arrays().items()})


def adam_step(params: AutoencoderParams, state: AdamState, grads: AutoencoderParams,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam update with bias correction; advances ``state.t``."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name in PARAM_NAMES:
        g = getattr(grads, name)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p = getattr(params, name)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def epoch_flops(d: int, h: int, n: int) -> int:
    """Forward 2*m*n per dense layer, backward twice that; penalties/optimizer excluded."""
    return 6 * n * (d * h + h * d)


def train(dataset: Dataset | np.ndarray, config: TrainConfig, h: int,
          params: AutoencoderParams | None = None,
          on_epoch=None) -> tuple[AutoencoderParams, TrainTrace]:
    """Train on the training split (or on a bare sample matrix).

    ``on_epoch(epoch, params, record)`` is called after every epoch.
    """
    config.validate()
    x = dataset.part("train")[0] if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    n, d = x.shape
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    spec = config.regularizer
    if spec.uses_ksparse and spec.k > h:
        raise ValueError(f"k={spec.k} exceeds hidden size {h}")
    if params is None:
        params = AutoencoderParams.init(d, h, config.seed)
    state = AdamState.fresh(params)
    shuffle_rng = Rng(derive_seed(config.seed, _SHUFFLE_STREAM))
    trace = TrainTrace()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n) if config.shuffle else np.arange(n)
        x_noisy = x
        if config.noise.kind != "none":
            noise_rng = Rng(derive_seed(config.seed, _NOISE_STREAM, epoch))
            x_noisy = corrupt(x, config.noise, noise_rng)
        sums = np.zeros(3)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            grads, losses = backward(params, x[idx], x_noisy[idx], spec, config.recon)
            sums += np.array(losses) * len(idx)
            if not math.isfinite(losses[0]):
                raise DivergenceError(epoch, losses[0])
            adam_step(params, state, grads, config.learning_rate,
                      config.adam_beta1, config.adam_beta2, config.adam_eps)
        total, rec, pen = sums / n
        trace.epochs.append(EpochRecord(rec, pen, total, epoch_flops(d, h, n)))
        if on_epoch is not None:
            on_epoch(epoch, params, trace.epochs[-1])
    return params, trace


def reconstruction_mae(params: AutoencoderParams, x: np.ndarray) -> float:
    return float(np.mean(np.abs(decode(params, encode(params, x)) - x)))


def save_checkpoint(path, params: AutoencoderParams) -> None:
    blob = bytearray(CHECKPOINT_MAGIC)
    blob += struct.pack("<II", params.d, params.h)
    for name in PARAM_NAMES:
        blob += np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> AutoencoderParams:
    raw = Path(path).read_bytes()
    head = len(CHECKPOINT_MAGIC)
    if raw[:head] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {raw[:head]!r})")
    d, h = struct.unpack("<II", raw[head:head + 8])
    sizes = (d * h, h, h * d, d)
    if len(raw) != head + 8 + 8 * sum(sizes):
        raise ValueError(f"{path}: checkpoint length does not match d={d}, h={h}")
    flat = np.frombuffer(raw, dtype="<f8", offset=head + 8).astype(np.float64)
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    return AutoencoderParams(parts[0].reshape(d, h).copy(), parts[1].copy(),
                             parts[2].reshape(h, d).copy(), parts[3].copy())
