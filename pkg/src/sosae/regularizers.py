"""Activation penalties, their gradients, and the k-sparse projection.

Every penalty is reduced over the batch with a mean and over hidden units
with a sum, so coefficients do not depend on batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import ShapeError

KINDS = (
    "none",
    "l1",
    "l2",
    "ksparse",
    "ksparse_contractive",
    "contractive",
    "push",
    "push_contractive",
)


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "none"
    lam: float = 1e-3
    beta: float = 1e-4
    alpha: float = 0.01
    k: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}; expected one of {KINDS}")
        if self.lam < 0 or self.beta < 0:
            raise ValueError(f"lambda and beta must be >= 0, got {self.lam}, {self.beta}")
        if self.uses_push and not self.alpha > 0:
            raise ValueError(f"alpha must be > 0 for push penalties, got {self.alpha}")
        if self.uses_ksparse and self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    @property
    def uses_push(self) -> bool:
        return self.kind in ("push", "push_contractive")

    @property
    def uses_contractive(self) -> bool:
        return self.kind in ("contractive", "push_contractive", "ksparse_contractive")

    @property
    def uses_ksparse(self) -> bool:
        return self.kind in ("ksparse", "ksparse_contractive")


def push_coefficients(dim: int, alpha: float) -> np.ndarray:
    """Positional weights ``(1+alpha)**k`` for k = 1..dim."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    return (1.0 + alpha) ** np.arange(1, dim + 1, dtype=np.float64)


def push_loss(h: np.ndarray, alpha: float) -> float:
    coeffs = push_coefficients(h.shape[1], alpha)
    return float(np.mean(np.abs(h) @ coeffs))


def push_grad(h: np.ndarray, alpha: float) -> np.ndarray:
    coeffs = push_coefficients(h.shape[1], alpha)
    return np.sign(h) * coeffs / h.shape[0]


def l1_loss(h: np.ndarray) -> float:
    return float(np.mean(np.sum(np.abs(h), axis=1)))


def l1_grad(h: np.ndarray) -> np.ndarray:
    # np.sign(0) == 0, the chosen subgradient.
    return np.sign(h) / h.shape[0]


def l2_loss(h: np.ndarray) -> float:
    return float(np.mean(np.sum(h * h, axis=1)))


def l2_grad(h: np.ndarray) -> np.ndarray:
    return 2.0 * h / h.shape[0]


def ksparse_mask(h: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the k largest entries per row, ties to the lower index."""
    dim = h.shape[1]
    if not 1 <= k <= dim:
        raise ValueError(f"k must lie in [1, {dim}], got {k}")
    # Stable sort on -h keeps the lower index first among equal values.
    order = np.argsort(-h, axis=1, kind="stable")[:, :k]
    mask = np.zeros(h.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def ksparse_project(h: np.ndarray, k: int) -> np.ndarray:
    return np.where(ksparse_mask(h, k), h, 0.0)


def _check_contractive_shapes(h, w_enc):
    if h.shape[1] != w_enc.shape[1]:
        raise ShapeError(
            f"code width {h.shape[1]} does not match encoder weights {w_enc.shape}"
        )


def contractive_penalty(h: np.ndarray, w_enc: np.ndarray) -> float:
    """Squared Frobenius norm of a sigmoid encoder's Jacobian, batch mean."""
    _check_contractive_shapes(h, w_enc)
    slope_sq = (h * (1.0 - h)) ** 2
    col_norms = np.sum(w_enc * w_enc, axis=0)
    return float(np.mean(slope_sq @ col_norms))


def contractive_grads(h: np.ndarray, w_enc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of the contractive penalty w.r.t. ``h`` and ``w_enc``.

    The ``w_enc`` part is the direct dependence only; the path through ``h``
    is left to the caller's backward pass.
    """
    _check_contractive_shapes(h, w_enc)
    batch = h.shape[0]
    slope = h * (1.0 - h)
    col_norms = np.sum(w_enc * w_enc, axis=0)
    d_h = 2.0 * slope * (1.0 - 2.0 * h) * col_norms / batch
    d_w = 2.0 * w_enc * np.mean(slope * slope, axis=0)
    return d_h, d_w


def activation_penalty(h: np.ndarray, spec: RegularizerSpec) -> float:
    """lambda-weighted sparsity term on the codes (no contractive part)."""
    if spec.kind == "l1":
        return spec.lam * l1_loss(h)
    if spec.kind == "l2":
        return spec.lam * l2_loss(h)
    if spec.uses_push:
        return spec.lam * push_loss(h, spec.alpha)
    return 0.0


def activation_penalty_grad(h: np.ndarray, spec: RegularizerSpec) -> np.ndarray | None:
    if spec.kind == "l1":
        return spec.lam * l1_grad(h)
    if spec.kind == "l2":
        return spec.lam * l2_grad(h)
    if spec.uses_push:
        return spec.lam * push_grad(h, spec.alpha)
    return None
