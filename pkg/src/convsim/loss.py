"""Convolutional Similarity loss and the kernel-similarity baseline, with analytic gradients.

For two kernels the loss is the squared norm of their full cross-correlation,
summed over every lag. For a bank ``K`` of shape ``(S, C, *spatial)`` it sums
that quantity over every unordered kernel pair ``i < j`` and every channel
pair ``(c1, c2)``.

The bank loss is evaluated through per-kernel channel Gram matrices
``G_i[m, m'] = sum_c K_i[c][m] K_i[c][m']``: the pair term equals
``sum_{m, m'} G_i[m, m'] * sum_n G_j[m+n, m'+n]``. This costs ``O(S^2 D^2)``
instead of ``O(S^2 C^2 D^2)`` and is cross-checked against the brute-force
pairwise sum in :func:`conv_sim_bank_direct`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, as_tensor
from .signal import (
    cross_correlate,
    cross_correlate_2d,
    feature_inner_product,
    kernel_cross_correlation,
    kernel_cross_correlation_2d,
)


class DegenerateBankError(ValueError):
    """A bank needs at least two kernels for a pairwise loss."""


@dataclass
class KernelBank:
    """``S`` output kernels with ``C`` input channels each."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        if self.weights.ndim < 3:
            raise ShapeError(f"bank weights need shape (S, C, *spatial), got {self.weights.shape}")
        if min(self.weights.shape) < 1:
            raise ShapeError(f"empty bank dimension in {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("bank weights must be finite")

    @property
    def S(self) -> int:
        return self.weights.shape[0]

    @property
    def C(self) -> int:
        return self.weights.shape[1]

    @property
    def spatial(self) -> tuple[int, ...]:
        return self.weights.shape[2:]


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray | None = None


def _spatial(k, spatial_dims):
    nd = k.ndim if spatial_dims is None else spatial_dims
    if nd not in (1, 2):
        raise ShapeError(f"only 1-D and 2-D kernels are supported, got {nd} spatial dims")
    return nd


def _pair_xcorr(k1, k2, nd):
    return kernel_cross_correlation(k1, k2) if nd == 1 else kernel_cross_correlation_2d(k1, k2)


def conv_sim_pair(k1, k2, spatial_dims: int | None = None):
    """Sum over all lags of the squared full cross-correlation of two kernels.

    ``spatial_dims`` marks how many trailing axes are spatial; any axes before
    them are treated as a batch and a per-item array is returned.
    """
    k1 = as_tensor(k1)
    k2 = as_tensor(k2)
    if k1.shape != k2.shape:
        raise ShapeError(f"kernel shapes differ: {k1.shape} vs {k2.shape}")
    nd = _spatial(k1, spatial_dims)
    c = _pair_xcorr(k1, k2, nd)
    out = np.sum(c * c, axis=tuple(range(-nd, 0)))
    return float(out) if out.ndim == 0 else out


def _grad_first(k1, k2, nd):
    # d/dk1[i] sum_n c[n]^2 = 2 sum_n c[n] k2[i+n]
    c = _pair_xcorr(k1, k2, nd)
    if nd == 1:
        return 2.0 * cross_correlate(k2, c, k1.shape[-1] - 1)
    n_h, n_w = k1.shape[-2:]
    return 2.0 * cross_correlate_2d(k2, c, (n_h - 1, n_w - 1))


def conv_sim_pair_grad(k1, k2, spatial_dims: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    k1 = as_tensor(k1)
    k2 = as_tensor(k2)
    if k1.shape != k2.shape:
        raise ShapeError(f"kernel shapes differ: {k1.shape} vs {k2.shape}")
    nd = _spatial(k1, spatial_dims)
    # the loss is symmetric in its arguments
    return _grad_first(k1, k2, nd), _grad_first(k2, k1, nd)


def _as_bank(bank) -> np.ndarray:
    w = bank.weights if isinstance(bank, KernelBank) else KernelBank(bank).weights
    if w.shape[0] < 2:
        raise DegenerateBankError(f"bank has S={w.shape[0]} kernels; need at least 2")
    return w


def _shifted_diagonal_sum(q: np.ndarray, spatial: tuple[int, ...]) -> np.ndarray:
    """``out[..., m, m'] = sum_n q[..., m+n, m'+n]`` over every in-range lag ``n``.

    ``q`` has shape ``(..., *spatial, *spatial)``.
    """
    d = len(spatial)
    lead = q.ndim - 2 * d
    widths = [(0, 0)] * lead + [(s - 1, s - 1) for s in spatial] * 2
    qp = np.pad(q, widths)
    out = np.zeros_like(q)
    for lag in itertools.product(*(range(1 - s, s) for s in spatial)):
        idx = tuple(slice(s - 1 + n, 2 * s - 1 + n) for s, n in zip(spatial, lag))
        out += qp[(Ellipsis,) + idx + idx]
    return out


def _gram_terms(w: np.ndarray):
    s, c = w.shape[:2]
    spatial = w.shape[2:]
    dim = int(np.prod(spatial))
    flat = w.reshape(s, c, dim)
    gram = np.einsum("scd,sce->sde", flat, flat)
    shifted = _shifted_diagonal_sum(gram.reshape((s,) + spatial * 2), spatial).reshape(s, dim, dim)
    return flat, gram, shifted


def conv_sim_bank(bank, ordered: bool = False, with_grad: bool = False) -> LossValue:
    """Bank loss over kernel pairs ``i < j`` and all channel pairs.

    ``ordered=True`` sums over ``i != j`` instead, which is exactly twice the
    default value.
    """
    w = _as_bank(bank)
    s = w.shape[0]
    flat, gram, shifted = _gram_terms(w)
    pair = gram.reshape(s, -1) @ shifted.reshape(s, -1).T
    value = float(np.sum(np.triu(pair, k=1)))
    grad = None
    if with_grad:
        grad = _bank_grad(w, flat, gram, shifted)
    scale = 2.0 if ordered else 1.0
    return LossValue(scale * value, None if grad is None else scale * grad)


def _bank_grad(w, flat, gram, shifted):
    # dL/dK_i[c] = 2 * U(sum_{j != i} G_j) K_i[c], with U the shifted-diagonal sum
    others = np.sum(shifted, axis=0)[None] - shifted
    g = 2.0 * np.einsum("sde,sce->scd", others, flat)
    return g.reshape(w.shape)


def conv_sim_grad(bank, ordered: bool = False) -> np.ndarray:
    return conv_sim_bank(bank, ordered=ordered, with_grad=True).gradient


def conv_sim_bank_direct(bank, ordered: bool = False) -> float:
    """Brute-force bank loss: one full cross-correlation per (kernel, channel) pair."""
    w = _as_bank(bank)
    s, c = w.shape[:2]
    nd = w.ndim - 2
    total = 0.0
    for i in range(s):
        for j in range(s):
            if i == j or (not ordered and j < i):
                continue
            for c1 in range(c):
                for c2 in range(c):
                    total += conv_sim_pair(w[i, c1], w[j, c2], spatial_dims=nd)
    return total


def conv_sim_grad_direct(bank) -> np.ndarray:
    """Gradient of the simplified bank loss accumulated pair by pair."""
    w = _as_bank(bank)
    s, c = w.shape[:2]
    nd = w.ndim - 2
    g = np.zeros_like(w)
    for i in range(s):
        for j in range(i + 1, s):
            for c1 in range(c):
                for c2 in range(c):
                    g1, g2 = conv_sim_pair_grad(w[i, c1], w[j, c2], spatial_dims=nd)
                    g[i, c1] += g1
                    g[j, c2] += g2
    return g


def kernel_similarity(k1, k2, spatial_dims: int | None = None):
    """Squared inner product ``<k1, k2>^2``."""
    k1 = as_tensor(k1)
    k2 = as_tensor(k2)
    if k1.shape != k2.shape:
        raise ShapeError(f"kernel shapes differ: {k1.shape} vs {k2.shape}")
    nd = k1.ndim if spatial_dims is None else spatial_dims
    ip = np.sum(k1 * k2, axis=tuple(range(-nd, 0))) if nd else k1 * k2
    out = ip * ip
    return float(out) if np.ndim(out) == 0 else out


def kernel_similarity_grad(k1, k2, spatial_dims: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    k1 = as_tensor(k1)
    k2 = as_tensor(k2)
    if k1.shape != k2.shape:
        raise ShapeError(f"kernel shapes differ: {k1.shape} vs {k2.shape}")
    nd = k1.ndim if spatial_dims is None else spatial_dims
    axes = tuple(range(-nd, 0))
    ip = np.sum(k1 * k2, axis=axes, keepdims=True)
    return 2.0 * ip * k2, 2.0 * ip * k1


def feature_map_similarity_metric(x, k1, k2, pad="full"):
    """Squared feature-map inner product ``<F1, F2>^2`` (sign-free)."""
    ip = feature_inner_product(x, k1, k2, pad)
    return ip * ip
