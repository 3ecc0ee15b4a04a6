"""Zero-padded 1-D/2-D cross-correlation and the feature-map inner-product identities.

Index conventions follow the usual CNN layer definition. For a signal ``x`` of
length ``M``, a kernel ``k`` of length ``N`` and padding ``P``::

    (x ⊛ k)[i] = sum_n k[n] * x[i + n - N + 1],   i in [N-1-P, M-1+P]

with out-of-range reads of ``x`` returning zero. Arrays returned by the
correlation routines start at absolute index ``N-1-P`` (see
:func:`output_range`).

All routines act on the last axis (last two axes for the 2-D variants) and
broadcast over any leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numerics import ShapeError, as_tensor


class PaddingError(ValueError):
    pass


@dataclass(frozen=True)
class PaddingSpec:
    """Symmetric zero padding ``P`` with ``0 <= P <= N-1``.

    Use :meth:`full`, :meth:`valid` or :meth:`same` for the named variants.
    ``P=None`` is the deferred "full" padding, resolved once the kernel
    length is known.
    """

    P: int | None = None
    name: str = "custom"

    @classmethod
    def full(cls, n: int | None = None) -> "PaddingSpec":
        return cls(None if n is None else n - 1, "full")

    @classmethod
    def valid(cls) -> "PaddingSpec":
        return cls(0, "valid")

    @classmethod
    def same(cls, n: int | None = None) -> "PaddingSpec":
        if n is None:
            return cls(None, "same")
        if n % 2 == 0:
            raise PaddingError(f"same padding requires an odd kernel length, got N={n}")
        return cls((n - 1) // 2, "same")

    def resolve(self, n: int) -> int:
        if self.name == "full":
            p = n - 1 if self.P is None else self.P
            if p != n - 1:
                raise PaddingError(f"full padding built for N={p + 1} used with N={n}")
        elif self.name == "same":
            p = PaddingSpec.same(n).P if self.P is None else self.P
        else:
            p = self.P
        if p is None or not 0 <= p <= n - 1:
            raise PaddingError(f"padding P={p} outside [0, {n - 1}] for N={n}")
        return p


def resolve_padding(pad, n: int) -> int:
    """Accept a :class:`PaddingSpec`, an int, or one of ``'full'|'valid'|'same'``."""
    if isinstance(pad, PaddingSpec):
        return pad.resolve(n)
    if isinstance(pad, str):
        try:
            spec = {"full": PaddingSpec.full, "valid": PaddingSpec.valid, "same": PaddingSpec.same}[pad]()
        except KeyError:
            raise PaddingError(f"unknown padding name {pad!r}") from None
        return spec.resolve(n)
    if isinstance(pad, (int, np.integer)) and not isinstance(pad, bool):
        return PaddingSpec(int(pad)).resolve(n)
    raise PaddingError(f"cannot interpret padding {pad!r}")


def output_range(m: int, n: int, pad) -> range:
    """Absolute output indices ``[N-1-P, M-1+P]`` of a padded correlation."""
    p = resolve_padding(pad, n)
    return range(n - 1 - p, m + p)


def _check_lengths(m: int, n: int):
    if m < 1 or n < 1:
        raise ShapeError(f"signal and kernel must be non-empty (M={m}, N={n})")


def cross_correlate(x, k, pad="full") -> np.ndarray:
    """Padded cross-correlation; output length ``M + 2P - N + 1``."""
    x = as_tensor(x)
    k = as_tensor(k)
    m, n = x.shape[-1], k.shape[-1]
    _check_lengths(m, n)
    p = resolve_padding(pad, n)
    if m + 2 * p < n:
        raise PaddingError(f"kernel N={n} longer than padded signal M+2P={m + 2 * p}")
    widths = [(0, 0)] * (x.ndim - 1) + [(p, p)]
    windows = sliding_window_view(np.pad(x, widths), n, axis=-1)
    return np.sum(windows * k[..., None, :], axis=-1)


def convolve(x, k, pad="full") -> np.ndarray:
    """Padded convolution, ``(x * k)[i] = sum_n k[n] x[i-n]``."""
    return cross_correlate(x, as_tensor(k)[..., ::-1], pad)


@dataclass(frozen=True)
class ClippedAutoCorr:
    """Auto-correlation restricted to lags ``[1-N, N-1]``; ``values[..., k]`` is lag ``k + offset``."""

    values: np.ndarray
    offset: int

    def at(self, lag: int):
        return self.values[..., lag - self.offset]

    @property
    def lags(self) -> range:
        return range(self.offset, self.offset + self.values.shape[-1])


def auto_correlate_clipped(x, n: int) -> ClippedAutoCorr:
    """``sum_i x[i+lag] x[i]`` for lags ``1-N .. N-1`` with zero extension."""
    if n < 1:
        raise ValueError(f"lag half-width N must be >= 1, got {n}")
    x = as_tensor(x)
    m = x.shape[-1]
    widths = [(0, 0)] * (x.ndim - 1) + [(n - 1, n - 1)]
    windows = sliding_window_view(np.pad(x, widths), m, axis=-1)
    return ClippedAutoCorr(np.sum(windows * x[..., None, :], axis=-1), 1 - n)


def kernel_cross_correlation(k1, k2) -> np.ndarray:
    """Full cross-correlation ``c[n] = sum_m k1[m] k2[m+n]`` over lags ``1-N .. N-1``.

    Index ``j`` of the result holds lag ``j - (N-1)``.
    """
    k1 = as_tensor(k1)
    k2 = as_tensor(k2)
    if k1.shape[-1] != k2.shape[-1]:
        raise ShapeError(f"kernel lengths differ: {k1.shape[-1]} vs {k2.shape[-1]}")
    return cross_correlate(k2, k1, "full")


def feature_inner_product(x, k1, k2, pad="full", mode: str = "correlate") -> np.ndarray | float:
    """Brute-force ``<F1, F2>`` from both materialized feature maps.

    ``mode='convolve'`` builds the maps with :func:`convolve` instead.
    """
    k1 = as_tensor(k1)
    k2 = as_tensor(k2)
    if k1.shape[-1] != k2.shape[-1]:
        raise ShapeError(f"kernel lengths differ: {k1.shape[-1]} vs {k2.shape[-1]}")
    op = {"correlate": cross_correlate, "convolve": convolve}[mode]
    f1 = op(x, k1, pad)
    f2 = op(x, k2, pad)
    out = np.sum(f1 * f2, axis=-1)
    return float(out) if out.ndim == 0 else out


def identity_rhs(x, k1, k2) -> np.ndarray | float:
    """``<(k1 ⊛ k2), (x ⊛ x)[1-N, N-1]>``, equal to ``<F1, F2>`` under full padding."""
    c = kernel_cross_correlation(k1, k2)
    ac = auto_correlate_clipped(x, as_tensor(k1).shape[-1]).values
    out = np.sum(c * ac, axis=-1)
    return float(out) if out.ndim == 0 else out


def orthogonality_gap(x, k1, k2) -> float:
    """Off-zero-lag part ``sum_{n != 0} (x⊛x)[n] (k1⊛k2)[n]`` of the full-padding inner product."""
    x = as_tensor(x)
    n = as_tensor(k1).shape[-1]
    if x.ndim != 1:
        raise ShapeError("orthogonality_gap expects a 1-D signal")
    c = kernel_cross_correlation(k1, k2)
    ac = auto_correlate_clipped(x, n).values
    terms = c * ac
    return float(np.sum(terms) - terms[n - 1])


@dataclass(frozen=True)
class PaddedDecomposition:
    """``lhs == full_term - A - B`` for padding ``P``; ``A = B = 0`` when ``P = N-1``."""

    lhs: float
    full_term: float
    A: float
    B: float

    @property
    def residual(self) -> float:
        return self.lhs - (self.full_term - self.A - self.B)


def padded_decomposition(x, k1, k2, pad) -> PaddedDecomposition:
    x = as_tensor(x)
    k1 = as_tensor(k1)
    k2 = as_tensor(k2)
    if x.ndim != 1 or k1.ndim != 1 or k1.shape != k2.shape:
        raise ShapeError("padded_decomposition expects a 1-D signal and two equal 1-D kernels")
    m, n = x.size, k1.size
    p = resolve_padding(pad, n)

    def xv(i):
        i = np.asarray(i)
        ok = (i >= 0) & (i < m)
        return np.where(ok, x[np.clip(i, 0, m - 1)], 0.0)

    a_sum = 0.0
    b_sum = 0.0
    shifts = np.arange(n)[:, None]
    for n1 in range(n):
        # empty when P = N-1
        lo_idx = np.arange(n1 + 1 - n, n1 - p)
        hi_idx = np.arange(m - n + p + n1 + 1, m + n1)
        if lo_idx.size:
            terms = xv(lo_idx[None] + shifts - n1) * xv(lo_idx)[None]
            a_sum += k1[n1] * float(k2 @ terms.sum(axis=1))
        if hi_idx.size:
            terms = xv(hi_idx[None] + shifts - n1) * xv(hi_idx)[None]
            b_sum += k1[n1] * float(k2 @ terms.sum(axis=1))
    lhs = feature_inner_product(x, k1, k2, p)
    return PaddedDecomposition(lhs=lhs, full_term=identity_rhs(x, k1, k2), A=a_sum, B=b_sum)


def _pad2(p):
    if isinstance(p, tuple):
        return p
    return (p, p)


def cross_correlate_2d(a, k, pad="full") -> np.ndarray:
    """2-D cross-correlation over the last two axes, the 1-D index rule applied per axis.

    ``pad`` is a single padding (applied to both axes) or a ``(rows, cols)`` pair.
    """
    a = as_tensor(a)
    k = as_tensor(k)
    if a.ndim < 2 or k.ndim < 2:
        raise ShapeError("cross_correlate_2d needs at least 2-D operands")
    (mh, mw), (nh, nw) = a.shape[-2:], k.shape[-2:]
    _check_lengths(mh, nh)
    _check_lengths(mw, nw)
    ph_spec, pw_spec = _pad2(pad)
    ph = resolve_padding(ph_spec, nh)
    pw = resolve_padding(pw_spec, nw)
    widths = [(0, 0)] * (a.ndim - 2) + [(ph, ph), (pw, pw)]
    windows = sliding_window_view(np.pad(a, widths), (nh, nw), axis=(-2, -1))
    return np.sum(windows * k[..., None, None, :, :], axis=(-2, -1))


def kernel_cross_correlation_2d(k1, k2) -> np.ndarray:
    """Full 2-D kernel cross-correlation over lags ``[1-Nh, Nh-1] x [1-Nw, Nw-1]``."""
    k1 = as_tensor(k1)
    k2 = as_tensor(k2)
    if k1.shape[-2:] != k2.shape[-2:]:
        raise ShapeError(f"kernel extents differ: {k1.shape[-2:]} vs {k2.shape[-2:]}")
    return cross_correlate_2d(k2, k1, "full")
