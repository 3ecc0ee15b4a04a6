"""Array substrate: seeded random streams, inner products and correlation.

Tensors are plain float64 ``numpy.ndarray`` objects; this module only adds
the small amount of glue the rest of the package relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class UndefinedCorrelation(ValueError):
    """Pearson correlation requested for a constant sequence."""


@dataclass(frozen=True)
class RngStream:
    """Independent random stream keyed by ``(base_seed, stream_index)``.

    Streams are derived with ``SeedSequence`` spawn keys and drive a Philox
    counter-based generator, so stream ``e`` yields the same samples no matter
    which other streams were created before it.
    """

    base_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if self.base_seed < 0 or self.stream_index < 0:
            raise ValueError("seed and stream index must be non-negative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.base_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.Philox(seq))


def sample_uniform(stream: RngStream | np.random.Generator, lo: float, hi: float, shape) -> np.ndarray:
    """Draw float64 samples from ``U[lo, hi)``.

    ``stream`` may be an :class:`RngStream` (a fresh generator is built, so the
    call is a pure function of its arguments) or a live generator that is
    advanced in place.
    """
    if not lo < hi:
        raise ValueError(f"invalid range: lo={lo} must be < hi={hi}")
    gen = stream.generator() if isinstance(stream, RngStream) else stream
    out = gen.uniform(lo, hi, size=shape).astype(DTYPE, copy=False)
    # uniform() may round up to hi for tiny ranges
    return np.where(out >= hi, np.nextafter(hi, lo), out)


def as_tensor(a) -> np.ndarray:
    return np.asarray(a, dtype=DTYPE)


def inner_product(a, b) -> float:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"inner product of shapes {a.shape} and {b.shape}")
    return float(np.sum(a * b))


def flatten_index(index: Sequence[int], shape: Sequence[int]) -> int:
    """Row-major flat offset of a multi-index, with bounds checking."""
    if len(index) != len(shape):
        raise ShapeError(f"index rank {len(index)} != shape rank {len(shape)}")
    for i, n in zip(index, shape):
        if not 0 <= i < n:
            raise IndexError(f"index {tuple(index)} out of bounds for shape {tuple(shape)}")
    return int(np.ravel_multi_index(tuple(index), tuple(shape)))


def unflatten_index(offset: int, shape: Sequence[int]) -> tuple[int, ...]:
    size = int(np.prod(shape))
    if not 0 <= offset < size:
        raise IndexError(f"offset {offset} out of bounds for shape {tuple(shape)}")
    return tuple(int(i) for i in np.unravel_index(offset, tuple(shape)))


def pearson(a, b) -> float:
    """Pearson correlation coefficient of two equal-length sequences.

    Raises :class:`UndefinedCorrelation` if either sequence has zero variance.
    """
    a = as_tensor(a).ravel()
    b = as_tensor(b).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"pearson of lengths {a.size} and {b.size}")
    if a.size < 2:
        raise ShapeError("pearson needs at least two samples")
    da = a - a.mean()
    db = b - b.mean()
    saa = float(np.sum(da * da))
    sbb = float(np.sum(db * db))
    if saa == 0.0 or sbb == 0.0:
        raise UndefinedCorrelation("constant sequence")
    r = float(np.sum(da * db)) / np.sqrt(saa * sbb)
    return float(np.clip(r, -1.0, 1.0))
