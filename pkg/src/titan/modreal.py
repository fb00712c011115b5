"""Modular arithmetic over the reals.

``mod(x, M) = x - p*M`` for the unique integer ``p`` that lands the result in
``[0, M)``.  Two backends are provided:

* ``exact``: every value is an integer multiple of ``1/scale`` and is stored
  as that integer ("units").  Addition, subtraction and reduction are exact,
  so perturbations that cancel in real arithmetic cancel bit-for-bit here.
* ``float``: plain float64 with an explicit comparison tolerance.  Rounding
  error survives the final reduction, so this backend is only for throughput
  experiments.

The protocol code works on unit arrays (``int64`` or ``float64``) through the
vectorised helpers on :class:`ModulusContext`; the scalar functions
:func:`mod_reduce`, :func:`mod_sum` and :func:`mod_neg` wrap values in
:class:`ModValue`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from numbers import Real
from typing import Iterable

import numpy as np

from titan.errors import DomainError, PrecisionError

EXACT = "exact"
FLOAT = "float"
BACKENDS = (EXACT, FLOAT)

DEFAULT_SCALE = 2**32
# keeps a + b < 2**63 for any two reduced values
MAX_MODULUS_UNITS = 2**62


def _check_finite(x) -> None:
    if isinstance(x, float) and not math.isfinite(x):
        raise DomainError(f"non-finite value {x!r}")


@dataclass(frozen=True)
class ModulusContext:
    modulus: float
    backend: str = EXACT
    scale: int = DEFAULT_SCALE
    tolerance: float = 0.0

    def __post_init__(self):
        _check_finite(self.modulus)
        if not self.modulus > 0:
            raise DomainError(f"modulus must be positive, got {self.modulus!r}")
        if self.backend not in BACKENDS:
            raise DomainError(f"unknown backend {self.backend!r}")
        if self.backend == EXACT:
            if not (isinstance(self.scale, int) and self.scale > 0):
                raise DomainError(f"scale must be a positive integer, got {self.scale!r}")
            units = self._to_units(self.modulus)
            if units >= MAX_MODULUS_UNITS:
                raise DomainError(
                    f"modulus {self.modulus} needs {units.bit_length()} bits at scale {self.scale}; "
                    "lower the scale or the range bound"
                )
        elif self.tolerance < 0:
            raise DomainError("tolerance must be non-negative")

    @classmethod
    def exact(cls, modulus, scale: int = DEFAULT_SCALE) -> "ModulusContext":
        return cls(modulus, EXACT, scale=scale)

    @classmethod
    def floating(cls, modulus, tolerance: float = 1e-9) -> "ModulusContext":
        return cls(float(modulus), FLOAT, tolerance=tolerance)

    def with_modulus(self, modulus) -> "ModulusContext":
        return replace(self, modulus=modulus)

    @property
    def is_exact(self) -> bool:
        return self.backend == EXACT

    @property
    def dtype(self):
        return np.int64 if self.is_exact else np.float64

    @property
    def modulus_units(self):
        if self.is_exact:
            return self._to_units(self.modulus)
        return float(self.modulus)

    @property
    def resolution(self) -> float:
        """Spacing of representable values (0 for the float backend)."""
        return 1.0 / self.scale if self.is_exact else 0.0

    def _to_units(self, x) -> int:
        _check_finite(x)
        scaled = Fraction(x) * self.scale
        if scaled.denominator != 1:
            raise PrecisionError(f"{x!r} is not a multiple of 1/{self.scale}")
        return int(scaled)

    # scalar and array conversion

    def encode(self, x):
        """Exact conversion to units; raises PrecisionError off the grid."""
        if isinstance(x, np.ndarray):
            return self.encode_array(x)
        if not isinstance(x, (Real, Fraction)):
            raise DomainError(f"expected a real number, got {type(x).__name__}")
        if self.is_exact:
            return self._to_units(x)
        _check_finite(float(x))
        return float(x)

    def encode_array(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("non-finite entries")
        if not self.is_exact:
            return arr.copy()
        scaled = arr * self.scale
        if np.any(scaled != np.rint(scaled)):
            raise PrecisionError(f"entries are not multiples of 1/{self.scale}")
        return self._checked_int(scaled)

    def quantize(self, x):
        """Round to the nearest grid point (ties to even) and return units."""
        if not self.is_exact:
            if np.ndim(x):
                return self.encode_array(x)
            return self.encode(float(x))
        if np.ndim(x):
            arr = np.asarray(x, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise DomainError("non-finite entries")
            return self._checked_int(np.rint(arr * self.scale))
        _check_finite(x)
        return round(Fraction(x) * self.scale)

    def _checked_int(self, scaled: np.ndarray) -> np.ndarray:
        if scaled.size and np.max(np.abs(scaled)) >= 2.0**62:
            raise PrecisionError("value too large for int64 units")
        return scaled.astype(np.int64)

    def decode(self, units):
        if not self.is_exact:
            return units
        if isinstance(units, np.ndarray):
            return units / self.scale
        return units / self.scale

    def to_fraction(self, units) -> Fraction:
        if self.is_exact:
            return Fraction(int(units), self.scale)
        return Fraction(float(units))

    # vectorised arithmetic on units

    def reduce(self, units):
        M = self.modulus_units
        if self.is_exact:
            if isinstance(units, np.ndarray):
                return np.mod(units, M)
            return int(units) % M
        r = np.mod(units, M)
        # np.mod(-tiny, M) rounds up to M in float64
        if isinstance(r, np.ndarray):
            r[r >= M] = 0.0
            return r
        return 0.0 if r >= M else float(r)

    def add(self, a, b):
        return self.reduce(a + b)

    def sub(self, a, b):
        return self.reduce(a - b)

    def sum(self, units, axis=None):
        """Reduced sum along ``axis``; never overflows int64."""
        arr = np.asarray(units, dtype=self.dtype)
        if not self.is_exact:
            return self.reduce(np.sum(arr, axis=axis))
        arr = self.reduce(arr)
        n = arr.size if axis is None else arr.shape[axis]
        if n * self.modulus_units < 2**63:
            return self.reduce(np.sum(arr, axis=axis))
        arr = arr.reshape(-1) if axis is None else np.moveaxis(arr, axis, 0)
        M = self.modulus_units
        acc = np.zeros(arr.shape[1:], dtype=np.int64)
        for row in arr:
            acc = np.mod(acc + row, M)
        return acc if acc.ndim else int(acc)

    def uniform(self, rng: np.random.Generator, size):
        """Uniform draws on ``[0, modulus)`` (on the grid for the exact backend)."""
        if self.is_exact:
            return rng.integers(0, self.modulus_units, size=size, dtype=np.int64)
        return self.reduce(rng.uniform(0.0, self.modulus_units, size=size))

    def close(self, a, b) -> bool:
        if self.is_exact:
            return bool(np.all(np.asarray(a) == np.asarray(b)))
        return bool(np.all(np.abs(np.asarray(a) - np.asarray(b)) <= self.tolerance))


@dataclass(frozen=True)
class ModValue:
    units: int | float
    ctx: ModulusContext

    def __post_init__(self):
        if not (0 <= self.units < self.ctx.modulus_units):
            raise DomainError(f"{self.units} outside [0, {self.ctx.modulus_units})")

    @property
    def value(self) -> float:
        return float(self.ctx.decode(self.units))

    @property
    def exact(self) -> Fraction:
        return self.ctx.to_fraction(self.units)

    def __float__(self) -> float:
        return self.value


def _context(ctx: ModulusContext | None, modulus) -> ModulusContext:
    if ctx is not None:
        return ctx
    if modulus is None:
        raise DomainError("either ctx or modulus is required")
    return ModulusContext.exact(modulus)


def mod_reduce(x, ctx: ModulusContext | None = None, *, modulus=None) -> ModValue:
    ctx = _context(ctx, modulus)
    return ModValue(ctx.reduce(ctx.encode(x)), ctx)


def mod_sum(values: Iterable, ctx: ModulusContext | None = None, *, modulus=None) -> ModValue:
    ctx = _context(ctx, modulus)
    if ctx.is_exact:
        total = sum((ctx.encode(v) for v in values), 0)
    else:
        total = math.fsum(ctx.encode(v) for v in values)
    return ModValue(ctx.reduce(total), ctx)


def mod_neg(x, ctx: ModulusContext | None = None, *, modulus=None) -> ModValue:
    ctx = _context(ctx, modulus)
    return ModValue(ctx.reduce(-ctx.encode(x)), ctx)
