"""Uniform periodic grids on [-L, L), quadrature, inner products and Fourier plumbing."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
from scipy import fft as sfft

from .errors import ParameterError, StructuralError


def japanese(x, alpha=1.0):
    """<x>^alpha with <x> = sqrt(1 + x^2)."""
    return (1.0 + np.asarray(x, dtype=float) ** 2) ** (0.5 * alpha)


@dataclass(frozen=True)
class SpatialGrid:
    """Samples x_j = -L + j*dx, j = 0..N-1, with the origin at j = N/2."""

    L: float
    N: int

    def __post_init__(self):
        if not (np.isfinite(self.L) and self.L > 0):
            raise ParameterError(f"half width must be positive, got {self.L}")
        if int(self.N) != self.N or self.N < 4 or self.N % 2:
            raise ParameterError(f"point count must be an even integer >= 4, got {self.N}")
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "N", int(self.N))

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def origin(self) -> int:
        return self.N // 2

    @property
    def M(self) -> int:
        """Number of half-line intervals, N/2."""
        return self.N // 2

    @cached_property
    def x(self) -> np.ndarray:
        x = -self.L + self.dx * np.arange(self.N)
        x[self.origin] = 0.0
        x.flags.writeable = False
        return x

    @cached_property
    def k(self) -> np.ndarray:
        """Angular frequencies in ascending order, spacing pi/L."""
        k = np.pi / self.L * (np.arange(self.N) - self.N // 2)
        k.flags.writeable = False
        return k

    @property
    def dk(self) -> float:
        return np.pi / self.L

    # ----- validation -------------------------------------------------
    def values(self, f) -> np.ndarray:
        """Unwrap a Field or array and check it lives on this grid."""
        if isinstance(f, Field):
            if f.grid != self:
                raise StructuralError("field belongs to a different grid")
            return f.values
        arr = np.asarray(f)
        if arr.shape[-1:] != (self.N,):
            raise StructuralError(f"expected trailing length {self.N}, got shape {arr.shape}")
        return arr

    def field(self, values) -> "Field":
        return Field(self, values)

    # ----- quadrature ---------------------------------------------------
    def integrate(self, f):
        """Periodic trapezoid rule dx * sum f."""
        return self.dx * np.sum(self.values(f), axis=-1)

    def inner(self, f, g):
        """<f, g> = integral of conj(f) g."""
        return self.dx * np.sum(np.conj(self.values(f)) * self.values(g), axis=-1)

    def l2(self, f) -> float:
        v = self.values(f)
        return float(np.sqrt(self.dx * np.sum(np.abs(v) ** 2)))

    def derivative(self, f) -> np.ndarray:
        """Centered periodic difference."""
        v = self.values(f)
        return (np.roll(v, -1, axis=-1) - np.roll(v, 1, axis=-1)) / (2.0 * self.dx)

    def h1(self, f) -> float:
        v = self.values(f)
        d = self.derivative(v)
        return float(np.sqrt(self.dx * (np.sum(np.abs(v) ** 2) + np.sum(np.abs(d) ** 2))))

    def weighted_sup(self, f, alpha: float) -> float:
        v = self.values(f)
        return float(np.max(japanese(self.x, alpha) * np.abs(v)))

    def norms(self, f, alpha: float = -1.5) -> dict:
        return {"l2": self.l2(f), "h1": self.h1(f), "weighted_sup": self.weighted_sup(f, alpha)}

    # ----- Fourier ------------------------------------------------------
    @cached_property
    def _fourier_sign(self) -> np.ndarray:
        # exp(i k_n L) = (-1)^n for the unshifted ordering
        return np.where(np.arange(self.N) % 2 == 0, 1.0, -1.0)

    def fourier(self, f) -> np.ndarray:
        """Samples of (2 pi)^{-1/2} int f(x) exp(-ikx) dx at self.k (ascending)."""
        v = self.values(f)
        c = sfft.fft(v, axis=-1) * self._fourier_sign * (self.dx / math.sqrt(2 * math.pi))
        return sfft.fftshift(c, axes=-1)

    def inverse_fourier(self, fh) -> np.ndarray:
        fh = np.asarray(fh)
        if fh.shape[-1:] != (self.N,):
            raise StructuralError(f"expected {self.N} frequency samples, got {fh.shape}")
        c = sfft.ifftshift(fh, axes=-1) * self._fourier_sign / (self.dx / math.sqrt(2 * math.pi))
        return sfft.ifft(c, axis=-1)

    def fourier_multiplier(self, f, symbol) -> np.ndarray:
        """Apply m(k) through the plain Fourier transform."""
        return self.inverse_fourier(symbol(self.k) * self.fourier(f))

    def sobolev(self, f, s: float) -> float:
        """Flat H^s norm with multiplier <k>^s."""
        fh = self.fourier(f)
        return float(np.sqrt(self.dk * np.sum(japanese(self.k, 2 * s) * np.abs(fh) ** 2)))


@dataclass(frozen=True)
class Field:
    """Complex samples of a function on a SpatialGrid."""

    grid: SpatialGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != (self.grid.N,):
            raise StructuralError(f"field length {v.shape} does not match grid N={self.grid.N}")
        if not np.all(np.isfinite(v)):
            raise StructuralError("field contains non-finite samples")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.grid.N


@dataclass(frozen=True)
class TimeGrid:
    """Uniform steps of size dt up to T, output every `stride` steps."""

    dt: float
    T: float
    stride: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if not self.T >= self.dt * (1 - 1e-12):
            raise ParameterError(f"horizon T={self.T} must be at least dt={self.dt}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ParameterError(f"stride must be a positive integer, got {self.stride}")
        object.__setattr__(self, "stride", int(self.stride))

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.T / self.dt + 1e-9))

    @property
    def n_outputs(self) -> int:
        return self.n_steps // self.stride + 1

    @property
    def output_times(self) -> np.ndarray:
        return self.dt * self.stride * np.arange(self.n_outputs)
