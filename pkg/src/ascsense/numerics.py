"""Shared numerical kernels.

Hermitian eigendecomposition, Moore-Penrose pseudo-inverse, orthonormal
nullspaces, circular (modulo-period) arithmetic, and FFT-accelerated
evaluation of delay-grid quadratic forms.  Every estimator in the package
funnels its grid search through :func:`fft_spectrum` or the stacked variant
so that exactness can be checked against direct evaluation in one place.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.linalg

_TINY = np.finfo(float).tiny


# ---------------------------------------------------------------------------
# circular (modulo-period) arithmetic
# ---------------------------------------------------------------------------

def wrap_period(x, period):
    """Reduce ``x`` into [0, period)."""
    return np.mod(x, period)


def circular_difference(a, b, period):
    """Signed difference ``a - b`` wrapped into [-period/2, period/2)."""
    return np.mod(np.asarray(a) - np.asarray(b) + 0.5 * period, period) - 0.5 * period


def circular_distance(a, b, period):
    """Absolute circular distance between ``a`` and ``b``."""
    return np.abs(circular_difference(a, b, period))


def circular_mean(x, period):
    """Mean of circular data with the given period, in [0, period)."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("circular_mean of empty array")
    phasor = np.exp(2j * np.pi * x / period).mean()
    return wrap_period(np.angle(phasor) * period / (2.0 * np.pi), period)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvdResult:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def hermitian_evd(r: np.ndarray) -> EvdResult:
    """Eigendecompose a (nearly) Hermitian matrix.

    The input is symmetrized before decomposition; eigenvalues are returned
    in descending order with orthonormal eigenvector columns.
    """
    r = np.asarray(r)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {r.shape}")
    if not np.all(np.isfinite(r.real)) or not np.all(np.isfinite(r.imag)):
        raise ValueError("matrix contains non-finite entries")
    half = 0.5 * (r + r.conj().T)
    w, u = scipy.linalg.eigh(half)
    return EvdResult(eigenvalues=w[::-1].copy(), eigenvectors=u[:, ::-1].copy())


def pseudo_inverse(a: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudo-inverse (thin wrapper, SVD-based)."""
    return np.linalg.pinv(np.asarray(a), rcond=rcond)


def orthonormal_nullspace(a: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis ``N`` of the orthogonal complement of col(A).

    ``N`` has shape [m, m - n] for a full-column-rank A of shape [m, n]
    (m > n) and satisfies ``N.conj().T @ A == 0``.
    """
    a = np.asarray(a)
    m, n = a.shape
    if m <= n:
        raise ValueError(f"need more rows than columns, got {a.shape}")
    u, s, _ = np.linalg.svd(a, full_matrices=True)
    if s.size and s[-1] <= rank_tol * max(s[0], _TINY) :
        raise ValueError("matrix is numerically rank deficient")
    return u[:, n:]


# ---------------------------------------------------------------------------
# delay search grid and FFT spectra
# ---------------------------------------------------------------------------

def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SearchGrid:
    """Uniform delay grid spanning one alias period.

    ``size`` grid points of width ``step`` starting at ``origin``; ``size``
    must be a power of two so grid evaluation maps onto zero-padded FFTs.
    """

    size: int
    step: float
    origin: float = 0.0

    def __post_init__(self):
        if not _is_power_of_two(self.size):
            raise ValueError(f"grid size must be a power of two, got {self.size}")
        if self.step <= 0.0:
            raise ValueError("grid step must be positive")

    @classmethod
    def for_config(cls, cfg, oversampling: int = 128) -> "SearchGrid":
        """Grid covering [0, 1/subcarrier_spacing) at >= 8x subcarrier count."""
        k = cfg.n_subcarriers
        size = 1 << max(math.ceil(math.log2(oversampling * k)), math.ceil(math.log2(8 * k)))
        return cls(size=size, step=cfg.alias_period / size)

    @property
    def period(self) -> float:
        return self.size * self.step

    def delays(self) -> np.ndarray:
        return self.origin + self.step * np.arange(self.size)

    def delay_at(self, fractional_index) -> np.ndarray:
        """Delay (wrapped into one period) at a possibly fractional index."""
        return wrap_period(self.origin + self.step * np.asarray(fractional_index), self.period)


def stacked_fft_spectrum(products: np.ndarray, n_grid: int, block_len: int) -> np.ndarray:
    """Power of block-summed zero-padded FFTs of per-column products.

    ``products`` has shape [B * block_len, C]; the result at grid index n is
    ``sum_c | sum_b FFT_{n_grid}(products[b-th block, c])[n] |**2``.  This is
    the kernel behind every grid-searched quadratic form in the package; for
    single-block inputs it reduces to :func:`fft_spectrum`.
    """
    products = np.asarray(products)
    if products.ndim == 1:
        products = products[:, None]
    rows, cols = products.shape
    if rows % block_len != 0:
        raise ValueError(f"{rows} rows not divisible by block length {block_len}")
    blocks = rows // block_len
    g = products.reshape(blocks, block_len, cols)
    if blocks == 1:
        spec = scipy.fft.fft(g[0], n=n_grid, axis=0)
    else:
        spec = scipy.fft.fft(g, n=n_grid, axis=1).sum(axis=0)
    out = spec.real
    out = out * out
    out += spec.imag * spec.imag
    return out.sum(axis=1)


def fft_spectrum(h: np.ndarray, factor: np.ndarray, grid: SearchGrid,
                 subcarrier_spacing: float | None = None) -> np.ndarray:
    """Grid evaluation of the quadratic form diag-modulated by a steering sweep.

    Returns, for each grid delay tau_n,

        s[n] = sum_c | FFT_{N}(conj(h) * factor[:, c])[n] |**2,

    which equals the direct quadratic form
    ``x(n)^H (factor factor^H) x(n)`` with ``x(n) = conj(a(tau_n)) * h``
    evaluated over the grid.  ``factor`` must satisfy
    ``factor @ factor.conj().T == kernel`` for the targeted kernel (noise
    projector or inverse covariance).

    Args:
        h: complex snapshot vector, one entry per subcarrier.
        factor: [K, r] kernel factor (a 1-D array is treated as one column).
        grid: search grid; its size must be a power of two (enforced by
            construction) and its step must correspond to the subcarrier
            spacing implied by the alias period.
        subcarrier_spacing: needed only when ``grid.origin`` is nonzero, to
            rotate the products onto the shifted grid.
    """
    h = np.asarray(h)
    factor = np.asarray(factor)
    if factor.ndim == 1:
        factor = factor[:, None]
    if factor.shape[0] != h.shape[0]:
        raise ValueError("factor rows must match snapshot length")
    g = np.conj(h)[:, None] * factor
    if grid.origin != 0.0:
        df = subcarrier_spacing if subcarrier_spacing is not None else 1.0 / grid.period
        g = g * np.exp(-2j * np.pi * np.arange(h.shape[0]) * df * grid.origin)[:, None]
    return stacked_fft_spectrum(g, grid.size, h.shape[0])


# ---------------------------------------------------------------------------
# extremum refinement
# ---------------------------------------------------------------------------

def parabolic_refine(values: np.ndarray, index: int, kind: str = "max",
                     circular: bool = True) -> float:
    """Sub-grid extremum location from a 3-point parabola.

    Maxima are refined in log magnitude, minima on raw values.  Returns a
    fractional index; falls back to the integer index on degenerate
    curvature or at non-circular edges.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 3:
        return float(index)
    if circular:
        lo, hi = (index - 1) % n, (index + 1) % n
    else:
        if index == 0 or index == n - 1:
            return float(index)
        lo, hi = index - 1, index + 1
    triple = np.array([values[lo], values[index], values[hi]])
    if kind == "max":
        triple = np.log(np.maximum(triple, _TINY))
        denom = triple[0] - 2.0 * triple[1] + triple[2]
        if denom >= 0.0 or not np.isfinite(denom):
            return float(index)
    elif kind == "min":
        denom = triple[0] - 2.0 * triple[1] + triple[2]
        if denom <= 0.0 or not np.isfinite(denom):
            return float(index)
    else:
        raise ValueError(f"unknown extremum kind {kind!r}")
    delta = 0.5 * (triple[0] - triple[2]) / denom
    return float(index + np.clip(delta, -0.5, 0.5))
