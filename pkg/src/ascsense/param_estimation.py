"""Static-clutter-suppressed MUSIC estimation and gain-sequence recovery.

The modified MUSIC spectrum divides the static-suppressed pseudo-spectrum
by the plain noise-subspace pseudo-spectrum, killing the merged static
path's peak while keeping dynamic-target peaks.  Peak delays (and arrival
angles, with an array) then drive a pseudo-inverse / beam-nulling signal
separation whose nulled block exposes the per-snapshot phase offset; the
separated rows, counter-rotated by that phase, are the complex gain
sequences up to a constant rotation and translation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .numerics import (SearchGrid, orthonormal_nullspace, parabolic_refine, pseudo_inverse,
                       stacked_fft_spectrum)
from .signal_model import (STAGE_COMPENSATED, ArrayGeometry, CsiMatrix, SystemConfig,
                           steering_vector_mimo)
from .residual_compensation import CompensatedCpi, ReferenceStaticResponse
from .to_alignment import SubspaceEstimate, subspace_projector

FLAG_SHORTFALL = "peak_shortfall"
FLAG_ILL_CONDITIONED = "ill_conditioned_response"

_COND_LIMIT = 1e6


@dataclass(frozen=True)
class Spectrum:
    """Pseudo-spectrum over a delay grid, optionally crossed with an angle grid.

    ``values`` is [N_g] for delay-only spectra and [N_theta, N_g] for joint
    angle-delay spectra; entries are non-negative and finite.
    """

    values: np.ndarray
    delays: np.ndarray
    angles: np.ndarray | None = None


@dataclass(frozen=True)
class Peak:
    delay: float
    height: float
    angle: float | None = None


@dataclass(frozen=True)
class TargetEstimates:
    """Per-target delay/angle estimates with recovered gain sequences.

    Targets are ordered by spectrum peak height.  ``po`` is the estimated
    per-snapshot phase offset (first snapshot anchored to zero);
    ``dc_offsets`` records each path's average complex level, the expected
    static-leakage translation.
    """

    delays: np.ndarray
    cgs: np.ndarray
    po: np.ndarray
    peak_heights: np.ndarray
    angles: np.ndarray | None = None
    dc_offsets: np.ndarray | None = None
    shortfall: bool = False
    flags: tuple = ()


def _subspace_of(cpi: CsiMatrix | CompensatedCpi) -> tuple[CsiMatrix, SubspaceEstimate | None]:
    if isinstance(cpi, CompensatedCpi):
        return cpi.csi, cpi.subspace
    return cpi, None


def _spatial_weights(geom: ArrayGeometry | None, angles: np.ndarray | None,
                     n_antennas: int) -> np.ndarray:
    """[N_theta, M] spatial factors exp(j p(theta)); a single row for no array."""
    if angles is None:
        return np.ones((1, n_antennas), dtype=complex)
    if geom is None:
        raise ValueError("an angle grid requires an array geometry")
    return np.exp(1j * np.stack([geom.phase_response(t) for t in np.atleast_1d(angles)]))


def _steered_fft_power(vectors: np.ndarray, weights: np.ndarray, n_grid: int) -> np.ndarray:
    """[N_theta, N_g] power of steering inner products for basis ``vectors``.

    Entry (t, n) is ``sum_c |a^M(theta_t, tau_n)^H vectors[:, c]|**2``,
    evaluated by combining antenna blocks with the spatial weights and one
    zero-padded FFT per (angle, column).
    """
    cols = vectors if vectors.ndim == 2 else vectors[:, None]
    n_theta, m = weights.shape
    k = cols.shape[0] // m
    blocks = np.conj(cols).reshape(m, k, -1)
    combined = np.einsum("tm,mkc->tkc", weights, blocks)
    spec = scipy.fft.fft(combined, n=n_grid, axis=1)
    return np.square(np.abs(spec)).sum(axis=2)


def modified_music_spectrum(cpi: CsiMatrix | CompensatedCpi, reference: ReferenceStaticResponse,
                            cfg: SystemConfig, grid: SearchGrid | None = None,
                            geom: ArrayGeometry | None = None,
                            angles: np.ndarray | None = None,
                            plain: bool = False) -> Spectrum:
    """Static-clutter-suppressed MUSIC spectrum of a compensated CPI.

    The numerator projects the steering sweep away from the reference
    static response; the denominator is the classic noise-subspace
    quadratic form, regularized before division.  With ``plain=True`` the
    suppression is skipped (classic MUSIC), which is useful for paired
    comparisons.  Supplying ``angles`` (with an array geometry) evaluates
    the joint angle-delay spectrum instead.
    """
    if reference is None and not plain:
        raise ValueError("the modified spectrum requires a reference static response")
    csi, sub = _subspace_of(cpi)
    if csi.stage != STAGE_COMPENSATED:
        raise ValueError("spectrum estimation expects a compensated CPI")
    grid = grid if grid is not None else SearchGrid.for_config(cfg)
    est = sub if sub is not None else subspace_projector(csi.data)

    weights = _spatial_weights(geom, angles, cfg.n_antennas)
    n_rows = cfg.n_rows
    denom = n_rows - _steered_fft_power(est.signal_basis, weights, grid.size)
    np.maximum(denom, 0.0, out=denom)
    if plain:
        values = 1.0 / (denom + 1e-12 * n_rows)
    else:
        numer = n_rows - _steered_fft_power(reference.response, weights, grid.size)
        np.maximum(numer, 0.0, out=numer)
        values = numer / (denom + 1e-12 * n_rows)
    if angles is None:
        values = values[0]
    return Spectrum(values=values, delays=grid.delays(),
                    angles=None if angles is None else np.atleast_1d(angles))


def _local_maxima_1d(values: np.ndarray) -> np.ndarray:
    up = values > np.roll(values, 1)
    down = values >= np.roll(values, -1)
    return np.nonzero(up & down)[0]


def _local_maxima_2d(values: np.ndarray) -> list[tuple[int, int]]:
    n_theta, n_g = values.shape
    out = []
    for i in range(n_theta):
        row = values[i]
        cand = _local_maxima_1d(row)
        for j in cand:
            if i > 0 and values[i - 1, j] >= row[j]:
                continue
            if i < n_theta - 1 and values[i + 1, j] > row[j]:
                continue
            out.append((i, j))
    return out


def pick_peaks(spectrum: Spectrum, count: int,
               min_separation_bins: int = 5) -> tuple[list[Peak], bool]:
    """Highest local maxima of a spectrum, parabolically refined.

    Returns up to ``count`` peaks in height order, enforcing a minimum
    mutual separation of ``min_separation_bins`` grid bins (per axis for
    joint spectra: candidates conflict only when close on every axis).
    The boolean is True when fewer than ``count`` peaks exist (shortfall).
    """
    if count < 1:
        raise ValueError("need at least one peak")
    values = spectrum.values
    n_g = spectrum.delays.size
    step = spectrum.delays[1] - spectrum.delays[0]

    def circ_bins(a, b):
        d = abs(a - b)
        return min(d, n_g - d)

    accepted: list[Peak] = []
    if values.ndim == 1:
        order = sorted(_local_maxima_1d(values), key=lambda j: -values[j])
        taken: list[int] = []
        for j in order:
            if len(accepted) == count:
                break
            if any(circ_bins(j, j0) < min_separation_bins for j0 in taken):
                continue
            taken.append(j)
            refined = parabolic_refine(values, j, kind="max")
            delay = float(np.mod(spectrum.delays[0] + refined * step, n_g * step))
            accepted.append(Peak(delay=delay, height=float(values[j])))
    else:
        order = sorted(_local_maxima_2d(values), key=lambda ij: -values[ij])
        taken_ij: list[tuple[int, int]] = []
        for (i, j) in order:
            if len(accepted) == count:
                break
            if any(abs(i - i0) < min_separation_bins and circ_bins(j, j0) < min_separation_bins
                   for (i0, j0) in taken_ij):
                continue
            taken_ij.append((i, j))
            refined_j = parabolic_refine(values[i], j, kind="max")
            refined_i = parabolic_refine(values[:, j], i, kind="max", circular=False)
            delay = float(np.mod(spectrum.delays[0] + refined_j * step, n_g * step))
            angles = spectrum.angles
            astep = angles[1] - angles[0] if angles.size > 1 else 0.0
            angle = float(angles[0] + refined_i * astep)
            accepted.append(Peak(delay=delay, height=float(values[i, j]), angle=angle))
    return accepted, len(accepted) < count


def estimate_cgs(cpi: CsiMatrix | CompensatedCpi, peaks: list[Peak],
                 reference: ReferenceStaticResponse | None, cfg: SystemConfig,
                 geom: ArrayGeometry | None = None) -> TargetEstimates:
    """Separate per-target gain sequences and compensate the phase offset.

    Stacks the pseudo-inverse of the estimated target response matrix on
    top of its orthonormal nullspace; the nulled block contains only the
    static component whose leading right singular vector carries the
    per-snapshot phase offset (anchored to zero at the first snapshot).
    The counter-rotated separated rows estimate each target's gain
    sequence up to a constant rotation and translation.
    """
    csi, _ = _subspace_of(cpi)
    if csi.stage != STAGE_COMPENSATED:
        raise ValueError("gain estimation expects a compensated CPI")
    t = csi.n_snapshots
    if not peaks:
        return TargetEstimates(delays=np.zeros(0), cgs=np.zeros((0, t)), po=np.zeros(t),
                               peak_heights=np.zeros(0), shortfall=True,
                               flags=(FLAG_SHORTFALL,))
    flags: list[str] = []
    response = np.stack([steering_vector_mimo(cfg, geom, p.angle if p.angle is not None else 0.0,
                                              p.delay) for p in peaks], axis=1)
    cond = np.linalg.cond(response)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        flags.append(FLAG_ILL_CONDITIONED)
    separated = pseudo_inverse(response) @ csi.data
    null_basis = orthonormal_nullspace(response)
    projected = null_basis.conj().T @ csi.data

    _, sv, vh = np.linalg.svd(projected, full_matrices=False)
    if sv.size and sv[0] > 1e-12 * max(np.linalg.norm(csi.data), 1e-300):
        po = np.angle(vh[0])
        po = np.mod(po - po[0] + np.pi, 2.0 * np.pi) - np.pi
    else:
        # no static component to read the phase offset from
        po = np.zeros(t)
    cgs = separated * np.exp(-1j * po)[None, :]

    delays = np.array([p.delay for p in peaks])
    heights = np.array([p.height for p in peaks])
    angles = None
    if any(p.angle is not None for p in peaks):
        angles = np.array([p.angle if p.angle is not None else 0.0 for p in peaks])
    return TargetEstimates(delays=delays, cgs=cgs, po=po, peak_heights=heights,
                           angles=angles, dc_offsets=cgs.mean(axis=1),
                           shortfall=False, flags=tuple(flags))


def align_cgs(estimate: np.ndarray, truth: np.ndarray, iterations: int = 10,
              tol: float = 1e-12) -> tuple[np.ndarray, complex, complex]:
    """Align a gain-sequence estimate to truth by rotation and translation.

    Alternates the closed-form updates (translation = mean difference given
    the rotation; rotation = phase of the inner product given the
    translation) and returns ``(aligned, rotation, translation)`` such that
    ``aligned = conj(rotation) * (estimate - translation)`` best matches
    ``truth`` with ``|rotation| = 1``.
    """
    estimate = np.asarray(estimate, dtype=complex).ravel()
    truth = np.asarray(truth, dtype=complex).ravel()
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth must have matching lengths")
    rotation = 1.0 + 0.0j
    translation = 0.0 + 0.0j
    prev = np.inf
    for _ in range(iterations):
        translation = np.mean(estimate - rotation * truth)
        inner = np.vdot(truth, estimate - translation)
        rotation = inner / abs(inner) if abs(inner) > 0.0 else 1.0 + 0.0j
        residual = float(np.linalg.norm(estimate - rotation * truth - translation))
        if abs(prev - residual) <= tol * max(residual, 1.0):
            break
        prev = residual
    aligned = np.conj(rotation) * (estimate - translation)
    return aligned, rotation, translation


def doppler_readout(cgs: np.ndarray, cfg: SystemConfig) -> float:
    """Dominant Doppler velocity (m/s) from a gain sequence's periodogram.

    Zero-padded periodogram over signed Doppler frequencies; the argmax bin
    maps to velocity through half the carrier wavelength (round-trip
    convention).  A convenience readout, not a tracking-grade estimator.
    """
    cgs = np.asarray(cgs, dtype=complex).ravel()
    if cgs.size < 8:
        raise ValueError("need at least eight snapshots for a Doppler readout")
    n_pad = 1 << max(8, int(np.ceil(np.log2(8 * cgs.size))))
    spectrum = np.abs(np.fft.fft(cgs, n=n_pad))
    freqs = np.fft.fftfreq(n_pad, d=cfg.snapshot_interval)
    return float(freqs[int(np.argmax(spectrum))] * cfg.wavelength / 2.0)
