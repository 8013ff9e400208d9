"""Reference static-paths response acquisition and TO-residual compensation.

The bidirectional calibration exchange pins down the absolute time origin:
aligning both measurement directions, averaging timestamped offsets, and
searching the clock error that maximizes the reciprocity similarity yields
a reference response carrying absolute delay information.  During sensing,
the residual offset common to an aligned CPI is estimated by matching that
reference against the CPI's signal subspace and compensated out.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import io as binio
from .numerics import (SearchGrid, circular_mean, hermitian_evd, parabolic_refine,
                       stacked_fft_spectrum, wrap_period)
from .signal_model import (STAGE_ALIGNED, BidirectionalTrace, CsiMatrix, SystemConfig,
                           to_modulation)
from .to_alignment import METHOD_SUBSPACE, SubspaceEstimate, align_stream, subspace_projector


class ContaminatedReferenceError(ValueError):
    """A supposedly static-only CPI shows significant dynamic content."""


@dataclass(frozen=True)
class ReferenceStaticResponse:
    """Unit-norm estimate of the merged static-paths response.

    ``relative_only`` marks a response obtained without the bidirectional
    exchange; it carries an unknown fixed initial offset, so downstream
    delays are relative rather than absolute.
    """

    response: np.ndarray
    n_exchanges: int = 0
    timestamp_noise_std: float = 0.0
    clock_error: float | None = None
    relative_only: bool = False

    def __post_init__(self):
        resp = np.asarray(self.response, dtype=complex).ravel()
        norm = np.linalg.norm(resp)
        if norm <= 0.0:
            raise ValueError("reference response must be nonzero")
        object.__setattr__(self, "response", resp / norm)


@dataclass(frozen=True)
class CompensatedCpi:
    """TO-compensated CPI plus the residual estimate and reusable subspace."""

    csi: CsiMatrix
    to_residual: float
    subspace: SubspaceEstimate


def _dominant_eigenvector(columns: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    evd = hermitian_evd(columns @ columns.conj().T)
    return evd.eigenvectors[:, 0], evd.eigenvalues


def acquire_reference(trace: BidirectionalTrace, cfg: SystemConfig,
                      grid: SearchGrid | None = None, method: str = METHOD_SUBSPACE,
                      window_len: int = 48, clock_range: float = 100e-9) -> ReferenceStaticResponse:
    """Acquire the reference static-paths response from a calibration trace.

    Both measurement directions are TO-aligned; the dominant eigenvector of
    each aligned stack estimates the (residual-shifted) static response.
    Timestamps and per-snapshot relative-TO estimates give each side's
    residual up to the common clock error, which a 1-D similarity search
    over ``[-clock_range, clock_range]`` resolves via channel reciprocity.
    The returned response is the clock-compensated base-station side.
    """
    if trace.n_exchanges < cfg.n_subcarriers:
        raise ValueError("calibration trace shorter than the subcarrier count")
    grid = grid if grid is not None else SearchGrid.for_config(cfg)
    period = cfg.alias_period

    cfg_ue = replace(cfg, n_antennas=1)
    bs = align_stream(trace.bs_snapshots, cfg, method=method, window_len=window_len, grid=grid)
    ue = align_stream(trace.ue_snapshots, cfg_ue, method=method, window_len=window_len, grid=grid)

    h_bs, _ = _dominant_eigenvector(bs.data)
    h_ue, _ = _dominant_eigenvector(ue.data)

    mean_bs = circular_mean(trace.bs_rx - trace.ue_tx - bs.applied_to, period)
    mean_ue = circular_mean(trace.ue_rx - trace.bs_tx - ue.applied_to, period)

    # the similarity objective depends on the two compensations only through
    # their difference, which is linear in the clock error
    k = cfg.n_subcarriers
    weights = np.conj(h_ue) * h_bs[:k]
    candidates = np.linspace(-clock_range, clock_range, grid.size, endpoint=False)
    shifts = wrap_period(mean_ue - mean_bs + 2.0 * candidates, period)
    phases = np.exp(-2j * np.pi * np.outer(cfg.freqs, shifts))
    similarity = np.abs(weights @ phases)

    peak = float(similarity.max())
    if peak <= 0.0 or (peak - similarity.mean()) < 1e-9 * max(peak, 1e-30):
        raise ValueError("reciprocity similarity objective is flat")
    idx = int(np.argmax(similarity))
    refined = parabolic_refine(similarity, idx, kind="max", circular=False)
    clock_error = float(np.interp(refined, np.arange(candidates.size), candidates))

    residual_bs = wrap_period(mean_bs - clock_error, period)
    response = np.conj(to_modulation(cfg, residual_bs)) * h_bs
    return ReferenceStaticResponse(response=response, n_exchanges=trace.n_exchanges,
                                   timestamp_noise_std=trace.timestamp_noise_std,
                                   clock_error=clock_error, relative_only=False)


def alternative_reference(aligned_cpi: CsiMatrix,
                          contamination_ratio: float = 0.1) -> ReferenceStaticResponse:
    """Reference from a dynamic-free aligned CPI (relative delays only).

    The dominant eigenvector of the CPI covariance estimates the static
    response up to an unknown fixed initial offset.  A significant second
    eigenvalue indicates dynamic contamination and is rejected.
    """
    if aligned_cpi.stage != STAGE_ALIGNED:
        raise ValueError("alternative reference requires an aligned CPI")
    vec, eigenvalues = _dominant_eigenvector(aligned_cpi.data)
    if eigenvalues.size > 1 and eigenvalues[1] > contamination_ratio * eigenvalues[0]:
        raise ContaminatedReferenceError(
            f"secondary eigenvalue at {eigenvalues[1] / eigenvalues[0]:.1%} of the dominant "
            "one; the CPI is not static-only")
    return ReferenceStaticResponse(response=vec, n_exchanges=aligned_cpi.n_snapshots,
                                   relative_only=True)


def residual_match_spectrum(reference: np.ndarray, est: SubspaceEstimate,
                            grid: SearchGrid, block_len: int) -> np.ndarray:
    """Signal-subspace match of the forward-shifted reference over the grid.

    Entry n is ``|| U_S^H (a(tau_n) * v) ||^2``; its maximizer is the shift
    that best re-embeds the reference into the CPI's signal subspace, i.e.
    the residual offset (the complementary noise projection is minimal
    there because the modulation preserves the norm).
    """
    products = (reference[:, None] * np.conj(est.signal_basis))
    return stacked_fft_spectrum(products, grid.size, block_len)


def estimate_to_residual(aligned_cpi: CsiMatrix, reference: ReferenceStaticResponse,
                         cfg: SystemConfig, grid: SearchGrid | None = None,
                         subspace: SubspaceEstimate | None = None) -> CompensatedCpi:
    """Estimate and compensate the CPI-common TO residual.

    Minimizes the projection of the shifted reference response into the
    aligned CPI's noise subspace over the delay grid (FFT-evaluated,
    parabolically refined), then removes the estimated residual from every
    snapshot.  The returned subspace estimate is the CPI's, rotated into the
    compensated frame for reuse downstream.
    """
    if reference is None:
        raise ValueError("a reference static-paths response is required")
    if aligned_cpi.stage != STAGE_ALIGNED:
        raise ValueError("residual compensation expects an aligned CPI")
    grid = grid if grid is not None else SearchGrid.for_config(cfg)
    est = subspace if subspace is not None else subspace_projector(aligned_cpi.data)
    match = residual_match_spectrum(reference.response, est, grid, cfg.n_subcarriers)
    idx = int(np.argmax(match))
    refined = parabolic_refine(match, idx, kind="max")
    residual = float(grid.delay_at(refined))
    compensation = np.conj(to_modulation(cfg, residual))[:, None]
    compensated = aligned_cpi.advanced(compensation * aligned_cpi.data, "compensated")
    return CompensatedCpi(csi=compensated, to_residual=residual,
                          subspace=est.shifted(residual, cfg))


def save_reference(path, ref: ReferenceStaticResponse, cfg: SystemConfig) -> None:
    """Persist a reference response as a small binary blob."""
    binio.write_reference_blob(path, ref.response, cfg.n_antennas, ref.n_exchanges,
                               ref.timestamp_noise_std, ref.clock_error, ref.relative_only)


def load_reference(path) -> ReferenceStaticResponse:
    """Load a reference response saved by :func:`save_reference`."""
    blob = binio.read_reference_blob(path)
    return ReferenceStaticResponse(response=blob["response"], n_exchanges=blob["n_exchanges"],
                                   timestamp_noise_std=blob["timestamp_noise_std"],
                                   clock_error=blob["clock_error"],
                                   relative_only=blob["relative_only"])
