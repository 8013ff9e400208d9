"""Literature-derived baseline aligners used for comparison.

Three alignment principles from prior asynchronous-sensing work, each
re-implemented on the same search grid and window conventions as the
proposed methods so that only the alignment rule differs: recursive
snapshot-similarity maximization, delay-domain envelope correlation, and
dominant delay-bin peak tracking.  All of them feed the identical
downstream compensation / spectrum / gain machinery.

These follow the cited principles, not the cited papers' full systems.
"""
from __future__ import annotations

import numpy as np

from .numerics import SearchGrid, parabolic_refine, wrap_period
from .signal_model import SystemConfig, to_modulation
from .to_alignment import AlignedStream, align_by

SIMILARITY = "similarity"
ENVELOPE = "envelope"
IFFT_PEAK = "ifft_peak"
BASELINE_KINDS = (SIMILARITY, ENVELOPE, IFFT_PEAK)

# running-reference memory for the envelope baseline: 0 keeps only the
# previous aligned envelope, mirroring the cited recursion
_ENVELOPE_MEMORY = 0.0


def _block_fft(snapshot: np.ndarray, n_grid: int, k: int) -> np.ndarray:
    """Antenna-block-summed zero-padded FFT of a stacked snapshot."""
    return np.fft.fft(snapshot.reshape(-1, k), n=n_grid, axis=1).sum(axis=0)


def align_similarity(snapshots: np.ndarray, cfg: SystemConfig,
                     grid: SearchGrid | None = None) -> AlignedStream:
    """Recursive TO/PO alignment by snapshot-similarity maximization.

    Each snapshot's offset maximizes the magnitude of its inner product
    with the previously aligned snapshot over the delay grid; the phase
    offset then follows in closed form as the residual inner-product phase.
    """
    snapshots = np.asarray(snapshots, dtype=complex)
    grid = grid if grid is not None else SearchGrid.for_config(cfg)
    k = cfg.n_subcarriers
    t_total = snapshots.shape[1]
    aligned = np.empty_like(snapshots)
    applied_to = np.zeros(t_total)
    applied_po = np.zeros(t_total)
    aligned[:, 0] = snapshots[:, 0]
    for t in range(1, t_total):
        h = snapshots[:, t]
        prev = aligned[:, t - 1]
        corr = np.abs(_block_fft(np.conj(h) * prev, grid.size, k))
        idx = int(np.argmax(corr))
        refined = parabolic_refine(corr, idx, kind="max")
        tau = float(grid.delay_at(refined))
        shifted = align_by(cfg, h, tau)
        phase = float(np.angle(np.vdot(prev, shifted)))
        aligned[:, t] = shifted * np.exp(-1j * phase)
        applied_to[t] = tau
        applied_po[t] = phase
    return AlignedStream(data=aligned, applied_to=applied_to, applied_po=applied_po)


def _envelope(snapshot: np.ndarray, n_grid: int, k: int) -> np.ndarray:
    """Delay-domain magnitude envelope, summed over antenna blocks."""
    return np.abs(np.fft.ifft(snapshot.reshape(-1, k), n=n_grid, axis=1)).sum(axis=0)


def align_envelope(snapshots: np.ndarray, cfg: SystemConfig,
                   grid: SearchGrid | None = None) -> AlignedStream:
    """TO-only alignment by circular cross-correlation of delay envelopes.

    The zero-padded delay-domain envelope of each snapshot is circularly
    correlated with a running reference envelope; the best lag is removed.
    The reference is an exponential running mean of aligned envelopes.
    """
    snapshots = np.asarray(snapshots, dtype=complex)
    grid = grid if grid is not None else SearchGrid.for_config(cfg)
    k = cfg.n_subcarriers
    t_total = snapshots.shape[1]
    aligned = np.empty_like(snapshots)
    applied_to = np.zeros(t_total)
    aligned[:, 0] = snapshots[:, 0]
    reference = _envelope(snapshots[:, 0], grid.size, k)
    ref_fft = np.fft.fft(reference)
    for t in range(1, t_total):
        h = snapshots[:, t]
        env = _envelope(h, grid.size, k)
        # corr[l] = sum_n reference[n + l] env[n]; the true lag shows up at l = -shift
        corr = np.fft.ifft(np.conj(np.fft.fft(env)) * ref_fft).real
        idx = int(np.argmax(corr))
        refined = parabolic_refine(corr, idx, kind="max")
        tau = float(wrap_period(-refined * grid.step, grid.period))
        aligned[:, t] = align_by(cfg, h, tau)
        applied_to[t] = tau
        reference = _ENVELOPE_MEMORY * reference + (1.0 - _ENVELOPE_MEMORY) \
            * _envelope(aligned[:, t], grid.size, k)
        ref_fft = np.fft.fft(reference)
    return AlignedStream(data=aligned, applied_to=applied_to,
                         applied_po=np.zeros(t_total))


def align_ifft_peak(snapshots: np.ndarray, cfg: SystemConfig,
                    grid: SearchGrid | None = None) -> AlignedStream:
    """TO/PO alignment by tracking the dominant delay-domain peak.

    Each snapshot's strongest delay-bin peak is shifted onto the first
    snapshot's peak position; the phase offset is read from the reference
    bin after the shift.
    """
    snapshots = np.asarray(snapshots, dtype=complex)
    grid = grid if grid is not None else SearchGrid.for_config(cfg)
    k = cfg.n_subcarriers
    t_total = snapshots.shape[1]
    aligned = np.empty_like(snapshots)
    applied_to = np.zeros(t_total)
    applied_po = np.zeros(t_total)
    aligned[:, 0] = snapshots[:, 0]

    def delay_profile(snapshot):
        return np.fft.ifft(snapshot.reshape(-1, k), n=grid.size, axis=1).sum(axis=0)

    ref_profile = delay_profile(snapshots[:, 0])
    ref_mag = np.abs(ref_profile)
    ref_idx = int(np.argmax(ref_mag))
    ref_pos = parabolic_refine(ref_mag, ref_idx, kind="max")
    ref_phase = float(np.angle(ref_profile[ref_idx]))
    for t in range(1, t_total):
        h = snapshots[:, t]
        mag = np.abs(delay_profile(h))
        idx = int(np.argmax(mag))
        pos = parabolic_refine(mag, idx, kind="max")
        tau = float(wrap_period((pos - ref_pos) * grid.step, grid.period))
        shifted = align_by(cfg, h, tau)
        phase = float(np.angle(delay_profile(shifted)[ref_idx])) - ref_phase
        aligned[:, t] = shifted * np.exp(-1j * phase)
        applied_to[t] = tau
        applied_po[t] = phase
    return AlignedStream(data=aligned, applied_to=applied_to, applied_po=applied_po)


def align_baseline(kind: str, snapshots: np.ndarray, cfg: SystemConfig,
                   grid: SearchGrid | None = None) -> AlignedStream:
    """Dispatch a baseline aligner by kind."""
    if kind == SIMILARITY:
        return align_similarity(snapshots, cfg, grid)
    if kind == ENVELOPE:
        return align_envelope(snapshots, cfg, grid)
    if kind == IFFT_PEAK:
        return align_ifft_peak(snapshots, cfg, grid)
    raise ValueError(f"unknown baseline kind {kind!r}")
