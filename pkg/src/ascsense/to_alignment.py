"""Recursive relative time-offset (TO) alignment across channel snapshots.

A sliding window of previously aligned snapshots provides either a noise
subspace (via eigendecomposition and MDL order selection) or a regularized
inverse covariance; the incoming snapshot's relative TO is the extremum of
a steering-modulated quadratic form over a dense delay grid, evaluated with
zero-padded FFTs.  The first subcarrier-count snapshots are handled by a
Hankel spatial-smoothing procedure that trades bandwidth for snapshots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .numerics import SearchGrid, parabolic_refine, stacked_fft_spectrum
from .signal_model import SystemConfig, to_modulation

METHOD_SUBSPACE = "subspace"
METHOD_COVARIANCE = "covariance"
_METHODS = (METHOD_SUBSPACE, METHOD_COVARIANCE)

FLAG_DEGENERATE = "degenerate_snapshot"

_EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class SubspaceEstimate:
    """Signal/noise split of a window's Gram matrix.

    ``eigenvalues`` are those of the unnormalized Gram matrix ``W W^H`` in
    descending order; ``noise_power`` is their trailing mean divided by the
    window length, i.e. a per-snapshot noise power.
    """

    dimension: int
    signal_basis: np.ndarray
    noise_basis: np.ndarray
    eigenvalues: np.ndarray
    noise_power: float
    n_snapshots: int

    def noise_projector(self) -> np.ndarray:
        return self.noise_basis @ self.noise_basis.conj().T

    def shifted(self, tau: float, cfg: SystemConfig) -> "SubspaceEstimate":
        """Basis rotated as if every window snapshot were delayed by ``-tau``."""
        rot = np.conj(to_modulation(cfg, tau))[:, None]
        return SubspaceEstimate(self.dimension, rot * self.signal_basis,
                                rot * self.noise_basis, self.eigenvalues,
                                self.noise_power, self.n_snapshots)


def mdl_dimension(eigenvalues: np.ndarray, n_snapshots: int) -> int:
    """Signal-subspace dimension by the minimum-description-length rule.

    Minimizes the Gaussian sphericity log-likelihood of the trailing
    eigenvalues plus the description-length penalty 0.5 d (2n - d) ln(T),
    with the result clamped to [1, n-1] (the merged static path is always
    present).  Exact ties break toward the smallest dimension.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    n = lam.size
    if n < 2:
        raise ValueError("need at least two eigenvalues")
    if np.any(lam < -_EIG_FLOOR * max(abs(lam[0]), 1.0)) or np.any(np.diff(lam) > 1e-9 * max(lam[0], 1.0)):
        raise ValueError("eigenvalues must be non-negative and descending")
    if lam[0] <= 0.0:
        raise ValueError("all eigenvalues are zero (degenerate window)")
    lam = np.maximum(lam, lam[0] * _EIG_FLOOR)
    penalty_scale = 0.5 * np.log(max(n_snapshots, 2))
    log_lam = np.log(lam)
    dims = np.arange(1, n)
    scores = np.empty(dims.size)
    for i, d in enumerate(dims):
        tail = lam[d:]
        ratio = np.log(tail.mean()) - log_lam[d:].mean()
        scores[i] = n_snapshots * (n - d) * ratio + penalty_scale * d * (2 * n - d)
    # round away sub-ulp differences so exact ties break toward the smallest d
    scale = max(np.abs(scores).max(), 1.0)
    scores = np.round(scores / scale, 12)
    return int(dims[np.argmin(scores)])


def subspace_projector(window: np.ndarray) -> SubspaceEstimate:
    """Noise/signal subspace estimate from a window of aligned snapshots."""
    window = np.asarray(window, dtype=complex)
    if window.ndim != 2 or window.shape[1] < 2:
        raise ValueError("window must hold at least two snapshots")
    gram = window @ window.conj().T
    evd = numerics.hermitian_evd(gram)
    lam = np.maximum(evd.eigenvalues, 0.0)
    if lam[0] <= 0.0:
        raise ValueError("window is identically zero")
    t_w = window.shape[1]
    d = mdl_dimension(lam, t_w)
    d = min(d, max(min(t_w, window.shape[0]) - 1, 1))
    noise_power = float(lam[d:].mean() / t_w) if d < lam.size else 0.0
    return SubspaceEstimate(dimension=d, signal_basis=evd.eigenvectors[:, :d],
                            noise_basis=evd.eigenvectors[:, d:], eigenvalues=lam,
                            noise_power=noise_power, n_snapshots=t_w)


def covariance_whitener(window: np.ndarray) -> tuple[np.ndarray, float]:
    """Factor F with F F^H = (W W^H / T_w + sigma^2 I)^(-1).

    The per-snapshot noise power comes from the trailing (post-MDL)
    eigenvalues; adjusted eigenvalues are floored at a tiny fraction of the
    largest to keep the inverse defined for noiseless windows.
    """
    est = subspace_projector(window)
    adjusted = est.eigenvalues / est.n_snapshots + est.noise_power
    if adjusted[0] <= 0.0:
        raise ValueError("adjusted covariance is not positive definite")
    adjusted = np.maximum(adjusted, adjusted[0] * _EIG_FLOOR)
    basis = np.concatenate([est.signal_basis, est.noise_basis], axis=1)
    return basis / np.sqrt(adjusted)[None, :], est.noise_power


@dataclass(frozen=True)
class ToEstimate:
    value: float
    flag: str | None = None


def _signal_match_spectrum(columns: np.ndarray, basis: np.ndarray, grid: SearchGrid,
                           block_len: int) -> np.ndarray:
    """Summed signal-subspace projection power over the compensation grid.

    For each grid delay tau_n this is
    ``sum_j || U_S^H (conj(a(tau_n)) * x_j) ||^2``; maximizing it over the
    grid minimizes the complementary noise-subspace projection because the
    modulation preserves column norms.
    """
    cols = columns if columns.ndim == 2 else columns[:, None]
    products = (np.conj(cols)[:, :, None] * basis[:, None, :]).reshape(cols.shape[0], -1)
    return stacked_fft_spectrum(products, grid.size, block_len)


def _whitened_spectrum(columns: np.ndarray, factor: np.ndarray, grid: SearchGrid,
                       block_len: int) -> np.ndarray:
    """Summed whitened projection power (the covariance-rule objective)."""
    cols = columns if columns.ndim == 2 else columns[:, None]
    products = (np.conj(cols)[:, :, None] * factor[:, None, :]).reshape(cols.shape[0], -1)
    return stacked_fft_spectrum(products, grid.size, block_len)


def estimate_relative_to_subspace(snapshot: np.ndarray, est: SubspaceEstimate,
                                  grid: SearchGrid, block_len: int | None = None) -> ToEstimate:
    """Relative TO of a snapshot against a window's noise subspace.

    Grid-minimizes the projection of the compensated snapshot into the
    window's noise subspace (equivalently maximizes the signal-subspace
    match), with 3-point parabolic refinement.
    """
    snapshot = np.asarray(snapshot, dtype=complex)
    if est.signal_basis.shape[0] != snapshot.shape[0]:
        raise ValueError("subspace estimate does not match the snapshot length")
    energy = float(np.vdot(snapshot, snapshot).real)
    if energy <= 0.0:
        return ToEstimate(0.0, FLAG_DEGENERATE)
    block = block_len if block_len is not None else snapshot.shape[0]
    match = _signal_match_spectrum(snapshot, est.signal_basis, grid, block)
    idx = int(np.argmax(match))
    refined = parabolic_refine(match, idx, kind="max")
    return ToEstimate(float(grid.delay_at(refined)))


def estimate_relative_to_covariance(snapshot: np.ndarray, factor: np.ndarray,
                                    grid: SearchGrid,
                                    block_len: int | None = None) -> ToEstimate:
    """Relative TO by grid-minimizing the whitened quadratic form.

    ``factor`` must satisfy F F^H = (window covariance + noise power I)^(-1);
    see :func:`covariance_whitener`.
    """
    snapshot = np.asarray(snapshot, dtype=complex)
    if factor.shape[0] != snapshot.shape[0]:
        raise ValueError("whitening factor does not match the snapshot length")
    energy = float(np.vdot(snapshot, snapshot).real)
    if energy <= 0.0:
        return ToEstimate(0.0, FLAG_DEGENERATE)
    block = block_len if block_len is not None else snapshot.shape[0]
    objective = _whitened_spectrum(snapshot, factor, grid, block)
    idx = int(np.argmin(objective))
    refined = parabolic_refine(objective, idx, kind="min")
    return ToEstimate(float(grid.delay_at(refined)))


# ---------------------------------------------------------------------------
# Hankel spatial smoothing for the initial snapshots
# ---------------------------------------------------------------------------

def hankel_window_size(n_subcarriers: int, t: int) -> int:
    """Subarray size for aligning snapshot ``t``: floor((K+1)(t-1)/t)."""
    return ((n_subcarriers + 1) * (t - 1)) // t


def _hankel_block(column_block: np.ndarray, s: int) -> np.ndarray:
    """[s, (K-s+1)*n] Hankel stack of an antenna block of aligned columns."""
    k, n = column_block.shape
    windows = k - s + 1
    out = np.empty((s, windows * n), dtype=complex)
    for w in range(windows):
        out[:, w * n:(w + 1) * n] = column_block[w:w + s, :]
    return out


def _hankel_stack(columns: np.ndarray, s: int, n_antennas: int) -> np.ndarray:
    """Per-antenna Hankel smoothing, stacked along the antenna axis."""
    cols = columns if columns.ndim == 2 else columns[:, None]
    k = cols.shape[0] // n_antennas
    blocks = [_hankel_block(cols[m * k:(m + 1) * k, :], s) for m in range(n_antennas)]
    return np.concatenate(blocks, axis=0)


def _initial_relative_to(prefix: np.ndarray, snapshot: np.ndarray, t: int,
                         cfg: SystemConfig, method: str, grid: SearchGrid) -> ToEstimate:
    """Relative TO for an early snapshot (2 <= t <= K) via Hankel smoothing."""
    k = cfg.n_subcarriers
    s = hankel_window_size(k, t)
    window = _hankel_stack(prefix, s, cfg.n_antennas)
    sub_snaps = _hankel_stack(snapshot, s, cfg.n_antennas)
    energy = float(np.vdot(sub_snaps, sub_snaps).real)
    if energy <= 0.0:
        return ToEstimate(0.0, FLAG_DEGENERATE)
    if method == METHOD_SUBSPACE:
        est = subspace_projector(window)
        match = _signal_match_spectrum(sub_snaps, est.signal_basis, grid, s)
        idx = int(np.argmax(match))
        refined = parabolic_refine(match, idx, kind="max")
    else:
        factor, _ = covariance_whitener(window)
        objective = _whitened_spectrum(sub_snaps, factor, grid, s)
        idx = int(np.argmin(objective))
        refined = parabolic_refine(objective, idx, kind="min")
    return ToEstimate(float(grid.delay_at(refined)))


# ---------------------------------------------------------------------------
# streaming state
# ---------------------------------------------------------------------------

class AlignmentState:
    """Single-stream recursive aligner (one writer; estimators are pure).

    Snapshot 1 passes through as the alignment reference.  Snapshots
    2..K use the Hankel initial procedure on the aligned prefix; later
    snapshots use the standard procedure against a sliding window of the
    most recent ``window_len`` aligned snapshots, recomputing the window
    decomposition per snapshot.
    """

    def __init__(self, cfg: SystemConfig, method: str = METHOD_SUBSPACE,
                 window_len: int = 48, grid: SearchGrid | None = None):
        if method not in _METHODS:
            raise ValueError(f"unknown alignment method {method!r}")
        if window_len < 2:
            raise ValueError("window length must be at least 2")
        self.cfg = cfg
        self.method = method
        self.window_len = window_len
        self.grid = grid if grid is not None else SearchGrid.for_config(cfg)
        self._columns: list[np.ndarray] = []
        self.relative_to: list[float] = []
        self.flags: list[tuple[int, str]] = []
        self._t = 0

    @property
    def n_processed(self) -> int:
        return self._t

    def window(self) -> np.ndarray:
        return np.stack(self._columns, axis=1)

    def process(self, snapshot: np.ndarray) -> np.ndarray:
        """Align one incoming snapshot and advance the window."""
        snapshot = np.asarray(snapshot, dtype=complex)
        if snapshot.shape != (self.cfg.n_rows,):
            raise ValueError(f"expected a length-{self.cfg.n_rows} snapshot")
        self._t += 1
        t = self._t
        if t == 1:
            est = ToEstimate(0.0)
        elif t <= self.cfg.n_subcarriers:
            est = _initial_relative_to(self.window(), snapshot, t, self.cfg,
                                       self.method, self.grid)
        else:
            window = self.window()
            if self.method == METHOD_SUBSPACE:
                sub = subspace_projector(window)
                est = estimate_relative_to_subspace(snapshot, sub, self.grid,
                                                    block_len=self.cfg.n_subcarriers)
            else:
                factor, _ = covariance_whitener(window)
                est = estimate_relative_to_covariance(snapshot, factor, self.grid,
                                                      block_len=self.cfg.n_subcarriers)
        aligned = align_by(self.cfg, snapshot, est.value)
        self._columns.append(aligned)
        if len(self._columns) > self.window_len:
            self._columns.pop(0)
        self.relative_to.append(est.value)
        if est.flag:
            self.flags.append((t, est.flag))
        return aligned


def align_by(cfg: SystemConfig, snapshot: np.ndarray, tau: float) -> np.ndarray:
    """Compensate a snapshot for an estimated relative TO of ``tau``."""
    return np.conj(to_modulation(cfg, tau)) * snapshot


def align_snapshot(state: AlignmentState, snapshot: np.ndarray) -> np.ndarray:
    """Process one snapshot through an alignment state (see AlignmentState)."""
    return state.process(snapshot)


def initial_align(snapshots: np.ndarray, cfg: SystemConfig, method: str = METHOD_SUBSPACE,
                  grid: SearchGrid | None = None, window_len: int = 48) -> np.ndarray:
    """Align a stream prefix (up to subcarrier-count snapshots), returning it stacked."""
    if cfg.n_subcarriers < 2:
        raise ValueError("initial alignment needs at least two subcarriers")
    snapshots = np.asarray(snapshots, dtype=complex)
    n = min(snapshots.shape[1], cfg.n_subcarriers)
    state = AlignmentState(cfg, method=method, window_len=window_len, grid=grid)
    return np.stack([state.process(snapshots[:, t]) for t in range(n)], axis=1)


@dataclass(frozen=True)
class AlignedStream:
    """Aligned snapshots plus the per-snapshot compensations that produced them."""

    data: np.ndarray
    applied_to: np.ndarray
    applied_po: np.ndarray
    flags: tuple = ()


def align_stream(snapshots: np.ndarray, cfg: SystemConfig, method: str = METHOD_SUBSPACE,
                 window_len: int = 48, grid: SearchGrid | None = None,
                 polish: bool = False) -> AlignedStream:
    """Run the recursive aligner over a whole snapshot stream.

    With ``polish=True`` the early snapshots (those aligned before the
    sliding window first filled) are re-estimated once against the final
    window, whose subspace no longer carries the initialization error.
    Only the warm-up region is touched; later snapshots keep their
    streaming estimates.
    """
    snapshots = np.asarray(snapshots, dtype=complex)
    state = AlignmentState(cfg, method=method, window_len=window_len, grid=grid)
    aligned = np.stack([state.process(snapshots[:, t]) for t in range(snapshots.shape[1])],
                       axis=1)
    applied = np.asarray(state.relative_to)
    t_total = snapshots.shape[1]
    warmup = min(window_len, t_total)
    if polish and t_total > 2:
        window = aligned[:, -min(window_len, t_total):]
        block = cfg.n_subcarriers
        if method == METHOD_SUBSPACE:
            est = subspace_projector(window)
            redo = [estimate_relative_to_subspace(snapshots[:, t], est, state.grid,
                                                  block_len=block)
                    for t in range(warmup)]
        else:
            factor, _ = covariance_whitener(window)
            redo = [estimate_relative_to_covariance(snapshots[:, t], factor, state.grid,
                                                    block_len=block)
                    for t in range(warmup)]
        for t, new in enumerate(redo):
            if new.flag:
                continue
            applied[t] = new.value
            aligned[:, t] = align_by(cfg, snapshots[:, t], new.value)
    return AlignedStream(data=aligned, applied_to=applied,
                         applied_po=np.zeros(t_total), flags=tuple(state.flags))
