"""Domain types and synthesis of asynchronous (MIMO-)OFDM channel snapshots.

Provides the system / array / path-set / offset types, steering vectors,
coherent-processing-interval (CPI) synthesis with full ground-truth
bookkeeping, randomized scenario generation, and simulated bidirectional
calibration exchanges with timestamped clock errors.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

STAGE_RAW = "raw"
STAGE_ALIGNED = "aligned"
STAGE_COMPENSATED = "compensated"
_STAGE_ORDER = (STAGE_RAW, STAGE_ALIGNED, STAGE_COMPENSATED)


def range_to_delay(range_m):
    """Propagation-range (m) to delay (s)."""
    return np.asarray(range_m, dtype=float) / SPEED_OF_LIGHT


def delay_to_range(delay_s):
    """Delay (s) to propagation range (m)."""
    return np.asarray(delay_s, dtype=float) * SPEED_OF_LIGHT


def as_generator(seed) -> np.random.Generator:
    """Coerce a seed into a counter-based (Philox) generator.

    Generators pass through untouched so callers can derive independent
    per-(trial, stream) generators themselves.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemConfig:
    """OFDM sensing dimensions and noise level.

    Attributes:
        n_subcarriers: subcarrier count K (>= 2).
        subcarrier_spacing: subcarrier interval in Hz.
        n_snapshots: snapshots per CPI.
        snapshot_interval: time between snapshots in seconds.
        n_antennas: receive antenna count M (>= 1).
        carrier_freq: carrier frequency in Hz (array phases, Doppler readout).
        noise_power: linear noise power per complex sample.
    """

    n_subcarriers: int
    subcarrier_spacing: float
    n_snapshots: int
    snapshot_interval: float
    n_antennas: int = 1
    carrier_freq: float = 5.8e9
    noise_power: float = 0.0

    def __post_init__(self):
        if self.n_subcarriers < 2:
            raise ValueError("need at least two subcarriers")
        if self.subcarrier_spacing <= 0.0:
            raise ValueError("subcarrier spacing must be positive")
        if self.n_snapshots < 1:
            raise ValueError("need at least one snapshot per CPI")
        if self.snapshot_interval <= 0.0:
            raise ValueError("snapshot interval must be positive")
        if self.n_antennas < 1:
            raise ValueError("need at least one antenna")
        if self.noise_power < 0.0:
            raise ValueError("noise power must be non-negative")

    @property
    def freqs(self) -> np.ndarray:
        """Baseband subcarrier frequencies [0, df, ..., (K-1) df]."""
        return np.arange(self.n_subcarriers) * self.subcarrier_spacing

    @property
    def alias_period(self) -> float:
        """Unambiguous delay span 1/df; delays are observable modulo this."""
        return 1.0 / self.subcarrier_spacing

    @property
    def bandwidth(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing

    @property
    def n_rows(self) -> int:
        """Stacked snapshot length M*K."""
        return self.n_antennas * self.n_subcarriers

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq


@dataclass(frozen=True)
class ArrayGeometry:
    """Receive array shape mapped to per-antenna phases.

    ``phase_response(theta)`` returns the real per-antenna phase vector (rad)
    for an arrival angle ``theta`` (rad); it is identically zero for a single
    antenna and zero at broadside for a uniform linear array.
    """

    kind: str
    n_antennas: int
    element_spacing: float = 0.0
    wavelength: float = 1.0

    def __post_init__(self):
        if self.kind not in ("single", "uniform_linear"):
            raise ValueError(f"unknown array kind {self.kind!r}")
        if self.kind == "single" and self.n_antennas != 1:
            raise ValueError("single-element geometry requires one antenna")
        if self.n_antennas < 1:
            raise ValueError("need at least one antenna")

    @classmethod
    def single(cls) -> "ArrayGeometry":
        return cls(kind="single", n_antennas=1)

    @classmethod
    def uniform_linear(cls, n_antennas: int, carrier_freq: float,
                       spacing_factor: float = 0.5) -> "ArrayGeometry":
        lam = SPEED_OF_LIGHT / carrier_freq
        return cls(kind="uniform_linear", n_antennas=n_antennas,
                   element_spacing=spacing_factor * lam, wavelength=lam)

    def phase_response(self, theta: float) -> np.ndarray:
        if self.kind == "single":
            return np.zeros(1)
        return (2.0 * np.pi * self.element_spacing / self.wavelength
                * np.sin(theta) * np.arange(self.n_antennas))


# ---------------------------------------------------------------------------
# path sets, offsets, CSI containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StaticPathSet:
    """Static propagation paths (delays, complex gains, optional arrival angles)."""

    delays: np.ndarray
    gains: np.ndarray
    aoas: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "delays", np.atleast_1d(np.asarray(self.delays, dtype=float)))
        object.__setattr__(self, "gains", np.atleast_1d(np.asarray(self.gains, dtype=complex)))
        if self.aoas is not None:
            object.__setattr__(self, "aoas", np.atleast_1d(np.asarray(self.aoas, dtype=float)))
        if self.delays.size < 1:
            raise ValueError("at least one static path is required")
        if np.any(self.delays < 0.0):
            raise ValueError("static delays must be non-negative")
        if self.gains.shape != self.delays.shape:
            raise ValueError("gains and delays must have matching shapes")
        if self.aoas is not None and self.aoas.shape != self.delays.shape:
            raise ValueError("aoas and delays must have matching shapes")

    @property
    def n_paths(self) -> int:
        return self.delays.size

    def merged_response(self, cfg: SystemConfig, geom: ArrayGeometry | None = None) -> np.ndarray:
        """Merged static response: gain-weighted sum of path steering vectors."""
        out = np.zeros(cfg.n_rows, dtype=complex)
        for i in range(self.n_paths):
            theta = float(self.aoas[i]) if self.aoas is not None else 0.0
            out += self.gains[i] * steering_vector_mimo(cfg, _geom_or_single(cfg, geom), theta,
                                                        self.delays[i])
        return out


@dataclass(frozen=True)
class DynamicPathSet:
    """Dynamic target paths: per-CPI delays, delay rates, AoAs, and gain sequences.

    Delays are frozen at their CPI-start values; ``rates`` (s/s) describe the
    piecewise-linear trajectory across CPIs.  ``cgs`` holds one complex gain
    per path per snapshot, shape [L, T].
    """

    delays: np.ndarray
    cgs: np.ndarray
    rates: np.ndarray | None = None
    aoas: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "delays", np.atleast_1d(np.asarray(self.delays, dtype=float)))
        cgs = np.asarray(self.cgs, dtype=complex)
        if cgs.ndim == 1:
            cgs = cgs[None, :]
        object.__setattr__(self, "cgs", cgs)
        if self.rates is not None:
            object.__setattr__(self, "rates", np.atleast_1d(np.asarray(self.rates, dtype=float)))
        if self.aoas is not None:
            object.__setattr__(self, "aoas", np.atleast_1d(np.asarray(self.aoas, dtype=float)))
        if self.cgs.shape[0] != self.delays.size:
            raise ValueError("one gain sequence per path is required")
        for name in ("rates", "aoas"):
            val = getattr(self, name)
            if val is not None and val.shape != self.delays.shape:
                raise ValueError(f"{name} must match the delay vector shape")

    @classmethod
    def empty(cls, n_snapshots: int) -> "DynamicPathSet":
        return cls(delays=np.zeros(0), cgs=np.zeros((0, n_snapshots)))

    @property
    def n_paths(self) -> int:
        return self.delays.size

    @property
    def n_snapshots(self) -> int:
        return self.cgs.shape[1]

    def response_matrix(self, cfg: SystemConfig, geom: ArrayGeometry | None = None) -> np.ndarray:
        """[MK, L] matrix of per-path steering vectors."""
        cols = [steering_vector_mimo(cfg, _geom_or_single(cfg, geom),
                                     float(self.aoas[i]) if self.aoas is not None else 0.0,
                                     self.delays[i])
                for i in range(self.n_paths)]
        if not cols:
            return np.zeros((cfg.n_rows, 0), dtype=complex)
        return np.stack(cols, axis=1)


@dataclass(frozen=True)
class OffsetSequence:
    """Per-snapshot time offsets (s) and phase offsets (rad)."""

    to: np.ndarray
    po: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "to", np.atleast_1d(np.asarray(self.to, dtype=float)))
        object.__setattr__(self, "po", np.atleast_1d(np.asarray(self.po, dtype=float)))
        if self.to.shape != self.po.shape:
            raise ValueError("time and phase offset vectors must match")

    @classmethod
    def zero(cls, n_snapshots: int) -> "OffsetSequence":
        return cls(to=np.zeros(n_snapshots), po=np.zeros(n_snapshots))

    @classmethod
    def random(cls, cfg: SystemConfig, rng, law: str = "uniform",
               n_snapshots: int | None = None) -> "OffsetSequence":
        """Draw an offset sequence.

        ``uniform`` draws i.i.d. offsets over their full ranges; ``slow_drift``
        random-walks both offsets with small per-snapshot steps behind the
        same interface.
        """
        rng = as_generator(rng)
        t = n_snapshots if n_snapshots is not None else cfg.n_snapshots
        period = cfg.alias_period
        if law == "uniform":
            to = rng.uniform(0.0, period, t)
            po = rng.uniform(-np.pi, np.pi, t)
        elif law == "slow_drift":
            to = np.mod(rng.uniform(0.0, period)
                        + np.cumsum(rng.normal(0.0, period / 200.0, t)), period)
            po = np.mod(rng.uniform(-np.pi, np.pi)
                        + np.cumsum(rng.normal(0.0, np.pi / 100.0, t)) + np.pi,
                        2.0 * np.pi) - np.pi
        else:
            raise ValueError(f"unknown offset law {law!r}")
        return cls(to=to, po=po)

    @property
    def n_snapshots(self) -> int:
        return self.to.size


@dataclass(frozen=True)
class CpiTruth:
    """Ground truth retained alongside a synthesized CPI."""

    statics: StaticPathSet
    dynamics: DynamicPathSet
    offsets: OffsetSequence


@dataclass(frozen=True)
class CsiMatrix:
    """Stacked channel snapshots [M*K, T] with a processing-stage tag."""

    data: np.ndarray
    stage: str = STAGE_RAW
    cpi_index: int = 0
    truth: CpiTruth | None = None

    def __post_init__(self):
        if self.stage not in _STAGE_ORDER:
            raise ValueError(f"unknown stage {self.stage!r}")
        data = np.asarray(self.data, dtype=complex)
        if data.ndim != 2:
            raise ValueError("CSI data must be a 2-D matrix")
        object.__setattr__(self, "data", data)

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]

    def advanced(self, data: np.ndarray, stage: str) -> "CsiMatrix":
        """Copy with new data at the next processing stage (raw->aligned->compensated)."""
        if _STAGE_ORDER.index(stage) != _STAGE_ORDER.index(self.stage) + 1:
            raise ValueError(f"illegal stage transition {self.stage!r} -> {stage!r}")
        return replace(self, data=np.asarray(data, dtype=complex), stage=stage)


@dataclass(frozen=True)
class BidirectionalTrace:
    """Simulated bidirectional calibration exchanges.

    Snapshots are static-only by construction.  Timestamp arrays hold the
    noisy clock readings for each exchange; ``clock_errors`` is the ground
    truth per-exchange clock error (UE lagging the base station).
    """

    bs_snapshots: np.ndarray
    ue_snapshots: np.ndarray
    bs_tx: np.ndarray
    bs_rx: np.ndarray
    ue_tx: np.ndarray
    ue_rx: np.ndarray
    clock_errors: np.ndarray
    timestamp_noise_std: float
    bs_offsets: OffsetSequence
    ue_offsets: OffsetSequence

    @property
    def n_exchanges(self) -> int:
        return self.bs_snapshots.shape[1]


# ---------------------------------------------------------------------------
# steering vectors and synthesis
# ---------------------------------------------------------------------------

def _geom_or_single(cfg: SystemConfig, geom: ArrayGeometry | None) -> ArrayGeometry:
    if geom is None:
        if cfg.n_antennas != 1:
            raise ValueError("multi-antenna config requires an ArrayGeometry")
        return ArrayGeometry.single()
    if geom.n_antennas != cfg.n_antennas:
        raise ValueError(f"geometry has {geom.n_antennas} antennas, config {cfg.n_antennas}")
    return geom


def steering_vector(cfg: SystemConfig, tau: float) -> np.ndarray:
    """Frequency response of a path with delay ``tau``: exp(-j 2 pi f tau).

    Unit-modulus entries; periodic in ``tau`` with period 1/subcarrier_spacing.
    """
    return np.exp(-2j * np.pi * cfg.freqs * tau)


def steering_vector_mimo(cfg: SystemConfig, geom: ArrayGeometry, theta: float,
                         tau: float) -> np.ndarray:
    """Joint spatial-frequency response: kron(exp(j p(theta)), a(tau))."""
    geom = _geom_or_single(cfg, geom)
    spatial = np.exp(1j * geom.phase_response(theta))
    return np.kron(spatial, steering_vector(cfg, tau))


def to_modulation(cfg: SystemConfig, tau) -> np.ndarray:
    """Per-row phase ramp of a pure time offset: steering at AoA 0, tiled over antennas.

    Accepts a scalar (returns [MK]) or a length-T vector (returns [MK, T]).
    """
    tau = np.asarray(tau, dtype=float)
    base = np.exp(-2j * np.pi * np.outer(cfg.freqs, np.atleast_1d(tau)))
    full = np.tile(base, (cfg.n_antennas, 1))
    return full[:, 0] if tau.ndim == 0 else full


def synthesize_cpi(cfg: SystemConfig, geom: ArrayGeometry | None,
                   statics: StaticPathSet, dynamics: DynamicPathSet,
                   offsets: OffsetSequence, seed=0, cpi_index: int = 0) -> CsiMatrix:
    """Synthesize one CPI of asynchronous CSI measurements.

    Column t is ``(h_s + sum_l cgs[l, t] a(theta_l, tau_l)) * exp(j po_t) *
    a(0, to_t)`` plus circular complex Gaussian noise of per-sample power
    ``cfg.noise_power``.  Ground truth is retained on the returned matrix.
    """
    if dynamics.n_paths and dynamics.n_snapshots != cfg.n_snapshots:
        raise ValueError("gain sequences must cover the whole CPI")
    if offsets.n_snapshots != cfg.n_snapshots:
        raise ValueError("offset sequence must cover the whole CPI")
    rng = as_generator(seed)
    h_s = statics.merged_response(cfg, geom)
    a_d = dynamics.response_matrix(cfg, geom)
    signal = h_s[:, None] + a_d @ dynamics.cgs
    asynchrony = to_modulation(cfg, offsets.to) * np.exp(1j * offsets.po)[None, :]
    data = signal * asynchrony
    if cfg.noise_power > 0.0:
        scale = np.sqrt(cfg.noise_power / 2.0)
        data = data + scale * (rng.standard_normal(data.shape)
                               + 1j * rng.standard_normal(data.shape))
    return CsiMatrix(data=data, stage=STAGE_RAW, cpi_index=cpi_index,
                     truth=CpiTruth(statics=statics, dynamics=dynamics, offsets=offsets))


# ---------------------------------------------------------------------------
# randomized scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    """Knobs for randomized scenario generation.

    Ranges are in meters / m/s; ``dyn_separation`` switches to the two-target
    layout where the second dynamic delay sits exactly that far (in range)
    beyond the first.
    """

    n_static: int = 7
    n_dynamic: int = 3
    snr_db: float = 25.0
    dyn_power_proportion: float = 0.3
    static_range_mean: float = 12.0
    dyn_range: tuple = (8.0, 20.0)
    dyn_rate: tuple = (0.0, 2.0)
    dyn_separation: float | None = None
    aoa_span: tuple = (-np.pi / 3.0, np.pi / 3.0)
    offset_law: str = "uniform"

    def __post_init__(self):
        if not (0.0 < self.dyn_power_proportion < 1.0):
            raise ValueError("dynamic power proportion must lie strictly inside (0, 1)")
        if self.n_static < 1 or self.n_dynamic < 1:
            raise ValueError("need at least one static and one dynamic path")

    def noise_power(self) -> float:
        """Noise power that realizes ``snr_db`` for unit per-sample signal power."""
        return 10.0 ** (-self.snr_db / 10.0)


def random_scenario(cfg: SystemConfig, geom: ArrayGeometry | None, spec: ScenarioSpec,
                    seed=0) -> tuple[StaticPathSet, DynamicPathSet, OffsetSequence]:
    """Draw a random scenario.

    Static delays follow a Rayleigh law with mean ``static_range_mean``;
    dynamic delays are uniform over ``dyn_range`` (or separation-locked in
    two-target mode) with uniform delay rates.  Mean path power is inversely
    proportional to squared delay; gain sequences are i.i.d. complex
    Gaussian.  Dynamic powers are rescaled so their share of per-column
    signal power equals ``dyn_power_proportion`` exactly, and the total
    per-sample signal power is normalized to 1 (so SNR is set purely by
    ``cfg.noise_power``).
    """
    rng = as_generator(seed)
    geom = _geom_or_single(cfg, geom)
    mimo = cfg.n_antennas > 1

    rayleigh_scale = range_to_delay(spec.static_range_mean) / np.sqrt(np.pi / 2.0)
    static_delays = rng.rayleigh(rayleigh_scale, spec.n_static)
    static_delays = np.maximum(static_delays, range_to_delay(0.5))
    static_aoas = rng.uniform(*spec.aoa_span, spec.n_static) if mimo else None

    lo, hi = (range_to_delay(r) for r in spec.dyn_range)
    if spec.dyn_separation is not None:
        if spec.n_dynamic != 2:
            raise ValueError("separation-locked scenarios use exactly two dynamic paths")
        sep = range_to_delay(spec.dyn_separation)
        if sep <= 0.0 or sep >= hi - lo:
            raise ValueError("separation must fit inside the dynamic range window")
        first = rng.uniform(lo, hi - sep)
        dyn_delays = np.array([first, first + sep])
    else:
        dyn_delays = rng.uniform(lo, hi, spec.n_dynamic)
    rate_lo, rate_hi = (r / SPEED_OF_LIGHT for r in spec.dyn_rate)
    dyn_rates = rng.uniform(rate_lo, rate_hi, spec.n_dynamic)
    dyn_rates *= rng.choice([-1.0, 1.0], spec.n_dynamic)
    dyn_aoas = rng.uniform(*spec.aoa_span, spec.n_dynamic) if mimo else None

    # mean path power proportional to 1/delay^2, separately normalized below
    static_power = 1.0 / np.square(delay_to_range(static_delays))
    dyn_power = 1.0 / np.square(delay_to_range(dyn_delays))

    def cgauss(shape, power):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
            * np.sqrt(np.asarray(power) / 2.0)

    static_gains = cgauss(spec.n_static, static_power)
    statics = StaticPathSet(delays=static_delays, gains=static_gains, aoas=static_aoas)

    cgs = cgauss((spec.n_dynamic, cfg.n_snapshots), dyn_power[:, None])

    # rescale so the dynamic share of realized per-column signal power is exact
    h_s = statics.merged_response(cfg, geom)
    static_col_power = float(np.vdot(h_s, h_s).real)
    dyn_col_power = float(np.square(np.abs(cgs)).mean(axis=1).sum()) * cfg.n_rows
    p = spec.dyn_power_proportion
    cgs = cgs * np.sqrt((static_col_power * p / (1.0 - p)) / dyn_col_power)

    # normalize total per-sample signal power to 1
    total_col_power = static_col_power / (1.0 - p)
    gain = np.sqrt(cfg.n_rows / total_col_power)
    statics = replace(statics, gains=statics.gains * gain)
    dynamics = DynamicPathSet(delays=dyn_delays, cgs=cgs * gain, rates=dyn_rates,
                              aoas=dyn_aoas)

    offsets = OffsetSequence.random(cfg, rng, law=spec.offset_law)
    return statics, dynamics, offsets


# ---------------------------------------------------------------------------
# bidirectional calibration synthesis
# ---------------------------------------------------------------------------

def synthesize_bidirectional(cfg: SystemConfig, statics: StaticPathSet, n_exchanges: int,
                             timestamp_noise_std: float = 2.5e-9,
                             clock_error: float | np.ndarray | Callable = 0.0,
                             seed=0, geom: ArrayGeometry | None = None,
                             ue_gain: complex = 1.0 + 0.0j) -> BidirectionalTrace:
    """Simulate ``n_exchanges`` bidirectional calibration measurements.

    Each exchange shares one clock error between its two directions; the
    up- and downlink channels are reciprocal up to the complex scale
    ``ue_gain`` (the UE side is single-antenna).  The four timestamp
    readings per exchange are perturbed with ``timestamp_noise_std``.

    Calibration happens in a dynamic-free environment, so only static paths
    enter the snapshots.  Requires ``n_exchanges >= n_subcarriers`` so the
    initial alignment can complete.
    """
    if n_exchanges < cfg.n_subcarriers:
        raise ValueError("need at least one exchange per subcarrier for alignment")
    rng = as_generator(seed)

    if callable(clock_error):
        clock = np.asarray(clock_error(rng, n_exchanges), dtype=float)
    else:
        clock = np.broadcast_to(np.asarray(clock_error, dtype=float), (n_exchanges,)).copy()

    bs_offsets = OffsetSequence.random(cfg, rng, n_snapshots=n_exchanges)
    ue_offsets = OffsetSequence.random(cfg, rng, n_snapshots=n_exchanges)

    cfg_ue = replace(cfg, n_antennas=1)
    h_bs = statics.merged_response(cfg, geom)
    ue_paths = StaticPathSet(delays=statics.delays, gains=statics.gains * ue_gain)
    h_ue = ue_paths.merged_response(cfg_ue, None)

    def snapshots(h, config, offs):
        mod = to_modulation(config, offs.to) * np.exp(1j * offs.po)[None, :]
        data = h[:, None] * mod
        if config.noise_power > 0.0:
            scale = np.sqrt(config.noise_power / 2.0)
            data = data + scale * (rng.standard_normal(data.shape)
                                   + 1j * rng.standard_normal(data.shape))
        return data

    bs_snapshots = snapshots(h_bs, cfg, bs_offsets)
    ue_snapshots = snapshots(h_ue, cfg_ue, ue_offsets)

    # schedule transmit instants, then place receive instants so that the
    # per-direction offset equations hold exactly before reading noise
    bs_tx = np.arange(n_exchanges) * cfg.snapshot_interval
    ue_tx = bs_tx + 0.5 * cfg.snapshot_interval
    ue_rx = ue_offsets.to + bs_tx - clock
    bs_rx = bs_offsets.to + ue_tx + clock

    def reading(x):
        if timestamp_noise_std > 0.0:
            return x + rng.normal(0.0, timestamp_noise_std, x.shape)
        return x.copy()

    return BidirectionalTrace(
        bs_snapshots=bs_snapshots, ue_snapshots=ue_snapshots,
        bs_tx=reading(bs_tx), bs_rx=reading(bs_rx),
        ue_tx=reading(ue_tx), ue_rx=reading(ue_rx),
        clock_errors=clock, timestamp_noise_std=timestamp_noise_std,
        bs_offsets=bs_offsets, ue_offsets=ue_offsets)
