"""Monte Carlo experiment runner and metrics engine.

Sweeps SNR / dynamic-power-proportion / target-separation axes over
randomized scenarios, running every configured method on byte-identical
synthesized CSI per (point, trial), including a synchronized-system oracle
that skips alignment and compensation.  Emits a tidy per-trial table plus
aggregate files and figures.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from . import baselines, param_estimation, residual_compensation, to_alignment
from .numerics import SearchGrid, circular_distance, circular_mean, wrap_period
from .signal_model import (ArrayGeometry, CsiMatrix, DynamicPathSet, OffsetSequence,
                           ScenarioSpec, SystemConfig, as_generator, delay_to_range,
                           random_scenario, synthesize_bidirectional, synthesize_cpi)

PROP_SUB = "prop_sub"
PROP_COV = "prop_cov"
SIMIL = "simil"
EVLP = "evlp"
IFFT = "ifft"
SYNCHRONIZED = "synchronized"
METHODS = (PROP_SUB, PROP_COV, SIMIL, EVLP, IFFT, SYNCHRONIZED)

_BASELINE_KINDS = {SIMIL: baselines.SIMILARITY, EVLP: baselines.ENVELOPE,
                   IFFT: baselines.IFFT_PEAK}

GAMMA_CAP_DB = 300.0

TABLE_COLUMNS = [
    "point_index", "snr_db", "dyn_proportion", "tau_sep_m", "trial", "method",
    "to_rel_err_m", "to_abs_err_m", "to_residual_est_ns",
    "delay_rel_err_m", "delay_abs_err_m", "delay_rel_errs_m", "delay_abs_errs_m",
    "gamma_beta_db", "gamma_beta_dbs", "gamma_beta_ideal_db",
    "resolved", "shortfall", "runtime_s", "flags",
]


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep axes, method set, scenario knobs, and system dimensions."""

    snr_db: tuple = (25.0,)
    dyn_proportion: tuple = (0.3,)
    tau_sep_m: tuple = (None,)
    trials: int = 200
    methods: tuple = METHODS
    seed: int = 0
    workers: int = 1
    n_subcarriers: int = 32
    subcarrier_spacing: float = 2.5e6
    n_snapshots: int = 100
    snapshot_interval: float = 4e-3
    n_antennas: int = 1
    carrier_freq: float = 5.8e9
    window_len: int = 48
    grid_oversampling: int = 128
    n_static: int = 7
    n_dynamic: int = 3
    offset_law: str = "uniform"
    calib_exchanges: int = 100
    timestamp_noise_std: float = 2.5e-9
    clock_error_span: float = 50e-9
    clock_search_range: float = 100e-9
    use_mdl_target_count: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("need at least one trial per point")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")

    def points(self) -> list[tuple[float, float, float | None]]:
        return [(snr, dyn, sep) for snr in self.snr_db for dyn in self.dyn_proportion
                for sep in self.tau_sep_m]

    def system_for(self, snr_db: float) -> SystemConfig:
        # scenarios normalize per-sample signal power to one, so the SNR knob
        # is entirely the noise power
        return SystemConfig(n_subcarriers=self.n_subcarriers,
                            subcarrier_spacing=self.subcarrier_spacing,
                            n_snapshots=self.n_snapshots,
                            snapshot_interval=self.snapshot_interval,
                            n_antennas=self.n_antennas, carrier_freq=self.carrier_freq,
                            noise_power=10.0 ** (-snr_db / 10.0))

    def geometry(self) -> ArrayGeometry | None:
        if self.n_antennas == 1:
            return None
        return ArrayGeometry.uniform_linear(self.n_antennas, self.carrier_freq)

    def scenario_for(self, snr_db: float, dyn: float, sep: float | None) -> ScenarioSpec:
        return ScenarioSpec(n_static=self.n_static,
                            n_dynamic=2 if sep is not None else self.n_dynamic,
                            snr_db=snr_db, dyn_power_proportion=dyn,
                            dyn_separation=sep, offset_law=self.offset_law)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def gamma_beta(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Gain-sequence SNR (dB) after rotation+translation alignment, capped."""
    truth = np.asarray(truth, dtype=complex).ravel()
    power = float(np.vdot(truth, truth).real)
    if power <= 0.0:
        raise ValueError("ground-truth gain sequence is zero")
    aligned, _, _ = param_estimation.align_cgs(estimate, truth)
    err = float(np.linalg.norm(aligned - truth) ** 2)
    if err <= power * 10.0 ** (-GAMMA_CAP_DB / 10.0):
        return GAMMA_CAP_DB
    return min(10.0 * np.log10(power / err), GAMMA_CAP_DB)


def gamma_beta_ideal(truth: np.ndarray, cfg: SystemConfig) -> float:
    """Idealized gain-sequence SNR: full subcarrier diversity, no coupling."""
    truth = np.asarray(truth, dtype=complex).ravel()
    power = float(np.vdot(truth, truth).real)
    if cfg.noise_power <= 0.0:
        return GAMMA_CAP_DB
    return min(10.0 * np.log10(cfg.n_rows * power / (truth.size * cfg.noise_power)),
               GAMMA_CAP_DB)


def resolution_probability(records: pd.DataFrame, tau_sep_m: float,
                           method: str | None = None) -> float:
    """Fraction of two-target trials resolved at the given separation."""
    rows = records[np.isclose(records["tau_sep_m"].astype(float), tau_sep_m)]
    if method is not None:
        rows = rows[rows["method"] == method]
    if rows.empty:
        raise ValueError(f"no records at separation {tau_sep_m} m")
    return float(rows["resolved"].astype(float).mean())


def _pack(values) -> str:
    return ";".join(f"{v:.9g}" for v in values)


def _to_error_metrics(offsets_to: np.ndarray, applied_to: np.ndarray, residual_est: float,
                      period: float) -> tuple[float, float, float]:
    """Relative / absolute TO error medians (s) and the compensated-frame mean residual.

    The relative error measures within-CPI alignment consistency: the
    circular spread of the true leftover offsets around their circular
    mean.  The absolute error additionally charges the estimated-residual
    compensation against zero.
    """
    rho = wrap_period(offsets_to - applied_to, period)
    center = circular_mean(rho, period)
    rel = circular_distance(rho, center, period)
    rho_abs = wrap_period(rho - residual_est, period)
    abs_err = circular_distance(rho_abs, 0.0, period)
    return float(np.median(rel)), float(np.median(abs_err)), circular_mean(rho_abs, period)


def _delay_metrics(est_delays: np.ndarray, est_angles, truth: DynamicPathSet,
                   frame_shift: float, period: float):
    """Match estimates to truth and compute per-target delay errors (s)."""
    n_true = truth.n_paths
    rel = np.full(n_true, np.nan)
    abs_ = np.full(n_true, np.nan)
    matches = np.full(n_true, -1, dtype=int)
    if est_delays.size and n_true:
        shifted_truth = wrap_period(truth.delays + frame_shift, period)
        cost = circular_distance(est_delays[:, None], shifted_truth[None, :], period)
        if est_angles is not None and truth.aoas is not None:
            cost = cost / period + np.abs(est_angles[:, None] - truth.aoas[None, :]) / np.pi
        rows, cols = linear_sum_assignment(cost)
        for i, l in zip(rows, cols):
            rel[l] = circular_distance(est_delays[i], shifted_truth[l], period)
            abs_[l] = circular_distance(est_delays[i], truth.delays[l], period)
            matches[l] = i
    return rel, abs_, matches


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    method: str
    stream: to_alignment.AlignedStream
    compensated: residual_compensation.CompensatedCpi
    spectrum: param_estimation.Spectrum
    peaks: list
    estimates: param_estimation.TargetEstimates
    shortfall: bool
    runtime_s: float


def run_pipeline(method: str, csi_raw: CsiMatrix, reference, cfg: SystemConfig,
                 grid: SearchGrid, geom: ArrayGeometry | None = None,
                 angles: np.ndarray | None = None, n_targets: int | None = None,
                 window_len: int = 48, use_mdl_target_count: bool = False) -> PipelineResult:
    """Alignment -> residual compensation -> spectrum -> peaks -> gain recovery.

    The synchronized oracle passes its snapshots through both offset stages
    untouched; every other method differs from the rest only in the
    alignment rule.
    """
    t0 = time.perf_counter()
    if method == SYNCHRONIZED:
        stream = to_alignment.AlignedStream(data=csi_raw.data,
                                            applied_to=np.zeros(csi_raw.n_snapshots),
                                            applied_po=np.zeros(csi_raw.n_snapshots))
        aligned = csi_raw.advanced(csi_raw.data, "aligned")
        comp = residual_compensation.CompensatedCpi(
            csi=aligned.advanced(aligned.data, "compensated"), to_residual=0.0,
            subspace=to_alignment.subspace_projector(csi_raw.data))
    else:
        if method in (PROP_SUB, PROP_COV):
            rule = to_alignment.METHOD_SUBSPACE if method == PROP_SUB \
                else to_alignment.METHOD_COVARIANCE
            stream = to_alignment.align_stream(csi_raw.data, cfg, method=rule,
                                               window_len=window_len, grid=grid,
                                               polish=True)
        elif method in _BASELINE_KINDS:
            stream = baselines.align_baseline(_BASELINE_KINDS[method], csi_raw.data, cfg, grid)
        else:
            raise ValueError(f"unknown method {method!r}")
        aligned = csi_raw.advanced(stream.data, "aligned")
        comp = residual_compensation.estimate_to_residual(aligned, reference, cfg, grid)

    spectrum = param_estimation.modified_music_spectrum(comp, reference, cfg, grid,
                                                        geom=geom, angles=angles)
    if n_targets is None:
        n_targets = max(comp.subspace.dimension - 1, 1) if use_mdl_target_count else 1
    peaks, shortfall = param_estimation.pick_peaks(spectrum, n_targets)
    estimates = param_estimation.estimate_cgs(comp, peaks, reference, cfg, geom=geom)
    return PipelineResult(method=method, stream=stream, compensated=comp, spectrum=spectrum,
                          peaks=peaks, estimates=estimates, shortfall=shortfall,
                          runtime_s=time.perf_counter() - t0)


def _trial_rows(config: ExperimentConfig, point_index: int, snr_db: float, dyn: float,
                sep: float | None, trial: int) -> list[dict]:
    cfg = config.system_for(snr_db)
    geom = config.geometry()
    grid = SearchGrid.for_config(cfg, config.grid_oversampling)
    spec = config.scenario_for(snr_db, dyn, sep)
    period = cfg.alias_period
    angles = np.deg2rad(np.linspace(-90.0, 90.0, 181)) if config.n_antennas > 1 else None

    root = np.random.SeedSequence(entropy=config.seed, spawn_key=(point_index, trial))
    ss_scenario, ss_cpi, ss_calib, ss_clock = root.spawn(4)

    statics, dynamics, offsets = random_scenario(cfg, geom, spec, as_generator(ss_scenario))

    needs_async = any(m != SYNCHRONIZED for m in config.methods)
    needs_sync = SYNCHRONIZED in config.methods
    csi_async = csi_sync = None
    if needs_async:
        csi_async = synthesize_cpi(cfg, geom, statics, dynamics, offsets, as_generator(ss_cpi))
    if needs_sync:
        csi_sync = synthesize_cpi(cfg, geom, statics, dynamics,
                                  OffsetSequence.zero(cfg.n_snapshots), as_generator(ss_cpi))

    reference = None
    if needs_async:
        clock_rng = as_generator(ss_clock)
        clock_error = float(clock_rng.uniform(-config.clock_error_span,
                                              config.clock_error_span))
        trace = synthesize_bidirectional(cfg, statics, config.calib_exchanges,
                                         config.timestamp_noise_std, clock_error,
                                         as_generator(ss_calib), geom=geom)
        reference = residual_compensation.acquire_reference(
            trace, cfg, grid, window_len=config.window_len,
            clock_range=config.clock_search_range)
    # the oracle pipeline gets the exact merged static response
    sync_reference = residual_compensation.ReferenceStaticResponse(
        response=statics.merged_response(cfg, geom), relative_only=False) if needs_sync \
        else None

    rows = []
    base = {"point_index": point_index, "snr_db": snr_db, "dyn_proportion": dyn,
            "tau_sep_m": np.nan if sep is None else sep, "trial": trial}
    for method in config.methods:
        row = dict(base, method=method)
        try:
            is_sync = method == SYNCHRONIZED
            result = run_pipeline(method, csi_sync if is_sync else csi_async,
                                  sync_reference if is_sync else reference,
                                  cfg, grid, geom=geom, angles=angles,
                                  n_targets=None if config.use_mdl_target_count
                                  else dynamics.n_paths,
                                  window_len=config.window_len,
                                  use_mdl_target_count=config.use_mdl_target_count)
            offsets_used = OffsetSequence.zero(cfg.n_snapshots) if is_sync else offsets
            rel_s, abs_s, frame_shift = _to_error_metrics(
                offsets_used.to, result.stream.applied_to,
                result.compensated.to_residual, period)
            est = result.estimates
            rel_d, abs_d, matches = _delay_metrics(est.delays, est.angles, dynamics,
                                                   frame_shift, period)
            gammas = np.full(dynamics.n_paths, np.nan)
            for l in range(dynamics.n_paths):
                if matches[l] >= 0:
                    gammas[l] = gamma_beta(est.cgs[matches[l]], dynamics.cgs[l])
            ideal = np.array([gamma_beta_ideal(dynamics.cgs[l], cfg)
                              for l in range(dynamics.n_paths)])
            resolved = bool(sep is not None and not result.shortfall
                            and np.all(np.isfinite(rel_d))
                            and np.all(delay_to_range(rel_d) < sep / 2.0))
            flags = list(est.flags)
            if result.shortfall:
                flags.append(param_estimation.FLAG_SHORTFALL)
            row.update(
                to_rel_err_m=delay_to_range(rel_s), to_abs_err_m=delay_to_range(abs_s),
                to_residual_est_ns=result.compensated.to_residual * 1e9,
                delay_rel_err_m=float(np.nanmedian(delay_to_range(rel_d)))
                if np.any(np.isfinite(rel_d)) else np.nan,
                delay_abs_err_m=float(np.nanmedian(delay_to_range(abs_d)))
                if np.any(np.isfinite(abs_d)) else np.nan,
                delay_rel_errs_m=_pack(delay_to_range(rel_d)),
                delay_abs_errs_m=_pack(delay_to_range(abs_d)),
                gamma_beta_db=float(np.nanmedian(gammas)) if np.any(np.isfinite(gammas))
                else np.nan,
                gamma_beta_dbs=_pack(gammas),
                gamma_beta_ideal_db=float(np.median(ideal)) if ideal.size else np.nan,
                resolved=resolved, shortfall=bool(result.shortfall),
                runtime_s=result.runtime_s, flags=";".join(flags))
        except Exception as exc:  # noqa: BLE001 - flagged rows, never abort the sweep
            row.update({c: np.nan for c in TABLE_COLUMNS if c not in row},
                       resolved=False, shortfall=True, flags=f"error:{type(exc).__name__}")
        rows.append(row)
    return rows


def _task(args):
    return _trial_rows(*args)


def run_sweep(config: ExperimentConfig) -> pd.DataFrame:
    """Run the full sweep, one task per (point, trial), canonically sorted.

    Per-trial failures surface as flagged rows.  Identical results are
    produced for any worker count: every task derives its generators from
    (seed, point, trial) alone.
    """
    tasks = [(config, idx, snr, dyn, sep, trial)
             for idx, (snr, dyn, sep) in enumerate(config.points())
             for trial in range(config.trials)]
    if config.workers > 1:
        with get_context("fork").Pool(processes=config.workers) as pool:
            chunks = pool.map(_task, tasks, chunksize=1)
    else:
        chunks = [_task(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    frame = pd.DataFrame(rows, columns=TABLE_COLUMNS)
    method_order = {m: i for i, m in enumerate(config.methods)}
    frame["_m"] = frame["method"].map(method_order)
    frame = frame.sort_values(["point_index", "trial", "_m"]).drop(columns="_m")
    return frame.reset_index(drop=True)


# ---------------------------------------------------------------------------
# aggregation and outputs
# ---------------------------------------------------------------------------

_AGG_METRICS = ("to_rel_err_m", "to_abs_err_m", "delay_rel_err_m", "delay_abs_err_m",
                "gamma_beta_db", "gamma_beta_ideal_db")


def aggregate(frame: pd.DataFrame) -> pd.DataFrame:
    """Median and quartiles per sweep point and method, purely from the tidy table."""
    if frame.empty:
        cols = ["point_index", "snr_db", "dyn_proportion", "tau_sep_m", "method", "trials",
                "resolution_probability"]
        cols += [f"{m}_{s}" for m in _AGG_METRICS for s in ("median", "q25", "q75")]
        return pd.DataFrame(columns=cols)
    keys = ["point_index", "snr_db", "dyn_proportion", "tau_sep_m", "method"]
    out = []
    for key, group in frame.groupby(keys, dropna=False, sort=True):
        rec = dict(zip(keys, key))
        rec["trials"] = len(group)
        rec["resolution_probability"] = float(group["resolved"].astype(float).mean())
        for metric in _AGG_METRICS:
            vals = group[metric].astype(float)
            rec[f"{metric}_median"] = float(vals.median())
            rec[f"{metric}_q25"] = float(vals.quantile(0.25))
            rec[f"{metric}_q75"] = float(vals.quantile(0.75))
        out.append(rec)
    return pd.DataFrame(out)


def emit_outputs(frame: pd.DataFrame, out_dir, figures: bool = True,
                 prefix: str = "sweep") -> list:
    """Write the tidy table, aggregates, and figures; returns written paths."""
    from pathlib import Path

    from . import report

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        trials_path = out / f"{prefix}_trials.csv"
        frame.to_csv(trials_path, index=False)
        paths.append(trials_path)
        agg = aggregate(frame)
        agg_path = out / f"{prefix}_aggregates.csv"
        agg.to_csv(agg_path, index=False)
        paths.append(agg_path)
        if figures and not frame.empty:
            paths.extend(report.render_figures(agg, out, prefix=prefix))
        return paths
    except OSError as exc:
        raise OSError(f"failed writing outputs under {out}: {exc}") from exc
