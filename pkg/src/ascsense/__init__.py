"""Subspace-based sensing for asynchronous bi-static OFDM links.

Library + CLI: snapshot time-offset alignment, residual compensation from
bidirectional calibration, static-clutter-suppressed super-resolution
delay/AoA estimation, gain-sequence recovery, literature baselines, and a
Monte Carlo benchmark harness.
"""

from .numerics import SearchGrid, fft_spectrum, hermitian_evd, orthonormal_nullspace, \
    pseudo_inverse
from .signal_model import (ArrayGeometry, CsiMatrix, DynamicPathSet, OffsetSequence,
                           ScenarioSpec, StaticPathSet, SystemConfig, random_scenario,
                           steering_vector, steering_vector_mimo, synthesize_bidirectional,
                           synthesize_cpi)
from .to_alignment import (AlignmentState, align_snapshot, align_stream, initial_align,
                           mdl_dimension, subspace_projector)
from .residual_compensation import (ReferenceStaticResponse, acquire_reference,
                                    alternative_reference, estimate_to_residual)
from .param_estimation import (Spectrum, TargetEstimates, doppler_readout, estimate_cgs,
                               modified_music_spectrum, pick_peaks)
from .harness import ExperimentConfig, gamma_beta, resolution_probability, run_sweep

__version__ = "0.1.0"

__all__ = [
    "AlignmentState", "ArrayGeometry", "CsiMatrix", "DynamicPathSet", "ExperimentConfig",
    "OffsetSequence", "ReferenceStaticResponse", "ScenarioSpec", "SearchGrid", "Spectrum",
    "StaticPathSet", "SystemConfig", "TargetEstimates", "acquire_reference", "align_snapshot",
    "align_stream", "alternative_reference", "doppler_readout", "estimate_cgs",
    "estimate_to_residual", "fft_spectrum", "gamma_beta", "hermitian_evd", "initial_align",
    "mdl_dimension", "modified_music_spectrum", "orthonormal_nullspace", "pick_peaks",
    "pseudo_inverse", "random_scenario", "resolution_probability", "run_sweep",
    "steering_vector", "steering_vector_mimo", "subspace_projector",
    "synthesize_bidirectional", "synthesize_cpi",
]
