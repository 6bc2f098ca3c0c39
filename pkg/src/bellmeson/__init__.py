"""Monte Carlo and analysis toolkit for Bell-CHSH tests with entangled neutral-meson pairs."""

__version__ = "0.1.0"

from .analysis import (
    BinnedCounts, ChshAnalysis, ChshResult, CorrelationEstimate, SystematicsBudget,
    bin_events, chsh_scan, combine_systematics, compare_to_qm, compute_s, estimate_er,
    fit_correlation_scale, scan_systematics,
    significance, subtract_backgrounds,
)
from .detector import DetectorParams, DetectorResponse, assign_samples, dt_from_dz, dz_from_dt, smear_and_tag
from .ensemble import EnsembleSummary, LhvTestResult, run_ensemble, run_lhv_test
from .generator import (
    EventRecord, GeneratorConfig, LhvStrategy, generate_dataset, generate_lhv_dataset,
    local_oscillation_strategy, random_local_strategy, sample_lhv_pair, sample_qm_pair,
    static_flavor_strategy,
)
from .physics import (
    AngleSettings, FlavorPair, PhysicsParams, TimePair, chsh_s_meson, chsh_s_photon,
    correlation_damped, correlation_qm, correlation_renormalized, find_violation_boundary,
    rate_joint,
)
