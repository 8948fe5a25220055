"""Asymmetric mode-pairing QKD: key-rate model, intensity optimization,
decoy-state bounds, Monte Carlo protocol oracle and sweep tooling."""

from .decoy import (
    DecoyBounds,
    DecoyConfig,
    DecoyObservables,
    ObservablesInconsistentError,
    PairIntensityVector,
    bound_single_photon,
    decoy_config_for,
    decoy_key_rate,
    expected_observables,
    pair_intensity_prior,
    poisson_pair_prob,
    posterior_intensity_given_photons,
)
from .model import (
    IntensityBits,
    KeyRateBreakdown,
    Link,
    ModelDegenerateError,
    Scenario,
    SystemParams,
    binary_entropy,
    key_rate,
    linearized_key_rate,
    link_at,
    make_scenario,
    pairing_rate,
)
from .montecarlo import (
    EmpiricalStats,
    PairRecord,
    RoundRecord,
    Rounds,
    estimate_statistics,
    pair_clicks,
    sift_and_map,
    simulate_rounds,
    write_pair_trace,
)
from .optimize import (
    OptimizationProblem,
    OptimumReport,
    adding_fiber_rate,
    closed_form_asymptotic,
    optimize_intensities,
    plob_bound,
)
from .sweep import ResultRow, SweepSpec, SweepValidationError, load_spec, run_sweep, verify_oracles

__all__ = [
    "DecoyBounds",
    "DecoyConfig",
    "DecoyObservables",
    "ObservablesInconsistentError",
    "PairIntensityVector",
    "bound_single_photon",
    "decoy_config_for",
    "decoy_key_rate",
    "expected_observables",
    "pair_intensity_prior",
    "poisson_pair_prob",
    "posterior_intensity_given_photons",
    "IntensityBits",
    "KeyRateBreakdown",
    "Link",
    "ModelDegenerateError",
    "Scenario",
    "SystemParams",
    "binary_entropy",
    "key_rate",
    "linearized_key_rate",
    "link_at",
    "make_scenario",
    "pairing_rate",
    "EmpiricalStats",
    "PairRecord",
    "RoundRecord",
    "Rounds",
    "estimate_statistics",
    "pair_clicks",
    "sift_and_map",
    "simulate_rounds",
    "write_pair_trace",
    "OptimizationProblem",
    "OptimumReport",
    "adding_fiber_rate",
    "closed_form_asymptotic",
    "optimize_intensities",
    "plob_bound",
    "ResultRow",
    "SweepSpec",
    "SweepValidationError",
    "load_spec",
    "run_sweep",
    "verify_oracles",
]
