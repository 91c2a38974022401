"""Direction-dependent robust covariance estimation."""

from .assembler import DirectionalEstimate, EstimatorConfig, FittedEstimator, fit, materialize, query
from .errors import DircovError
from .oracle import DistanceOracle, empirical_distance, psi_hat
from .samples import SampleSet, load_samples, make_rng
from .synthdata import SpectrumProfile, effective_rank, gen_gaussian, gen_heavy_tailed

__all__ = [
    "DirectionalEstimate",
    "DircovError",
    "DistanceOracle",
    "EstimatorConfig",
    "FittedEstimator",
    "SampleSet",
    "SpectrumProfile",
    "effective_rank",
    "empirical_distance",
    "fit",
    "gen_gaussian",
    "gen_heavy_tailed",
    "load_samples",
    "make_rng",
    "materialize",
    "psi_hat",
    "query",
]

__version__ = "0.1.0"
