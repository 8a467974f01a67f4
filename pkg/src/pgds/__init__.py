"""Poisson-gamma dynamical systems: model, Gibbs sampler, evaluation and validation."""
from pgds.distributions import DomainError, rng_stream
from pgds.evaluation import Mask, PredictionReport, make_masks, mae, mre, burstiness
from pgds.gibbs import SampleChain, SamplerError, Schedule, fit, gibbs_sweep
from pgds.model import ConfigError, CountMatrix, Hyperparams, ModelState, generate, log_joint, sample_prior

__version__ = "0.1.0"
