"""Bayesian-optimisation search for image-augmentation policies."""
from .errors import (BoAugError, ConfigError, DatasetFormatError, DomainError, EvaluationError,
                     EvaluatorLaunchError, NumericalError, PolicySchemaError, ProtocolError)
from .policy_space import Op, Policy, SubPolicy, decode_opers, decode_policy, denormalize_magnitude
from .search_engine import SearchConfig, run_search, run_single_bo

__version__ = "0.1.0"
