"""Forward-KL variational boosting of importance-sampling proposals."""

from .boost import BoostConfig, FitReport, boost, fit_fkl_vi, fit_rkl_vi
from .errors import ConfigError, NumericalError
from .mixture import Component, MixtureProposal, WeightedBatch, add_component, sample
from .snis import snis_boost_objective, snis_fkl, stable_normalized_weights

__all__ = [
    "BoostConfig",
    "Component",
    "ConfigError",
    "FitReport",
    "MixtureProposal",
    "NumericalError",
    "WeightedBatch",
    "add_component",
    "boost",
    "fit_fkl_vi",
    "fit_rkl_vi",
    "sample",
    "snis_boost_objective",
    "snis_fkl",
    "stable_normalized_weights",
]

__version__ = "0.1.0"
