"""Sticky HDP-HMM segmentation: samplers, hyperparameter updates and evaluation."""

from .blocked import BlockedSampler
from .direct import DirectAssignmentSampler
from .emissions import (
    DPMixGaussian,
    GaussianConjugate,
    GaussianNonConjugate,
    MultinomialDirichlet,
)
from .estimator import StickyHDPHMM
from .kernel import NIWParams
from .model import CountTables, HyperPriors, Hyperparams, ModelState

__version__ = "0.1.0"

__all__ = [
    "BlockedSampler",
    "CountTables",
    "DPMixGaussian",
    "DirectAssignmentSampler",
    "GaussianConjugate",
    "GaussianNonConjugate",
    "HyperPriors",
    "Hyperparams",
    "ModelState",
    "MultinomialDirichlet",
    "NIWParams",
    "StickyHDPHMM",
]
