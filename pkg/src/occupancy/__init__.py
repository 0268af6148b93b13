"""Occupancy counts in the infinite urn scheme.

Balls fall independently into boxes 1, 2, ... with probabilities p_1 >= p_2 >= ...;
this package computes the mean and variance of the number of occupied boxes,
exactly for n balls and after Poissonization, decides whether the variance
stays bounded, and checks everything by simulation.
"""

from .models import (
    DoublingBlocks,
    Explicit,
    FrequencyModel,
    Geometric,
    Merged,
    NegativeBinomial,
    PoissonWeights,
    PowerLaw,
    QuasiBinomial,
    RepeatedGeometric,
    TruncationCertificate,
    catalog,
    merge,
)
from .specfile import load_model, model_from_spec

__version__ = "0.1.0"

__all__ = [
    "DoublingBlocks",
    "Explicit",
    "FrequencyModel",
    "Geometric",
    "Merged",
    "NegativeBinomial",
    "PoissonWeights",
    "PowerLaw",
    "QuasiBinomial",
    "RepeatedGeometric",
    "TruncationCertificate",
    "catalog",
    "load_model",
    "merge",
    "model_from_spec",
]
