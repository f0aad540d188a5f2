"""Sequential prediction in finite exponential families.

Maximum likelihood, sequential normalized maximum likelihood (SNML), weighted
SNML and exact Bayesian predictors, the order-1/t expansion that ties them
together, and the Fisher-geometric shift between the ML estimate and the
posterior center.
"""

from .bayes import (
    Prior,
    QuadratureGrid,
    conjugate_predict,
    make_grid,
    parse_prior,
    prop4_expansion,
    quad_posterior_mean,
    quad_posterior_predict,
)
from .family import FiniteExpFamily, make_bernoulli, make_categorical, make_custom, parse_family
from .fit import MLFit, SufficientStatSummary, ml_fit, ml_update_step, observed_information, summarize
from .geometry import (
    christoffel,
    jeffreys_density,
    posterior_shift_check,
    shift_vector_detform,
    shift_vector_skewness,
)
from .predictor import (
    BoundaryError,
    PredictiveDistribution,
    WeightFunction,
    expansion_predict,
    ml_predict,
    mixture_predict,
    snml_expansion,
    snml_predict,
    wsnml_expansion,
    wsnml_predict,
)

__version__ = "0.1.0"
