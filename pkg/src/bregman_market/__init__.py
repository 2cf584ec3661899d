"""Cost-function prediction market makers and budget-constrained trade analysis."""

from .errors import (
    DomainError,
    MarketInputError,
    NumericalError,
    OracleError,
    PathUnsupportedError,
)
from .geometry import (
    EMPTY_FACE,
    Face,
    HullCertificate,
    OutcomeSpace,
    affinely_independent,
    direct_sum_space,
    enumerate_proper_faces,
    face_orthogonal_projector,
    hull_membership,
    hypercube_space,
    is_face,
    minimal_face,
    simplex_space,
    witness_cone_contains,
)

__version__ = "0.1.0"
