"""Bregman operator splitting, multiplier methods and entropic transport."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BsplitError,
    CertificateError,
    ConstructionError,
    DomainError,
    NumericalError,
    ShapeError,
    ValidationError,
)
from .legendre import (  # noqa: E402
    BoltzmannShannon,
    Burg,
    Energy,
    LegendreKernel,
    Quadratic,
    SimplexEntropy,
    bregman_divergence,
    conjugate_value,
    kernel_from_name,
    mirror_backward,
    mirror_forward,
)
from .operators import (  # noqa: E402
    MonotoneMap,
    ProxOracle,
    forward_step,
    mann_step,
    reflection_step,
    resolvent_step,
)

__all__ = [
    "__version__",
    "BsplitError",
    "CertificateError",
    "ConstructionError",
    "DomainError",
    "NumericalError",
    "ShapeError",
    "ValidationError",
    "BoltzmannShannon",
    "Burg",
    "Energy",
    "LegendreKernel",
    "Quadratic",
    "SimplexEntropy",
    "bregman_divergence",
    "conjugate_value",
    "kernel_from_name",
    "mirror_backward",
    "mirror_forward",
    "MonotoneMap",
    "ProxOracle",
    "forward_step",
    "mann_step",
    "reflection_step",
    "resolvent_step",
]
