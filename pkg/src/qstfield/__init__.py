"""Perturbative scalar field theory with Gaussian-smeared propagators."""

from .model import (
    CutoffSpec,
    DomainError,
    Event,
    ModelParams,
    ParameterError,
    PlaneWaveConfig,
    ZERO,
    gaussian_kernel,
)
from .propagators import DEFAULT_SPEC, PropagatorCache, PropagatorKind, QuadratureSpec, Variant
from .propagators import eval as propagator
from .functionals import (
    ComplexityError,
    FormalSeries,
    Functional,
    StructureError,
    WeightTag,
    connected_correlator,
    evaluate,
    field_at,
    involution,
    monomial,
    star_product,
    time_ordered_product,
    translate,
)
from .perturbation import (
    Interaction,
    Lattice,
    bogoliubov,
    bogoliubov_inverse,
    cocycle,
    generator,
    relative_s,
    s_inverse,
    s_matrix,
)
from .states import (
    NumericError,
    ScanResult,
    StateSpec,
    adiabatic_scan,
    expectation,
    integrate,
    interacting_kms,
    time_evolution_expectation,
)

__version__ = "0.1.0"
