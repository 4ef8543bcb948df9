"""Time-convolutionless generators for open quantum systems.

Perturbative generator orders are built from bath-weighted moments of the
reduced dynamical map through an order recursion, optionally resummed
through a hierarchy of generators, and checked against exact propagation
of small system-plus-bath models.
"""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("tclgen")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .baths import (
    BathCorrelation,
    DiscreteBath,
    Mode,
    SpectralDensity,
    correlation_from_spectral_density,
    enumerate_pairings,
    exact_multipoint_moment,
    super_correlation,
    wick_multipoint,
)
from .liouville import SystemModel, SystemState, apply, commutator_superop, anticommutator_superop, unvec, vec
from .moments import MomentSeries, TimeGrid, compute_moment, compute_moment_derivative, compute_moments
from .oracle import (
    FullModel,
    exact_dynamical_map,
    exact_multipoint_correlation,
    factorized_multipoint,
    partial_trace_bath,
    propagate_full,
)
from .resummation import (
    HierarchyLevel,
    ResummedGenerator,
    relative_series,
    level2_generator,
    nested_resummation,
    regularized_inverse,
    resum,
    resummed_generator,
)
from .tcl import (
    Composition,
    DynamicalMap,
    GeneratorSeries,
    enumerate_compositions,
    generator_via_compositions,
    generator_via_recursion,
    propagate,
    tcl2_generator,
    tcl_generator,
)
