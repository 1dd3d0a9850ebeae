"""Simulation and verification toolkit for n-species chemostat competition.

The package computes break-even concentrations and the separation constants
that certify competitive exclusion, integrates the model with an adaptive
embedded Runge-Kutta pair, and checks the long-run claims (mass convergence,
washout, biomass persistence, substrate framing, staged exclusion, and the
final state) on simulated trajectories.
"""

from .certificate import (
    Boundary,
    Certificate,
    PackSummary,
    build_certificate,
    compute_nu,
    dilution_bounds,
    gamma_bounds,
    recheck_certificate,
    separation_margins,
)
from .dynamics import (
    ChemostatParams,
    DerivedChannels,
    State,
    TransformedState,
    derive_channels,
    from_transformed,
    mass_closed_form,
    mean_growth,
    predicted_limit,
    rhs_original,
    rhs_transformed,
    to_transformed,
)
from .errors import (
    CertificateError,
    ChartError,
    ChemostatError,
    DivergenceError,
    DomainError,
    InputError,
    ModelError,
    ParameterError,
    StiffnessError,
    WashoutError,
)
from .growth import (
    BreakEven,
    GrowthFunction,
    GrowthValidation,
    Hill,
    Monod,
    OrderedSpecies,
    SpeciesRecord,
    Table,
    break_even,
    order_species,
    validate_growth,
)
from .integrate import (
    Channels,
    EntryRecord,
    IntegratorStats,
    Trajectory,
    first_persistent_entry,
    sample,
    simulate,
)
from .verify import (
    ClaimResult,
    VerificationReport,
    check_biomass_floor,
    check_final_convergence,
    check_induction_properties,
    check_mass_convergence,
    check_substrate_frame,
    check_washout_species,
    run_report,
)

__version__ = "0.1.0"

__all__ = [
    "BreakEven",
    "Boundary",
    "Certificate",
    "CertificateError",
    "Channels",
    "ChartError",
    "ChemostatError",
    "ChemostatParams",
    "ClaimResult",
    "DerivedChannels",
    "DivergenceError",
    "DomainError",
    "EntryRecord",
    "GrowthFunction",
    "GrowthValidation",
    "Hill",
    "InputError",
    "IntegratorStats",
    "ModelError",
    "Monod",
    "OrderedSpecies",
    "PackSummary",
    "ParameterError",
    "SpeciesRecord",
    "State",
    "StiffnessError",
    "Table",
    "Trajectory",
    "TransformedState",
    "VerificationReport",
    "WashoutError",
    "break_even",
    "build_certificate",
    "check_biomass_floor",
    "check_final_convergence",
    "check_induction_properties",
    "check_mass_convergence",
    "check_substrate_frame",
    "check_washout_species",
    "compute_nu",
    "derive_channels",
    "dilution_bounds",
    "first_persistent_entry",
    "from_transformed",
    "gamma_bounds",
    "mass_closed_form",
    "mean_growth",
    "order_species",
    "predicted_limit",
    "recheck_certificate",
    "rhs_original",
    "rhs_transformed",
    "run_report",
    "sample",
    "separation_margins",
    "simulate",
    "to_transformed",
    "validate_growth",
]
