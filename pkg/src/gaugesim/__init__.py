"""Quantum dynamics with per-patch local wavefunctions and unitary connections."""

from .errors import ConfigError, ContractError, DivergenceError, GaugeSimError
from .lattice import (
    Patch,
    PatchCover,
    apply_local,
    embed_operator,
    nn_pair_cover,
    operator_support,
    single_site_cover,
)
from .linalg import (
    expm_hermitian,
    frobenius_distance,
    polar_unitary,
    random_unitary,
)
from .hamiltonian import (
    GeneralizedTerm,
    LocalHamiltonian,
    LocalTerm,
    build_model,
    heisenberg_chain,
    tfim_chain,
    tfim_chain_sitewise,
)
from .gauge import (
    DIRECT,
    GENERATOR,
    DefectReport,
    GaugeState,
    GaugeTransform,
    IntegratorConfig,
    apply_commuting_layer,
    effective_hamiltonian,
    evolve,
    gauge_transform,
    init_gauge_state,
    step,
)
from .reference import (
    InteractionReference,
    ReferenceBundle,
    heisenberg_expectation,
    interaction_reference,
    reference_gauge_state,
    schrodinger_evolve,
)
from .circuits import (
    Circuit,
    Gate,
    LightConeAudit,
    LightConePrediction,
    as_layer_hamiltonians,
    audit_lightcone,
    brickwork,
    circuit_reference,
    run_circuit,
)
from .measure import (
    KrausSet,
    MeasurementRecord,
    apply_measurement,
    measurement_probabilities,
    site_projectors,
    validate_kraus,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DivergenceError",
    "GaugeSimError",
    "Patch",
    "PatchCover",
    "apply_local",
    "embed_operator",
    "nn_pair_cover",
    "operator_support",
    "single_site_cover",
    "expm_hermitian",
    "frobenius_distance",
    "polar_unitary",
    "random_unitary",
    "GeneralizedTerm",
    "LocalHamiltonian",
    "LocalTerm",
    "build_model",
    "heisenberg_chain",
    "tfim_chain",
    "tfim_chain_sitewise",
    "DIRECT",
    "GENERATOR",
    "DefectReport",
    "GaugeState",
    "GaugeTransform",
    "IntegratorConfig",
    "apply_commuting_layer",
    "effective_hamiltonian",
    "evolve",
    "gauge_transform",
    "init_gauge_state",
    "step",
    "InteractionReference",
    "ReferenceBundle",
    "heisenberg_expectation",
    "interaction_reference",
    "reference_gauge_state",
    "schrodinger_evolve",
    "Circuit",
    "Gate",
    "LightConeAudit",
    "LightConePrediction",
    "as_layer_hamiltonians",
    "audit_lightcone",
    "brickwork",
    "circuit_reference",
    "run_circuit",
    "KrausSet",
    "MeasurementRecord",
    "apply_measurement",
    "measurement_probabilities",
    "site_projectors",
    "validate_kraus",
]
