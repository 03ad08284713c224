"""Conductivity perturbations invisible to point-electrode impedance measurements.

Construction on the unit disk with P2 finite elements, verification of the
measurement map, and validation against the complete electrode model.
"""

from .basis import (PerturbationBasis, build_dual_basis, duality_residuals, kappa_eval,
                    project_kappa0)
from .cem import CemElectrodes, CemOperator, e_cem, solve_cem, trig_current_basis
from .config import ExperimentConfig, parse_config
from .errors import InvisibleEITError
from .mesh import Mesh, OmegaSpec, build_disk_mesh
from .potentials import (DiskPotentials, ElectrodeConfig, MobiusMap, TransportedPotentials,
                         transport_potentials, u0_gradient, u0_value)
from .solver import (RunConfig, RunReport, fixed_point_step, measurement_matrix_from_sigma,
                     pem_measurement_matrix, run_algorithm, solve_corrector)

__all__ = [
    "CemElectrodes", "CemOperator", "DiskPotentials", "ElectrodeConfig", "ExperimentConfig",
    "InvisibleEITError", "Mesh", "MobiusMap", "OmegaSpec", "PerturbationBasis", "RunConfig",
    "RunReport", "TransportedPotentials", "build_disk_mesh", "build_dual_basis",
    "duality_residuals", "e_cem", "fixed_point_step", "kappa_eval",
    "measurement_matrix_from_sigma", "parse_config", "pem_measurement_matrix", "project_kappa0",
    "run_algorithm", "solve_cem", "solve_corrector", "transport_potentials",
    "trig_current_basis", "u0_gradient", "u0_value",
]
