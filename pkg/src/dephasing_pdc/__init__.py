"""Pure-dephasing-induced photon down-conversion in an ultrastrongly coupled boson-TLS system."""

from .constants import HBAR
from .dressed import (ChannelTable, DriveOperator, EigenBasis, EmissionModel, build_channels,
                      build_drive_operator, diagonalize, emission_model)
from .dynamics import DriveConfig, Liouvillian, PropagationResult, SimGrid, build_generator, propagate
from .model import (ConfigError, SystemConfig, TruncationError, build_hamiltonian, build_operators,
                    check_truncation, coupling_from_geometry, parity_operator)
from .oracle import OracleConfig, build_oracle, exact_correlator, exact_propagate
from .scenarios import PRESETS, ScenarioPreset, load_config, loads_config, run_point, run_sweep
from .spectra import (YieldReport, device_efficiency, emission_spectrum, injected_photons, stick_spectrum,
                      two_time_correlator)
from .trajectories import classify_photons, pair_statistics, prepare_unraveling, run_ensemble, run_trajectory

__version__ = "0.1.0"

__all__ = [
    "HBAR",
    "ChannelTable",
    "DriveOperator",
    "EigenBasis",
    "EmissionModel",
    "build_channels",
    "build_drive_operator",
    "diagonalize",
    "emission_model",
    "DriveConfig",
    "Liouvillian",
    "PropagationResult",
    "SimGrid",
    "build_generator",
    "propagate",
    "ConfigError",
    "SystemConfig",
    "TruncationError",
    "build_hamiltonian",
    "build_operators",
    "check_truncation",
    "coupling_from_geometry",
    "parity_operator",
    "OracleConfig",
    "build_oracle",
    "exact_correlator",
    "exact_propagate",
    "PRESETS",
    "ScenarioPreset",
    "load_config",
    "loads_config",
    "run_point",
    "run_sweep",
    "YieldReport",
    "device_efficiency",
    "emission_spectrum",
    "injected_photons",
    "stick_spectrum",
    "two_time_correlator",
    "classify_photons",
    "pair_statistics",
    "prepare_unraveling",
    "run_ensemble",
    "run_trajectory",
]
