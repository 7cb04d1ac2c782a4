"""Transverse-field Ising ring with an odd number of spins used as a quantum battery."""

__version__ = "0.1.0"

from .spectrum import (  # noqa: E402
    EVEN,
    ODD,
    CapacityError,
    ModelParams,
    OccupationPattern,
    enumerate_levels,
    ground_pattern,
    level_table,
    lowest_levels,
)
from .quench import (  # noqa: E402
    INSTANT_DEPHASE,
    UNITARY,
    ChargingProtocol,
    PopulationDistribution,
    populations_fast,
    populations_slow,
    stored_energy,
)
from .ergotropy import ErgotropyReport, charging_series, ergotropy_report  # noqa: E402
