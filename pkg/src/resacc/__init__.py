"""Resiliency-accuracy estimation for DNN accelerators under single-bit
transient faults: analytical fault-site probabilities, a fault-injectable
micro inference engine, Monte Carlo estimation with importance sampling, and
exhaustive/grid-simulation oracles."""

from .formats import NumericFormat, flip_bit
from .profile import (
    CONTROL_LAYER,
    AcceleratorConfig,
    FFType,
    LayerStats,
    NetworkProfile,
    SoftwareFaultSite,
    derive_profile,
    validate_profile,
)
from .probtransfer import RAResult, SiteProbabilityTable, build_table, ra_expected

__version__ = "0.1.0"
