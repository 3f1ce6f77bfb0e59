"""lyorad: primary drying of vial arrays with multi-surface thermal radiation.

Simulates conventional (CFD), microwave-assisted (MFD), and hybrid (HFD)
freeze drying of 2D vial layouts. Radiative exchange between every vial and
the chamber wall is resolved with a diffuse-gray radiosity network on top of
Monte Carlo (or closed-form) view factors; faster decoupled and data-trained
closures are available as alternatives.
"""

__version__ = "0.1.0"

from .multi_vial import Scenario, SimulationResult, simulate
from .model_core import (
    MaterialProperties,
    NumericsConfig,
    ProcessSettings,
    ScalarRadiation,
    VialGeometry,
    simulate_single_vial,
)

__all__ = [
    "MaterialProperties",
    "NumericsConfig",
    "ProcessSettings",
    "ScalarRadiation",
    "Scenario",
    "SimulationResult",
    "VialGeometry",
    "simulate",
    "simulate_single_vial",
    "__version__",
]
