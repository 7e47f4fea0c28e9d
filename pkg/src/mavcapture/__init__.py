"""Cooperative MAV-capturing-MAV simulation: bearing-only cooperative
estimation, formation MPC pursuit, flying-net dynamics and the real-time
capture decision."""

from mavcapture.errors import ConfigError, InvalidInput, NetDivergence, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "InvalidInput", "NetDivergence", "NumericalError", "__version__"]
