"""Tendon-driven actuation sandbox.

Simulates spring-return loads driven by a position-controlled servo spool,
learns tendon force from encoder history windows, and reuses the learned
model both as the force channel of a rigid-body simulator and as the
training ground for fingertip-tracking policies.
"""

__version__ = "0.1.0"

from tendonsim.errors import CheckpointError, ConfigError, IntegrationError

__all__ = ["ConfigError", "IntegrationError", "CheckpointError", "__version__"]
