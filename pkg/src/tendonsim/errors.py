"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class IntegrationError(RuntimeError):
    """Plant state became non-finite during integration."""


class CheckpointError(RuntimeError):
    """A model container is truncated, corrupt, or structurally wrong."""
