class ConfigError(ValueError):
    """Inconsistent configuration or mis-shaped input."""
