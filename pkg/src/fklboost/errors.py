class ConfigError(ValueError):
    """Invalid configuration or input file; maps to CLI exit code 2."""


class NumericalError(RuntimeError):
    """An optimizer or sampler produced non-finite values; maps to exit code 3."""
