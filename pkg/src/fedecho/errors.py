"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, argument, or shape. Maps to exit code 2."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where the contract requires finite ones.

    Maps to exit code 3.
    """


class NoTeacherAvailable(RuntimeError):
    """No client logits are cached, so a distillation round cannot run."""
