"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration, hyperparameter or unmet precondition."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class NonFiniteGradientError(FloatingPointError):
    """An optimizer step met NaN/inf gradient entries."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"non-finite gradient in parameter array {index}")


class TrainingDivergedError(FloatingPointError):
    """The CFM loss became non-finite during training."""

    def __init__(self, step, detail=""):
        self.step = step
        super().__init__(f"loss became non-finite at step {step}{': ' + detail if detail else ''}")


class IntegrationError(FloatingPointError):
    """The ODE state became non-finite."""

    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite ODE state at integration step {step}")
