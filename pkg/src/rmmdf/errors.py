"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent module toggles."""


class ShapeError(ValueError):
    """Tensor shape or resolution violates a module contract."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss.

    ``parameter`` names the first parameter (in state-dict order) whose
    gradient went non-finite, or ``"<loss>"`` if no gradient did.
    """

    def __init__(self, parameter: str, iteration: int):
        self.parameter = parameter
        self.iteration = iteration
        super().__init__(
            f"non-finite loss at iteration {iteration}; "
            f"first non-finite gradient: {parameter}"
        )
