"""Exception types shared across the package."""


class SetupError(ValueError):
    """Invalid geometry, discretization, or model construction input."""


class ScenarioError(ValueError):
    """Invalid or inconsistent scenario configuration."""


class SingularBondError(RuntimeError):
    """A bond's deformed length collapsed to zero; names the bond."""

    def __init__(self, i: int, j: int):
        self.bond = (i, j)
        super().__init__(f"bond ({i}, {j}) has zero deformed length")


class IndefiniteSystemError(RuntimeError):
    """CG met a non-positive curvature direction: system not positive definite."""


class NewtonDivergence(RuntimeError):
    """Newton-Raphson failed to converge for a load step."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)
