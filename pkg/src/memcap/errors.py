"""Exception types shared across the construction modules."""


class ConstructionError(RuntimeError):
    """A closed-form construction failed a numeric verification step."""


class CapacityError(ConstructionError):
    """The requested architecture cannot hold the dataset."""


class GeneralPositionError(ConstructionError):
    """The data (or a pushed state it evolved into) is affinely degenerate."""


class ProjectionError(ConstructionError):
    """Could not find a projection separating all inputs."""


class NonDifferentiableError(RuntimeError):
    """An iterate landed within the margin of an activation breakpoint."""

    def __init__(self, step: int, margin: float):
        self.step = step
        self.margin = margin
        super().__init__(f"non-differentiable iterate at step {step} (margin {margin:g})")
