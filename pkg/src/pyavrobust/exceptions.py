from __future__ import annotations


class ShapeError(ValueError):
    """Raised when the operands of a primitive have incompatible shapes."""


class ConfigError(ValueError):
    """Invalid or unknown configuration field."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float) -> None:
        super().__init__(f"non-finite loss {loss} at training step {step}")
        self.step = step


class NonFiniteGradientError(RuntimeError):
    """An attack iteration produced a non-finite gradient."""

    def __init__(self, iteration: int) -> None:
        super().__init__(f"non-finite gradient at attack iteration {iteration}")
        self.iteration = iteration


class MissingArtifactError(FileNotFoundError):
    """A prerequisite artifact of a harness command does not exist."""

    def __init__(self, path: str) -> None:
        super().__init__(f"missing prerequisite artifact: {path}")
        self.path = path


class ContainerFormatError(ValueError):
    """A checkpoint or dataset file does not follow the container layout."""


class OutputExistsError(FileExistsError):
    """A harness command would overwrite existing results."""

    def __init__(self, path: str) -> None:
        super().__init__(f"output directory is not empty (pass --overwrite): {path}")
        self.path = path
