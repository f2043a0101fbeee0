"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class ShapeMismatchError(InvalidArgumentError):
    """Two arrays that must agree in shape do not."""


class DegenerateTransmissionError(InvalidArgumentError):
    """Transmission fell below the inversion guard at one or more pixels."""

    def __init__(self, n_bad: int, t_min: float):
        self.n_bad = n_bad
        self.t_min = t_min
        super().__init__(
            f"{n_bad} pixel(s) have transmission below the inversion guard {t_min:g}"
        )


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, corrupt, or incompatible."""


class NonFiniteLossError(RuntimeError):
    """Training hit a non-finite loss; carries diagnostics for the dump."""

    def __init__(self, step: int, scene_ids, terms: dict):
        self.step = step
        self.scene_ids = list(scene_ids)
        self.terms = dict(terms)
        super().__init__(
            f"non-finite loss at step {step} (scenes {self.scene_ids}): {self.terms}"
        )
