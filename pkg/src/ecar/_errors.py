class NumericalError(RuntimeError):
    """A numerical routine failed (non-PD matrix, non-finite posterior, ...)."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration
