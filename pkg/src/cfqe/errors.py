"""Exception types shared across the estimation pipeline."""


class EstimationError(RuntimeError):
    """A numerical estimation step failed."""


class SingularDesignError(EstimationError):
    """Design matrix is numerically rank deficient at the configured tolerance."""

    def __init__(self, rcond, tol):
        self.rcond = rcond
        self.tol = tol
        super().__init__(
            f"singular design: reciprocal condition estimate {rcond:.3e} "
            f"is below the tolerance {tol:.0e}"
        )


class ConvergenceError(EstimationError):
    """An iterative solver hit its iteration cap without meeting tolerance."""

    def __init__(self, message, iterations=None, grad_norm=None):
        self.iterations = iterations
        self.grad_norm = grad_norm
        detail = []
        if iterations is not None:
            detail.append(f"iterations={iterations}")
        if grad_norm is not None:
            detail.append(f"grad_norm={grad_norm:.3e}")
        if detail:
            message = f"{message} ({', '.join(detail)})"
        super().__init__(message)


class DegenerateResponseError(EstimationError):
    """Binary response is constant; the fitted probability is that constant."""

    def __init__(self, value):
        self.value = float(value)
        super().__init__(f"degenerate binary response: all values equal {value:g}")
