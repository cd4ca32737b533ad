"""Exception types shared across the toolkit."""


class InvalidParameter(ValueError):
    """Raised when a numeric input is non-finite, mis-signed, or mis-shaped."""


class InfeasibleDecision(ValueError):
    """Raised when a decision sequence violates a hard model invariant."""


class EmptyRun(ValueError):
    """Raised when a report is requested for a simulation that never ran."""


class ModelBug(RuntimeError):
    """Raised when an internal consistency check fails.

    A complete model with slack recourse is feasible by construction, so an
    infeasible subproblem or a crossed bound pair signals a construction bug
    rather than bad user input.
    """
