"""Exception types shared across the package.

The CLI maps these onto exit codes (see :mod:`gwinfer.cli`).
"""


class GWError(Exception):
    """Base class for all package errors."""


class CapacityError(GWError):
    """A requested computation exceeds the configured size budget."""


class InconsistentSampleError(GWError):
    """The sample cannot have been produced by any tree in the model space."""


class EmptySampleError(GWError):
    """No node was observed, so there is no sample tree to build."""


class InsufficientPilotError(GWError):
    """The pilot trace is shorter than the Raftery-Lewis lower bound."""

    def __init__(self, n_min, n_given):
        super().__init__(
            f"insufficient pilot run: need at least {n_min} iterations, got {n_given}"
        )
        self.n_min = n_min
        self.n_given = n_given
