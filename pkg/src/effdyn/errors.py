"""Exception hierarchy shared by all effdyn modules."""


class EffdynError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(EffdynError, ValueError):
    """Invalid parameters, unknown kinds, malformed config documents."""


class SimulationBlowupError(EffdynError, RuntimeError):
    def __init__(self, step: int, value: float, guard: float):
        self.step = step
        super().__init__(
            f"trajectory left the domain guard at step {step}: |x|={value:.3g} > {guard:.3g}"
        )


class EmptyOutputError(EffdynError, ValueError):
    """An operation would produce an empty trajectory or chain."""


class TruncationError(EffdynError, ValueError):
    def __init__(self, row: int, outside_mass: float):
        self.row = row
        self.outside_mass = outside_mass
        super().__init__(
            f"row {row}: {outside_mass:.1%} of the kernel mass falls outside the grid"
        )


class DisconnectedStateError(EffdynError, ValueError):
    def __init__(self, states):
        self.states = list(states)
        super().__init__(f"visited states without outgoing transitions: {self.states}")


class ReversibilityRequiredError(EffdynError, ValueError):
    """Raised by spectral routines on non-reversible input; use ``decompose``."""


class ConstraintError(EffdynError, ValueError):
    def __init__(self, message: str, offending=None):
        self.offending = offending if offending is not None else []
        super().__init__(message)


class ConnectivityError(EffdynError, ValueError):
    """The committor interior system is singular."""


class AssignmentError(EffdynError, ValueError):
    """A CV assignment is not surjective or does not match the state space."""


class InvariantError(EffdynError, AssertionError):
    """A numerical identity or invariant failed beyond its tolerance."""
