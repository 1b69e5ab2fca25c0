class StructuralError(ValueError):
    """Shapes, joint counts or kinematic structure do not line up."""


class InputError(ValueError):
    """Numerically invalid input (non-finite values, bad ranges)."""


class ContractError(RuntimeError):
    """A caller broke an operation's precondition."""


class TrainingFault(RuntimeError):
    """A training step produced a non-finite loss and was rejected."""


class IntegrityError(RuntimeError):
    """A persisted artifact failed its integrity check."""
