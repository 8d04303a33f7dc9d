"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation (e.g. t outside [0, 1])."""


class DimensionError(ValueError):
    """Shapes or dimensions do not agree."""


class SymmetryError(ValueError):
    """A matrix that must be symmetric is not."""


class DefinitenessError(ValueError):
    """A matrix that must be positive definite is not."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap."""


class StabilityError(ValueError):
    """A step size lies outside the stable range."""


class SampleSizeError(ValueError):
    """Too few samples for the requested estimate."""


class ValidationError(ValueError):
    """An experiment config failed validation."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during a computation.

    ``step``, ``layer`` and ``indices`` locate the failure when known.
    """

    def __init__(self, message, *, step=None, layer=None, indices=None, where=None):
        self.step = step
        self.layer = layer
        self.indices = list(indices) if indices is not None else None
        self.where = where
        parts = [message]
        if where is not None:
            parts.append(f"in {where}")
        if step is not None:
            parts.append(f"at step {step}")
        if layer is not None:
            parts.append(f"at layer {layer}")
        if self.indices is not None:
            shown = self.indices[:10]
            more = "..." if len(self.indices) > 10 else ""
            parts.append(f"at indices {shown}{more}")
        super().__init__(" ".join(parts))
