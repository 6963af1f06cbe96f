class FlowVMCError(Exception):
    pass


class NotSPDError(FlowVMCError, ValueError):
    """Matrix expected to be symmetric positive definite is not."""


class SingularError(FlowVMCError, ValueError):
    """Linear system is singular (raise the damping)."""


class NonFiniteError(FlowVMCError, FloatingPointError):
    """A computation produced inf/nan.

    ``partial`` carries whatever was computed before the blow-up, if anything.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class DomainError(FlowVMCError, ValueError):
    pass


class MissingFieldError(FlowVMCError, ValueError):
    """A sample batch lacks a field the estimator needs."""


class DivergedError(FlowVMCError, RuntimeError):
    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history
