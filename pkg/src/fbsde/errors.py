"""Exception types shared across the library."""


class ValidationError(ValueError):
    """Invalid model, mark space, or configuration input."""


class SimulationError(RuntimeError):
    """Path simulation failed (non-finite state, shape mismatch)."""


class DivergenceError(RuntimeError):
    """Picard iteration failed to contract."""


class BudgetError(RuntimeError):
    """Experiment plan exceeds the configured path-step budget."""
