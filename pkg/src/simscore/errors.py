"""Exception types shared across the package."""


class SimscoreError(Exception):
    """Base class for all package errors."""


class DimensionError(SimscoreError, ValueError):
    pass


class ContractError(SimscoreError, RuntimeError):
    """A caller violated an operation's precondition."""


class DomainError(SimscoreError, ValueError):
    pass


class ConfigError(SimscoreError, ValueError):
    pass


class EvaluationError(SimscoreError, RuntimeError):
    """A function under gradient check returned a non-finite value."""


class VocabularyError(SimscoreError, KeyError):
    pass


class FormatError(SimscoreError, ValueError):
    pass


class AlignmentError(SimscoreError, ValueError):
    pass


class CheckpointError(SimscoreError, IOError):
    pass


class UndefinedMetricError(SimscoreError, ArithmeticError):
    """Metric has no value on this input (zero variance, single class)."""


class IngestError(SimscoreError, ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.errors[:10])
        super().__init__(f"{len(self.errors)} invalid row(s): {lines}")


class NumericalAbort(SimscoreError, FloatingPointError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(f"{message} {self.diagnostics}")
