"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated a documented precondition (shape, vocab, state)."""


class NumericError(RuntimeError):
    """A forward op produced NaN/Inf; message carries the op identity."""


class GenerationError(RuntimeError):
    """Rejection sampling exhausted its budget (unsatisfiable concept/map)."""


class AnnotationAccessError(ContractError):
    """A learner tried to read an annotation outside the language-learning split."""


class ConfigError(ValueError):
    """Invalid experiment configuration (bad key, bad domain/method combo)."""


class StalenessError(RuntimeError):
    """A checkpoint or report refers to a corpus with a different content hash."""


class ComparisonError(ValueError):
    """Reports passed to compare() do not share corpora/seeds."""
