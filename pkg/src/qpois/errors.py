"""Typed failure modes raised by the toolkit.

Every guarded numerical refusal gets its own class so callers (and the CLI)
can distinguish "the input is outside the contract" from genuine bugs.
"""


class QpoisError(Exception):
    pass


class NotClosed(QpoisError):
    """Bracket of basis elements leaves the span of the basis."""


class RankDeficient(QpoisError):
    """Supplied basis matrices are linearly dependent."""


class NotInSpan(QpoisError):
    """A matrix expected to lie in the algebra span does not."""


class NotConvenient(QpoisError):
    """Pairing/structure data fails the invariance or antisymmetry it needs."""


class DegeneratePairing(QpoisError):
    """An inverse of the bilinear form was requested but the form is singular."""


class NotTangent(QpoisError):
    """Vector is not tangent to the constraint set (class factor, level set)."""


class LiftFailed(QpoisError):
    """No algebra lift X with q X - X q matching the given tangent."""


class IncompatibleActions(QpoisError):
    """Fusion requested across sites built over different models/pairings."""


class BadSignature(QpoisError):
    """Site shape does not match what the construction needs."""


class NotInvariant(QpoisError):
    """Function expected to be conjugation invariant is not (sampled check)."""


class NotEpimorphism(QpoisError):
    """A map contractually surjective is rank deficient at this point."""


class MaxIters(QpoisError):
    def __init__(self, msg, best_residual=None, iters=None):
        super().__init__(msg)
        self.best_residual = best_residual
        self.iters = iters


class Stalled(QpoisError):
    def __init__(self, msg, best_residual=None, iters=None):
        super().__init__(msg)
        self.best_residual = best_residual
        self.iters = iters


class ConfigError(QpoisError):
    """Run configuration file is malformed or inconsistent."""


class IoError(QpoisError):
    """Report/config file could not be read or written."""
