"""Exception hierarchy.

Everything raised deliberately by the package derives from :class:`DNLSError`.
Numerical failures (non-convergence, blow-up, guard violations) additionally
derive from :class:`NumericalFailure`; the CLI maps those to exit code 3 and
:class:`ConfigError` to exit code 2.
"""


class DNLSError(Exception):
    pass


class NumericalFailure(DNLSError):
    pass


class PreconditionViolation(DNLSError, ValueError):
    pass


class WindowMismatch(DNLSError, ValueError):
    pass


class WeightedNormOverflow(NumericalFailure, OverflowError):
    pass


class NonpositiveOmega(PreconditionViolation):
    pass


class NoConvergence(NumericalFailure):
    pass


class SingularJacobian(NumericalFailure):
    pass


class ClosureDominant(NumericalFailure):
    pass


class WeightTooLarge(PreconditionViolation):
    pass


class SupportOverflow(NumericalFailure):
    pass


class BandEdge(PreconditionViolation):
    pass


class NonOddInput(PreconditionViolation):
    pass


class NonFinite(NumericalFailure):
    pass


class DegenerateProfile(NumericalFailure):
    pass


class NearSingularA(NumericalFailure):
    pass


class ProfileFailure(NumericalFailure):
    pass


class TubeExit(NumericalFailure):
    """Decomposition failed at some sample of a tracked trajectory.

    ``partial`` holds whatever was computed before the failure and
    ``index`` the sample at which it happened.
    """

    def __init__(self, message, index=None, partial=None):
        super().__init__(message)
        self.index = index
        self.partial = partial


class ConfigError(DNLSError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
