from typing import List, Optional


class TclOpfError(Exception):
    """Base class for all errors raised by the solver library"""


class CaseValidationError(TclOpfError):
    """Case document is malformed or references do not resolve"""

    def __init__(self, messages: List[str]):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages) if self.messages else "invalid case")


class NonRadialNetworkError(TclOpfError):
    pass


class MdpConvergenceError(TclOpfError):
    """Normalization root find did not reach tolerance"""


class ConicSolverError(TclOpfError):
    pass


class CcopfBuildError(TclOpfError):
    pass


class SubproblemError(TclOpfError):
    """A per-interval subproblem did not return an optimal status"""

    def __init__(self, interval: int, status: str, detail: Optional[str] = None):
        self.interval = interval
        self.status = status
        message = f"interval {interval}: solver status '{status}'"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class ManifestError(TclOpfError):
    pass
