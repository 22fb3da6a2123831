"""Exception hierarchy shared by every stage of the toolkit.

None of these derive from ValueError: pydantic wraps ValueError raised in a
validator into a ValidationError, and callers want the domain error itself.
"""
from typing import Any, Dict, Optional


class LatticeGuideError(Exception):
    """Base class for all toolkit errors"""

    def __init__(self, message: str, payload: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.payload = payload or {}


class InvalidParameter(LatticeGuideError):
    pass


class NonPositiveParameter(InvalidParameter):
    pass


class NonFinite(InvalidParameter):
    pass


class EmptyWindow(InvalidParameter):
    pass


class SingularFrequency(LatticeGuideError):
    """Frequency lies on pi*Z/a_i where the edge transfer factors blow up"""


class ResolutionTooCoarse(LatticeGuideError):
    pass


class ClassificationViolation(LatticeGuideError):
    """A gap matched none of the three admissible edge/W-point combinations"""


class InsideSpectrum(LatticeGuideError):
    pass


class QuadratureFailure(LatticeGuideError):
    pass


class GapUnverified(LatticeGuideError):
    pass


class NormalizationInconsistency(LatticeGuideError):
    pass


class DegenerateField(LatticeGuideError):
    pass


class SizeLimit(LatticeGuideError):
    pass


class GapIndexError(LatticeGuideError):
    pass
