"""Exception and warning types raised by kahlerseq."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence


class KahlerSeqError(Exception):
    """Base class of every error raised by this package."""


class ShapeError(KahlerSeqError, ValueError):
    pass


class DegenerateFormError(KahlerSeqError, ValueError):
    pass


class SignatureError(KahlerSeqError, ValueError):
    """Raised when a metric is not positive definite."""


class NotPositiveError(KahlerSeqError, ValueError):
    """Raised when an operator expected to be positive has a small eigenvalue."""


class DimensionError(KahlerSeqError, ValueError):
    pass


class ParameterError(KahlerSeqError, ValueError):
    pass


class EvalError(KahlerSeqError, ArithmeticError):
    """
    Raised when an expression cannot be evaluated at a point.

    Args:
        message: What went wrong (e.g. ``log of nonpositive value``).
        component: Name of the field component being evaluated, if known.
        point: Coordinates of the evaluation point, if known.
    """

    def __init__(
        self,
        message: str,
        component: Optional[str] = None,
        point: Optional[Sequence[float]] = None,
    ):
        self.message = message
        self.component = component
        self.point = None if point is None else tuple(float(v) for v in point)
        super().__init__(self._format())

    def _format(self) -> str:
        parts = [self.message]
        if self.component is not None:
            parts.append(f"in component {self.component}")
        if self.point is not None:
            coords = ", ".join(repr(v) for v in self.point)
            parts.append(f"at point ({coords})")
        return " ".join(parts)

    def with_context(
        self, component: Optional[str] = None, point: Optional[Sequence[float]] = None
    ) -> "EvalError":
        return EvalError(
            self.message,
            component if component is not None else self.component,
            point if point is not None else self.point,
        )


class ExprSyntaxError(KahlerSeqError, ValueError):
    """
    Raised for malformed expression source.

    ``offset`` is the UTF-8 byte offset of the offending token.
    """

    def __init__(self, message: str, offset: int, source: str = ""):
        self.message = message
        self.offset = offset
        self.source = source
        super().__init__(f"{message} at byte {offset}")


class UnknownIdentifierError(ExprSyntaxError):
    pass


class CoordinateRangeError(ExprSyntaxError):
    pass


class SpecError(KahlerSeqError, ValueError):
    """
    Raised for an invalid manifold spec document.

    ``path`` locates the offending entry, e.g. ``omega["1,2"]``.
    """

    def __init__(self, message: str, path: str = ""):
        self.message = message
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class SequenceInvariantError(KahlerSeqError, RuntimeError):
    """Raised when a connection-sequence invariant is violated beyond tolerance."""

    def __init__(self, message: str, residual: float):
        self.residual = float(residual)
        super().__init__(f"{message} (residual {self.residual:.3e})")


class NotFoundError(KahlerSeqError, LookupError):
    def __init__(self, name: str, catalog: Iterable[str]):
        self.name = name
        self.catalog = tuple(catalog)
        super().__init__(
            f"unknown entry {name!r}; available: {', '.join(self.catalog)}"
        )

    def __str__(self) -> str:
        return self.args[0]


class ConditioningWarning(UserWarning):
    """Emitted when a pointwise linear solve is ill-conditioned."""
