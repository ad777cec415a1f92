"""Pointwise tensor algebra: connection coefficients, torsion and bilinear forms.

Index convention used throughout the package: ``gamma[..., k, i, j]`` is the
coefficient of the k-th coordinate vector in the covariant derivative of the
j-th coordinate vector along the i-th one. The first index is the output slot,
the second the direction, the third the argument.
"""

from __future__ import annotations

import logging
from typing import Optional, Union

import torch
from torch import Tensor

from kahlerseq.config import DEFAULT_TOLERANCES, DTYPE
from kahlerseq.errors import DegenerateFormError, ShapeError, SignatureError
from kahlerseq.tensor_dataclass import TensorDataClass

logger = logging.getLogger(__name__)

SYMMETRIC = "symmetric"
ANTISYMMETRIC = "antisymmetric"
MIXED = "mixed"

FORM_KINDS = (SYMMETRIC, ANTISYMMETRIC)


def _event_shape(tensor: Tensor, batch_ndim: int) -> tuple:
    return tuple(tensor.shape[batch_ndim:])


class ConnectionCoeffs(TensorDataClass):
    """
    Christoffel symbols of a linear connection, ``gamma[..., k, i, j]``.

    ``condition`` is the condition estimate of the linear solve that produced the
    coefficients, when one was involved.
    """

    gamma: Tensor
    condition: Optional[float] = None

    @property
    def dim(self) -> int:
        return self.gamma.shape[-1]

    def _check_invariants(self) -> None:
        n = self.gamma.shape[-1] if self.gamma.ndim > self.ndim else 0
        if n == 0 or _event_shape(self.gamma, self.ndim) != (n, n, n):
            raise ShapeError(
                f"connection coefficients need event shape (n, n, n), got {_event_shape(self.gamma, self.ndim)}"
            )
        if not torch.isfinite(self.gamma).all():
            raise ShapeError("connection coefficients contain non-finite entries")


class TorsionTensor(TensorDataClass):
    """Torsion ``t[..., k, i, j]``, antisymmetric in ``(i, j)``."""

    t: Tensor

    @property
    def dim(self) -> int:
        return self.t.shape[-1]

    def _check_invariants(self) -> None:
        n = self.t.shape[-1] if self.t.ndim > self.ndim else 0
        if n == 0 or _event_shape(self.t, self.ndim) != (n, n, n):
            raise ShapeError(
                f"torsion needs event shape (n, n, n), got {_event_shape(self.t, self.ndim)}"
            )
        if not torch.equal(self.t, -self.t.transpose(-1, -2)):
            raise ShapeError("torsion must be antisymmetric in its last two indices")


class BilinearFormValue(TensorDataClass):
    """
    Components of a metric (``kind="symmetric"``) or a 2-form
    (``kind="antisymmetric"``) at one or more points.

    Construction rejects forms violating their symmetry kind exactly, and forms
    whose determinant falls under the scale-invariant degeneracy threshold.
    """

    matrix: Tensor
    kind: str = SYMMETRIC

    @property
    def dim(self) -> int:
        return self.matrix.shape[-1]

    def _check_invariants(self) -> None:
        if self.kind not in FORM_KINDS:
            raise ShapeError(f"unknown form kind {self.kind!r}")
        n = self.matrix.shape[-1] if self.matrix.ndim > self.ndim else 0
        if n == 0 or _event_shape(self.matrix, self.ndim) != (n, n):
            raise ShapeError(
                f"form needs event shape (n, n), got {_event_shape(self.matrix, self.ndim)}"
            )
        transposed = self.matrix.transpose(-1, -2)
        expected = transposed if self.kind == SYMMETRIC else -transposed
        if not torch.equal(self.matrix, expected):
            raise ShapeError(f"form matrix is not {self.kind}")
        check_nondegenerate(self.matrix)


def check_nondegenerate(
    matrix: Tensor, threshold: float = DEFAULT_TOLERANCES.degeneracy
) -> None:
    """Raise DegenerateFormError when ``|det| < threshold * max|entry|**n`` at any point."""
    n = matrix.shape[-1]
    scale = matrix.abs().amax(dim=(-2, -1))
    det = torch.linalg.det(matrix).abs()
    bad = (scale == 0) | (det < threshold * scale**n)
    if bad.any():
        raise DegenerateFormError(
            f"form is degenerate: |det| = {det.min().item():.3e} below threshold"
        )


def check_positive_definite(matrix: Tensor) -> Tensor:
    """Return the Cholesky factor of ``matrix``; SignatureError if it is not positive definite."""
    factor, info = torch.linalg.cholesky_ex(matrix)
    if (info != 0).any():
        raise SignatureError("metric is not positive definite")
    return factor


def as_form(matrix: Tensor, kind: str = SYMMETRIC) -> BilinearFormValue:
    """Wrap a ``(..., n, n)`` tensor into a validated :class:`BilinearFormValue`."""
    matrix = torch.as_tensor(matrix, dtype=DTYPE)
    return BilinearFormValue(matrix=matrix, kind=kind, shape=tuple(matrix.shape[:-2]))


def as_connection(gamma: Tensor, condition: Optional[float] = None) -> ConnectionCoeffs:
    gamma = torch.as_tensor(gamma, dtype=DTYPE)
    return ConnectionCoeffs(
        gamma=gamma, condition=condition, shape=tuple(gamma.shape[:-3])
    )


def as_torsion(t: Tensor) -> TorsionTensor:
    t = torch.as_tensor(t, dtype=DTYPE)
    return TorsionTensor(t=t, shape=tuple(t.shape[:-3]))


def symmetric_part(gamma: ConnectionCoeffs) -> ConnectionCoeffs:
    """Symmetrization of the coefficients in the direction/argument slots."""
    g = gamma.gamma
    return ConnectionCoeffs(gamma=0.5 * (g + g.transpose(-1, -2)), shape=gamma.shape)


def torsion(gamma: ConnectionCoeffs) -> TorsionTensor:
    g = gamma.gamma
    return TorsionTensor(t=g - g.transpose(-1, -2), shape=gamma.shape)


def _form_matrix(b: Union[BilinearFormValue, Tensor]) -> Tensor:
    return b.matrix if isinstance(b, BilinearFormValue) else b


def lower_first_index(
    gamma: Union[ConnectionCoeffs, Tensor], b: Union[BilinearFormValue, Tensor]
) -> Tensor:
    """
    Contract the output slot with a non-degenerate form:
    ``out[k, i, j] = sum_l b[k, l] * gamma[l, i, j]``.
    """
    matrix = _form_matrix(b)
    check_nondegenerate(matrix)
    coeffs = gamma.gamma if isinstance(gamma, ConnectionCoeffs) else gamma
    return torch.einsum("...kl,...lij->...kij", matrix, coeffs)


def raise_first_index(
    lowered: Tensor, b: Union[BilinearFormValue, Tensor]
) -> ConnectionCoeffs:
    """Inverse of :func:`lower_first_index`."""
    matrix = _form_matrix(b)
    check_nondegenerate(matrix)
    n = matrix.shape[-1]
    flat = lowered.reshape(*lowered.shape[:-3], n, n * n)
    raised = torch.linalg.solve(matrix, flat).reshape(lowered.shape)
    return ConnectionCoeffs(gamma=raised, shape=tuple(lowered.shape[:-3]))


def max_abs_distance(
    a: Union[ConnectionCoeffs, TorsionTensor, Tensor],
    b: Union[ConnectionCoeffs, TorsionTensor, Tensor],
) -> float:
    """Largest absolute entrywise difference."""
    ta = _raw(a)
    tb = _raw(b)
    if ta.shape != tb.shape:
        raise ShapeError(
            f"cannot compare arrays of shapes {tuple(ta.shape)} and {tuple(tb.shape)}"
        )
    if ta.numel() == 0:
        return 0.0
    return float((ta - tb).abs().max().item())


def max_abs(value: Union[ConnectionCoeffs, TorsionTensor, Tensor]) -> float:
    raw = _raw(value)
    return float(raw.abs().max().item()) if raw.numel() else 0.0


def _raw(value: Union[ConnectionCoeffs, TorsionTensor, Tensor]) -> Tensor:
    if isinstance(value, ConnectionCoeffs):
        return value.gamma
    if isinstance(value, TorsionTensor):
        return value.t
    return value
