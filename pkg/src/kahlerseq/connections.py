"""
Connections built from metric and two-form jets.

All functions act on one point: the inputs are single-point jets
(``shape == ()``) and the outputs single-point coefficient containers.

Lowering convention of the closed-form inverse map: the output slot of both the
connection and its prescribed symmetric part is lowered with the two-form,
``W[a, b, c] = sum_m omega[a, m] * gamma[m, b, c]``.
"""

from __future__ import annotations

import logging
import warnings
from typing import Callable, List

import torch
from torch import Tensor

from kahlerseq.config import DEFAULT_TOLERANCES, DTYPE, Tolerances
from kahlerseq.errors import ConditioningWarning, ShapeError
from kahlerseq.fields import FieldJet
from kahlerseq.tensor_dataclass import TensorDataClass
from kahlerseq.tensors import (
    SYMMETRIC,
    ConnectionCoeffs,
    TorsionTensor,
    check_nondegenerate,
    check_positive_definite,
    lower_first_index,
    max_abs,
    max_abs_distance,
    raise_first_index,
    symmetric_part,
)

logger = logging.getLogger(__name__)


class PreservationResidual(TensorDataClass):
    """
    ``r[..., l, i, j]``: derivative of ``b_ij`` along ``x_l`` minus what the
    connection predicts for it. Zero exactly when the connection preserves ``b``.
    """

    r: Tensor
    kind: str = SYMMETRIC

    @property
    def max_abs(self) -> float:
        return max_abs(self.r)


def _warn_if_ill_conditioned(condition: float, what: str, tol: Tolerances) -> None:
    if condition > tol.condition_warning:
        warnings.warn(
            f"{what} is ill-conditioned (condition estimate {condition:.3e})",
            ConditioningWarning,
            stacklevel=3,
        )


def _preservation_operator(gamma: Tensor, b: Tensor) -> Tensor:
    return torch.einsum("...mli,...mj->...lij", gamma, b) + torch.einsum(
        "...mlj,...im->...lij", gamma, b
    )


def _residual(gamma: ConnectionCoeffs, jet: FieldJet) -> PreservationResidual:
    if gamma.gamma.shape[-1] != jet.dim:
        raise ShapeError(f"connection of dimension {gamma.dim} against a jet of dimension {jet.dim}")
    r = jet.partials - _preservation_operator(gamma.gamma, jet.value)
    return PreservationResidual(r=r, kind=jet.kind, shape=gamma.shape)


def metric_preservation_residual(
    gamma: ConnectionCoeffs, g_jet: FieldJet
) -> PreservationResidual:
    """Failure of ``gamma`` to preserve the metric ``g``."""
    return _residual(gamma, g_jet)


def omega_preservation_residual(
    gamma: ConnectionCoeffs, w_jet: FieldJet
) -> PreservationResidual:
    """Failure of ``gamma`` to preserve the two-form ``omega``."""
    return _residual(gamma, w_jet)


def levi_civita(
    g_jet: FieldJet, tol: Tolerances = DEFAULT_TOLERANCES
) -> ConnectionCoeffs:
    """
    Levi-Civita connection of a positive definite metric jet.

    ``L[k, i, j] = (d_i g_jk + d_j g_ik - d_k g_ij) / 2`` raised with ``g^-1``.

    Raises:
        SignatureError: ``g`` is not positive definite.

    Warns:
        ConditioningWarning: ``cond(g)`` exceeds ``tol.condition_warning``.
    """
    g = g_jet.value
    check_positive_definite(g)
    dg = g_jet.partials
    lowered = 0.5 * (
        torch.einsum("...ijk->...kij", dg)
        + torch.einsum("...jik->...kij", dg)
        - dg
    )
    condition = float(torch.linalg.cond(g).max().item())
    _warn_if_ill_conditioned(condition, "metric", tol)
    result = raise_first_index(lowered, g)
    result.condition = condition
    return result


def _basis(n: int) -> Tensor:
    """All n**3 unit connections, shape ``(n**3, n, n, n)``."""
    return torch.eye(n**3, dtype=DTYPE).reshape(n**3, n, n, n)


def _solve_pointwise(
    n: int,
    operator: Callable[[Tensor], List[Tensor]],
    rhs: List[Tensor],
    what: str,
    tol: Tolerances,
) -> ConnectionCoeffs:
    """
    Solve the square system whose rows are the flattened outputs of
    ``operator`` applied to the unit connections.
    """
    columns = torch.cat([block.reshape(n**3, -1) for block in operator(_basis(n))], dim=1)
    matrix = columns.T
    vector = torch.cat([b.reshape(-1) for b in rhs])
    if matrix.shape != (n**3, n**3):
        raise RuntimeError(f"{what}: expected a square system of size {n**3}, got {tuple(matrix.shape)}")

    solution, info = torch.linalg.solve_ex(matrix, vector)
    if info.item() != 0:
        raise RuntimeError(f"{what}: linear system is singular")
    condition = float(torch.linalg.cond(matrix).item())
    _warn_if_ill_conditioned(condition, what, tol)
    logger.debug("%s: solved %d unknowns, condition %.3e", what, n**3, condition)
    return ConnectionCoeffs(gamma=solution.reshape(n, n, n), condition=condition, shape=())


def _check_symmetric(pi: ConnectionCoeffs, tol: Tolerances) -> None:
    scale = max(1.0, max_abs(pi))
    if max_abs_distance(pi, symmetric_part(pi)) > tol.exact * scale:
        raise ShapeError("prescribed symmetric part is not symmetric in its last two indices")


def omega_connection_from_sym(
    pi: ConnectionCoeffs, w_jet: FieldJet, tol: Tolerances = DEFAULT_TOLERANCES
) -> ConnectionCoeffs:
    """
    The unique connection preserving ``omega`` whose symmetric part is ``pi``.

    Solved as one dense system: the preservation equations for ``i < j`` and
    the symmetric-part equations for ``i <= j``, ``n**3`` equations in total.

    Raises:
        DegenerateFormError: ``omega`` is degenerate at the point.
        ShapeError: ``pi`` is not symmetric.
    """
    n = w_jet.dim
    w = w_jet.value
    check_nondegenerate(w)
    _check_symmetric(pi, tol)
    strict = torch.triu_indices(n, n, offset=1)
    upper = torch.triu_indices(n, n, offset=0)

    def operator(basis: Tensor) -> List[Tensor]:
        preserve = _preservation_operator(basis, w)
        sym = 0.5 * (basis + basis.transpose(-1, -2))
        return [preserve[..., strict[0], strict[1]], sym[..., upper[0], upper[1]]]

    rhs = [
        w_jet.partials[:, strict[0], strict[1]],
        pi.gamma[:, upper[0], upper[1]],
    ]
    return _solve_pointwise(n, operator, rhs, "two-form preservation system", tol)


def _lowered_symmetric_part(pi: ConnectionCoeffs, w: Tensor) -> Tensor:
    p = lower_first_index(pi, w)
    return p + torch.einsum("cba->abc", p) - torch.einsum("bca->abc", p)


def omega_connection_closed_form(
    pi: ConnectionCoeffs, w_jet: FieldJet
) -> ConnectionCoeffs:
    """
    Closed-form inverse of the symmetric-part map for a general
    (not necessarily closed) two-form:

    ``W[a,b,c] = (d_a w_bc + d_b w_ac + d_c w_ba) / 2 + P[a,b,c] + P[c,b,a] - P[b,c,a]``

    with ``P`` the lowered symmetric part, raised back with ``omega``.
    """
    w = w_jet.value
    dw = w_jet.partials
    derivative = 0.5 * (
        dw + torch.einsum("bac->abc", dw) + torch.einsum("cba->abc", dw)
    )
    return raise_first_index(derivative + _lowered_symmetric_part(pi, w), w)


def omega_connection_symplectic_form(
    pi: ConnectionCoeffs, w_jet: FieldJet
) -> ConnectionCoeffs:
    """
    Closed form valid when ``omega`` is closed: the derivative term reduces to
    ``d_a w_bc``. Differs from :func:`omega_connection_closed_form` by half the
    exterior derivative, lowered.
    """
    w = w_jet.value
    return raise_first_index(w_jet.partials + _lowered_symmetric_part(pi, w), w)


def contorsion(t: TorsionTensor, g: Tensor) -> Tensor:
    """Lowered contorsion ``K[a,b,c] = (T[a,b,c] - T[b,c,a] + T[c,a,b]) / 2``, ``T`` lowered with ``g``."""
    lt = lower_first_index(t.t, g)
    return 0.5 * (lt - torch.einsum("bca->abc", lt) + torch.einsum("cab->abc", lt))


def metric_connection_with_torsion(
    t: TorsionTensor, g_jet: FieldJet, tol: Tolerances = DEFAULT_TOLERANCES
) -> ConnectionCoeffs:
    """
    The unique ``g``-preserving connection with torsion ``t``:
    Levi-Civita plus the raised contorsion.
    """
    lc = levi_civita(g_jet, tol)
    if t.dim != g_jet.dim:
        raise ShapeError(f"torsion of dimension {t.dim} against a metric of dimension {g_jet.dim}")
    correction = raise_first_index(contorsion(t, g_jet.value), g_jet.value)
    return ConnectionCoeffs(
        gamma=lc.gamma + correction.gamma, condition=lc.condition, shape=()
    )


def metric_connection_by_solve(
    t: TorsionTensor, g_jet: FieldJet, tol: Tolerances = DEFAULT_TOLERANCES
) -> ConnectionCoeffs:
    """
    Same connection as :func:`metric_connection_with_torsion`, from the dense
    system of metric-preservation equations (``i <= j``) and torsion equations
    (``i < j``).
    """
    n = g_jet.dim
    g = g_jet.value
    check_positive_definite(g)
    strict = torch.triu_indices(n, n, offset=1)
    upper = torch.triu_indices(n, n, offset=0)

    def operator(basis: Tensor) -> List[Tensor]:
        preserve = _preservation_operator(basis, g)
        antisym = basis - basis.transpose(-1, -2)
        return [preserve[..., upper[0], upper[1]], antisym[..., strict[0], strict[1]]]

    rhs = [
        g_jet.partials[:, upper[0], upper[1]],
        t.t[:, strict[0], strict[1]],
    ]
    return _solve_pointwise(n, operator, rhs, "metric preservation system", tol)


def covariant_derivative_11(
    j_partials: Tensor, j_value: Tensor, gamma: ConnectionCoeffs
) -> Tensor:
    """
    Covariant derivative of a (1,1) field:
    ``out[l,i,j] = d_l J[i,j] + sum_m gamma[i,l,m] J[m,j] - sum_m gamma[m,l,j] J[i,m]``.
    """
    g = gamma.gamma
    if j_partials.shape[-3:] != g.shape[-3:] or j_value.shape[-1] != g.shape[-1]:
        raise ShapeError("(1,1) field and connection dimensions disagree")
    return (
        j_partials
        + torch.einsum("...ilm,...mj->...lij", g, j_value)
        - torch.einsum("...mlj,...im->...lij", g, j_value)
    )


def cyclic_torsion_form(gamma: ConnectionCoeffs, w_value: Tensor) -> Tensor:
    """
    Cyclic sum over ``(i, j, k)`` of ``sum_m omega[m, k] * T[m, i, j]``.

    For a connection preserving ``omega`` this equals the exterior derivative of
    ``omega`` (same sign), so an omega-preserving connection can be torsion-free
    only when ``omega`` is closed.
    """
    t = gamma.gamma - gamma.gamma.transpose(-1, -2)
    s = torch.einsum("...mk,...mij->...ijk", w_value, t)
    return s + torch.einsum("...jki->...ijk", s) + torch.einsum("...kij->...ijk", s)
