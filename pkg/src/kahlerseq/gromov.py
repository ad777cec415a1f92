"""
Compatible almost complex structure from a metric and a two-form, and the
pointwise Kähler certification built on it.

At a point, with ``g0`` positive definite and ``omega`` non-degenerate:

- ``A`` is defined by ``g0(A X, Y) = omega(X, Y)``, i.e. ``A = -g0^-1 omega``;
- ``B`` is the g0-self-adjoint positive square root of ``-A^2``;
- ``J = B^-1 A`` and ``g_herm(X, Y) = omega(X, J Y)``.

The square root is taken by a symmetric eigensolve in a g0-orthonormal frame
(Cholesky factor of ``g0``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import torch
from torch import Tensor

from kahlerseq.config import DEFAULT_TOLERANCES, DTYPE, TIER_AD, TIER_FD, Tolerances
from kahlerseq.connections import (
    covariant_derivative_11,
    levi_civita,
    metric_preservation_residual,
    omega_preservation_residual,
)
from kahlerseq.errors import (
    DimensionError,
    KahlerSeqError,
    NotPositiveError,
    ParameterError,
)
from kahlerseq.fields import (
    ChartDomain,
    FieldJet,
    TensorFieldSpec,
    eval_jet,
    exterior_derivative_from_jet,
    finite_diff_matrix_field,
)
from kahlerseq.sequence import PointSequence, SequenceConfig, SequenceReport, run_sequence
from kahlerseq.tensor_dataclass import TensorDataClass
from kahlerseq.tensors import (
    SYMMETRIC,
    BilinearFormValue,
    check_nondegenerate,
    check_positive_definite,
    max_abs,
    max_abs_distance,
)
from kahlerseq.utils import map_points

logger = logging.getLogger(__name__)

VERDICT_CERTIFIED = "kahler_certified"
VERDICT_PREMISE_FAILED = "premise_failed"
VERDICT_TOLERANCE_FAILED = "tolerance_failed"
VERDICT_FAILED = "failed"

# Random directions used by the positivity check of omega(X, J X).
POSITIVITY_SAMPLES = 50
POSITIVITY_SEED = 0

FormLike = Union[BilinearFormValue, Tensor]


def _matrix(b: FormLike) -> Tensor:
    return b.matrix if isinstance(b, BilinearFormValue) else torch.as_tensor(b, dtype=DTYPE)


class GromovFrame(TensorDataClass):
    """The operators ``A``, ``B``, ``J`` and the hermitian metric, each ``(..., n, n)``."""

    A: Tensor
    B: Tensor
    J: Tensor
    g_herm: Tensor

    @property
    def dim(self) -> int:
        return self.J.shape[-1]

    def _check_invariants(self) -> None:
        n = self.J.shape[-1]
        for name in ("A", "B", "J", "g_herm"):
            value = getattr(self, name)
            if tuple(value.shape[self.ndim :]) != (n, n):
                raise DimensionError(f"{name} needs event shape ({n}, {n}), got {tuple(value.shape[self.ndim:])}")


def operator_A(g0: FormLike, w: FormLike) -> Tensor:
    """
    The endomorphism with ``g0(A X, Y) = omega(X, Y)``.

    Raises:
        DimensionError: Odd dimension.
        SignatureError: ``g0`` not positive definite.
        DegenerateFormError: ``omega`` degenerate.
    """
    g = _matrix(g0)
    om = _matrix(w)
    n = g.shape[-1]
    if n % 2:
        raise DimensionError(f"a non-degenerate two-form needs even dimension, got {n}")
    check_positive_definite(g)
    check_nondegenerate(om)
    return -torch.linalg.solve(g, om)


def _frame_spectrum(m_frame: Tensor, tol: Tolerances) -> Tuple[Tensor, Tensor]:
    m_frame = 0.5 * (m_frame + m_frame.mT)
    evals, evecs = torch.linalg.eigh(m_frame)
    top = evals.max()
    if top <= 0 or evals.min() <= tol.positivity * top:
        raise NotPositiveError(
            f"-A^2 is not positive definite: eigenvalues in [{evals.min().item():.3e}, {top.item():.3e}]"
        )
    return evals, evecs


def _from_frame(m_frame: Tensor, L: Tensor) -> Tensor:
    """``Lt^-1 @ m_frame @ Lt`` for ``g0 = L Lt``."""
    return torch.linalg.solve_triangular(L.mT, m_frame @ L.mT, upper=True)


def sqrt_neg_A_squared(
    A: Tensor, g0: FormLike, tol: Tolerances = DEFAULT_TOLERANCES
) -> Tensor:
    """
    The g0-self-adjoint positive definite ``B`` with ``B @ B = -A @ A``.

    Raises:
        NotPositiveError: ``-A^2`` has an eigenvalue at or below
            ``tol.positivity`` times its largest one.
    """
    g = _matrix(g0)
    L = check_positive_definite(g)
    M = -A @ A
    # Similar symmetric matrix Lt M Lt^-1 in the g0-orthonormal frame.
    M_frame = torch.linalg.solve_triangular(L.mT, L.mT @ M, upper=True, left=False)
    evals, evecs = _frame_spectrum(M_frame, tol)
    return _from_frame((evecs * evals.sqrt()) @ evecs.mT, L)


def gromov_J(
    g0: FormLike, w: FormLike, tol: Tolerances = DEFAULT_TOLERANCES
) -> GromovFrame:
    """
    Almost complex structure compatible with ``omega``, with its hermitian metric.

    ``J`` is built in the g0-orthonormal frame, where ``A`` becomes the
    antisymmetric ``-L^-1 omega Lt^-1`` and ``J`` its orthogonal polar factor,
    then mapped back to the chart frame.
    """
    g = _matrix(g0)
    om = _matrix(w)
    A = operator_A(g, om)
    L = check_positive_definite(g)
    a_frame = -torch.linalg.solve_triangular(
        L.mT, torch.linalg.solve_triangular(L, om, upper=False), upper=True, left=False
    )
    a_frame = 0.5 * (a_frame - a_frame.mT)
    evals, evecs = _frame_spectrum(a_frame.mT @ a_frame, tol)
    root = evals.sqrt()
    b_frame = (evecs * root) @ evecs.mT
    j_frame = a_frame @ ((evecs / root) @ evecs.mT)
    # one Newton step of the polar iteration restores orthogonality to rounding
    j_frame = 0.5 * (j_frame + torch.linalg.inv(j_frame).mT)
    j_frame = 0.5 * (j_frame - j_frame.mT)
    J = _from_frame(j_frame, L)
    herm = om @ J
    g_herm = 0.5 * (herm + herm.mT)
    return GromovFrame(A=A, B=_from_frame(b_frame, L), J=J, g_herm=g_herm, shape=())


@dataclass
class FrameCheck:
    """
    Residuals of the frame identities (all should be ~0) and positivity margins
    (all should be > 0).
    """

    residuals: Dict[str, float]
    positivity: Dict[str, float]

    def ok(self, tol: float = DEFAULT_TOLERANCES.ad) -> bool:
        return all(v <= tol for v in self.residuals.values()) and all(
            v > 0 for v in self.positivity.values()
        )


def _sym_min_eig(m: Tensor) -> float:
    return float(torch.linalg.eigvalsh(0.5 * (m + m.mT)).min().item())


def frame_residuals(frame: GromovFrame, g0: FormLike, w: FormLike) -> FrameCheck:
    """
    Every identity a frame satisfies, as max-abs residuals relative to the
    size of the inputs.
    """
    g = _matrix(g0)
    om = _matrix(w)
    A, B, J = frame.A, frame.B, frame.J
    n = frame.dim
    eye = torch.eye(n, dtype=DTYPE)
    herm = om @ J
    scale_w = max(1.0, max_abs(om))
    scale_a = max(1.0, max_abs(A))

    residuals = {
        "defining_identity": max_abs(A.mT @ g - om) / scale_w,
        "A_g0_antisymmetric": max_abs(g @ A + A.mT @ g) / scale_w,
        "B_g0_selfadjoint": max_abs(g @ B - B.mT @ g) / (scale_w * scale_a),
        "B_squared": max_abs(B @ B + A @ A) / scale_a**2,
        "B_commutes_with_A": max_abs(A @ B - B @ A) / scale_a**2,
        "J_squared": max_abs(J @ J + eye),
        "J_compatible": max_abs(J.mT @ om + om @ J) / scale_w,
        "J_symplectic": max_abs(J.mT @ om @ J - om) / scale_w,
        "g_herm_symmetric": max_abs(herm - herm.mT) / scale_w,
        "J_isometry": max_abs(J.mT @ frame.g_herm @ J - frame.g_herm) / scale_w,
    }

    gen = torch.Generator().manual_seed(POSITIVITY_SEED)
    directions = torch.cat([eye, torch.randn(POSITIVITY_SAMPLES, n, generator=gen, dtype=DTYPE)])
    pairing = torch.einsum("bi,ij,jk,bk->b", directions, om, J, directions)
    pairing = pairing / (directions * directions).sum(-1)
    positivity = {
        "omega_X_JX": float(pairing.min().item()),
        "g_herm": _sym_min_eig(frame.g_herm),
        "g0_B": _sym_min_eig(g @ B),
    }
    return FrameCheck(residuals=residuals, positivity=positivity)


def nijenhuis(j_value: Tensor, j_partials: Tensor) -> Tensor:
    """
    ``N[i,j,k] = sum_l J[l,j] dJ[l,i,k] - J[l,k] dJ[l,i,j] - J[i,l] (dJ[j,l,k] - dJ[k,l,j])``
    where ``dJ[l, a, b]`` is the derivative of ``J[a, b]`` along ``x_l``.
    """
    n = j_value.shape[-1]
    if n % 2:
        raise DimensionError(f"almost complex structures need even dimension, got {n}")
    return (
        torch.einsum("...lj,...lik->...ijk", j_value, j_partials)
        - torch.einsum("...lk,...lij->...ijk", j_value, j_partials)
        - torch.einsum("...il,...jlk->...ijk", j_value, j_partials)
        + torch.einsum("...il,...klj->...ijk", j_value, j_partials)
    )


@dataclass(frozen=True)
class CertifyConfig:
    """
    Args:
        sequence: Configuration of the sequence run; must start from Levi-Civita.
        fd_step: Finite-difference step; default ``1e-4`` times the box diameter.
        tolerances: Tolerance tiers.
    """

    sequence: SequenceConfig = SequenceConfig()
    fd_step: Optional[float] = None
    tolerances: Tolerances = DEFAULT_TOLERANCES

    def __post_init__(self):
        if self.sequence.seed_torsion is not None:
            raise ParameterError("certification starts from the Levi-Civita connection; drop the seed torsion")
        if self.fd_step is not None and not self.fd_step > 0:
            raise ParameterError(f"fd_step must be positive, got {self.fd_step}")

    def step_for(self, domain: ChartDomain) -> float:
        return self.fd_step if self.fd_step is not None else 1e-4 * domain.diameter


@dataclass(frozen=True)
class Residual:
    value: float
    tolerance: float
    tier: str

    @property
    def ok(self) -> bool:
        return self.value <= self.tolerance


@dataclass
class KahlerVerdict:
    """Certification outcome at one sample point."""

    index: int
    point: Tuple[float, ...]
    trivial: bool = False
    residuals: Dict[str, Residual] = field(default_factory=dict)
    verdict: str = VERDICT_FAILED
    error: Optional[str] = None


@dataclass
class CertifyReport:
    points: List[KahlerVerdict]
    sequence: SequenceReport
    config: CertifyConfig
    fd_step: float

    @property
    def all_certified(self) -> bool:
        return bool(self.points) and all(p.verdict == VERDICT_CERTIFIED for p in self.points)

    @property
    def any_premise_failed(self) -> bool:
        return any(p.verdict == VERDICT_PREMISE_FAILED for p in self.points)

    @property
    def all_failed(self) -> bool:
        return bool(self.points) and all(p.verdict == VERDICT_FAILED for p in self.points)

    def worst(self) -> Dict[str, float]:
        worst: Dict[str, float] = {}
        for p in self.points:
            for name, residual in p.residuals.items():
                worst[name] = max(worst.get(name, 0.0), residual.value)
        return dict(sorted(worst.items()))


def _derived_fields(g0_field: TensorFieldSpec, w_field: TensorFieldSpec, tol: Tolerances):
    def frame_at(x: Tensor) -> GromovFrame:
        return gromov_J(g0_field.assemble(x), w_field.assemble(x), tol)

    return (lambda x: frame_at(x).J), (lambda x: frame_at(x).g_herm)


def _certify_point(
    trace: PointSequence,
    g0_field: TensorFieldSpec,
    w_field: TensorFieldSpec,
    cfg: CertifyConfig,
    h: float,
    jets: Optional[Tuple[FieldJet, FieldJet]] = None,
) -> KahlerVerdict:
    result = KahlerVerdict(index=trace.index, point=trace.point, trivial=trace.trivial)
    if trace.error is not None:
        result.error = trace.error
        return result

    tol = cfg.tolerances
    p = torch.tensor(trace.point, dtype=DTYPE)
    try:
        if jets is None:
            jets = eval_jet(g0_field, p), eval_jet(w_field, p)
        g_jet, w_jet = jets
        gamma0 = trace.coeffs[0]
        result.residuals["domega"] = Residual(max_abs(exterior_derivative_from_jet(w_jet)), tol.ad, TIER_AD)
        result.residuals["nabla_g0"] = Residual(
            metric_preservation_residual(gamma0, g_jet).max_abs, tol.ad, TIER_AD
        )
        result.residuals["nabla_omega"] = Residual(
            omega_preservation_residual(gamma0, w_jet).max_abs, tol.ad, TIER_AD
        )
        if not trace.trivial:
            result.verdict = VERDICT_PREMISE_FAILED
            return result

        j_field, herm_field = _derived_fields(g0_field, w_field, tol)
        frame = gromov_J(g_jet.value, w_jet.value, tol)
        j_partials = finite_diff_matrix_field(j_field, p, h)
        result.residuals["nabla_J"] = Residual(
            max_abs(covariant_derivative_11(j_partials, frame.J, gamma0)), tol.fd, TIER_FD
        )
        result.residuals["nijenhuis"] = Residual(max_abs(nijenhuis(frame.J, j_partials)), tol.fd, TIER_FD)

        herm_partials = finite_diff_matrix_field(herm_field, p, h)
        herm_jet = FieldJet(
            value=frame.g_herm,
            partials=0.5 * (herm_partials + herm_partials.mT),
            kind=SYMMETRIC,
            shape=(),
        )
        result.residuals["herm_levi_civita"] = Residual(
            max_abs_distance(levi_civita(herm_jet, tol), gamma0), tol.fd, TIER_FD
        )
    except (KahlerSeqError, RuntimeError, ValueError, ArithmeticError) as e:
        result.error = f"{type(e).__name__}: {e}"
        logger.debug("point %d failed: %s", trace.index, result.error)
        return result

    ok = all(r.ok for r in result.residuals.values())
    result.verdict = VERDICT_CERTIFIED if ok else VERDICT_TOLERANCE_FAILED
    return result


def certify_kahler(
    g0_field: TensorFieldSpec,
    w_field: TensorFieldSpec,
    domain: ChartDomain,
    cfg: CertifyConfig = CertifyConfig(),
    workers: Optional[int] = None,
) -> CertifyReport:
    """
    Certify at every sample point that ``(g0, omega, J)`` is Kähler.

    A point is ``premise_failed`` when the sequence is not trivial there. At
    trivial points the two-form must be closed (AD tier), and the
    finite-differenced ``J`` must be parallel and integrable with the
    hermitian metric sharing the Levi-Civita connection (FD tier).
    """
    sequence = run_sequence(g0_field, w_field, domain, cfg.sequence, workers)
    h = cfg.step_for(domain)
    verdicts = map_points(
        lambda trace: _certify_point(trace, g0_field, w_field, cfg, h, sequence.jets_at(trace.index)),
        sequence.points,
        workers,
    )
    report = CertifyReport(points=verdicts, sequence=sequence, config=cfg, fd_step=h)
    logger.info(
        "certify: %d points, %d certified, %d premise failed",
        len(verdicts),
        sum(v.verdict == VERDICT_CERTIFIED for v in verdicts),
        sum(v.verdict == VERDICT_PREMISE_FAILED for v in verdicts),
    )
    return report
