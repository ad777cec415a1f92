from __future__ import annotations

from dataclasses import dataclass

import torch

DTYPE = torch.float64


@dataclass(frozen=True)
class Tolerances:
    """
    Tolerance tiers shared by every check.

    ``exact`` applies to pure array identities, ``ad`` to residuals built from
    dual-number jets, ``fd`` to anything involving finite differences of derived
    fields (the Gromov J and hermitian metric).
    """

    exact: float = 1e-12
    ad: float = 1e-10
    fd: float = 1e-6
    # metric residual of even steps / omega residual of odd steps
    sequence_residual: float = 1e-9
    # shared symmetric part / shared torsion between neighbouring steps
    sequence_shared: float = 1e-10
    step_precondition: float = 1e-8
    degeneracy: float = 1e-12
    positivity: float = 1e-12
    condition_warning: float = 1e10


DEFAULT_TOLERANCES = Tolerances()

TIER_EXACT = "exact"
TIER_AD = "ad"
TIER_FD = "fd"
