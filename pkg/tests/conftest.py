from typing import Dict, Sequence

import pytest
import torch

from kahlerseq.config import DTYPE
from kahlerseq.fields import METRIC, TWOFORM, FieldJet, TensorFieldSpec
from kahlerseq.tensors import ANTISYMMETRIC, SYMMETRIC, as_connection, as_torsion


def point(*coords: float) -> torch.Tensor:
    return torch.tensor(coords, dtype=DTYPE)


def metric_field(dim: int, sources: Dict[str, str], coords: Sequence[str] = ()) -> TensorFieldSpec:
    return TensorFieldSpec.from_strings(dim, METRIC, sources, coords, name="g")


def twoform_field(dim: int, sources: Dict[str, str], coords: Sequence[str] = ()) -> TensorFieldSpec:
    return TensorFieldSpec.from_strings(dim, TWOFORM, sources, coords, name="omega")


def standard_twoform(n: int) -> torch.Tensor:
    w = torch.zeros(n, n, dtype=DTYPE)
    for i in range(0, n, 2):
        w[i, i + 1] = 1.0
        w[i + 1, i] = -1.0
    return w


def random_spd(n: int, gen: torch.Generator) -> torch.Tensor:
    m = torch.randn(n, n, generator=gen, dtype=DTYPE)
    return m @ m.T / n + 0.5 * torch.eye(n, dtype=DTYPE)


def random_twoform(n: int, gen: torch.Generator, amplitude: float = 0.1) -> torch.Tensor:
    r = torch.randn(n, n, generator=gen, dtype=DTYPE)
    return standard_twoform(n) + amplitude * (r - r.T) / 2


def random_connection(n: int, gen: torch.Generator):
    return as_connection(torch.randn(n, n, n, generator=gen, dtype=DTYPE))


def random_symmetric_connection(n: int, gen: torch.Generator):
    g = torch.randn(n, n, n, generator=gen, dtype=DTYPE)
    return as_connection(0.5 * (g + g.transpose(-1, -2)))


def random_torsion(n: int, gen: torch.Generator):
    t = torch.randn(n, n, n, generator=gen, dtype=DTYPE)
    return as_torsion(t - t.transpose(-1, -2))


def random_metric_jet(n: int, gen: torch.Generator) -> FieldJet:
    d = torch.randn(n, n, n, generator=gen, dtype=DTYPE)
    return FieldJet(
        value=random_spd(n, gen),
        partials=0.5 * (d + d.transpose(-1, -2)),
        kind=SYMMETRIC,
        shape=(),
    )


def random_twoform_jet(n: int, gen: torch.Generator) -> FieldJet:
    d = torch.randn(n, n, n, generator=gen, dtype=DTYPE)
    return FieldJet(
        value=random_twoform(n, gen),
        partials=d - d.transpose(-1, -2),
        kind=ANTISYMMETRIC,
        shape=(),
    )


def constant_jet(value: torch.Tensor, kind: str = SYMMETRIC) -> FieldJet:
    n = value.shape[-1]
    return FieldJet(value=value, partials=torch.zeros(n, n, n, dtype=DTYPE), kind=kind, shape=())


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(0)


@pytest.fixture
def conformal_metric():
    """``g = diag(1, exp(2 x1))`` on the plane."""
    return metric_field(2, {"1,1": "1", "2,2": "exp(2*x1)"})


@pytest.fixture
def exp_twoform():
    """``omega_12 = exp(x1)`` on the plane."""
    return twoform_field(2, {"1,2": "exp(x1)"})


@pytest.fixture
def identity_metric_2d():
    return metric_field(2, {"1,1": "1", "2,2": "1"})
