"""Built-in manifold specs with their expected outcomes."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple

import torch

from kahlerseq.errors import NotFoundError, ParameterError
from kahlerseq.fields import ManifoldSpec, load_manifold_spec
from kahlerseq.gromov import VERDICT_CERTIFIED, VERDICT_PREMISE_FAILED

FIXTURE = "fixture"

FS_FACTOR = "1/(1 + x1^2 + x2^2)^2"
FS_FACTOR_2 = "1/(1 + x3^2 + x4^2)^2"


@dataclass(frozen=True)
class Expected:
    """
    Expected outcome of an entry. ``trivial=None`` leaves the sequence outcome
    unspecified; ``kahler_verdict=FIXTURE`` defers to pinned regression values.
    """

    trivial: Optional[bool]
    domega_zero: bool
    kahler_verdict: str


@dataclass(frozen=True)
class ZooEntry:
    name: str
    description: str
    document: Dict[str, Any]
    expected: Expected

    def spec(self) -> ManifoldSpec:
        return load_manifold_spec(self.document)


def _box(dim: int, lo: float = -1.0, hi: float = 1.0):
    return [[lo, hi] for _ in range(dim)]


def _flat_standard(dim: int) -> Dict[str, Any]:
    return {
        "dim": dim,
        "box": _box(dim),
        "metric": {f"{i},{i}": "1" for i in range(1, dim + 1)},
        "omega": {f"{i},{i + 1}": "1" for i in range(1, dim + 1, 2)},
        "grid": 5 if dim == 2 else 3,
    }


def _flat_varying_omega() -> Dict[str, Any]:
    return {
        "dim": 2,
        "box": _box(2),
        "metric": {"1,1": "1", "2,2": "1"},
        "omega": {"1,2": "exp(x1)"},
        "grid": 5,
    }


def _fs_cp1() -> Dict[str, Any]:
    return {
        "dim": 2,
        "box": _box(2),
        "metric": {"1,1": FS_FACTOR, "2,2": FS_FACTOR},
        "omega": {"1,2": FS_FACTOR},
        "grid": 5,
    }


def _fs_product_4d() -> Dict[str, Any]:
    return {
        "dim": 4,
        "box": _box(4),
        "metric": {"1,1": FS_FACTOR, "2,2": FS_FACTOR, "3,3": FS_FACTOR_2, "4,4": FS_FACTOR_2},
        "omega": {"1,2": FS_FACTOR, "3,4": FS_FACTOR_2},
        "grid": 3,
    }


def _hyperbolic_area() -> Dict[str, Any]:
    return {
        "dim": 2,
        "coords": ["u", "v"],
        "box": _box(2),
        "metric": {"1,1": "1", "2,2": "exp(2*u)"},
        "omega": {"1,2": "exp(u)"},
        "grid": 5,
    }


def _kodaira_thurston() -> Dict[str, Any]:
    return {
        "dim": 4,
        "coords": ["x", "y", "z", "t"],
        "box": _box(4),
        "metric": {"1,1": "1", "2,2": "1 + x^2", "2,3": "-x", "3,3": "1", "4,4": "1"},
        "omega": {"1,4": "1", "2,3": "1"},
        "grid": 3,
    }


def _nonclosed_4d() -> Dict[str, Any]:
    return {
        "dim": 4,
        "box": _box(4),
        "metric": {f"{i},{i}": "1" for i in range(1, 5)},
        "omega": {"1,2": "1", "2,3": "x1", "3,4": "1"},
        "grid": 3,
    }


_CATALOG: Dict[str, Tuple[str, Callable[[], Dict[str, Any]], Expected]] = {
    "flat_standard": (
        "Euclidean plane with the standard symplectic form",
        lambda: _flat_standard(2),
        Expected(trivial=True, domega_zero=True, kahler_verdict=VERDICT_CERTIFIED),
    ),
    "flat_standard_4d": (
        "Euclidean 4-space with the standard symplectic form",
        lambda: _flat_standard(4),
        Expected(trivial=True, domega_zero=True, kahler_verdict=VERDICT_CERTIFIED),
    ),
    "flat_varying_omega": (
        "Euclidean plane with an area form not parallel for the metric",
        _flat_varying_omega,
        Expected(trivial=False, domega_zero=True, kahler_verdict=VERDICT_PREMISE_FAILED),
    ),
    "fs_cp1": (
        "Fubini-Study metric of the projective line in an affine chart",
        _fs_cp1,
        Expected(trivial=True, domega_zero=True, kahler_verdict=VERDICT_CERTIFIED),
    ),
    "fs_product_4d": (
        "Product of two Fubini-Study charts",
        _fs_product_4d,
        Expected(trivial=True, domega_zero=True, kahler_verdict=VERDICT_CERTIFIED),
    ),
    "hyperbolic_area": (
        "Hyperbolic plane with its area form",
        _hyperbolic_area,
        Expected(trivial=True, domega_zero=True, kahler_verdict=VERDICT_CERTIFIED),
    ),
    "kodaira_thurston": (
        "Kodaira-Thurston nilmanifold chart: symplectic, metric not Kähler",
        _kodaira_thurston,
        Expected(trivial=False, domega_zero=True, kahler_verdict=VERDICT_PREMISE_FAILED),
    ),
    "nonclosed_4d": (
        "Flat 4-space with a non-closed almost symplectic form",
        _nonclosed_4d,
        Expected(trivial=False, domega_zero=False, kahler_verdict=VERDICT_PREMISE_FAILED),
    ),
}


def catalog() -> Tuple[str, ...]:
    return tuple(_CATALOG)


def builtin(name: str) -> ZooEntry:
    """
    Raises:
        NotFoundError: ``name`` is not in the catalog.
    """
    if name not in _CATALOG:
        raise NotFoundError(name, catalog())
    description, build, expected = _CATALOG[name]
    document = {"name": name, "description": description, **build()}
    return ZooEntry(name=name, description=description, document=document, expected=expected)


def export(name: str) -> Dict[str, Any]:
    """The entry as a manifold spec document, ready for ``json.dump``."""
    return copy.deepcopy(builtin(name).document)


def perturbed(seed: int, dim: int = 4, amplitude: float = 0.1) -> ZooEntry:
    """
    Seeded smooth perturbation of the flat standard pair.

    Diagonal metric terms vary by at most ``amplitude`` and off-diagonal ones by
    ``amplitude / dim``, so the metric stays diagonally dominant; the two-form is
    perturbed the same way around the standard one.
    """
    if dim < 2 or dim % 2:
        raise ParameterError(f"dimension must be even and positive, got {dim}")
    if not 0 < amplitude < 0.5:
        raise ParameterError(f"amplitude must lie in (0, 0.5), got {amplitude}")
    gen = torch.Generator().manual_seed(seed)

    def coeff(scale: float) -> str:
        value = (2.0 * torch.rand((), generator=gen, dtype=torch.float64).item() - 1.0) * scale
        return repr(round(value, 6))

    def axis() -> int:
        return int(torch.randint(1, dim + 1, (), generator=gen).item())

    metric = {}
    omega = {}
    for i in range(1, dim + 1):
        for j in range(i, dim + 1):
            if i == j:
                metric[f"{i},{j}"] = f"1 + ({coeff(amplitude)})*sin(x{axis()} + ({coeff(1.0)}))"
            else:
                metric[f"{i},{j}"] = f"({coeff(amplitude / dim)})*cos(x{axis()})"
    for i in range(1, dim + 1):
        for j in range(i + 1, dim + 1):
            base = "1" if (i % 2 == 1 and j == i + 1) else "0"
            omega[f"{i},{j}"] = f"{base} + ({coeff(amplitude / dim)})*sin(x{axis()} + ({coeff(1.0)}))"

    name = f"perturbed_{seed}_{dim}"
    document = {
        "name": name,
        "description": f"seeded perturbation of the flat standard pair (seed {seed})",
        "dim": dim,
        "box": _box(dim, -0.5, 0.5),
        "metric": metric,
        "omega": omega,
        "grid": 2,
    }
    return ZooEntry(
        name=name,
        description=document["description"],
        document=document,
        expected=Expected(trivial=None, domega_zero=dim == 2, kahler_verdict=FIXTURE),
    )
