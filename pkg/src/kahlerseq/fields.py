"""
Chart-local tensor fields, their exact first jets, and derivative oracles.

Fields are given per independent component by expressions (see
:mod:`kahlerseq.expr`). :func:`eval_jet` evaluates the components together with
their exact first partials using torch forward-mode AD: one dual pass per
coordinate direction. Derived fields without an expression (the Gromov J field)
are differentiated by :func:`finite_diff_matrix_field`.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import torch
import torch.autograd.forward_ad as fwAD
from torch import Tensor

from kahlerseq.config import DTYPE
from kahlerseq.errors import (
    DegenerateFormError,
    DimensionError,
    EvalError,
    ExprSyntaxError,
    KahlerSeqError,
    ParameterError,
    ShapeError,
    SignatureError,
    SpecError,
)
from kahlerseq.expr import ScalarExpr, parse_expr
from kahlerseq.tensor_container import TensorContainer
from kahlerseq.tensor_dataclass import TensorDataClass
from kahlerseq.tensors import (
    ANTISYMMETRIC,
    MIXED,
    SYMMETRIC,
    BilinearFormValue,
    TorsionTensor,
    check_nondegenerate,
    check_positive_definite,
)

logger = logging.getLogger(__name__)

METRIC = "metric"
TWOFORM = "twoform"

VALENCE_KINDS = {METRIC: SYMMETRIC, TWOFORM: ANTISYMMETRIC, MIXED: MIXED}

DEFAULT_GRID = 5

# Forward-mode dual levels are global to the torch process.
_DUAL_LOCK = threading.Lock()


@dataclass(frozen=True, eq=False)
class ChartDomain:
    """
    Coordinate box of a chart together with the points analyses run on.

    ``box`` holds one ``(lo, hi)`` pair per coordinate; ``sample_points`` is a
    ``(P, n)`` float64 tensor of points inside the box.
    """

    dim: int
    box: Tuple[Tuple[float, float], ...]
    sample_points: Tensor

    def __post_init__(self):
        if len(self.box) != self.dim:
            raise ParameterError(f"box has {len(self.box)} intervals for dimension {self.dim}")
        for axis, (lo, hi) in enumerate(self.box):
            if not lo < hi:
                raise ParameterError(f"empty interval [{lo}, {hi}] on axis {axis + 1}")
        points = self.sample_points
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise ParameterError(
                f"sample points need shape (P, {self.dim}), got {tuple(points.shape)}"
            )
        if points.shape[0] == 0:
            raise ParameterError("chart domain has no sample points")
        outside = [i for i in range(points.shape[0]) if not self.contains(points[i])]
        if outside:
            raise ParameterError(f"sample point {outside[0]} lies outside the box")

    @classmethod
    def grid(
        cls, box: Sequence[Sequence[float]], counts: Union[int, Sequence[int]] = DEFAULT_GRID
    ) -> "ChartDomain":
        """Tensor-product grid with ``counts`` points per axis, endpoints included."""
        box = tuple((float(lo), float(hi)) for lo, hi in box)
        if isinstance(counts, int):
            counts = [counts] * len(box)
        if len(counts) != len(box):
            raise ParameterError(f"grid has {len(counts)} counts for dimension {len(box)}")
        axes = []
        for (lo, hi), count in zip(box, counts):
            if count < 1:
                raise ParameterError(f"grid count must be positive, got {count}")
            if count == 1:
                axes.append(torch.tensor([0.5 * (lo + hi)], dtype=DTYPE))
            else:
                axes.append(torch.linspace(lo, hi, count, dtype=DTYPE))
        mesh = torch.meshgrid(*axes, indexing="ij")
        points = torch.stack([m.reshape(-1) for m in mesh], dim=-1)
        return cls(dim=len(box), box=box, sample_points=points)

    @classmethod
    def from_points(
        cls, box: Sequence[Sequence[float]], points: Sequence[Sequence[float]]
    ) -> "ChartDomain":
        box = tuple((float(lo), float(hi)) for lo, hi in box)
        return cls(
            dim=len(box),
            box=box,
            sample_points=torch.as_tensor(points, dtype=DTYPE).reshape(-1, len(box)),
        )

    def contains(self, point: Union[Tensor, Sequence[float]]) -> bool:
        values = [float(v) for v in point]
        return len(values) == self.dim and all(
            lo <= v <= hi for v, (lo, hi) in zip(values, self.box)
        )

    @property
    def diameter(self) -> float:
        return math.sqrt(sum((hi - lo) ** 2 for lo, hi in self.box))

    @property
    def num_points(self) -> int:
        return self.sample_points.shape[0]


def _index_label(name: str, index: Tuple[int, ...]) -> str:
    return f"{name}[{','.join(str(i + 1) for i in index)}]"


@dataclass(frozen=True, eq=False)
class TensorFieldSpec:
    """
    A (0,2) or (1,1) field given by expressions for its independent components.

    ``components`` maps 0-based ``(i, j)`` to an expression: ``i <= j`` for a
    metric, ``i < j`` for a two-form, any pair for a mixed field. Missing
    components are zero; the rest of the matrix follows from the symmetry kind.
    """

    dim: int
    valence: str
    components: Mapping[Tuple[int, int], ScalarExpr]
    name: str = "f"

    def __post_init__(self):
        if self.valence not in VALENCE_KINDS:
            raise ParameterError(f"unknown valence {self.valence!r}")
        for (i, j), expr in self.components.items():
            if not (0 <= i < self.dim and 0 <= j < self.dim):
                raise ShapeError(f"component {_index_label(self.name, (i, j))} out of range")
            if self.valence == METRIC and i > j:
                raise ShapeError(f"metric component {_index_label(self.name, (i, j))} is below the diagonal")
            if self.valence == TWOFORM and i >= j:
                raise ShapeError(f"two-form component {_index_label(self.name, (i, j))} is not strictly above the diagonal")
            if expr.max_coordinate() > self.dim:
                raise ShapeError(f"component {_index_label(self.name, (i, j))} uses a coordinate beyond x{self.dim}")

    @classmethod
    def from_strings(
        cls,
        dim: int,
        valence: str,
        sources: Mapping[str, str],
        coords: Sequence[str] = (),
        name: str = "f",
    ) -> "TensorFieldSpec":
        """Build from a ``{"i,j": source}`` map with 1-based indices."""
        components = {}
        for key, src in sources.items():
            i, j = _parse_index_key(key, 2)
            components[(i, j)] = parse_expr(src, dim=dim, coords=coords)
        return cls(dim=dim, valence=valence, components=components, name=name)

    @property
    def kind(self) -> str:
        return VALENCE_KINDS[self.valence]

    def assemble(self, x: Tensor) -> Tensor:
        """Component matrix at ``x``; dual tensors in ``x`` propagate."""
        n = self.dim
        zero = torch.zeros((), dtype=DTYPE)
        entries: List[List[Tensor]] = [[zero] * n for _ in range(n)]
        for (i, j), expr in self.components.items():
            try:
                v = expr.evaluate(x)
            except EvalError as e:
                raise e.with_context(component=_index_label(self.name, (i, j))) from e
            entries[i][j] = v
            if self.valence == METRIC:
                entries[j][i] = v
            elif self.valence == TWOFORM:
                entries[j][i] = -v
        return torch.stack([torch.stack(row) for row in entries])


@dataclass(frozen=True, eq=False)
class TorsionFieldSpec:
    """
    A torsion-type (1,2) field antisymmetric in its lower indices, given by
    expressions for ``T[k, i, j]`` with ``i < j`` (0-based keys).
    """

    dim: int
    components: Mapping[Tuple[int, int, int], ScalarExpr]
    name: str = "T"

    def __post_init__(self):
        for (k, i, j), expr in self.components.items():
            if not all(0 <= a < self.dim for a in (k, i, j)) or i >= j:
                raise ShapeError(
                    f"torsion component {_index_label(self.name, (k, i, j))} needs i < j within the chart dimension"
                )
            if expr.max_coordinate() > self.dim:
                raise ShapeError(
                    f"component {_index_label(self.name, (k, i, j))} uses a coordinate beyond x{self.dim}"
                )

    @classmethod
    def from_strings(
        cls, dim: int, sources: Mapping[str, str], coords: Sequence[str] = ()
    ) -> "TorsionFieldSpec":
        components = {}
        for key, src in sources.items():
            components[_parse_index_key(key, 3)] = parse_expr(src, dim=dim, coords=coords)
        return cls(dim=dim, components=components)

    def evaluate(self, p: Union[Tensor, Sequence[float]]) -> TorsionTensor:
        x = torch.as_tensor(p, dtype=DTYPE)
        t = torch.zeros(self.dim, self.dim, self.dim, dtype=DTYPE)
        for (k, i, j), expr in self.components.items():
            try:
                v = expr.evaluate(x)
            except EvalError as e:
                raise e.with_context(
                    component=_index_label(self.name, (k, i, j)), point=x.tolist()
                ) from e
            t[k, i, j] = v
            t[k, j, i] = -v
        return TorsionTensor(t=t, shape=())


def _parse_index_key(key: str, arity: int) -> Tuple[int, ...]:
    parts = key.split(",")
    try:
        values = tuple(int(p) - 1 for p in parts)
    except ValueError:
        raise ShapeError(f"component key {key!r} must be {arity} comma-separated integers")
    if len(values) != arity:
        raise ShapeError(f"component key {key!r} must be {arity} comma-separated integers")
    return values


class FieldJet(TensorDataClass):
    """
    Value and first partials of a matrix field: ``value[..., i, j]`` and
    ``partials[..., l, i, j]`` = derivative of component ``(i, j)`` along ``x_l``.
    """

    value: Tensor
    partials: Tensor
    kind: str = SYMMETRIC

    @property
    def dim(self) -> int:
        return self.value.shape[-1]

    def _check_invariants(self) -> None:
        n = self.value.shape[-1]
        if tuple(self.value.shape[self.ndim :]) != (n, n):
            raise ShapeError(f"jet value needs event shape (n, n), got {tuple(self.value.shape[self.ndim:])}")
        if tuple(self.partials.shape[self.ndim :]) != (n, n, n):
            raise ShapeError(
                f"jet partials need event shape (n, n, n), got {tuple(self.partials.shape[self.ndim:])}"
            )
        if self.kind == MIXED:
            return
        sign = 1.0 if self.kind == SYMMETRIC else -1.0
        if not (
            torch.equal(self.value, sign * self.value.transpose(-1, -2))
            and torch.equal(self.partials, sign * self.partials.transpose(-1, -2))
        ):
            raise ShapeError(f"jet does not respect its {self.kind} kind")

    def form(self) -> BilinearFormValue:
        """The value as a validated bilinear form."""
        return BilinearFormValue(matrix=self.value, kind=self.kind, shape=self.shape)


def eval_jet(field_spec: TensorFieldSpec, p: Union[Tensor, Sequence[float]]) -> FieldJet:
    """
    Component values and exact first partials at ``p``.

    Raises:
        EvalError: An expression is undefined at ``p``; carries component and point.
    """
    x0 = torch.as_tensor(p, dtype=DTYPE).clone()
    n = field_spec.dim
    if x0.shape != (n,):
        raise ShapeError(f"point needs {n} coordinates, got shape {tuple(x0.shape)}")

    value = None
    partials = torch.zeros(n, n, n, dtype=DTYPE)
    try:
        with _DUAL_LOCK, fwAD.dual_level():
            for l in range(n):
                direction = torch.zeros(n, dtype=DTYPE)
                direction[l] = 1.0
                x = fwAD.make_dual(x0, direction)
                primal, tangent = fwAD.unpack_dual(field_spec.assemble(x))
                if value is None:
                    value = primal.detach().clone()
                if tangent is not None:
                    partials[l] = tangent
    except EvalError as e:
        raise e.with_context(point=x0.tolist()) from e

    return FieldJet(value=value, partials=partials, kind=field_spec.kind, shape=())


def eval_jets(field_spec: TensorFieldSpec, points: Tensor) -> FieldJet:
    """Jets at every row of ``points``, stacked into a batch of shape ``(P,)``."""
    jets = [eval_jet(field_spec, p) for p in points]
    # each jet was validated on construction
    with TensorContainer.unsafe_construction():
        return torch.stack(jets)


def exterior_derivative_from_jet(w_jet: FieldJet) -> Tensor:
    """
    ``(dw)[i, j, k] = d_i w_jk + d_j w_ki + d_k w_ij`` for a single-point jet.

    Only ``i < j < k`` is computed; the remaining entries are filled by sign so
    the result is exactly totally antisymmetric.
    """
    d = w_jet.partials
    n = w_jet.dim
    out = torch.zeros(n, n, n, dtype=DTYPE)
    for triple in itertools.combinations(range(n), 3):
        i, j, k = triple
        v = d[i, j, k] + d[j, k, i] + d[k, i, j]
        for perm, sign in _PERMUTATION_SIGNS:
            out[tuple(triple[s] for s in perm)] = v if sign > 0 else -v
    return out


_PERMUTATION_SIGNS = (
    ((0, 1, 2), 1),
    ((1, 2, 0), 1),
    ((2, 0, 1), 1),
    ((1, 0, 2), -1),
    ((0, 2, 1), -1),
    ((2, 1, 0), -1),
)


def exterior_derivative_2form(
    field_spec: TensorFieldSpec, p: Union[Tensor, Sequence[float]]
) -> Tensor:
    """Exterior derivative of a two-form field at ``p`` (zero when n = 2)."""
    if field_spec.valence != TWOFORM:
        raise ParameterError(f"exterior derivative needs a two-form, got {field_spec.valence}")
    return exterior_derivative_from_jet(eval_jet(field_spec, p))


def finite_diff_matrix_field(
    f: Callable[[Tensor], Tensor],
    p: Union[Tensor, Sequence[float]],
    h: float,
    domain: Optional[ChartDomain] = None,
) -> Tensor:
    """
    Partials ``out[l, ...] = d/dx_l f(p)`` by central differences with one
    Richardson step combining ``h`` and ``h/2``.

    When ``domain`` is given every stencil point must lie in its box.

    Raises:
        ParameterError: ``h <= 0`` or a stencil point outside ``domain``.
    """
    if not h > 0:
        raise ParameterError(f"finite-difference step must be positive, got {h}")
    x0 = torch.as_tensor(p, dtype=DTYPE)
    n = x0.shape[-1]

    def central(step: float, l: int) -> Tensor:
        e = torch.zeros(n, dtype=DTYPE)
        e[l] = step
        plus, minus = x0 + e, x0 - e
        if domain is not None and not (domain.contains(plus) and domain.contains(minus)):
            raise ParameterError(f"stencil at step {step} leaves the chart box along x{l + 1}")
        return (f(plus) - f(minus)) / (2.0 * step)

    rows = []
    for l in range(n):
        coarse = central(h, l)
        fine = central(0.5 * h, l)
        rows.append((4.0 * fine - coarse) / 3.0)
    return torch.stack(rows)


# Manifold spec documents


_SPEC_KEYS = {
    "name",
    "description",
    "dim",
    "coords",
    "box",
    "metric",
    "omega",
    "samples",
    "grid",
    "seed_torsion",
}


@dataclass(frozen=True, eq=False)
class ManifoldSpec:
    """A validated manifold spec document: chart, metric, 2-form and sample points."""

    dim: int
    coords: Tuple[str, ...]
    domain: ChartDomain
    metric: TensorFieldSpec
    omega: TensorFieldSpec
    seed_torsion: Optional[TorsionFieldSpec] = None
    name: str = ""
    document: Dict[str, Any] = field(default_factory=dict)

    def metric_jet(self, p) -> FieldJet:
        return eval_jet(self.metric, p)

    def omega_jet(self, p) -> FieldJet:
        return eval_jet(self.omega, p)

    def to_json(self) -> Dict[str, Any]:
        return json.loads(json.dumps(self.document))


def _require(condition: bool, message: str, path: str) -> None:
    if not condition:
        raise SpecError(message, path)


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _parse_components(
    doc: Mapping[str, Any], key: str, dim: int, coords: Sequence[str], arity: int
) -> Dict[Tuple[int, ...], ScalarExpr]:
    raw = doc.get(key, {})
    _require(isinstance(raw, Mapping), "must be an object of component expressions", key)
    components = {}
    for index_key, src in raw.items():
        path = f'{key}["{index_key}"]'
        if _is_number(src):
            src = repr(float(src))
        _require(isinstance(src, str), "component must be an expression string", path)
        try:
            index = _parse_index_key(index_key, arity)
        except ShapeError as e:
            raise SpecError(str(e), path) from e
        _require(
            all(0 <= a < dim for a in index),
            f"component index out of range for dimension {dim}",
            path,
        )
        try:
            components[index] = parse_expr(src, dim=dim, coords=coords)
        except ExprSyntaxError as e:
            raise SpecError(str(e), path) from e
    return components


def load_manifold_spec(doc: Mapping[str, Any]) -> ManifoldSpec:
    """
    Validate a manifold spec document (already decoded from JSON).

    Raises:
        SpecError: Schema violations and expression errors, with the JSON path.
        DimensionError: Odd chart dimension.
    """
    _require(isinstance(doc, Mapping), "spec must be a JSON object", "$")
    unknown = sorted(set(doc) - _SPEC_KEYS)
    _require(not unknown, f"unknown keys {unknown}", "$")

    dim = doc.get("dim")
    _require(isinstance(dim, int) and not isinstance(dim, bool) and dim > 0, "must be a positive integer", "dim")
    if dim % 2:
        raise DimensionError(f"chart dimension must be even, got {dim}")

    coords = doc.get("coords", [f"x{i + 1}" for i in range(dim)])
    _require(isinstance(coords, list), "must be a list of names", "coords")
    coords = tuple(coords)
    _require(len(coords) == dim, f"needs {dim} names", "coords")
    _require(all(isinstance(c, str) and c.isidentifier() for c in coords), "names must be identifiers", "coords")
    _require(len(set(coords)) == dim, "names must be distinct", "coords")

    box = doc.get("box")
    _require(isinstance(box, list) and len(box) == dim, f"needs {dim} intervals", "box")
    for axis, interval in enumerate(box):
        _require(
            isinstance(interval, list) and len(interval) == 2 and all(_is_number(v) for v in interval),
            "interval must be [lo, hi]",
            f"box[{axis}]",
        )
        _require(interval[0] < interval[1], "interval must satisfy lo < hi", f"box[{axis}]")

    _require("metric" in doc, "is required", "metric")
    _require("omega" in doc, "is required", "omega")
    _require(not ("samples" in doc and "grid" in doc), "give either samples or grid", "$")

    try:
        metric = TensorFieldSpec(
            dim=dim,
            valence=METRIC,
            components=_parse_components(doc, "metric", dim, coords, 2),
            name="g",
        )
    except ShapeError as e:
        raise SpecError(str(e), "metric") from e
    try:
        omega = TensorFieldSpec(
            dim=dim,
            valence=TWOFORM,
            components=_parse_components(doc, "omega", dim, coords, 2),
            name="omega",
        )
    except ShapeError as e:
        raise SpecError(str(e), "omega") from e

    seed_torsion = None
    if "seed_torsion" in doc:
        try:
            seed_torsion = TorsionFieldSpec(
                dim=dim,
                components=_parse_components(doc, "seed_torsion", dim, coords, 3),
            )
        except ShapeError as e:
            raise SpecError(str(e), "seed_torsion") from e

    try:
        if "samples" in doc:
            samples = doc["samples"]
            _require(
                isinstance(samples, list)
                and all(isinstance(s, list) and len(s) == dim and all(_is_number(v) for v in s) for s in samples),
                f"must be a list of {dim}-coordinate points",
                "samples",
            )
            domain = ChartDomain.from_points(box, samples)
        else:
            grid = doc.get("grid", DEFAULT_GRID)
            _require(
                (isinstance(grid, int) and not isinstance(grid, bool))
                or (isinstance(grid, list) and all(isinstance(c, int) for c in grid)),
                "must be an integer or a list of integers",
                "grid",
            )
            domain = ChartDomain.grid(box, grid)
    except ParameterError as e:
        raise SpecError(str(e), "samples" if "samples" in doc else "grid") from e

    return ManifoldSpec(
        dim=dim,
        coords=coords,
        domain=domain,
        metric=metric,
        omega=omega,
        seed_torsion=seed_torsion,
        name=str(doc.get("name", "")),
        document=dict(doc),
    )


def read_manifold_spec(path: Union[str, Path]) -> ManifoldSpec:
    """Load a spec from a JSON file. I/O errors propagate as ``OSError``."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise SpecError(f"not UTF-8 text: invalid byte at offset {e.start}", "$") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError(f"invalid JSON: {e.msg} (line {e.lineno}, column {e.colno})", "$") from e
    return load_manifold_spec(doc)


def validate_fields(spec: ManifoldSpec) -> List[str]:
    """
    Check the kind constraints of both fields at every sample point.

    Returns one diagnostic per failing point; an empty list means valid.
    """
    problems = []
    for index, p in enumerate(spec.domain.sample_points):
        where = f"sample {index} ({', '.join(repr(float(v)) for v in p)})"
        try:
            g = spec.metric.assemble(p)
            check_positive_definite(g)
            w = spec.omega.assemble(p)
            check_nondegenerate(w)
            if spec.seed_torsion is not None:
                spec.seed_torsion.evaluate(p)
        except (EvalError, SignatureError, DegenerateFormError) as e:
            problems.append(f"{where}: {e}")
        except KahlerSeqError as e:
            problems.append(f"{where}: {type(e).__name__}: {e}")
    for problem in problems:
        logger.debug("validation: %s", problem)
    return problems
