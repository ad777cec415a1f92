from __future__ import annotations

import functools
import textwrap
import threading
from abc import abstractmethod
from contextlib import contextmanager
from typing import Any, Callable, Iterable, List, Optional, Tuple, Type, Union

import torch
import torch.utils._pytree as pytree
from torch import Tensor
from torch.utils._pytree import Context, KeyEntry, PyTree
from typing_extensions import Self, TypeAlias

from kahlerseq.config import DTYPE

HANDLED_FUNCTIONS = {}

TCCompatible: TypeAlias = Union[torch.Tensor, "TensorContainer"]
ShapeType: TypeAlias = Tuple[int, ...]


def implements(torch_function):
    """Register a torch function override for TensorContainer."""

    @functools.wraps(torch_function)
    def decorator(func):
        HANDLED_FUNCTIONS[torch_function] = func
        return func

    return decorator


class TensorContainer:
    """Base class for PyTree-registered containers of pointwise tensors.

    A container groups tensors that share leading *batch* dimensions (the
    container ``shape``) and carry their own trailing *event* dimensions. In this
    package the batch dimensions enumerate evaluation points (shape ``()`` for a
    single point, ``(P,)`` for P sample points) and the event dimensions hold the
    index structure of the geometric object, e.g. ``(n, n, n)`` for Christoffel
    symbols or ``(n, n)`` for a bilinear form.

    Example:
        >>> jets.shape == (25,)                 # 25 sample points
        >>> jets.value.shape == (25, 2, 2)      # event dims (2, 2)
        >>> jets[3].value.shape == (2, 2)       # single point, batch shape ()

    Validation:
        - every tensor leaf must start with the container's batch shape
        - every tensor leaf must be ``torch.float64``
        - subclasses add their own checks through ``_check_invariants``

    Validation can be switched off for hot loops with
    :meth:`unsafe_construction`.

    Args:
        shape: Batch shape shared by all tensor leaves.
        validate_args: Run validation after construction.

    Raises:
        RuntimeError: If a leaf has an incompatible batch shape or dtype.
    """

    shape: ShapeType

    # Thread-local storage for unsafe construction flag
    _validation_disabled = threading.local()

    def __init__(self, shape: ShapeType, validate_args: bool = True):
        super().__init__()

        self.shape = tuple(shape)

        if validate_args:
            self._validate()

    @classmethod
    @contextmanager
    def unsafe_construction(cls):
        """Context manager to disable validation during construction.

        Use this where shapes are known to be consistent, e.g. when rebuilding a
        container from leaves that were just produced by a validated one.

        Example:
            >>> with TensorContainer.unsafe_construction():
            ...     coeffs = ConnectionCoeffs(gamma=g, shape=())
        """
        old_value = getattr(cls._validation_disabled, "value", False)
        cls._validation_disabled.value = True
        try:
            yield
        finally:
            cls._validation_disabled.value = old_value

    @classmethod
    def validation_enabled(cls) -> bool:
        return not getattr(cls._validation_disabled, "value", False)

    @abstractmethod
    def _pytree_flatten(self) -> tuple[list[Any], Context]:
        pass

    @abstractmethod
    def _pytree_flatten_with_keys_fn(
        self,
    ) -> tuple[list[tuple[KeyEntry, Any]], Any]:
        pass

    @classmethod
    @abstractmethod
    def _pytree_unflatten(
        cls: Type[Self], leaves: Iterable[Any], context: Context
    ) -> PyTree:
        pass

    @classmethod
    def __torch_function__(cls, func, types, args=(), kwargs=None):
        if kwargs is None:
            kwargs = {}
        if func not in HANDLED_FUNCTIONS or not all(
            issubclass(t, (Tensor, TensorContainer)) for t in types
        ):
            return NotImplemented
        return HANDLED_FUNCTIONS[func](*args, **kwargs)

    @classmethod
    def _tree_map(
        cls,
        func: Callable[..., Any],
        tree: PyTree,
        *rests: PyTree,
        is_leaf: Optional[Callable[[PyTree], bool]] = None,
    ) -> PyTree:
        def wrapped_func(keypath, x, *xs):
            try:
                return func(x, *xs)
            except Exception as e:
                path = cls._format_path(keypath)
                message = f"Error at path {path}: {type(e).__name__}: {e}"
                raise type(e)(message) from e

        return pytree.tree_map_with_path(wrapped_func, tree, *rests, is_leaf=is_leaf)

    @classmethod
    def _is_shape_compatible(cls, parent: TensorContainer, child: TCCompatible):
        return tuple(child.shape[: parent.ndim]) == tuple(parent.shape)

    def _validate_shape(self, value):
        if not self._is_shape_compatible(self, value):
            raise RuntimeError(
                f"Invalid shape {tuple(value.shape)}. Expected shape that is compatible to {self.shape}"
            )

    def _validate_dtype(self, value):
        if isinstance(value, Tensor) and value.dtype != DTYPE:
            raise RuntimeError(f"Invalid dtype {value.dtype}. Expected {DTYPE}")

    def _validate(self):
        if not self.validation_enabled():
            return

        key_value, _ = self._pytree_flatten_with_keys_fn()

        for k, v in key_value:
            try:
                self._validate_shape(v)
                self._validate_dtype(v)
            except RuntimeError as e:
                raise RuntimeError(f"Validation error at key {k}: {e.args}")

        self._check_invariants()

    def _check_invariants(self) -> None:
        """Hook for subclass-specific checks on event dimensions."""

    @property
    def ndim(self):
        return len(self.shape)

    def get_number_of_consuming_dims(self, item) -> int:
        if item is Ellipsis or item is None:
            return 0
        if isinstance(item, torch.Tensor) and item.dtype == torch.bool:
            return item.ndim

        return 1

    def transform_ellipsis_index(self, shape: tuple[int, ...], idx: tuple) -> tuple:
        """
        Replace an ellipsis by explicit slices over the *batch* dimensions.

        A bare ``...`` forwarded to the leaves would also cover their event
        dimensions; expanding it against the batch shape keeps indexing confined
        to the points.
        """
        if Ellipsis not in idx:
            return idx

        if sum(1 for item in idx if item is Ellipsis) > 1:
            raise IndexError("an index can only have a single ellipsis ('...')")

        ellipsis_pos = idx.index(Ellipsis)

        num_consuming_indices = sum(
            self.get_number_of_consuming_dims(item) for item in idx
        )

        rank = len(shape)

        if num_consuming_indices > rank:
            raise IndexError(
                f"too many indices for container: batch shape is {rank}-dimensional, "
                f"but {num_consuming_indices} were indexed"
            )

        ellipsis_replacement = (slice(None),) * (rank - num_consuming_indices)

        return idx[:ellipsis_pos] + ellipsis_replacement + idx[ellipsis_pos + 1 :]

    @classmethod
    def _format_path(cls, path: pytree.KeyPath) -> str:
        """Helper to format a PyTree KeyPath into a readable string."""
        parts = []
        for entry in path:
            if isinstance(entry, tuple):
                parts.append(cls._format_path(entry))
            else:
                parts.append(str(entry))

        formatted_path = "".join(parts)
        if formatted_path.startswith("."):
            formatted_path = formatted_path[1:]
        return formatted_path

    def __repr__(self) -> str:
        indent = "    "

        def _format_item(key, value):
            if isinstance(value, Tensor):
                content = f"Tensor(shape={tuple(value.shape)}, dtype={value.dtype})"
            else:
                content = repr(value)
            return f"{key}: {content}"

        key_value_pairs, _ = self._pytree_flatten_with_keys_fn()
        items_str = "\n".join(_format_item(k, v) for k, v in key_value_pairs)

        return (
            f"{self.__class__.__name__}(\n"
            f"{indent}shape={self.shape},\n"
            f"{indent}items=\n{textwrap.indent(items_str, indent * 2)}\n"
            f")"
        )

    def __getitem__(self: Self, key: Any) -> Self:
        """Index into the container along batch dimensions.

        Example:
            >>> jets.shape == (25,)
            >>> jets[0].shape == ()
            >>> jets[2:5].shape == (3,)
        """
        if isinstance(key, tuple):
            key = self.transform_ellipsis_index(self.shape, key)
        elif self.ndim == 0:
            raise IndexError(
                "Cannot index a 0-dimensional TensorContainer with a single index. "
                "Use an empty tuple for a single point."
            )
        return TensorContainer._tree_map(lambda x: x[key], self)


@implements(torch.stack)
def _stack(
    tensors: Union[Tuple[TensorContainer, ...], List[TensorContainer]], dim: int = 0
) -> TensorContainer:
    if not tensors:
        raise RuntimeError("stack expects a non-empty TensorList")

    first_tc = tensors[0]
    batch_ndim = first_tc.ndim

    if dim < 0:
        dim = dim + batch_ndim + 1

    if dim < 0 or dim > batch_ndim:
        raise IndexError("Dimension out of range")

    for t in tensors:
        if t.shape != first_tc.shape:
            raise ValueError("stack expects each TensorContainer to be equal size")

    # Metadata must agree across containers; pytree enforces equal contexts.
    return TensorContainer._tree_map(lambda *x: torch.stack(x, dim), *tensors)
