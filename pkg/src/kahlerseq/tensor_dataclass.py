from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Tuple, Union, get_args

from torch import Tensor
from torch.utils import _pytree as pytree
from typing_extensions import Self, dataclass_transform

from kahlerseq.tensor_container import ShapeType, TensorContainer
from kahlerseq.utils import PytreeRegistered

TDCompatible = Union[Tensor, TensorContainer]
DATACLASS_ARGS = {"init", "repr", "eq", "order", "unsafe_hash", "frozen"}


@dataclass_transform(eq_default=False)
class TensorDataclassTransform:
    """This class is just needed for type hints. Directly decorating TensorDataClass does not work."""

    pass


class TensorDataClass(TensorContainer, PytreeRegistered, TensorDataclassTransform):
    """A dataclass-based container of pointwise tensors.

    Subclasses declare their tensor fields and metadata as annotations and are
    converted into dataclasses automatically. Tensor fields become PyTree leaves;
    every other annotated field is metadata and travels in the PyTree context.

    Example:
        >>> class Jet(TensorDataClass):
        ...     value: torch.Tensor
        ...     partials: torch.Tensor
        ...     kind: str = "symmetric"
        >>>
        >>> jet = Jet(value=torch.eye(2, dtype=torch.float64),
        ...           partials=torch.zeros(2, 2, 2, dtype=torch.float64),
        ...           shape=())
        >>> batched = torch.stack([jet, jet])   # shape (2,)

    Validation runs in ``__post_init__``: batch-shape and dtype checks from
    :class:`TensorContainer`, then the subclass ``_check_invariants`` hook.

    Stacking requires equal metadata across the stacked instances.

    Raises:
        TypeError: If a subclass asks for ``eq=True`` or redefines ``shape``.
    """

    # Declared for static analyzers; __init_subclass__ adds it to every subclass.
    shape: ShapeType

    def __init_subclass__(cls, **kwargs):
        annotations = cls._get_annotations(TensorDataClass)

        cls.__annotations__ = {
            "shape": ShapeType,
            **annotations,
        }

        dc_kwargs = {}
        for k in list(kwargs.keys()):
            if k in DATACLASS_ARGS:
                dc_kwargs[k] = kwargs.pop(k)

        super().__init_subclass__(**kwargs)

        if dc_kwargs.get("eq") is True:
            raise TypeError(
                f"Cannot create {cls.__name__} with eq=True. TensorDataClass requires eq=False."
            )
        dc_kwargs.setdefault("eq", False)
        dc_kwargs.setdefault("repr", False)

        dataclass(cls, **dc_kwargs)

    def __post_init__(self):
        TensorContainer.__init__(self, self.shape)

    @classmethod
    def _get_annotations(cls, base_cls):
        annotations = {}

        # Only annotations of base_cls subclasses count; TensorContainer's own
        # annotations are infrastructure.
        mro = list(reversed(cls.__mro__))
        mro_excluding_tensor_base = mro[mro.index(base_cls) + 1 :]
        for base in mro_excluding_tensor_base:
            base_annotations = base.__dict__.get("__annotations__", {})

            if issubclass(base, base_cls):
                base_annotations = {
                    k: v for k, v in base_annotations.items() if k != "shape"
                }

            annotations.update(base_annotations)

        if "shape" in annotations:
            raise TypeError(f"Cannot define reserved fields in {cls.__name__}.")

        return annotations

    def _get_tensor_attributes(self) -> Dict[str, TDCompatible]:
        annotations = self._get_annotations(TensorDataClass)
        return {
            k: getattr(self, k)
            for k in annotations
            if isinstance(getattr(self, k), get_args(TDCompatible))
        }

    def _get_meta_attributes(self) -> Dict[str, Any]:
        annotations = self._get_annotations(TensorDataClass)
        return {
            k: getattr(self, k)
            for k in annotations
            if not isinstance(getattr(self, k), get_args(TDCompatible))
        }

    def _pytree_flatten(self) -> Tuple[List[Any], Any]:
        tensor_attributes = self._get_tensor_attributes()
        flat_names = list(tensor_attributes.keys())
        flat_values = list(tensor_attributes.values())

        batch_ndim = len(self.shape)
        event_ndims = tuple(leaf.ndim - batch_ndim for leaf in flat_values)
        context = (flat_names, event_ndims, self._get_meta_attributes())

        return flat_values, context

    def _pytree_flatten_with_keys_fn(
        self,
    ) -> tuple[list[tuple[pytree.KeyEntry, Any]], Any]:
        flat_values, context = self._pytree_flatten()
        flat_names = context[0]
        name_value_tuples = [
            (pytree.GetAttrKey(k), v) for k, v in zip(flat_names, flat_values)
        ]
        return name_value_tuples, context  # type: ignore[return-value]

    @classmethod
    def _pytree_unflatten(cls, leaves: Iterable[Any], context: pytree.Context) -> Self:
        flat_names, event_ndims, meta_data = context

        leaves = list(leaves)

        # The batch shape after stack/index is whatever precedes the first
        # leaf's event dimensions.
        first_leaf = leaves[0]
        if event_ndims[0] == 0:
            reconstructed_shape = tuple(first_leaf.shape)
        else:
            reconstructed_shape = tuple(first_leaf.shape[: -event_ndims[0]])

        return cls(**dict(zip(flat_names, leaves)), **meta_data, shape=reconstructed_shape)

