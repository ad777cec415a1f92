from __future__ import annotations

import os
from abc import abstractmethod
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, List, Sequence, Tuple, Type, TypeVar

import torch.utils._pytree as pytree
from torch.utils._pytree import Context, KeyEntry, PyTree

from kahlerseq.errors import ParameterError

_PytreeRegistered = TypeVar("_PytreeRegistered", bound="PytreeRegistered")
_T = TypeVar("_T")
_R = TypeVar("_R")

THREADS_ENV = "KSQ_THREADS"


class PytreeRegistered:
    """
    A mixin class that automatically registers any of its subclasses
    with the PyTorch PyTree system upon definition.
    """

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)

        pytree.register_pytree_node(
            cls,
            cls._pytree_flatten,
            cls._pytree_unflatten,
            flatten_with_keys_fn=cls._pytree_flatten_with_keys_fn,
        )

    @abstractmethod
    def _pytree_flatten(self) -> Tuple[List[Any], Context]:
        pass

    @abstractmethod
    def _pytree_flatten_with_keys_fn(
        self,
    ) -> Tuple[List[Tuple[KeyEntry, Any]], Any]:
        pass

    @classmethod
    @abstractmethod
    def _pytree_unflatten(
        cls: Type[_PytreeRegistered], leaves: Iterable[Any], context: Context
    ) -> PyTree:
        pass


def worker_count() -> int:
    """
    Number of workers for per-point evaluation.

    Reads ``KSQ_THREADS`` when set; otherwise uses min(4, cpu count).
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return max(1, min(4, os.cpu_count() or 1))
    try:
        value = int(raw)
    except ValueError:
        raise ParameterError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    if value < 1:
        raise ParameterError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def map_points(
    func: Callable[[_T], _R], items: Sequence[_T], workers: int | None = None
) -> List[_R]:
    """Apply ``func`` to every item, preserving input order in the result."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))
