"""
Tests for the TensorContainer base: tree mapping, indexing over sample points,
stacking and the representation.

The containers under test are the package's own pointwise containers; batch
dimensions enumerate points and event dimensions hold the index structure.
"""

import pytest
import torch
import torch.utils._pytree as pytree
from torch import testing

from kahlerseq.config import DTYPE
from kahlerseq.fields import FieldJet
from kahlerseq.tensor_container import TensorContainer
from kahlerseq.tensors import ANTISYMMETRIC, SYMMETRIC, ConnectionCoeffs
from tests.conftest import random_metric_jet


def _jets(count=5, n=2):
    gen = torch.Generator().manual_seed(1)
    return torch.stack([random_metric_jet(n, gen) for _ in range(count)])


class TestTreeMap:
    def test_tree_map_behaves_like_pytree_tree_map(self):
        jets = _jets()
        result = TensorContainer._tree_map(lambda x: x * 2, jets)
        for res_leaf, leaf in zip(pytree.tree_leaves(result), pytree.tree_leaves(jets)):
            testing.assert_close(res_leaf, leaf * 2)
        assert result.kind == jets.kind

    def test_tree_map_exception_names_the_path(self):
        jets = _jets()

        def func_with_error(x):
            if x is jets.partials:
                raise ValueError("simulated failure")
            return x

        with pytest.raises(ValueError) as excinfo:
            TensorContainer._tree_map(func_with_error, jets)

        assert "Error at path partials" in str(excinfo.value)


class TestGetItem:
    """
    Tests indexing a batch of jets along the sample-point dimension.

    This suite verifies that:
    - An integer index yields a single-point container with batch shape ().
    - Slices and ellipses act on batch dimensions only.
    - Metadata survives indexing.
    - Indexing a single point with a bare key is rejected.
    """

    def test_integer_index_gives_single_point(self):
        jets = _jets()
        jet = jets[3]
        assert jet.shape == ()
        assert jet.kind == SYMMETRIC
        testing.assert_close(jet.value, jets.value[3])
        testing.assert_close(jet.partials, jets.partials[3])

    def test_slice_keeps_batch_dimension(self):
        jets = _jets()
        assert jets[1:4].shape == (3,)
        assert jets[1:4].value.shape == (3, 2, 2)

    @pytest.mark.parametrize(
        "key, expected_shape",
        [
            ((Ellipsis,), (5,)),
            ((Ellipsis, 0), ()),
            ((0, Ellipsis), ()),
        ],
    )
    def test_ellipsis_expands_over_batch_dims(self, key, expected_shape):
        jets = _jets()
        assert jets[key].shape == expected_shape
        assert jets[key].value.shape == expected_shape + (2, 2)

    def test_two_ellipses_rejected(self):
        with pytest.raises(IndexError, match="single ellipsis"):
            _jets()[..., ...]

    def test_single_point_rejects_bare_index(self):
        jet = _jets()[0]
        with pytest.raises(IndexError, match="0-dimensional"):
            jet[0]


class TestStack:
    """
    Tests torch.stack on pointwise containers.

    This suite verifies that:
    - Stacking single points gives a (P,) batch in input order.
    - Containers of different batch shape cannot be stacked.
    - Containers with different metadata cannot be stacked.
    - Stacking an empty list raises.
    """

    def test_stack_single_points(self):
        gen = torch.Generator().manual_seed(2)
        jets = [random_metric_jet(3, gen) for _ in range(4)]
        stacked = torch.stack(jets)
        assert isinstance(stacked, FieldJet)
        assert stacked.shape == (4,)
        for i, jet in enumerate(jets):
            testing.assert_close(stacked.value[i], jet.value)

    @pytest.mark.parametrize("dim", [1, -3])
    def test_stack_invalid_dim_raises(self, dim):
        jets = [_jets(2)[0], _jets(2)[1]]
        with pytest.raises(IndexError, match="Dimension out of range"):
            torch.stack(jets, dim=dim)

    def test_stack_mismatched_shapes_raises(self):
        jets = _jets(3)
        with pytest.raises(ValueError, match="equal size"):
            torch.stack([jets, jets[0]])

    def test_stack_mismatched_metadata_raises(self):
        n = 2
        sym = FieldJet(
            value=torch.eye(n, dtype=DTYPE),
            partials=torch.zeros(n, n, n, dtype=DTYPE),
            kind=SYMMETRIC,
            shape=(),
        )
        w = torch.tensor([[0.0, 1.0], [-1.0, 0.0]], dtype=DTYPE)
        anti = FieldJet(value=w, partials=torch.zeros(n, n, n, dtype=DTYPE), kind=ANTISYMMETRIC, shape=())
        with pytest.raises((ValueError, RuntimeError)):
            torch.stack([sym, anti])

    def test_stack_empty_raises(self):
        with pytest.raises((RuntimeError, TypeError)):
            torch.stack([])


class TestRepr:
    def test_repr_lists_shape_and_leaves(self):
        coeffs = ConnectionCoeffs(gamma=torch.zeros(2, 2, 2, dtype=DTYPE), shape=())
        text = repr(coeffs)
        assert text.startswith("ConnectionCoeffs(")
        assert "shape=()" in text
        assert "gamma: Tensor(shape=(2, 2, 2), dtype=torch.float64)" in text


class TestValidation:
    def test_ndim(self):
        assert _jets().ndim == 1
        assert _jets()[0].ndim == 0

    def test_dtype_checked(self):
        with pytest.raises(RuntimeError, match="Invalid dtype"):
            ConnectionCoeffs(gamma=torch.zeros(2, 2, 2), shape=())

    def test_batch_shape_checked(self):
        with pytest.raises(RuntimeError, match="Invalid shape"):
            ConnectionCoeffs(gamma=torch.zeros(3, 2, 2, 2, dtype=DTYPE), shape=(4,))
