"""
Tests for the pointwise tensor algebra: symmetric part, torsion, index
lowering/raising and the distance used for periodicity.
"""

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import testing

from kahlerseq.config import DTYPE
from kahlerseq.errors import DegenerateFormError, ShapeError, SignatureError
from kahlerseq.tensors import (
    ANTISYMMETRIC,
    SYMMETRIC,
    BilinearFormValue,
    ConnectionCoeffs,
    as_connection,
    as_form,
    as_torsion,
    check_nondegenerate,
    check_positive_definite,
    lower_first_index,
    max_abs,
    max_abs_distance,
    raise_first_index,
    symmetric_part,
    torsion,
)
from tests.conftest import random_connection, random_spd, random_twoform

SEEDS = st.integers(min_value=0, max_value=2**32 - 1)


def _single(n, entries):
    gamma = torch.zeros(n, n, n, dtype=DTYPE)
    for (k, i, j), v in entries.items():
        gamma[k, i, j] = v
    return as_connection(gamma)


class TestSymmetricPartAndTorsion:
    """
    Tests the split of a connection into symmetric part and torsion.

    This suite verifies that:
    - Hand-computed examples come out exactly.
    - The decomposition gamma = sym + torsion / 2 holds entrywise.
    - Torsion is antisymmetric and vanishes on symmetric connections.
    """

    def test_zero_connection(self):
        zero = _single(2, {})
        assert max_abs(symmetric_part(zero)) == 0.0
        assert max_abs(torsion(zero)) == 0.0

    def test_symmetric_part_by_hand(self):
        # 1-based: gamma^2_12 = 3, gamma^2_21 = 1
        gamma = _single(2, {(1, 0, 1): 3.0, (1, 1, 0): 1.0})
        expected = _single(2, {(1, 0, 1): 2.0, (1, 1, 0): 2.0})
        testing.assert_close(symmetric_part(gamma).gamma, expected.gamma)

    def test_torsion_by_hand(self):
        gamma = _single(2, {(0, 0, 1): 1.0})
        t = torsion(gamma).t
        assert t[0, 0, 1] == 1.0
        assert t[0, 1, 0] == -1.0
        assert t.abs().sum() == 2.0

    @settings(max_examples=25, deadline=None)
    @given(seed=SEEDS)
    def test_decomposition_identity(self, seed):
        gen = torch.Generator().manual_seed(seed)
        gamma = random_connection(3, gen)
        rebuilt = symmetric_part(gamma).gamma + 0.5 * torsion(gamma).t
        assert max_abs_distance(rebuilt, gamma.gamma) <= 1e-15 * max(1.0, max_abs(gamma))

    @settings(max_examples=25, deadline=None)
    @given(seed=SEEDS)
    def test_torsion_of_symmetric_part_is_zero(self, seed):
        gen = torch.Generator().manual_seed(seed)
        gamma = random_connection(3, gen)
        assert max_abs(torsion(symmetric_part(gamma))) == 0.0
        t = torsion(gamma).t
        assert torch.equal(t, -t.transpose(-1, -2))

    def test_batched_connections(self, gen):
        gammas = torch.stack([random_connection(2, gen) for _ in range(3)])
        assert symmetric_part(gammas).shape == (3,)
        assert torsion(gammas).t.shape == (3, 2, 2, 2)


class TestLowerRaise:
    def test_identity_form_is_noop(self, gen):
        gamma = random_connection(2, gen)
        testing.assert_close(lower_first_index(gamma, torch.eye(2, dtype=DTYPE)), gamma.gamma)

    def test_scaled_identity_doubles(self, gen):
        gamma = random_connection(2, gen)
        testing.assert_close(lower_first_index(gamma, 2 * torch.eye(2, dtype=DTYPE)), 2 * gamma.gamma)

    def test_twoform_contraction_by_hand(self):
        gamma = _single(2, {(0, 0, 0): 1.0})
        w = torch.tensor([[0.0, 1.0], [-1.0, 0.0]], dtype=DTYPE)
        lowered = lower_first_index(gamma, w)
        expected = torch.zeros(2, 2, 2, dtype=DTYPE)
        expected[1, 0, 0] = -1.0
        testing.assert_close(lowered, expected)

    @settings(max_examples=25, deadline=None)
    @given(seed=SEEDS, n=st.sampled_from([2, 4]), kind=st.sampled_from([SYMMETRIC, ANTISYMMETRIC]))
    def test_raise_inverts_lower(self, seed, n, kind):
        gen = torch.Generator().manual_seed(seed)
        b = random_spd(n, gen) if kind == SYMMETRIC else random_twoform(n, gen)
        gamma = random_connection(n, gen)
        back = raise_first_index(lower_first_index(gamma, b), b)
        assert max_abs_distance(back, gamma) <= 1e-12 * max(1.0, max_abs(gamma))

    def test_degenerate_form_rejected(self, gen):
        gamma = random_connection(2, gen)
        with pytest.raises(DegenerateFormError):
            lower_first_index(gamma, torch.zeros(2, 2, dtype=DTYPE))


class TestMaxAbsDistance:
    def test_equal_is_zero(self, gen):
        gamma = random_connection(2, gen)
        assert max_abs_distance(gamma, gamma) == 0.0

    def test_single_entry(self):
        assert max_abs_distance(_single(2, {}), _single(2, {(1, 1, 0): 5.0})) == 5.0

    @settings(max_examples=25, deadline=None)
    @given(seed=SEEDS)
    def test_symmetric(self, seed):
        gen = torch.Generator().manual_seed(seed)
        a, b = random_connection(3, gen), random_connection(3, gen)
        assert max_abs_distance(a, b) == max_abs_distance(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            max_abs_distance(_single(2, {}), _single(3, {}))


class TestFormValues:
    """
    Tests validation of bilinear form values.

    This suite verifies that:
    - Metrics must be exactly symmetric and two-forms exactly antisymmetric.
    - Forms under the scale-invariant determinant threshold are rejected.
    - Positive definiteness is checked through a Cholesky factorization.
    """

    def test_valid_forms(self):
        assert as_form(torch.eye(2, dtype=DTYPE)).kind == SYMMETRIC
        w = torch.tensor([[0.0, 3.0], [-3.0, 0.0]], dtype=DTYPE)
        assert as_form(w, ANTISYMMETRIC).dim == 2

    @pytest.mark.parametrize(
        "matrix, kind",
        [
            ([[1.0, 0.5], [0.4, 1.0]], SYMMETRIC),
            ([[0.0, 1.0], [1.0, 0.0]], ANTISYMMETRIC),
            ([[1.0, 0.0], [0.0, 1.0]], "hermitian"),
        ],
    )
    def test_kind_violations(self, matrix, kind):
        with pytest.raises(ShapeError):
            as_form(torch.tensor(matrix, dtype=DTYPE), kind)

    @pytest.mark.parametrize("scale", [1e-6, 1.0, 1e6])
    def test_degeneracy_is_scale_invariant(self, scale):
        nearly = scale * torch.tensor([[1.0, 1.0], [1.0, 1.0 + 1e-14]], dtype=DTYPE)
        with pytest.raises(DegenerateFormError):
            check_nondegenerate(nearly)
        check_nondegenerate(scale * torch.eye(2, dtype=DTYPE))

    def test_batched_form(self):
        matrices = torch.stack([torch.eye(2, dtype=DTYPE), 2 * torch.eye(2, dtype=DTYPE)])
        form = BilinearFormValue(matrix=matrices, kind=SYMMETRIC, shape=(2,))
        assert form.shape == (2,)

    def test_positive_definite(self):
        factor = check_positive_definite(4 * torch.eye(2, dtype=DTYPE))
        testing.assert_close(factor, 2 * torch.eye(2, dtype=DTYPE))
        with pytest.raises(SignatureError):
            check_positive_definite(torch.diag(torch.tensor([1.0, -1.0], dtype=DTYPE)))


class TestContainers:
    def test_connection_needs_cubic_event_shape(self):
        with pytest.raises(ShapeError, match="event shape"):
            ConnectionCoeffs(gamma=torch.zeros(2, 2, dtype=DTYPE), shape=())

    def test_connection_rejects_nonfinite(self):
        gamma = torch.zeros(2, 2, 2, dtype=DTYPE)
        gamma[0, 0, 0] = float("nan")
        with pytest.raises(ShapeError, match="non-finite"):
            as_connection(gamma)

    def test_torsion_must_be_antisymmetric(self):
        with pytest.raises(ShapeError):
            as_torsion(torch.ones(2, 2, 2, dtype=DTYPE))
