import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pncb.lppam import LpPamSpec
from pncb.mcbuild import (
    MotherConstellation,
    PermutationSearchConfig,
    _climb,
    _profile,
    binary_switching,
    codeword_distinctness_check,
    med,
)


def exhaustive_med(values):
    """Best MED of [values; values[perm]] over all permutations, at unit average codeword energy."""
    values = np.asarray(values, dtype=float)
    M = len(values)
    perms = np.array(list(itertools.permutations(range(M))))
    second = values[perms]  # P x M
    i, k = np.triu_indices(M, 1)
    d2 = (values[i] - values[k]) ** 2 + (second[:, i] - second[:, k]) ** 2
    scale = np.sqrt(2 * np.mean(values**2))
    return np.sqrt(d2.min(axis=1).max()) / scale


def test_med_examples():
    assert med(np.array([[0, 0], [3, 4]])) == 5.0
    assert med(np.array([0 + 0j, 3 + 4j])) == 5.0
    assert med(np.array([[1, 2], [5, 5], [1, 2]])) == 0.0
    with pytest.raises(ValueError):
        med(np.array([[1.0, 2.0]]))


def test_med_matches_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(20):
        C = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
        brute = min(np.linalg.norm(C[:, a] - C[:, b]) for a, b in itertools.combinations(range(4), 2))
        mc = MotherConstellation(C, ((0, 1, 2, 3),) * 2)
        assert mc.med() == pytest.approx(brute, rel=1e-14)


def test_single_dimension_is_identity():
    cm = LpPamSpec(4, 2).build()
    mc = binary_switching(cm, 1)
    assert mc.permutations == ((0, 1, 2, 3),)
    np.testing.assert_allclose(mc.matrix[0].real, cm.values)


def test_m4_t2_pairs_overlapped_points_apart():
    cm = LpPamSpec(4, 2).build()
    mc = binary_switching(cm, 2)
    assert codeword_distinctness_check(mc)[0]
    row0, row1 = mc.matrix.real
    for v in np.unique(row0):
        # the two copies of each first-dimension level take different second-dimension values
        assert len(np.unique(row1[row0 == v])) == 2
    assert mc.med() == pytest.approx(exhaustive_med(cm.values), rel=1e-12)
    assert mc.average_energy() == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("T,alpha", [(2, ()), (3, ()), (4, (1.0,)), (4, (2.5,))])
def test_bsa_is_optimal_at_m4(T, alpha):
    cm = LpPamSpec(4, T, alpha).build()
    assert binary_switching(cm, 2).med() == pytest.approx(exhaustive_med(cm.values), rel=1e-12)


@pytest.mark.parametrize("T,alpha", [(2, ()), (4, (2.0,)), (5, (1.7,)), (8, (2.0, 3.0, 4.0))])
def test_bsa_near_exhaustive_at_m8(T, alpha):
    cm = LpPamSpec(8, T, alpha).build()
    assert binary_switching(cm, 2).med() >= 0.99 * exhaustive_med(cm.values)


def test_bsa_beats_identity_and_is_deterministic():
    cm = LpPamSpec(8, 4, (2.0,)).build()
    a = binary_switching(cm, 3, PermutationSearchConfig(rng_seed=5))
    b = binary_switching(cm, 3, PermutationSearchConfig(rng_seed=5))
    ident = MotherConstellation.from_permutations(cm, [np.arange(8)] * 3)
    assert a.permutations == b.permutations
    assert a.med() >= ident.med()
    assert a.permutations[0] == tuple(range(8))
    for n, p in enumerate(a.permutations):
        np.testing.assert_allclose(a.matrix[n].real * np.sqrt(3), cm.values[list(p)], rtol=1e-12)


@given(st.integers(0, 2**31))
def test_climb_never_decreases_med(seed):
    rng = np.random.default_rng(seed)
    cm = LpPamSpec(8, 4, (2.0,)).build().values
    start = [np.arange(8), rng.permutation(8)]
    before = _profile(np.stack([cm[p] for p in start]))
    for sweeps in (1, 2, 3):
        perms, prof = _climb(cm, [p.copy() for p in start], sweeps)
        assert prof[0] >= before[0]
        before = prof


def test_distinctness_check():
    cm = LpPamSpec(4, 2).build()
    ident = MotherConstellation.from_permutations(cm, [np.arange(4)] * 2)
    ok, bad = codeword_distinctness_check(ident)
    assert not ok and (0, 1) in bad
    rng = np.random.default_rng(1)
    for _ in range(10):
        C = rng.standard_normal((2, 8)) + 0j
        mc = MotherConstellation(C, ((),))
        brute = all(not np.array_equal(C[:, a], C[:, b]) for a, b in itertools.combinations(range(8), 2))
        assert codeword_distinctness_check(mc)[0] == brute
    assert codeword_distinctness_check(binary_switching(cm, 2))[0]
