import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pncb.core import (
    PRESETS,
    CodebookSet,
    DegenerateError,
    FactorGraph,
    LabelError,
    OperatorMatrix,
    SchemaError,
    StructureError,
    build_codebooks,
    codebook_from_dict,
    codebook_to_dict,
    load_codebook,
    normalize_power,
    preset_4x6,
    save_codebook,
    superimpose,
    validate_codebook_dict,
)
from pncb.lppam import LpPamSpec
from pncb.mcbuild import binary_switching

from .helpers import make_codebooks, random_codebooks


def test_preset_structure(fg):
    assert (fg.K, fg.J, fg.N, fg.d_f) == (4, 6, 2, 3)
    assert fg.overload == 1.5
    assert (fg.F.sum(axis=0) == 2).all() and (fg.F.sum(axis=1) == 3).all()
    # first resource: users 1, 3, 5 (0-based 0, 2, 4) on slots psi_1, psi_2, psi_3
    np.testing.assert_array_equal(fg.users_on(0), [0, 2, 4])
    np.testing.assert_array_equal(fg.slots[0, [0, 2, 4]], [0, 1, 2])
    for k in range(fg.K):
        s = fg.slots[k, fg.users_on(k)]
        assert sorted(s.tolist()) == [0, 1, 2]
    for make in PRESETS.values():
        g = make()
        assert g.overload > 1


def test_preset_mapping_matrices(fg):
    psi = np.array([1, 2, 3])  # slot i -> value i + 1
    # V_j Psi_j as printed for the 4 x 6 placement
    expected = {
        0: [[1, 0], [0, 0], [0, 3], [0, 0]],
        1: [[0, 0], [1, 0], [0, 0], [0, 3]],
        2: [[2, 0], [0, 2], [0, 0], [0, 0]],
        3: [[0, 0], [0, 0], [2, 0], [0, 2]],
        4: [[3, 0], [0, 0], [0, 0], [0, 1]],
        5: [[0, 0], [3, 0], [0, 1], [0, 0]],
    }
    for j, V in expected.items():
        np.testing.assert_array_equal(fg.mapping_matrix(j, psi), V)


def test_graph_validation():
    with pytest.raises(StructureError):
        FactorGraph.from_incidence([[1, 1], [1, 0]])
    with pytest.raises(StructureError):
        FactorGraph([[1, 1], [1, 1]], [[0, 0], [0, 1]])


def test_superimpose_trivial_cases():
    g = FactorGraph.from_incidence(np.ones((1, 2), dtype=int))
    cbs = CodebookSet(np.zeros((2, 1, 2)), g)
    np.testing.assert_array_equal(superimpose(cbs, [0, 0]), [0])
    g2 = FactorGraph.from_incidence(np.eye(2, dtype=int))
    X = np.zeros((2, 2, 2))
    X[0, 0, :] = 1
    X[1, 1, :] = 1
    np.testing.assert_array_equal(superimpose(CodebookSet(X, g2), [0, 1]), [1, 1])
    with pytest.raises(LabelError):
        superimpose(cbs, [0, 2])
    with pytest.raises(LabelError):
        superimpose(cbs, [0])


def test_superimpose_matches_per_resource_sum(design, fg):
    rng = np.random.default_rng(3)
    for labels in [np.zeros(6, int)] + list(rng.integers(0, 4, (20, 6))):
        direct = np.array([sum(design.codebooks[j, k, labels[j]] for j in fg.users_on(k))
                           for k in range(fg.K)])
        np.testing.assert_allclose(superimpose(design, labels), direct, atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_superposition_is_additive_in_one_user(seed):
    rng = np.random.default_rng(seed)
    cbs = random_codebooks(rng)
    labels = rng.integers(0, 4, 6)
    j, m = rng.integers(0, 6), rng.integers(0, 4)
    other = labels.copy()
    other[j] = m
    diff = cbs.codebooks[j, :, m] - cbs.codebooks[j, :, labels[j]]
    np.testing.assert_allclose(superimpose(cbs, other) - superimpose(cbs, labels), diff, atol=1e-12)


def test_alphabet_closure(design):
    sc = design.superimposed
    assert sc.alphabet.shape == (4, 4**3)
    for labels, w in sc.iter_codewords(chunk=1000):
        for k in range(sc.K):
            assert np.isin(w[:, k], sc.alphabet[k]).all()
    assert len(sc) == 4**6


def test_build_codebooks_identity_operator():
    fg = preset_4x6()
    mc = binary_switching(LpPamSpec(4, 2).build(), 2)
    cbs = build_codebooks(mc, OperatorMatrix.identity(3), fg)
    assert cbs.support_consistent()
    for j in range(fg.J):
        np.testing.assert_array_equal(cbs.codebooks[j][fg.resources_of(j)], mc.matrix)


def test_build_codebooks_rotation_single_user():
    g = FactorGraph.from_incidence(np.ones((1, 1), dtype=int))
    C = np.array([[1.0, -1.0, 0.5, -0.5]])
    cbs = build_codebooks(C, OperatorMatrix((1.0,), (np.pi / 2,)), g)
    np.testing.assert_allclose(cbs.codebooks[0], 1j * C, atol=1e-15)
    np.testing.assert_allclose(np.abs(cbs.codebooks[0]), np.abs(C))


def test_build_codebooks_shape_errors(fg):
    with pytest.raises(StructureError):
        build_codebooks(np.ones((3, 4)), OperatorMatrix.identity(3), fg)
    with pytest.raises(StructureError):
        build_codebooks(np.ones((2, 4)), OperatorMatrix.identity(2), fg)
    with pytest.raises(ValueError):
        OperatorMatrix((1.0, 0.0), (0.0, 0.0))
    with pytest.raises(ValueError):
        OperatorMatrix((1.0,), (4.0,))


def test_support_consistency(design, fg):
    assert design.support_consistent()
    nz = np.abs(design.codebooks).max(axis=2) > 0
    np.testing.assert_array_equal(nz, fg.F.T == 1)


def test_average_energy_by_enumeration(design):
    e = np.mean([np.sum(np.abs(w) ** 2) for _, ws in design.superimposed.iter_codewords() for w in ws])
    assert design.average_energy() == pytest.approx(e, rel=1e-12)


def test_normalize_power():
    rng = np.random.default_rng(0)
    cbs = random_codebooks(rng)
    out, c = normalize_power(cbs, 6.0)
    direct = np.mean([np.sum(np.abs(w) ** 2) for _, ws in out.superimposed.iter_codewords() for w in ws])
    assert direct == pytest.approx(6.0, rel=1e-12)
    again, c2 = normalize_power(out, 6.0)
    assert c2 == pytest.approx(1.0, rel=1e-14)
    doubled, c3 = normalize_power(out.scaled(2.0), 6.0)
    assert c3 == pytest.approx(0.5, rel=1e-14)
    np.testing.assert_allclose(doubled.codebooks, out.codebooks, rtol=1e-14)
    with pytest.raises(DegenerateError):
        normalize_power(CodebookSet(np.zeros((6, 4, 4)), cbs.graph), 1.0)


def test_json_round_trip_is_bit_exact(tmp_path, design):
    path = save_codebook(design, tmp_path / "cb.json")
    back = load_codebook(path)
    np.testing.assert_array_equal(back.codebooks, design.codebooks)
    np.testing.assert_array_equal(back.graph.slots, design.graph.slots)
    assert json.loads(path.read_text())["schema"] == "scma-codebook/1"


def test_schema_errors_carry_pointers(design):
    doc = codebook_to_dict(design)
    bad = dict(doc, M="four")
    with pytest.raises(SchemaError) as e:
        validate_codebook_dict(bad)
    assert ("/M", "'four' is not of type 'integer'") in e.value.problems
    X = np.array(doc["codebooks"])
    X[0, 1] = 1.0  # user 0 does not use resource 1
    with pytest.raises(SchemaError) as e:
        codebook_from_dict(dict(doc, codebooks=X.tolist()))
    assert e.value.problems[0][0] == "/codebooks/0/1"


def test_power_budget_on_operators():
    cbs = make_codebooks()
    assert sum(cbs.metadata["energy"]) == pytest.approx(6.0, rel=1e-9)
