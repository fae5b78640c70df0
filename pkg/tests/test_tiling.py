import json

import networkx as nx
import numpy as np
import pytest

from tilepile.exceptions import ConditionAViolated, NotReflectionSymmetric, SpecError
from tilepile.library import get_family, get_spec
from tilepile.sandpile import group_order
from tilepile.tiling import (TilingSpec, build_open, build_torus, check_condition_A, check_reflection,
                             quotient_graph)

from conftest import PLANAR


def knight_spec():
    edges = [(0, 0, (1, 0), 1), (0, 0, (0, 1), 1), (0, 0, (1, 2), 1)]
    return TilingSpec([[1, 0], [0, 1]], [[0, 0]], edges, name="knight")


def diagonal_spec():
    edges = [(0, 0, (1, 0), 1), (0, 0, (0, 1), 1), (0, 0, (1, 1), 1)]
    return TilingSpec([[1, 0], [0, 1]], [[0, 0]], edges, name="diagonal")


class TestBuildTorus:
    def test_square_m2(self):
        g = build_torus(get_spec("square"), 2)
        assert g.n_vertices == 4
        assert np.all(g.degree == 4)
        assert g.sink == 0

    def test_hex_m3_is_cubic(self):
        g = build_torus(get_spec("hex"), 3)
        assert g.n_vertices == 18
        assert np.all(g.degree == 3)

    def test_tri_m4_order_matches_spanning_trees(self):
        g = build_torus(get_spec("tri"), 4)
        assert g.n_vertices == 16 and np.all(g.degree == 6)
        G = nx.from_scipy_sparse_array(g.adjacency, parallel_edges=True, create_using=nx.MultiGraph)
        trees = nx.number_of_spanning_trees(G)
        assert group_order(g) == round(trees)

    @pytest.mark.parametrize("name", ["square", "triangular", "hexagonal", "tetrakis", "fcc", "Z3"])
    def test_vertex_count_and_handshake(self, name):
        spec = get_spec(name)
        m = 4
        g = build_torus(spec, m)
        assert g.n_vertices == spec.n_cells * m ** spec.dim
        A = g.adjacency
        assert (A != A.T).nnz == 0
        assert g.degree.sum() == A.sum()
        assert np.array_equal(np.asarray(A.sum(axis=1)).ravel(), g.degree)

    def test_rejects_self_loops(self):
        with pytest.raises(ValueError, match="self-loop"):
            build_torus(knight_spec(), 1)

    def test_relabelled_spec_hash(self):
        s1 = get_spec("hex")
        d = s1.to_dict()
        g1 = build_torus(s1, 3)
        g2 = build_torus(TilingSpec.from_dict(json.loads(json.dumps(d))), 3)
        assert g1.graph_hash() == g2.graph_hash()


class TestBuildOpen:
    def test_square_m3(self):
        g = build_open(get_spec("square"), get_family("square"), 3)
        assert g.n_vertices == 5
        A = g.adjacency.toarray()
        assert np.all(A[0, 1:] == 2)  # every interior vertex is a corner
        assert np.all(g.degree[1:] == 4)

    @pytest.mark.parametrize("name", PLANAR)
    def test_interior_degrees_match_tiling(self, name):
        spec = get_spec(name)
        g = build_open(spec, get_family(name), 6)
        for v in g.nonsink:
            assert g.degree[v] == spec.degree[g.cells[v]]

    def test_d4_builds(self):
        g = build_open(get_spec("D4"), get_family("D4"), 2)
        assert g.n_vertices > 1

    def test_condition_a_violation(self):
        with pytest.raises(ConditionAViolated):
            build_open(knight_spec(), get_family("square"), 3)

    def test_reflection_violation(self):
        with pytest.raises(NotReflectionSymmetric):
            build_open(diagonal_spec(), get_family("square"), 3)


class TestPredicates:
    @pytest.mark.parametrize("name", PLANAR + ["D4", "Z3"])
    def test_builtin_families_satisfy_a(self, name):
        assert check_condition_A(get_spec(name), get_family(name))
        assert check_reflection(get_spec(name), get_family(name))

    def test_knight_crosses(self):
        assert not check_condition_A(knight_spec(), get_family("square"))


class TestQuotient:
    def test_square(self):
        q = quotient_graph(get_spec("square"))
        assert q.n_states == 1
        assert sorted(t.displacement for t in q.transitions) == [(-1, 0), (0, -1), (0, 1), (1, 0)]

    def test_hex(self):
        q = quotient_graph(get_spec("hex"))
        assert q.n_states == 2 and len(q.transitions) == 6

    def test_fcc(self):
        q = quotient_graph(get_spec("fcc"))
        assert q.n_states == 1 and len(q.transitions) == 12

    @pytest.mark.parametrize("name", PLANAR + ["fcc", "D4"])
    def test_row_stochastic(self, name):
        P = quotient_graph(get_spec(name)).transition_matrix()
        np.testing.assert_allclose(P.sum(axis=1), 1.0)


def test_spec_roundtrip_and_errors():
    spec = get_spec("tetrakis")
    again = TilingSpec.from_dict(spec.to_dict())
    assert again.spec_hash() == spec.spec_hash()
    with pytest.raises(SpecError):
        TilingSpec.from_dict({"dim": 2, "basis": [1, 0, 0, 1]})
