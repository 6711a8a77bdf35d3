import itertools
from collections import Counter

import networkx as nx
import numpy as np
import pytest

from facsa.stopping_sets import (
    StoppingSetRecord,
    count_configurations,
    enumerate_catalog,
    is_minimal_stopping_set,
    largest_stopping_set,
    read_catalog,
    write_catalog,
)


@pytest.fixture(scope="module")
def catalog():
    return enumerate_catalog(4)


# -- independent checkers on 0/1 matrices ---------------------------------------


def connected(mat: np.ndarray) -> bool:
    nu, mu = mat.shape
    seen_r, seen_c = {0}, set()
    frontier = [("r", 0)]
    while frontier:
        kind, i = frontier.pop()
        if kind == "r":
            for j in np.flatnonzero(mat[i]):
                if j not in seen_c:
                    seen_c.add(j)
                    frontier.append(("c", j))
        else:
            for r in np.flatnonzero(mat[:, i]):
                if r not in seen_r:
                    seen_r.add(r)
                    frontier.append(("r", r))
    return len(seen_r) == nu and len(seen_c) == mu


def is_stopping(mat: np.ndarray) -> bool:
    """Connected, every slot hit at least twice."""
    return connected(mat) and bool(np.all(mat.sum(axis=0) >= 2))


def is_minimal(mat: np.ndarray) -> bool:
    nu = mat.shape[0]
    for size in range(1, nu):
        for rows in itertools.combinations(range(nu), size):
            sums = mat[list(rows)].sum(axis=0)
            if not np.any(sums == 1):
                return False
    return True


def to_graph(mat: np.ndarray) -> nx.Graph:
    g = nx.Graph()
    nu, mu = mat.shape
    g.add_nodes_from((("v", i) for i in range(nu)), side=0)
    g.add_nodes_from((("c", j) for j in range(mu)), side=1)
    g.add_edges_from((("v", i), ("c", j)) for i, j in zip(*np.nonzero(mat)))
    return g


def same_side(a, b):
    return a["side"] == b["side"]


def brute_force_c(mat: np.ndarray) -> int:
    """Edge assignments of distinguishable users (degrees fixed per user) to
    labelled slots whose graph is isomorphic to ``mat``."""
    nu, mu = mat.shape
    target = to_graph(mat)
    degrees = sorted(int(d) for d in mat.sum(axis=1))
    choices = [list(itertools.combinations(range(mu), d)) for d in degrees]
    count = 0
    for pick in itertools.product(*choices):
        cand = np.zeros((nu, mu), dtype=int)
        for i, cols in enumerate(pick):
            cand[i, list(cols)] = 1
        if np.any(cand.sum(axis=0) == 0):
            continue
        if sorted(cand.sum(axis=0)) != sorted(mat.sum(axis=0)):
            continue
        if nx.is_isomorphic(to_graph(cand), target, node_match=same_side):
            count += 1
    return count


# -- tests ----------------------------------------------------------------------------


def test_catalog_sizes(catalog):
    assert len(catalog) == 31
    only_csa = enumerate_catalog(2, min_degree=2)
    assert len(only_csa) == 1
    rec = only_csa.records[0]
    assert (rec.nu, rec.mu, rec.profile, rec.c) == (2, 2, {2: 2}, 1)
    assert len(enumerate_catalog(4, min_degree=2)) == 16
    assert Counter(r.mu for r in catalog) == {1: 1, 2: 2, 3: 6, 4: 22}


def test_every_record_passes_independent_checks(catalog):
    for rec in catalog:
        mat = rec.representative.astype(int)
        assert is_stopping(mat)
        assert is_minimal(mat)
        assert mat.shape == (rec.nu, rec.mu)
        assert sum(rec.profile.values()) == rec.nu
        assert rec.edges == mat.sum()
        assert rec.q == mat.sum(axis=1).max()
        assert np.all(mat.sum(axis=1) <= rec.mu)
        # removing any user disconnects the set or leaves a slot with one user
        for i in range(rec.nu):
            rest = np.delete(mat, i, axis=0)
            rest = rest[:, rest.sum(axis=0) > 0]
            assert not connected(rest) or np.any(rest.sum(axis=0) == 1)


def test_records_pairwise_non_isomorphic(catalog):
    graphs = [to_graph(r.representative.astype(int)) for r in catalog]
    for a, b in itertools.combinations(range(len(graphs)), 2):
        assert not nx.is_isomorphic(graphs[a], graphs[b], node_match=same_side)


def test_catalog_sorted(catalog):
    keys = [r.sort_key() for r in catalog]
    assert keys == sorted(keys)


def test_configuration_count_examples():
    pair = StoppingSetRecord.from_rows([0b11, 0b11], 2)
    assert count_configurations(pair) == 1
    triangle = StoppingSetRecord.from_rows([0b011, 0b110, 0b101], 3)
    assert triangle.c == 6


def test_configuration_counts_match_brute_force(catalog):
    for rec in catalog:
        assert rec.c >= 1
        assert rec.c == brute_force_c(rec.representative.astype(int)), rec


def test_minimality_checker_agrees_with_oracle():
    rng = np.random.default_rng(3)
    for _ in range(400):
        nu, mu = rng.integers(2, 5), rng.integers(2, 5)
        mat = (rng.random((nu, mu)) < 0.6).astype(int)
        if np.any(mat.sum(axis=1) == 0):
            continue
        rows = [int(sum(v << j for j, v in enumerate(r))) for r in mat]
        expected = is_stopping(mat) and is_minimal(mat)
        assert is_minimal_stopping_set(rows, mu) == expected


def test_peeling_core():
    # user 2 alone on slot 2 peels off; the 2x2 core remains
    assert largest_stopping_set([0b011, 0b011, 0b100], 3) == [0, 1]
    assert largest_stopping_set([0b01, 0b10], 2) == []


def test_round_trip(tmp_path, catalog):
    path = tmp_path / "cat.txt"
    write_catalog(catalog, path)
    back = read_catalog(path)
    assert back.records == catalog.records and back.max_cns == 4
    text = path.read_text().splitlines()
    assert text[0].startswith("# mu,nu,profile,c,q,representative")
    assert "2,2,2:2,1,2,1111" in text
    assert len(catalog.restrict(2)) == 3


def test_enumeration_bounds():
    with pytest.raises(ValueError):
        enumerate_catalog(1)
    with pytest.raises(ValueError):
        enumerate_catalog(6)
    with pytest.raises(ValueError):
        enumerate_catalog(3, min_degree=3)
