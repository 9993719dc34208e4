import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.sparse.csgraph import connected_components

import oracles
from svlab.errors import ParameterError, PreconditionError
from svlab.profile import (Profile, block_diagonal_profile, ones_profile, random_profile,
                           zeros_profile)
from svlab.profile_graph import ProfileGraph
from svlab.regularity import (Decomposition, ReducedDigraph, check_decomposition,
                              check_regular_pair, cycle_cover_split, decompose, partition,
                              reduced_digraph)


def test_regular_pair_examples():
    g = ProfileGraph(ones_profile(6))
    for eps in (0.1, 0.5, 0.9):
        assert check_regular_pair(g, range(6), range(6), eps).regular
        assert check_regular_pair(ProfileGraph(zeros_profile(6)), range(6), range(6), eps).regular
    adj = np.zeros((8, 8), bool)
    adj[:4, :4] = True
    adj[4:, 4:] = True
    v = check_regular_pair(ProfileGraph.from_pattern(adj), range(8), range(8), 0.3)
    assert not v.regular and v.provenance == "exact" and v.density == 0.5
    I, J = v.witness
    assert abs(adj[np.ix_(I, J)].mean() - 0.5) > 0.3
    with pytest.raises(ParameterError):
        check_regular_pair(g, [0], range(6), 0.3)


@settings(max_examples=40, deadline=None)
@given(arrays(bool, st.tuples(st.integers(2, 6), st.integers(2, 6))),
       st.sampled_from([0.2, 0.3, 0.5]))
# a deviation of exactly eps is still regular
@example(np.array([[0, 0, 0, 0, 1]] + [[1] * 5] * 3, bool), 0.3)
def test_regular_pair_matches_bruteforce(adj, eps):
    n, m = adj.shape
    v = check_regular_pair(ProfileGraph.from_pattern(np.pad(adj, ((0, max(0, m - n)), (0, max(0, n - m))))),
                           range(n), range(m), eps)
    assert v.regular == oracles.regular_pair(adj, eps)
    if not v.regular:
        I, J = v.witness
        assert len(I) > eps * n and len(J) > eps * m
        assert abs(adj[np.ix_(I, J)].mean() - adj.mean()) > eps


def test_exact_and_surrogate_agree():
    # pairs above the exhaustive cutoff that are refuted must not be exactly regular
    rng = np.random.default_rng(0)
    for trial in range(10):
        adj = rng.random((14, 14)) < rng.uniform(0.2, 0.8)
        g = ProfileGraph.from_pattern(adj)
        exact = check_regular_pair(g, range(14), range(14), 0.4)
        big = ProfileGraph.from_pattern(np.kron(adj, np.ones((2, 2), bool)))
        surrogate = check_regular_pair(big, range(28), range(28), 0.4, n_samples=2000, seed=trial)
        assert exact.provenance == "exact"
        if surrogate.provenance == "sampled" and not surrogate.regular:
            I, J = surrogate.witness
            sub = big.adj[np.ix_(I, J)].mean()
            assert abs(sub - big.adj.mean()) > 0.4


def test_partition_examples():
    p = partition(ProfileGraph(ones_profile(20)), 0.25)
    assert p.m0 == 1 and not p.irregular_pairs and len(p.exceptional) < 0.25 * 20
    g = ProfileGraph(block_diagonal_profile([10, 10]))
    p = partition(g, 0.25)
    assert p.m0 == 2 and not p.irregular_pairs
    assert {tuple(sorted(x)) for x in p.parts} == {tuple(range(10)), tuple(range(10, 20))}


def test_partition_random_fixture():
    g = ProfileGraph(Profile((np.random.default_rng(64).random((64, 64)) < 0.5).astype(float)))
    p = partition(g, 0.3, seed=0)
    assert p.converged
    assert len(p.irregular_pairs) <= 0.3 * p.m0 ** 2
    assert len(p.exceptional) < 0.3 * 64
    assert len({len(x) for x in p.parts}) == 1


@pytest.mark.parametrize("spec", ["block", "random"])
def test_partition_idempotent_on_fixed_points(spec):
    prof = block_diagonal_profile([12, 12, 12]) if spec == "block" else random_profile(48, 0.5, 3)
    g = ProfileGraph(prof)
    p = partition(g, 0.3, merge=False)
    assert p.converged
    q = partition(g, 0.3, parts=p.parts, exceptional=p.exceptional, merge=False)
    assert q.refinements == 0
    assert [list(x) for x in q.parts] == [list(x) for x in p.parts]


def test_reduced_digraph_examples():
    g = ProfileGraph(ones_profile(20))
    r = reduced_digraph(partition(g, 0.25), g, 0.1)
    assert r.edges == {(0, 0)}
    gz = ProfileGraph(zeros_profile(20))
    assert not reduced_digraph(partition(gz, 0.25), gz, 0.1).edges
    gb = ProfileGraph(block_diagonal_profile([10, 10]))
    assert reduced_digraph(partition(gb, 0.25), gb, 0.1).edges == {(0, 0), (1, 1)}


def _digraph(n, edges):
    adj = np.zeros((n, n), bool)
    for a, b in edges:
        adj[a, b] = True
    return ReducedDigraph(n, adj, 0.1)


def test_cycle_split_examples():
    s = cycle_cover_split(_digraph(1, [(0, 0)]))
    assert s.T == [0] and s.order == []
    s = cycle_cover_split(_digraph(2, [(0, 1)]))
    assert s.T == [] and s.order == [0, 1]
    s = cycle_cover_split(_digraph(4, [(0, 1), (1, 2), (2, 0), (2, 3)]))
    assert sorted(s.T) == [0, 1, 2] and s.order == [3]
    assert s.pi == {0: 1, 1: 2, 2: 0}


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9).flatmap(lambda n: arrays(bool, (n, n))))
def test_cycle_split_leaves_acyclic_rest(adj):
    s = cycle_cover_split(ReducedDigraph(len(adj), adj, 0.1))
    rest = [v for v in range(len(adj)) if v not in set(s.T)]
    sub = adj[np.ix_(rest, rest)]
    assert oracles.is_acyclic(sub)
    if rest:
        ncomp, _ = connected_components(sub, directed=True, connection="strong")
        assert ncomp == len(rest) and not np.diag(sub).any()
    # topological order of the rest
    pos = {v: k for k, v in enumerate(s.order)}
    assert sorted(s.order) == rest
    for a in rest:
        for b in rest:
            if adj[a, b]:
                assert pos[a] < pos[b]
    # cycles are disjoint and use genuine edges
    assert len(set(s.T)) == len(s.T)
    for k, nxt in s.pi.items():
        assert adj[k, nxt]


def _check_all(prof, dec):
    out = check_decomposition(prof, dec)
    assert out["cover"]
    for p in (1, 2, 3, 4):
        assert out[f"property{p}"], (p, out)


def test_decompose_all_ones():
    prof = ones_profile(64)
    dec = decompose(ProfileGraph(prof), 0.05, 0.1, 0.3)
    assert dec.J_free == [] and dec.mhat == 1 and dec.pi == [0]
    assert len(dec.J_bad) <= 15 * np.sqrt(0.1) * 64
    _check_all(prof, dec)


def test_decompose_upper_triangular():
    prof = Profile(np.triu(np.full((64, 64), 0.9), 1))
    dec = decompose(ProfileGraph(prof), 0.05, 0.1, 0.3)
    assert len(dec.J_cyc) <= 8
    jf = dec.J_free
    # property (3) directly: below the tau-diagonal only exceptional entries
    F = {tuple(x) for x in dec.F.tolist()}
    for a, i in enumerate(jf):
        for j in jf[: a + 1]:
            assert prof.sigma[i, j] < 0.3 or (i, j) in F
    _check_all(prof, dec)


def test_decompose_zero():
    prof = zeros_profile(48)
    dec = decompose(ProfileGraph(prof), 0.05, 0.1, 0.3)
    assert dec.J_cyc == [] and len(dec.F) == 0
    assert sorted(dec.J_free + dec.J_bad) == list(range(48))
    _check_all(prof, dec)


def test_decompose_rejects_large_eps():
    with pytest.raises(PreconditionError):
        decompose(ProfileGraph(ones_profile(16)), 0.3, 0.1, 0.3)


@settings(max_examples=8, deadline=None)
@given(st.sampled_from([48, 64]), st.sampled_from([0.1, 0.5, 0.9]), st.integers(0, 10**6))
def test_decompose_random_profiles(n, dens, seed):
    prof = random_profile(n, dens, seed)
    dec = decompose(ProfileGraph(prof), 0.05, 0.1, 0.3, seed=seed)
    _check_all(prof, dec)
    # free block in tau order has no thresholded entries on or below the diagonal off F
    jf = np.asarray(dec.J_free, int)
    if jf.size:
        mask = prof.sigma[np.ix_(jf, jf)] >= 0.3
        for i, j in dec.F.tolist():
            if i in set(jf.tolist()) and j in set(jf.tolist()):
                mask[list(jf).index(i), list(jf).index(j)] = False
        assert not np.tril(mask).any()


def test_decomposition_json_roundtrip():
    prof = block_diagonal_profile([16, 16, 16])
    dec = decompose(ProfileGraph(prof), 0.05, 0.1, 0.3)
    back = Decomposition.from_json(dec.to_json())
    assert back.to_dict() == dec.to_dict()
    assert np.array_equal(back.F, dec.F)
