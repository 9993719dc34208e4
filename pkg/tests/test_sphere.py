import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

import oracles
from svlab.errors import ParameterError, PreconditionError
from svlab.sphere import (C_NET, build_net, comp_distance, covering_radius, is_compressible,
                          kernel_net, load_net, random_unit_vectors, restricted_invertibility,
                          restricted_rows, save_net, spread_sets)


def _unit(x):
    x = np.asarray(x, complex)
    return x / np.linalg.norm(x)


def _isotropic_frame(n, m, seed):
    # rows of an n x m matrix with orthonormal columns
    U = unitary_group.rvs(n, random_state=seed)
    return U[:, :m]


def test_comp_distance_examples():
    assert comp_distance(np.eye(5)[0], 1) == 0
    for m, k in [(4, 1), (9, 3), (16, 8)]:
        v = np.full(m, 1 / math.sqrt(m))
        assert comp_distance(v, k) == pytest.approx(math.sqrt(1 - k / m), abs=1e-14)
    assert comp_distance(np.array([0.8, 0.6, 0, 0]), 1) == pytest.approx(0.6, abs=1e-15)
    for k in (0, 5):
        with pytest.raises(ParameterError):
            comp_distance(np.array([0.8, 0.6, 0, 0]), k)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_comp_distance_matches_bruteforce(m, seed):
    rng = np.random.default_rng(seed)
    v = random_unit_vectors(1, m, rng)[0]
    prev = math.inf
    for k in range(1, m + 1):
        d = comp_distance(v, k)
        assert abs(d - oracles.comp_distance(v, k)) <= 1e-12
        assert d <= prev + 1e-15
        prev = d
    assert comp_distance(v, m) == 0


def test_compressible_membership():
    v = np.full(16, 0.25)
    assert not is_compressible(v, 0.25, 0.5)
    assert is_compressible(v, 0.25, 0.9)
    assert is_compressible(np.eye(16)[3], 0.1, 0.01)


def test_spread_sets_examples():
    m = 64
    v = np.full(m, 1 / math.sqrt(m))
    Lp, L = spread_sets(v, 0.5, 0.1, 2.0)
    assert Lp.tolist() == L.tolist() == list(range(m))
    w = np.zeros(m)
    w[: m // 2] = math.sqrt(2 / m) * 0.99
    w[m // 2:] = 1e-3
    w = _unit(w)
    Lp, L = spread_sets(w, 0.25, 0.05, 2.0)
    assert Lp.size >= m / 4
    Lp, L = spread_sets(w, 0.25, 0.05, 1.0)
    assert L.size >= 0 and set(L) <= set(Lp)
    with pytest.raises(PreconditionError):
        spread_sets(np.eye(m)[0], 0.25, 0.05, 2.0)
    with pytest.raises(ParameterError):
        spread_sets(v, 0.5, 0.1, 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(8, 64), st.sampled_from([0.1, 0.25, 0.5]), st.sampled_from([0.1, 0.3]),
       st.floats(1, 4), st.integers(0, 2**32 - 1))
def test_spread_cardinalities(m, theta, rho, lam, seed):
    v = random_unit_vectors(1, m, np.random.default_rng(seed))[0]
    if is_compressible(v, theta, rho):
        return
    Lp, L = spread_sets(v, theta, rho, lam)
    assert Lp.size >= theta * m - 1e-9
    assert L.size >= (1 - 1 / lam ** 2) * theta * m - 1e-9
    assert set(L) <= set(Lp)
    assert np.all(np.abs(v[Lp]) >= rho / math.sqrt(m) - 1e-15)


def test_net_examples():
    V = np.eye(3, 1, dtype=complex)
    net = build_net(V, 2.0)
    assert net.cardinality == 1 and covering_radius(net) <= 2
    net = build_net(V, 0.5)
    assert net.cardinality <= 144 and covering_radius(net, 10**4) <= 0.5
    V2 = np.linalg.qr(np.random.default_rng(0).standard_normal((5, 2))
                      + 1j * np.random.default_rng(1).standard_normal((5, 2)))[0]
    net = build_net(V2, 0.5)
    assert net.cardinality <= (C_NET / 0.5) ** 4 == 20736
    with pytest.raises(ParameterError):
        build_net(np.zeros((3, 0)), 0.5)


def test_net_points_lie_in_subspace():
    V = np.linalg.qr(np.random.default_rng(2).standard_normal((6, 2)).astype(complex))[0]
    net = build_net(V, 0.5)
    proj = net.points @ V.conj() @ V.T
    assert np.abs(proj - net.points).max() <= 1e-10
    assert np.abs(np.linalg.norm(net.points, axis=1) - 1).max() <= 1e-10


@pytest.mark.parametrize("k,rho", [(1, 0.5), (1, 0.25), (2, 0.5)])
def test_net_covering_by_bruteforce(k, rho):
    net = build_net(np.eye(k, dtype=complex), rho)
    u = random_unit_vectors(2000, k, np.random.default_rng(5))
    d = np.abs(u[:, None, :] - net.coords[None, :, :])
    dist = np.sqrt((d ** 2).sum(-1)).min(1)
    assert dist.max() <= rho


def test_net_roundtrip(tmp_path):
    net = kernel_net(np.array([[1.0, 0.0]]), [3, 7], 0.5)
    save_net(net, tmp_path / "net")
    back = load_net(tmp_path / "net")
    assert np.array_equal(back.points, net.points)
    assert back.rho == net.rho and back.k == net.k
    assert back.support.tolist() == [3, 7]


def test_restricted_invertibility_examples():
    m = 12
    I = restricted_invertibility(np.eye(m), 0.5)
    assert I.size == m // 4
    vecs = np.vstack([np.eye(m), np.eye(m)]) / math.sqrt(2)
    I = restricted_invertibility(vecs, 0.5)
    lam = np.linalg.eigvalsh(vecs[I].T @ vecs[I])
    assert I.size == math.floor(0.25 * m) and lam[-I.size] >= 1 / 8
    F = _isotropic_frame(60, 12, 0)
    I = restricted_invertibility(F, 0.4)
    S = F[I].T @ F[I].conj()
    assert I.size == math.floor(0.36 * 12)
    assert np.linalg.eigvalsh(S)[-I.size] >= 0.4 ** 2 * 12 / 60


def test_restricted_invertibility_precondition():
    with pytest.raises(PreconditionError):
        restricted_invertibility(2 * np.eye(4), 0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 16), st.integers(0, 40), st.sampled_from([0.3, 0.5]), st.integers(0, 10**6))
def test_restricted_invertibility_bound(m, extra, beta, seed):
    n = m + extra
    F = _isotropic_frame(n, m, seed)
    I = restricted_invertibility(F, beta)
    k = math.floor((1 - beta) ** 2 * m)
    assert I.size == k
    if k:
        lam = np.linalg.eigvalsh(F[I].T @ F[I].conj())
        assert lam[-k] >= beta ** 2 * m / n


def test_restricted_rows_examples():
    n, m = 30, 6
    M = math.sqrt(n) * np.vstack([np.eye(m), np.zeros((n - m, m))])
    I = restricted_rows(M, 0.5)
    assert np.all(I < m)
    s = np.linalg.svd(M[I], compute_uv=False)
    assert s[-1] == pytest.approx(math.sqrt(n)) and s[-1] >= 0.5 * math.sqrt(m)
    G = np.random.default_rng(4).standard_normal((100, 20))
    eps0 = np.linalg.svd(G, compute_uv=False)[-1] / math.sqrt(100)
    I = restricted_rows(G, 0.5)
    assert I.size == 5
    assert np.linalg.svd(G[I], compute_uv=False)[I.size - 1] >= 0.5 * eps0 * math.sqrt(20)
    with pytest.raises(ParameterError):
        restricted_rows(G, 0.99)


def test_kernel_net_examples():
    net = kernel_net(np.array([[1.0, 0.0]]), [0, 1], 0.5)
    assert net.k == 1
    assert np.abs(net.points[:, 0]).max() <= 1e-12
    rng = np.random.default_rng(6)
    M = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    net = kernel_net(M, range(5), 0.4)
    assert net.k == 2 and net.cardinality <= (C_NET / 0.4) ** 4
    assert np.abs(M @ net.points.T).max() <= 1e-8
    empty = kernel_net(rng.standard_normal((4, 4)), range(4), 0.5)
    assert empty.cardinality == 0
    with pytest.raises(PreconditionError):
        kernel_net(np.array([[1.0, 1.0], [1.0, 1.0]]), [0, 1], 0.5)
