import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import block_diag

import oracles
from svlab.certify import (Certificate, pipeline_certificate, schur_bound, schur_certificate,
                           schur_formula, triangular_certificate)
from svlab.ensemble import Shift, derive_seed, sample
from svlab.errors import CertificateFailure, ParameterError, PreconditionError
from svlab.profile import (Profile, gaussian_complex, gaussian_real, half_columns_profile,
                           ones_profile, zeros_profile)
from svlab.profile_graph import ProfileGraph
from svlab.regularity import decompose


def _valid(cert, M):
    s = oracles.smin(M)
    return cert.bound <= s + 1e-9 * np.linalg.norm(M, 2)


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_schur_examples():
    I = np.eye(4)
    assert schur_bound(I, 2, 1.0, 1.0) == 1.0
    assert schur_certificate(I, 2).bound == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    A, D = _complex(rng, (3, 3)), _complex(rng, (2, 2))
    c = schur_certificate(block_diag(A, D), 3)
    assert c.bound == pytest.approx(min(oracles.smin(A), oracles.smin(D)), rel=1e-12)
    with pytest.raises(ParameterError):
        schur_formula(1.0, 1.0, 0.0, 1.0)
    with pytest.raises(ParameterError):
        schur_bound(I, 0, 1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.floats(0.01, 10))
def test_schur_validity_and_consistency(n, seed, scale):
    rng = np.random.default_rng(seed)
    M = _complex(rng, (n, n)) + scale * np.eye(n)
    split = int(rng.integers(1, n))
    c = schur_certificate(M, split)
    assert _valid(c, M)
    assert c.is_consistent()


def test_schur_matches_hand_formula_2x2():
    M = np.array([[2.0, 0.5], [0.3, 1.5]])
    # A = 2, B = 0.5, C = 0.3, D = 1.5; complement 2 - 0.5 * 0.3 / 1.5 = 1.9
    expect = min(1.5, 1.9) / ((1 + 0.5 / 1.5) * (1 + 0.3 / 1.5))
    assert schur_certificate(M, 1).bound == pytest.approx(expect, rel=1e-14)
    assert expect <= oracles.smin_2x2(M)


def test_monotone_degradation():
    rng = np.random.default_rng(3)
    A, D = _complex(rng, (5, 5)) + 4 * np.eye(5), _complex(rng, (4, 4)) + 4 * np.eye(4)
    base = schur_certificate(block_diag(A, D), 5).bound
    sD = oracles.smin(D)
    for b in (0.1, 1.0, 5.0):
        B = _complex(rng, (5, 4))
        B *= b / np.linalg.norm(B, 2)
        M = block_diag(A, D)
        M[:5, 5:] = B
        c = schur_certificate(M, 5)
        assert c.bound >= base * (1 + b / sD) ** -2 - 1e-12
        assert c.bound == pytest.approx(schur_formula(b, 0.0, sD, oracles.smin(A)), rel=1e-10)


def test_triangular_zero_profile_is_exact():
    n = 16
    z = np.linspace(1, 2, n) * np.exp(1j * np.arange(n))
    ms = sample(zeros_profile(n), gaussian_complex(), Shift("diag", z), seed=0)
    c = triangular_certificate(ms)
    assert c.bound == pytest.approx(math.sqrt(n), rel=1e-14)
    assert c.is_consistent()


def test_triangular_2x2_closed_form():
    sig = np.array([[0.0, 1.0], [0.0, 0.0]])
    for seed in range(50):
        ms = sample(Profile(sig), gaussian_real(), Shift("diag", 1.0), seed=seed)
        try:
            c = triangular_certificate(ms)
        except CertificateFailure:
            continue
        assert c.bound <= oracles.smin_2x2(ms.matrix) + 1e-12
        assert c.is_consistent()


def test_triangular_dense_profile():
    n = 64
    prof = Profile(np.triu(np.ones((n, n))))
    positive = 0
    for i in range(100):
        ms = sample(prof, gaussian_real(), Shift("diag", 1.0, r0=1.0, K0=1.0), seed=derive_seed(7, i))
        try:
            c = triangular_certificate(ms, r0=1.0)
        except CertificateFailure:
            continue
        assert _valid(c, ms.matrix) and c.is_consistent()
        positive += c.bound > 0
    assert positive >= 95


def test_triangular_preconditions():
    ms = sample(ones_profile(4), gaussian_real(), Shift("diag", 1.0), seed=0)
    with pytest.raises(PreconditionError):
        triangular_certificate(ms)
    ms = sample(zeros_profile(4), gaussian_real(), Shift("general", matrix=np.ones((4, 4))), seed=0)
    with pytest.raises(PreconditionError):
        triangular_certificate(ms)


def test_triangular_failure_names_the_block():
    n = 8
    # noise on the diagonal beats a tiny shift in some 1 x 1 leaf
    prof = Profile(np.triu(np.ones((n, n))))
    ms = sample(prof, gaussian_real(), Shift("diag", 1e-3), seed=0)
    with pytest.raises(CertificateFailure) as exc:
        triangular_certificate(ms)
    assert exc.value.block is not None


def _pipeline(prof, n_seeds, z=1.0, eps=0.05, delta=0.1, sigma_hat=0.3):
    dec = decompose(ProfileGraph(prof), eps, delta, sigma_hat)
    out = []
    for i in range(n_seeds):
        ms = sample(prof, gaussian_real(), Shift("diag", z), seed=derive_seed(3, i))
        c = pipeline_certificate(ms, dec)
        assert _valid(c, ms.matrix) and c.is_consistent(), c.meta
        out.append((c, ms))
    return dec, out


def test_pipeline_all_ones():
    dec, out = _pipeline(ones_profile(48), 5, z=2.0)
    assert dec.J_free == []
    for c, _ in out:
        assert "triangular" not in c.meta["steps"]


def test_pipeline_zero_profile_is_exact():
    n = 32
    prof = zeros_profile(n)
    dec, out = _pipeline(prof, 3, z=1.5)
    for c, _ in out:
        assert c.bound == pytest.approx(1.5 * math.sqrt(n), rel=1e-12)


def test_pipeline_half_columns():
    dec, out = _pipeline(half_columns_profile(64), 10)
    assert sum(c.bound > 0 for c, _ in out) >= 9


def test_pipeline_rejects_other_profile():
    dec = decompose(ProfileGraph(ones_profile(32)), 0.05, 0.1, 0.3)
    ms = sample(zeros_profile(32), gaussian_real(), Shift("diag", 1.0), seed=0)
    with pytest.raises(ParameterError):
        pipeline_certificate(ms, dec)


def test_certificate_json_roundtrip():
    dec, out = _pipeline(half_columns_profile(32), 1)
    c = out[0][0]
    back = Certificate.from_dict(json.loads(c.to_json()))
    assert back.bound == c.bound and back.is_consistent()
    assert back.to_dict() == c.to_dict()
    assert set(back.leaf_methods()) <= {"svd", "diagonal"}
