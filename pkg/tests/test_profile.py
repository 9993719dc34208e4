import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from svlab.errors import ParameterError, PreconditionError
from svlab.profile import (Profile, atom_from_spec, band_profile, check_controlled, check_spread,
                           controlled_phase, custom_discrete, gaussian_complex, gaussian_real,
                           load_profile, profile_from_spec, rademacher, save_profile, student_t,
                           threshold, two_point, uniform_circle, uniform_disc)

ATOMS = [rademacher(), gaussian_real(), gaussian_complex(), uniform_disc(), two_point(0.3),
         student_t(5), custom_discrete([-2, 1], [1 / 3, 2 / 3])]

profiles = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(0, 1))


def test_profile_rejects_bad_entries():
    with pytest.raises(ParameterError):
        Profile(np.array([[1.5]]))
    with pytest.raises(ParameterError):
        Profile(np.ones((2, 2)), means=np.zeros((2, 3)))


def test_threshold_examples():
    A = Profile(np.array([[0.5, 0.2], [0.9, 0.3]]))
    assert np.array_equal(threshold(A, 0.4).sigma, [[0.5, 0], [0.9, 0]])
    assert np.array_equal(threshold(Profile(np.ones((3, 3))), 1.0).sigma, np.ones((3, 3)))
    B = Profile(np.array([[1e-6, 0.0]]))
    assert threshold(B, 1e-12).sigma[0, 0] == 1e-6
    for bad in (0.0, 1.5):
        with pytest.raises(ParameterError):
            threshold(A, bad)


def test_threshold_drops_means():
    A = Profile(np.ones((2, 2)), means=np.ones((2, 2)))
    assert threshold(A, 0.5).means is None


@given(profiles, st.floats(0.01, 1), st.floats(0.01, 1))
def test_threshold_properties(sig, s1, s2):
    A = Profile(sig)
    T = threshold(A, s1)
    assert np.array_equal(threshold(T, s1).sigma, T.sigma)
    assert np.all(T.sigma <= A.sigma)
    lo, hi = sorted((s1, s2))
    assert np.count_nonzero(threshold(A, hi).sigma) <= np.count_nonzero(threshold(A, lo).sigma)


def test_band_examples():
    B = band_profile(5, 0.2)
    assert np.all(B.sigma.sum(axis=1) == 3)
    assert B.sigma[0, 4] == 1 and B.sigma[0, 1] == 1 and B.sigma[0, 2] == 0
    assert np.all(band_profile(4, 0.5).sigma == 1)
    B = band_profile(100, 0.1, 0.7)
    assert np.allclose((B.sigma ** 2).sum(axis=1), 21 * 0.49)
    assert np.allclose((B.sigma ** 2).sum(axis=0), 21 * 0.49)
    with pytest.raises(ParameterError):
        band_profile(5, 0.1)


@given(st.integers(2, 40), st.floats(0.05, 0.95))
def test_band_is_circulant(n, eps):
    if eps * n < 1:
        return
    S = band_profile(n, eps).sigma
    assert np.array_equal(np.roll(S[0], 1), S[1 % n])
    for i in range(n):
        assert np.array_equal(np.roll(S[0], i), S[i])


def test_profile_file_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    P = Profile(rng.random((3, 4)), means=rng.standard_normal((3, 4)) + 1j)
    path = tmp_path / "p.txt"
    save_profile(P, path)
    Q = load_profile(path)
    assert np.array_equal(P.sigma, Q.sigma) and np.array_equal(P.means, Q.means)


def test_profile_file_errors_are_line_anchored(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 2 0\n0.5 0.5\n0.5 oops\n")
    with pytest.raises(ParameterError, match=r"bad.txt:3"):
        load_profile(path)
    path.write_text("2 2 0\n0.5 0.5 0.5\n0.5 0.5\n")
    with pytest.raises(ParameterError, match=r"bad.txt:2"):
        load_profile(path)


@pytest.mark.parametrize("spec,shape", [("band:10:0.2", (10, 10)), ("ones:3", (3, 3)),
                                        ("block:2,3", (5, 5)), ("halfcols:6", (6, 6)),
                                        ("random:7:0.5:1", (7, 7)), ("singular:4:3:2", (4, 4)),
                                        ("identity:4", (4, 4)), ("uppertri:5", (5, 5))])
def test_profile_specs(spec, shape):
    P = profile_from_spec(spec)
    assert P.shape == shape and P.name == spec


def test_profile_spec_errors():
    for spec in ("nope:3", "band:x:0.1", "block"):
        with pytest.raises(ParameterError):
            profile_from_spec(spec)


@pytest.mark.parametrize("atom", ATOMS, ids=lambda a: a.name)
def test_atoms_are_centered_unit_variance(atom):
    x = atom.sample(np.random.default_rng(1), 10**6)
    sd = np.std(x)
    assert abs(np.mean(x)) <= 5e-3 * sd
    assert abs(np.mean(np.abs(x - x.mean()) ** 2) - 1) <= 0.02


@pytest.mark.parametrize("atom", ATOMS, ids=lambda a: a.name)
def test_declared_moments_match_samples(atom):
    x = np.abs(atom.sample(np.random.default_rng(2), 10**6))
    for p, mu in atom.declared_moments.items():
        if math.isfinite(mu) and p < 4:
            assert abs(np.mean(x ** p) ** (1 / p) - mu) <= 0.02 * mu


def test_gaussian_moments_against_scipy():
    g = gaussian_real()
    for p in (1.0, 2.0, 3.0, 4.0):
        ref = stats.norm.expect(lambda x: abs(x) ** p) ** (1 / p)
        assert g.moment(p) == pytest.approx(ref, rel=1e-10)


def test_custom_discrete_validation():
    with pytest.raises(ParameterError):
        custom_discrete([0, 1], [0.5, 0.4])
    a = custom_discrete([1, 3], [0.5, 0.5])
    x = a.outcomes()
    assert abs(np.sum(a.probs * x)) < 1e-12
    assert abs(np.sum(a.probs * np.abs(x) ** 2) - 1) < 1e-12


def test_atom_specs():
    assert atom_from_spec("gaussian").kind == "gaussian-real"
    a = atom_from_spec("rademacher@1.5707963267948966")
    assert a.phase == pytest.approx(math.pi / 2)
    with pytest.raises(ParameterError):
        atom_from_spec("cauchy")


def test_sampling_is_deterministic():
    for atom in ATOMS:
        a = atom.sample(np.random.default_rng(5), (4, 4))
        b = atom.sample(np.random.default_rng(5), (4, 4))
        assert np.array_equal(a, b)


def test_spread_examples():
    w = check_spread(rademacher(), 1.0)
    assert w is not None and w.truncated_variance == pytest.approx(1.0)
    for kappa in (1, 2, 10, 1000):
        assert check_spread(two_point(0.0), kappa) is None


def test_gaussian_truncated_variance_oracle():
    # quadrature oracle for E[x^2 1(|x| <= 3)]
    ref = integrate.quad(lambda x: x * x * stats.norm.pdf(x), -3, 3)[0]
    w = check_spread(gaussian_real(), 3.0)
    assert w is not None and not w.exact
    assert abs(w.truncated_variance - ref) <= 3 * w.stderr + 1e-3
    assert w.truncated_variance >= 1 / 3


def test_controlled_phase_examples():
    assert controlled_phase(rademacher(), 1.0)[0] == 0.0
    theta, _ = controlled_phase(rademacher().rotated(math.pi / 2), 1.0)
    assert abs(theta - math.pi / 2) <= 2 ** -52 * 4
    # any phase is admissible for the circle; compare with theta = 0
    _, kappa = controlled_phase(uniform_circle(), 1.0)
    k0 = next(k for k in (2.0 ** j for j in range(12))
              if check_controlled(uniform_circle(), k).passed)
    assert kappa <= 4 * k0 and k0 <= 4 * kappa


def test_controlled_phase_requires_spread():
    with pytest.raises(PreconditionError):
        controlled_phase(two_point(0.0), 1.0)


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([rademacher(), two_point(0.3), custom_discrete([-2, 1], [1 / 3, 2 / 3]),
                        custom_discrete([1, 1j, -1, -1j], [0.25] * 4)]),
       st.floats(0, 2 * math.pi))
def test_controlled_inequality_for_discrete_atoms(atom, phase):
    atom = atom.rotated(phase)
    kappa0 = next(k for k in (2.0 ** j for j in range(8)) if check_spread(atom, k) is not None)
    theta, kappa = controlled_phase(atom, kappa0)
    # independent grid evaluation of the controlled inequality
    xs = atom.outcomes() * np.exp(1j * theta)
    ps = atom.probs
    ind = np.abs(xs) <= kappa
    for phi in np.linspace(0, 2 * math.pi, 32, endpoint=False):
        z = np.exp(1j * phi)
        for a in np.linspace(-2, 2, 32):
            lhs = np.sum(ps * ind * ((z * xs).real - a) ** 2)
            assert lhs >= z.real ** 2 / kappa - 1e-9


@pytest.mark.parametrize("atom", [gaussian_real(), student_t(5), uniform_disc()], ids=lambda a: a.name)
def test_controlled_inequality_monte_carlo(atom):
    theta, kappa = controlled_phase(atom, 4.0)
    x = atom.sample(np.random.default_rng(99), 10**6) * np.exp(1j * theta)
    ind = np.abs(x) <= kappa
    N = x.size
    for phi in np.linspace(0, 2 * math.pi, 32, endpoint=False):
        z = np.exp(1j * phi)
        u = (z * x).real
        for a in np.linspace(-2, 2, 8):
            y = (u - a) ** 2 * ind
            assert y.mean() + 3 * y.std() / math.sqrt(N) >= z.real ** 2 / kappa
