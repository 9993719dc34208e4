"""Variance and mean profiles, atom distributions and scalar distributional checks.

A structured random matrix is ``M = A * X + B`` where ``A`` holds entrywise
standard deviations in ``[0, 1]``, ``B`` is a deterministic mean profile and
``X`` has iid entries drawn from a centered, unit-variance atom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .errors import ParameterError, PreconditionError

__all__ = [
    "Profile",
    "AtomDistribution",
    "SpreadWitness",
    "ControlledCheck",
    "threshold",
    "band_profile",
    "ones_profile",
    "zeros_profile",
    "identity_profile",
    "block_diagonal_profile",
    "half_columns_profile",
    "upper_triangular_profile",
    "random_profile",
    "load_profile",
    "save_profile",
    "profile_from_spec",
    "rademacher",
    "gaussian_real",
    "gaussian_complex",
    "uniform_disc",
    "uniform_circle",
    "two_point",
    "student_t",
    "custom_discrete",
    "atom_from_spec",
    "check_spread",
    "check_controlled",
    "controlled_phase",
]

MC_SAMPLES = 10**6
_MC_SEED = 20240607


# ---------------------------------------------------------------------------
# Profiles


@dataclass(frozen=True, eq=False)
class Profile:
    """Standard-deviation profile with an optional complex mean profile.

    Parameters
    ----------
    sigma : array_like, shape (n, m)
        Entrywise standard deviations, each in ``[0, 1]``.
    means : array_like, shape (n, m), optional
        Deterministic shift ``B``.
    name : str, optional
        Identifier carried into experiment outputs.
    """

    sigma: np.ndarray
    means: np.ndarray | None = None
    name: str = "custom"

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        if sigma.ndim != 2 or sigma.size == 0:
            raise ParameterError("sigma must be a nonempty 2-d array")
        if not np.all(np.isfinite(sigma)) or sigma.min() < 0 or sigma.max() > 1:
            raise ParameterError("profile entries must lie in [0, 1]")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        if self.means is not None:
            means = np.array(self.means, dtype=complex)
            if means.shape != sigma.shape:
                raise ParameterError(
                    f"means shape {means.shape} differs from sigma shape {sigma.shape}"
                )
            means.setflags(write=False)
            object.__setattr__(self, "means", means)

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def m(self) -> int:
        return self.sigma.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.sigma.shape

    def pattern(self) -> np.ndarray:
        """Boolean support ``sigma > 0``."""
        return self.sigma > 0

    def transpose(self) -> "Profile":
        means = None if self.means is None else self.means.T
        return Profile(self.sigma.T, means, name=f"{self.name}^T")

    def same_sigma(self, other: "Profile") -> bool:
        return self.shape == other.shape and np.array_equal(self.sigma, other.sigma)

    def __eq__(self, other):
        if not isinstance(other, Profile) or not self.same_sigma(other):
            return False
        if self.means is None or other.means is None:
            return self.means is None and other.means is None
        return np.array_equal(self.means, other.means)

    def __repr__(self):
        return f"Profile(name={self.name!r}, shape={self.shape}, means={self.means is not None})"


def threshold(profile: Profile, sigma_hat: float) -> Profile:
    """Keep entries with ``sigma_ij >= sigma_hat`` and zero the rest.

    The mean profile is dropped; thresholding acts on the variance profile only.
    """
    if not 0 < sigma_hat <= 1:
        raise ParameterError(f"sigma_hat must lie in (0, 1], got {sigma_hat}")
    s = profile.sigma
    return Profile(np.where(s >= sigma_hat, s, 0.0), name=f"{profile.name}|>={sigma_hat:g}")


def band_profile(n: int, eps: float, fill: float = 1.0) -> Profile:
    """Periodic band: entry ``fill`` when the torus distance ``|i - j|`` is at most ``floor(eps n)``."""
    if n < 1:
        raise ParameterError("n must be positive")
    if not 0 < eps < 1:
        raise ParameterError("eps must lie in (0, 1)")
    if not 0 < fill <= 1:
        raise ParameterError("fill must lie in (0, 1]")
    if eps * n < 1:
        raise ParameterError(f"eps*n = {eps * n:g} < 1 gives an empty band")
    w = math.floor(eps * n + 1e-9)
    idx = np.arange(n)
    d = np.abs(idx[:, None] - idx[None, :])
    d = np.minimum(d, n - d)
    return Profile(np.where(d <= w, fill, 0.0), name=f"band:{n}:{eps:g}:{fill:g}")


def ones_profile(n: int, m: int | None = None) -> Profile:
    return Profile(np.ones((n, n if m is None else m)), name=f"ones:{n}")


def zeros_profile(n: int, m: int | None = None) -> Profile:
    return Profile(np.zeros((n, n if m is None else m)), name=f"zeros:{n}")


def identity_profile(n: int) -> Profile:
    return Profile(np.eye(n), name=f"identity:{n}")


def block_diagonal_profile(sizes, fill: float = 1.0) -> Profile:
    """Block-diagonal profile with square blocks of the given sizes."""
    sizes = [int(s) for s in sizes]
    if not sizes or min(sizes) < 1:
        raise ParameterError("block sizes must be positive")
    n = sum(sizes)
    sigma = np.zeros((n, n))
    start = 0
    for s in sizes:
        sigma[start:start + s, start:start + s] = fill
        start += s
    return Profile(sigma, name="block:" + ",".join(map(str, sizes)))


def half_columns_profile(n: int) -> Profile:
    """Ones in the first ``n // 2`` columns and zeros elsewhere."""
    sigma = np.zeros((n, n))
    sigma[:, : n // 2] = 1.0
    return Profile(sigma, name=f"halfcols:{n}")


def upper_triangular_profile(n: int, value: float = 1.0) -> Profile:
    """Strictly upper-triangular profile with constant entries."""
    return Profile(np.triu(np.full((n, n), value), k=1), name=f"uppertri:{n}:{value:g}")


def random_profile(n: int, density: float, seed: int, m: int | None = None) -> Profile:
    """Random support of the given density with values uniform on ``(0, 1]``."""
    if not 0 <= density <= 1:
        raise ParameterError("density must lie in [0, 1]")
    m = n if m is None else m
    rng = np.random.default_rng(seed)
    mask = rng.random((n, m)) < density
    values = 1.0 - rng.random((n, m))
    return Profile(np.where(mask, values, 0.0), name=f"random:{n}:{density:g}:{seed}")


def load_profile(path) -> Profile:
    """Read the plain-text profile format.

    The first line is ``n m has_means``. It is followed by ``n`` rows of ``m``
    reals and, when ``has_means`` is 1, by ``n`` rows of ``m`` ``re,im`` pairs.
    """
    path = Path(path)
    lines = [ln.split("#", 1)[0].strip() for ln in path.read_text().splitlines()]
    lines = [(k + 1, ln) for k, ln in enumerate(lines) if ln]
    if not lines:
        raise ParameterError(f"{path}: empty profile file")
    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 3:
        raise ParameterError(f"{path}:{lineno}: header must be 'n m has_means'")
    try:
        n, m, has_means = (int(p) for p in parts)
    except ValueError as exc:
        raise ParameterError(f"{path}:{lineno}: {exc}") from None
    need = n * (2 if has_means else 1)
    body = lines[1:]
    if len(body) != need:
        raise ParameterError(f"{path}: expected {need} data rows, found {len(body)}")

    def parse_row(lineno, text, cast):
        vals = text.split()
        if len(vals) != m:
            raise ParameterError(f"{path}:{lineno}: expected {m} entries, found {len(vals)}")
        try:
            return [cast(v) for v in vals]
        except ValueError as exc:
            raise ParameterError(f"{path}:{lineno}: {exc}") from None

    def cplx(tok):
        re, im = tok.split(",")
        return complex(float(re), float(im))

    sigma = [parse_row(k, t, float) for k, t in body[:n]]
    means = [parse_row(k, t, cplx) for k, t in body[n:]] if has_means else None
    try:
        return Profile(np.array(sigma), None if means is None else np.array(means),
                       name=f"file:{path.name}")
    except ParameterError as exc:
        raise ParameterError(f"{path}: {exc}") from None


def save_profile(profile: Profile, path) -> None:
    has_means = profile.means is not None
    rows = [f"{profile.n} {profile.m} {int(has_means)}"]
    rows += [" ".join(repr(float(x)) for x in row) for row in profile.sigma]
    if has_means:
        rows += [" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row) for row in profile.means]
    Path(path).write_text("\n".join(rows) + "\n")


def profile_from_spec(spec: str) -> Profile:
    """Build a profile from a colon-separated generator spec.

    Recognized forms: ``band:n:eps[:fill]``, ``ones:n``, ``zeros:n``,
    ``identity:n``, ``block:s1,s2,...[:fill]``, ``halfcols:n``,
    ``uppertri:n[:value]``, ``random:n:density:seed``, ``singular:n:k:m``
    and ``file:path``.
    """
    kind, _, rest = spec.partition(":")
    args = rest.split(":") if rest else []
    try:
        if kind == "file":
            return load_profile(rest)
        if kind == "band":
            p = band_profile(int(args[0]), float(args[1]), float(args[2]) if len(args) > 2 else 1.0)
        elif kind == "ones":
            p = ones_profile(int(args[0]))
        elif kind == "zeros":
            p = zeros_profile(int(args[0]))
        elif kind == "identity":
            p = identity_profile(int(args[0]))
        elif kind == "block":
            sizes = [int(s) for s in args[0].split(",")]
            p = block_diagonal_profile(sizes, float(args[1]) if len(args) > 1 else 1.0)
        elif kind == "halfcols":
            p = half_columns_profile(int(args[0]))
        elif kind == "uppertri":
            p = upper_triangular_profile(int(args[0]), float(args[1]) if len(args) > 1 else 1.0)
        elif kind == "random":
            p = random_profile(int(args[0]), float(args[1]), int(args[2]))
        elif kind == "singular":
            from .ensemble import singular_by_construction

            p = singular_by_construction(int(args[0]), int(args[1]), int(args[2]))
        else:
            raise ParameterError(f"unknown profile kind {kind!r}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"malformed profile spec {spec!r}: {exc}") from None
    return Profile(p.sigma, p.means, name=spec)


# ---------------------------------------------------------------------------
# Atoms


@dataclass(frozen=True, eq=False)
class AtomDistribution:
    """Centered unit-variance scalar distribution.

    Use the module-level constructors (:func:`rademacher`, :func:`gaussian_real`,
    ...) rather than instantiating directly.

    Parameters
    ----------
    kind : str
        Family name.
    params : tuple
        Family parameters.
    phase : float
        Samples are multiplied by ``exp(i * phase)``.
    support, probs : ndarray, optional
        Outcomes and probabilities for discrete families.
    """

    kind: str
    params: tuple = ()
    phase: float = 0.0
    support: np.ndarray | None = field(default=None, repr=False)
    probs: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_discrete(self) -> bool:
        return self.support is not None

    @property
    def is_real(self) -> bool:
        """True when samples are real numbers."""
        if self.is_discrete:
            return bool(np.all(np.abs(self.outcomes().imag) == 0))
        return self.kind in ("gaussian-real", "student-t") and self.phase == 0.0

    @property
    def name(self) -> str:
        base = self.kind
        if self.kind == "two-point":
            base = f"two-point({self.params[0]:g})"
        elif self.kind == "student-t":
            base = f"student-t({self.params[0]:g})"
        if self.phase:
            base += f"@{self.phase:.6g}"
        return base

    def outcomes(self) -> np.ndarray:
        """Support points after applying the phase (discrete atoms only)."""
        if not self.is_discrete:
            raise PreconditionError(f"{self.kind} is not discrete")
        if self.phase:
            return self.support * np.exp(1j * self.phase)
        return self.support

    def rotated(self, theta: float) -> "AtomDistribution":
        """The distribution of ``exp(i theta) * xi``."""
        return AtomDistribution(self.kind, self.params, self.phase + theta, self.support, self.probs)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draw iid samples; real atoms return float arrays, others complex."""
        k = self.kind
        if k == "rademacher" and not self.phase:
            out = rng.integers(0, 2, size=size).astype(float) * 2.0 - 1.0
        elif self.is_discrete:
            vals = self.outcomes()
            if np.all(vals.imag == 0):
                vals = vals.real
            out = vals[rng.choice(len(vals), size=size, p=self.probs)]
            return out
        elif k == "gaussian-real":
            out = rng.standard_normal(size)
        elif k == "gaussian-complex":
            out = (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2)
        elif k == "uniform-complex-disc":
            r = math.sqrt(2) * np.sqrt(rng.random(size))
            out = r * np.exp(2j * np.pi * rng.random(size))
        elif k == "uniform-circle":
            out = np.exp(2j * np.pi * rng.random(size))
        elif k == "student-t":
            df = self.params[0]
            out = rng.standard_t(df, size) * math.sqrt((df - 2) / df)
        else:  # pragma: no cover - constructors restrict kinds
            raise ParameterError(f"unknown atom kind {k!r}")
        if self.phase:
            out = out * np.exp(1j * self.phase)
        return out

    def moment(self, p: float) -> float:
        """``mu_p = (E|xi|^p)^(1/p)``, exact where a closed form is known."""
        if p <= 0:
            raise ParameterError("p must be positive")
        k = self.kind
        if self.is_discrete:
            val = float(np.sum(self.probs * np.abs(self.support) ** p))
        elif k == "gaussian-real":
            val = 2 ** (p / 2) * special.gamma((p + 1) / 2) / math.sqrt(math.pi)
        elif k == "gaussian-complex":
            val = special.gamma(1 + p / 2)
        elif k == "uniform-complex-disc":
            val = 2 * math.sqrt(2) ** p / (p + 2)
        elif k == "uniform-circle":
            val = 1.0
        elif k == "student-t":
            df = self.params[0]
            if p >= df:
                return math.inf
            val = (df ** (p / 2) * special.gamma((p + 1) / 2) * special.gamma((df - p) / 2)
                   / (math.sqrt(math.pi) * special.gamma(df / 2)))
            val *= ((df - 2) / df) ** (p / 2)
        else:  # pragma: no cover
            raise ParameterError(f"unknown atom kind {k!r}")
        return val ** (1 / p)

    @property
    def declared_moments(self) -> dict[float, float]:
        return {p: self.moment(p) for p in (2.0, 3.0, 4.0)}

    def _law(self, n_samples: int, seed: int) -> tuple[np.ndarray, np.ndarray | None]:
        """Outcomes with weights (exact) or samples with ``None`` weights."""
        if self.is_discrete:
            return self.outcomes().astype(complex), self.probs
        rng = np.random.default_rng(seed)
        return self.sample(rng, n_samples).astype(complex), None


def _discrete(kind, params, support, probs) -> AtomDistribution:
    support = np.asarray(support, dtype=complex)
    probs = np.asarray(probs, dtype=float)
    support.setflags(write=False)
    probs.setflags(write=False)
    return AtomDistribution(kind, tuple(params), 0.0, support, probs)


def rademacher() -> AtomDistribution:
    return _discrete("rademacher", (), [1.0, -1.0], [0.5, 0.5])


def gaussian_real() -> AtomDistribution:
    return AtomDistribution("gaussian-real")


def gaussian_complex() -> AtomDistribution:
    """``(g1 + i g2) / sqrt(2)`` with independent standard normals."""
    return AtomDistribution("gaussian-complex")


def uniform_disc() -> AtomDistribution:
    """Uniform on the complex disc of radius ``sqrt(2)``, which has unit variance."""
    return AtomDistribution("uniform-complex-disc")


def uniform_circle() -> AtomDistribution:
    """Uniform on the complex unit circle."""
    return AtomDistribution("uniform-circle")


def two_point(p: float) -> AtomDistribution:
    """Centered two-point law taking ``sqrt((1-p)/p)`` with probability ``p``.

    For ``p`` in ``{0, 1}`` the law degenerates to the point mass at zero.
    """
    if not 0 <= p <= 1:
        raise ParameterError("p must lie in [0, 1]")
    if p in (0.0, 1.0):
        return _discrete("two-point", (p,), [0.0], [1.0])
    return _discrete("two-point", (p,), [math.sqrt((1 - p) / p), -math.sqrt(p / (1 - p))],
                     [p, 1 - p])


def student_t(df: float) -> AtomDistribution:
    """Student t scaled to unit variance (requires ``df > 2``)."""
    if df <= 2:
        raise ParameterError("student-t needs df > 2 for finite variance")
    return AtomDistribution("student-t", (float(df),))


def custom_discrete(support, probs) -> AtomDistribution:
    """Finite law, centered and scaled to unit variance at construction.

    A zero-variance law is centered but left unscaled.
    """
    support = np.asarray(support, dtype=complex).ravel()
    probs = np.asarray(probs, dtype=float).ravel()
    if support.shape != probs.shape or support.size == 0:
        raise ParameterError("support and probs must be nonempty and of equal length")
    if probs.min() < 0 or abs(probs.sum() - 1) > 1e-12:
        raise ParameterError("probs must be non-negative and sum to 1 within 1e-12")
    mean = np.sum(probs * support)
    centered = support - mean
    var = float(np.sum(probs * np.abs(centered) ** 2))
    if var > 0:
        centered = centered / math.sqrt(var)
    return _discrete("custom-discrete", (), centered, probs)


def atom_from_spec(spec: str) -> AtomDistribution:
    """Parse ``rademacher``, ``gaussian``, ``gaussian-complex``, ``disc``,
    ``circle``, ``two-point:p``, ``student-t:df`` or ``custom:x1,x2,...:p1,p2,...``.

    A trailing ``@theta`` applies a phase rotation.
    """
    spec = spec.strip()
    base, _, phase = spec.partition("@")
    kind, _, rest = base.partition(":")
    try:
        if kind == "rademacher":
            atom = rademacher()
        elif kind in ("gaussian", "gaussian-real"):
            atom = gaussian_real()
        elif kind == "gaussian-complex":
            atom = gaussian_complex()
        elif kind in ("disc", "uniform-complex-disc"):
            atom = uniform_disc()
        elif kind in ("circle", "uniform-circle"):
            atom = uniform_circle()
        elif kind == "two-point":
            atom = two_point(float(rest))
        elif kind == "student-t":
            atom = student_t(float(rest))
        elif kind == "custom":
            xs, _, ps = rest.partition(":")
            atom = custom_discrete([complex(x.replace("i", "j")) for x in xs.split(",")],
                                   [float(p) for p in ps.split(",")])
        else:
            raise ParameterError(f"unknown atom {spec!r}")
    except ValueError as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"malformed atom spec {spec!r}: {exc}") from None
    return atom.rotated(float(phase)) if phase else atom


# ---------------------------------------------------------------------------
# Spread and controlled second moment


@dataclass(frozen=True)
class SpreadWitness:
    """Truncated-variance witness ``Var[xi 1(|xi| <= kappa)] >= 1 / kappa``."""

    kappa: float
    truncated_variance: float
    stderr: float = 0.0
    exact: bool = True


def _within(vals, kappa):
    # relative slack so atoms living exactly on |xi| = kappa are not lost to rounding
    return np.abs(vals) <= kappa * (1 + 1e-12)


def _truncated_variance(vals, w, kappa):
    """Variance of ``xi * 1(|xi| <= kappa)`` and its standard error."""
    y = np.where(_within(vals, kappa), vals, 0)
    if w is not None:
        return float(np.sum(w * np.abs(y) ** 2) - abs(np.sum(w * y)) ** 2), 0.0
    n = len(y)
    mean = y.mean()
    dev = np.abs(y - mean) ** 2
    return float(dev.mean()) * n / (n - 1), float(dev.std() / math.sqrt(n))


def check_spread(atom: AtomDistribution, kappa: float, n_samples: int = MC_SAMPLES,
                 seed: int = _MC_SEED) -> SpreadWitness | None:
    """Return a witness when the atom is ``kappa``-spread, else ``None``.

    Discrete atoms are evaluated exactly; continuous atoms by Monte Carlo
    with a three-standard-error allowance. The indicator uses ``|xi| <= kappa``; all atoms are centered.
    """
    if kappa < 1:
        raise ParameterError("kappa must be at least 1")
    vals, w = atom._law(n_samples, seed)
    tv, se = _truncated_variance(vals, w, kappa)
    if tv >= 1.0 / kappa - (1e-12 if w is not None else 3 * se):
        return SpreadWitness(float(kappa), tv, se, exact=w is not None)
    return None


@dataclass(frozen=True)
class ControlledCheck:
    """Outcome of the controlled-second-moment grid check at a given ``kappa``.

    ``margin`` is the smallest value of ``lhs + slack - rhs`` over the grid,
    where ``slack`` is three standard errors for Monte Carlo estimates.
    """

    kappa: float
    passed: bool
    margin: float
    exact: bool


def _shift_grid(n_shifts: int) -> np.ndarray:
    return np.linspace(-2.0, 2.0, n_shifts)


def check_controlled(atom: AtomDistribution, kappa: float, n_phases: int = 32,
                     n_shifts: int = 32, n_samples: int = MC_SAMPLES,
                     seed: int = _MC_SEED, _law=None) -> ControlledCheck:
    """Check ``E[(Re(z xi) - a)^2 1(|xi| <= kappa)] >= (Re z)^2 / kappa`` on a grid.

    The grid holds ``n_phases`` unit ``z`` and ``n_shifts`` real shifts ``a``
    in ``[-2, 2]``. The minimizing shift for each ``z`` is added as well, so
    the check is at least as strict as the plain grid. Only the real part of
    a complex shift enters the left side. The moment condition
    ``E|xi|^2 <= kappa`` is checked too.
    """
    vals, w = atom._law(n_samples, seed) if _law is None else _law
    exact = w is not None
    if w is None:
        w = np.full(len(vals), 1.0 / len(vals))
    second = float(np.sum(w * np.abs(vals) ** 2))
    ind = _within(vals, kappa)
    phis = 2 * np.pi * np.arange(n_phases) / n_phases
    u = (np.exp(1j * phis)[:, None] * vals[None, :]).real * ind[None, :]
    wi = w * ind
    # moments E[u^k 1] for k = 0..4 per phase
    u2 = u * u
    mom = np.stack([np.full(n_phases, wi.sum()), u @ wi, u2 @ wi, (u2 * u) @ wi, (u2 * u2) @ wi])
    a_star = np.where(mom[0] > 0, mom[1] / np.where(mom[0] > 0, mom[0], 1), 0.0)
    shifts = np.concatenate([np.broadcast_to(_shift_grid(n_shifts), (n_phases, n_shifts)),
                             a_star[:, None]], axis=1)
    m0, m1, m2, m3, m4 = (x[:, None] for x in mom)
    a = shifts
    lhs = m2 - 2 * a * m1 + a ** 2 * m0
    if exact:
        slack = 1e-12
    else:
        # second moment of (u - a)^2 1
        q2 = m4 - 4 * a * m3 + 6 * a ** 2 * m2 - 4 * a ** 3 * m1 + a ** 4 * m0
        slack = 3 * np.sqrt(np.maximum(q2 - lhs ** 2, 0) / len(vals))
    rhs = (np.cos(phis) ** 2 / kappa)[:, None]
    margin = float(np.min(lhs + slack - rhs))
    passed = margin >= 0 and second <= kappa + (1e-12 if exact else 0.0)
    return ControlledCheck(float(kappa), bool(passed), margin, exact)


def _principal_angle(theta: float) -> float:
    """Reduce an angle modulo pi into ``(-pi/2, pi/2]``."""
    t = math.remainder(theta, math.pi)
    if t <= -math.pi / 2 + 1e-15:
        t += math.pi
    return 0.0 if t == 0 else t


def truncated_covariance(atom: AtomDistribution, kappa0: float, n_samples: int = MC_SAMPLES,
                         seed: int = _MC_SEED) -> np.ndarray:
    """2x2 covariance of ``(Re eta, Im eta)`` where ``eta`` is ``xi`` conditioned
    on ``|xi| <= kappa0`` and recentered."""
    vals, w = atom._law(n_samples, seed)
    if w is None:
        w = np.full(len(vals), 1.0 / len(vals))
    ind = _within(vals, kappa0)
    mass = w[ind].sum()
    if mass <= 0:
        return np.zeros((2, 2))
    x = vals[ind]
    p = w[ind] / mass
    eta = x - np.sum(p * x)
    xy = np.stack([eta.real, eta.imag])
    return (xy * p) @ xy.T


def controlled_phase(atom: AtomDistribution, kappa0: float, max_doublings: int = 30,
                     n_samples: int = MC_SAMPLES, seed: int = _MC_SEED) -> tuple[float, float]:
    """Phase ``theta`` and level ``kappa`` such that ``exp(i theta) xi`` has a
    ``kappa``-controlled second moment.

    The phase rotates the top eigenvector of the truncated covariance onto the
    real axis. ``kappa`` is the smallest value in ``kappa0 * 2**j`` that passes
    :func:`check_controlled`.

    Raises
    ------
    PreconditionError
        If the atom is not ``kappa0``-spread, or no ``kappa`` passes.
    """
    if check_spread(atom, kappa0, n_samples, seed) is None:
        raise PreconditionError(f"atom {atom.name} is not {kappa0:g}-spread")
    cov = truncated_covariance(atom, kappa0, n_samples, seed)
    evals, evecs = np.linalg.eigh(cov)
    top = evecs[:, -1]
    if abs(evals[-1] - evals[0]) <= 1e-12 * max(evals[-1], 1e-300):
        theta = 0.0  # isotropic: every direction is principal
    else:
        theta = _principal_angle(-math.atan2(top[1], top[0])) + 0.0
    vals, w = atom._law(n_samples, seed)
    law = (vals * np.exp(1j * theta), w)
    for j in range(max_doublings + 1):
        kappa = kappa0 * 2.0 ** j
        if check_controlled(atom.rotated(theta), kappa, _law=law).passed:
            return theta, kappa
    raise PreconditionError(f"no kappa up to {kappa0 * 2.0 ** max_doublings:g} passes")
