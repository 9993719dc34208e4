"""Sampling structured random matrices and Monte Carlo tail experiments."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .errors import NumericalError, ParameterError, PreconditionError
from .profile import AtomDistribution, Profile

__all__ = [
    "Shift",
    "shift_from_spec",
    "MatrixSample",
    "derive_seed",
    "sample",
    "singular_values",
    "smin",
    "opnorm",
    "is_singular",
    "singular_by_construction",
    "wilson_interval",
    "TailExperiment",
    "TailResult",
    "tail_experiment",
    "SINGULAR_RTOL",
]

SINGULAR_RTOL = 1e-10


# ---------------------------------------------------------------------------
# Shifts


@dataclass(frozen=True)
class Shift:
    """Deterministic mean matrix added to the noise.

    Parameters
    ----------
    kind : {"none", "diag", "general"}
    z : ndarray or float, optional
        Diagonal shift values ``z_i``; the matrix is ``diag(z_i sqrt(n))``.
        A scalar applies to every index.
    matrix : ndarray, optional
        Explicit mean matrix for ``kind="general"``.
    r0, K0 : float, optional
        Required range ``r0 <= |z_i| <= K0`` for diagonal shifts.
    label : str
    """

    kind: str = "none"
    z: object = None
    matrix: np.ndarray | None = None
    r0: float | None = None
    K0: float | None = None
    label: str = "none"

    def z_values(self, n: int) -> np.ndarray:
        if self.kind != "diag":
            raise ParameterError("only diagonal shifts have z values")
        z = np.broadcast_to(np.asarray(self.z, dtype=complex), (n,)).copy()
        if z.shape != (n,):  # pragma: no cover - broadcast_to raises first
            raise ParameterError("shift length mismatch")
        return z

    def materialize(self, n: int) -> np.ndarray | None:
        """The ``n x n`` mean matrix, or ``None`` for no shift."""
        if self.kind == "none":
            return None
        if self.kind == "general":
            B = np.asarray(self.matrix)
            if B.shape != (n, n):
                raise ParameterError(f"shift matrix has shape {B.shape}, expected {(n, n)}")
            return B
        z = self.z_values(n)
        a = np.abs(z)
        if self.r0 is not None and np.any(a < self.r0 - 1e-12):
            raise PreconditionError(f"|z_i| below r0 = {self.r0}")
        if self.K0 is not None and np.any(a > self.K0 + 1e-12):
            raise PreconditionError(f"|z_i| above K0 = {self.K0}")
        d = z * math.sqrt(n)
        return np.diag(d.real if np.all(d.imag == 0) else d)


def shift_from_spec(spec: str, n: int | None = None) -> Shift:
    """Parse a shift spec.

    ``none``; ``diag:Z`` (every ``z_i = Z``, complex literals allowed);
    ``diag-random:R0:K0:SEED`` (moduli uniform in ``[R0, K0]``, uniform phases,
    needs ``n``); ``scalar:Z`` (the matrix ``-Z sqrt(n) I``, the scalar shift of
    a centered matrix).
    """
    parts = spec.strip().split(":")
    kind = parts[0].lower()
    try:
        if kind == "none" and len(parts) == 1:
            return Shift()
        if kind == "diag" and len(parts) == 2:
            z = complex(parts[1])
            z = z.real if z.imag == 0 else z
            return Shift("diag", z, r0=abs(z), K0=abs(z), label=spec)
        if kind == "scalar" and len(parts) == 2:
            z = -complex(parts[1])
            z = z.real if z.imag == 0 else z
            return Shift("diag", z, label=spec)
        if kind == "diag-random" and len(parts) == 4:
            if n is None:
                raise ParameterError("diag-random needs the matrix size")
            r0, K0, seed = float(parts[1]), float(parts[2]), int(parts[3])
            if not 0 < r0 <= K0:
                raise ParameterError("need 0 < r0 <= K0")
            rng = np.random.default_rng(seed)
            z = rng.uniform(r0, K0, n) * np.exp(2j * np.pi * rng.random(n))
            return Shift("diag", z, r0=r0, K0=K0, label=spec)
    except ValueError as exc:
        raise ParameterError(f"bad shift spec {spec!r}: {exc}") from None
    raise ParameterError(f"bad shift spec {spec!r}")


# ---------------------------------------------------------------------------
# Samples


@dataclass
class MatrixSample:
    """One draw of ``M = sigma * X + B``.

    Attributes
    ----------
    matrix : ndarray
        ``M``.
    noise : ndarray
        The atom draws ``X``.
    sigma : ndarray
    mean : ndarray or None
        ``B``.
    seed : object
        Seed the draw was made from.
    profile_name, atom_name, shift_label : str
    """

    matrix: np.ndarray
    noise: np.ndarray
    sigma: np.ndarray
    mean: np.ndarray | None
    seed: object
    profile_name: str = ""
    atom_name: str = ""
    shift_label: str = "none"

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def noise_part(self) -> np.ndarray:
        """``sigma * X``."""
        return self.sigma * self.noise

    def diagonal_shift(self) -> np.ndarray | None:
        """Diagonal of ``B`` if ``B`` is diagonal (zero counts as diagonal)."""
        if self.mean is None:
            return np.zeros(self.n)
        B = self.mean
        d = np.diag(B).copy()
        if np.any(B - np.diag(d)):
            return None
        return d


def derive_seed(master: int, index: int) -> np.random.SeedSequence:
    """Independent stream for trial ``index`` of a run seeded by ``master``."""
    return np.random.SeedSequence([int(master), int(index)])


def sample(profile: Profile, atom: AtomDistribution, shift: Shift | None = None,
           seed=0) -> MatrixSample:
    """Draw ``M = sigma * X + B``.

    ``B`` is the profile's mean matrix plus the shift. The draw depends only
    on ``seed`` (an int or a ``SeedSequence``).
    """
    n, m = profile.shape
    shift = shift or Shift()
    B = profile.means
    S = shift.materialize(n) if shift.kind != "none" else None
    if S is not None and n != m:
        raise ParameterError("shifts need a square profile")
    if S is not None:
        B = S if B is None else B + S
    rng = np.random.default_rng(seed)
    X = atom.sample(rng, (n, m))
    M = profile.sigma * X
    if B is not None:
        M = M + B
    return MatrixSample(M, X, profile.sigma, B, seed, profile.name, atom.name, shift.label)


def _as_matrix(ms) -> np.ndarray:
    return ms.matrix if isinstance(ms, MatrixSample) else np.asarray(ms)


def singular_values(ms) -> np.ndarray:
    """All singular values in decreasing order."""
    M = _as_matrix(ms)
    try:
        return np.linalg.svd(M, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from None


def smin(ms, cross_check: bool = False) -> float:
    """Smallest singular value.

    With ``cross_check`` and an invertible matrix, also checks
    ``smin * ||M^-1|| = 1`` to ``1e-8`` relative.
    """
    M = _as_matrix(ms)
    s = singular_values(M)
    val = float(s[-1]) if M.shape[0] <= M.shape[1] else float(s[M.shape[1] - 1])
    if cross_check and M.shape[0] == M.shape[1] and val > SINGULAR_RTOL * s[0]:
        inv_norm = float(np.linalg.svd(np.linalg.inv(M), compute_uv=False)[0])
        if abs(val * inv_norm - 1) > 1e-8:
            raise NumericalError(f"smin cross-check failed: smin * ||M^-1|| = {val * inv_norm!r}")
    return val


def opnorm(ms) -> float:
    """Largest singular value."""
    return float(singular_values(ms)[0])


def is_singular(ms) -> bool:
    """Numerical singularity: ``smin <= 1e-10 opnorm``."""
    s = singular_values(ms)
    return bool(s[-1] <= SINGULAR_RTOL * s[0])


def singular_by_construction(n: int, k: int, m: int) -> Profile:
    """All-ones profile with a zero ``k x m`` block in the top-left corner.

    With ``k + m > n`` the first ``k`` rows live on ``n - m < k`` columns, so
    every draw with zero mean is singular.
    """
    if not (0 < k <= n and 0 < m <= n):
        raise ParameterError("need 0 < k, m <= n")
    if k + m <= n:
        raise ParameterError(f"k + m = {k + m} <= n = {n} does not force singularity")
    sigma = np.ones((n, n))
    sigma[:k, :m] = 0.0
    return Profile(sigma, name=f"singular:{n}:{k}:{m}")


def wilson_interval(hits: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(hits), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


# ---------------------------------------------------------------------------
# Tail experiments


@dataclass
class TailExperiment:
    """Monte Carlo estimate of small-singular-value tails.

    For ``grid_kind="t"`` a gridpoint ``t`` counts trials with
    ``smin <= t / sqrt(n)``; for ``grid_kind="beta"`` it counts
    ``smin <= n**(-beta)``. Both are intersected with the boundedness event
    ``||M|| <= K sqrt(n)`` when ``K`` is given.
    """

    profile: Profile
    atom: AtomDistribution
    grid: list
    trials: int = 1000
    seed: int = 0
    shift: Shift = field(default_factory=Shift)
    grid_kind: str = "t"
    K: float | None = None
    jobs: int = 1


@dataclass
class TailResult:
    spec: TailExperiment
    hits: np.ndarray
    bounded: int
    smins: np.ndarray
    opnorms: np.ndarray

    def frequencies(self) -> np.ndarray:
        return self.hits / self.spec.trials

    def rows(self) -> list[dict]:
        """One record per gridpoint with the CSV columns."""
        e = self.spec
        out = []
        for g, h in zip(e.grid, self.hits):
            lo, hi = wilson_interval(int(h), e.trials)
            out.append({
                "n": e.profile.n, "atom": e.atom.name, "profile_id": e.profile.name,
                "shift_id": e.shift.label, "gridpoint": repr(float(g)), "hits": int(h),
                "trials": e.trials, "wilson_lo": repr(lo), "wilson_hi": repr(hi),
                "K": "" if e.K is None else repr(float(e.K)), "seed": e.seed,
            })
        return out

    def to_csv(self, extra: dict | None = None) -> str:
        rows = self.rows()
        cols = list(rows[0]) + list(extra or {})
        buf = io.StringIO()
        wr = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            r.update(extra or {})
            wr.writerow(r)
        return buf.getvalue()


def _trial_chunk(args) -> tuple[np.ndarray, np.ndarray]:
    profile, atom, shift, seed, indices = args
    sm = np.empty(len(indices))
    op = np.empty(len(indices))
    for k, i in enumerate(indices):
        s = singular_values(sample(profile, atom, shift, derive_seed(seed, i)))
        sm[k], op[k] = s[-1], s[0]
    return sm, op


def tail_experiment(spec: TailExperiment) -> TailResult:
    """Run the trials and count gridpoint hits.

    Trial ``i`` uses the stream :func:`derive_seed` ``(seed, i)``, so the
    table does not depend on ``jobs`` or scheduling.
    """
    if len(spec.grid) == 0:
        raise ParameterError("grid is empty")
    if spec.trials < 100:
        raise ParameterError("need at least 100 trials")
    if spec.grid_kind not in ("t", "beta"):
        raise ParameterError("grid_kind must be 't' or 'beta'")
    n = spec.profile.n
    jobs = max(1, int(spec.jobs or 1))
    idx = np.arange(spec.trials)
    if jobs == 1:
        sm, op = _trial_chunk((spec.profile, spec.atom, spec.shift, spec.seed, idx))
    else:
        chunks = np.array_split(idx, min(jobs * 4, spec.trials))
        args = [(spec.profile, spec.atom, spec.shift, spec.seed, c) for c in chunks]
        with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1)) as ex:
            parts = list(ex.map(_trial_chunk, args))
        sm = np.concatenate([p[0] for p in parts])
        op = np.concatenate([p[1] for p in parts])
    bounded = np.ones(spec.trials, bool) if spec.K is None else op <= spec.K * math.sqrt(n)
    g = np.asarray(spec.grid, dtype=float)
    thr = g / math.sqrt(n) if spec.grid_kind == "t" else float(n) ** (-g)
    hits = ((sm[None, :] <= thr[:, None]) & bounded[None, :]).sum(axis=1)
    return TailResult(spec, hits, int(bounded.sum()), sm, op)
