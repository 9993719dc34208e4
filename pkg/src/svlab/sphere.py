"""Geometry of the complex unit sphere: compressible vectors, nets and
restricted invertibility.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import InternalError, ParameterError, PreconditionError

__all__ = [
    "check_unit",
    "comp_distance",
    "is_compressible",
    "spread_sets",
    "Net",
    "build_net",
    "covering_radius",
    "save_net",
    "load_net",
    "restricted_invertibility",
    "restricted_rows",
    "kernel_net",
    "random_unit_vectors",
    "C_NET",
]

C_NET = 6.0
UNIT_TOL = 1e-12
_MAX_NET = 5 * 10**7


def check_unit(v) -> np.ndarray:
    """Return ``v`` as a complex array after checking ``| ||v|| - 1 | <= 1e-12``."""
    v = np.asarray(v, dtype=complex).ravel()
    if abs(np.linalg.norm(v) - 1) > UNIT_TOL:
        raise PreconditionError(f"vector is not unit (norm {np.linalg.norm(v):.15g})")
    return v


def random_unit_vectors(count: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on the unit sphere of ``C^m``, one per row."""
    z = rng.standard_normal((count, m)) + 1j * rng.standard_normal((count, m))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def comp_distance(v, k: int) -> float:
    """Distance from ``v`` to the set of ``k``-sparse vectors.

    The nearest ``k``-sparse vector keeps the ``k`` entries of largest modulus,
    so the distance is the norm of the remaining entries.
    """
    v = np.asarray(v, dtype=complex).ravel()
    m = v.size
    if not 1 <= k <= m:
        raise ParameterError(f"k must lie in [1, {m}]")
    sq = np.sort(np.abs(v) ** 2)
    return float(math.sqrt(sq[: m - k].sum()))


def is_compressible(v, theta: float, rho: float) -> bool:
    """Whether ``v`` lies within ``rho`` of a vector with at most ``theta m`` nonzeros."""
    v = np.asarray(v, dtype=complex).ravel()
    k = math.floor(theta * v.size + 1e-9)
    dist = float(np.linalg.norm(v)) if k == 0 else comp_distance(v, k)
    return dist <= rho


def spread_sets(v, theta: float, rho: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates where an incompressible unit vector is spread out.

    Returns
    -------
    L_plus : ndarray
        Indices with ``|v_j| >= rho / sqrt(m)``; there are at least ``theta m``.
    L : ndarray
        Indices of ``L_plus`` with ``|v_j| <= lam / sqrt(theta m)``; there are
        at least ``(1 - 1/lam**2) theta m``.
    """
    v = check_unit(v)
    if lam < 1:
        raise ParameterError("lam must be at least 1")
    if is_compressible(v, theta, rho):
        raise PreconditionError("v is compressible")
    m = v.size
    a = np.abs(v)
    L_plus = np.flatnonzero(a >= rho / math.sqrt(m))
    L = L_plus[a[L_plus] <= lam / math.sqrt(theta * m)]
    if len(L_plus) < theta * m - 1e-9 or len(L) < (1 - 1 / lam ** 2) * theta * m - 1e-9:
        raise InternalError("spread-set cardinality bound failed")
    return L_plus, L


# ---------------------------------------------------------------------------
# Nets


@dataclass
class Net:
    """Finite ``rho``-net of the unit sphere of a subspace.

    Attributes
    ----------
    points : ndarray, shape (N, m)
        Net points, unit vectors of the subspace.
    rho : float
    basis : ndarray, shape (m, k)
        Orthonormal basis of the subspace.
    coords : ndarray, shape (N, k)
        Coordinates of the points in ``basis``.
    support : ndarray, optional
        Ambient coordinates the subspace lives on (for kernel nets).
    """

    points: np.ndarray
    rho: float
    basis: np.ndarray
    coords: np.ndarray
    support: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    @property
    def cardinality(self) -> int:
        return len(self.points)

    def bound(self) -> float:
        """Cardinality bound ``(C_NET / rho)**(2k)``."""
        return 1.0 if self.rho >= 2 else (C_NET / self.rho) ** (2 * self.k)

    def __len__(self):
        return self.cardinality


def _grid_shell(d: int, h: float, lo: float, hi: float) -> np.ndarray:
    """Integer points ``z`` with ``lo <= h ||z|| <= hi``, built dimension by dimension."""
    R = int(math.floor(hi / h))
    r = np.arange(-R, R + 1)
    lim = (hi / h) ** 2 + 1e-9
    pts = r[:, None]
    for dim in range(1, d):
        sq = (pts.astype(float) ** 2).sum(axis=1)
        # prune partial vectors that already exceed the outer radius
        new = pts[:, None, :].repeat(len(r), axis=1)
        ext = np.broadcast_to(r[None, :, None], (len(pts), len(r), 1))
        cand = np.concatenate([new, ext], axis=2).reshape(-1, dim + 1)
        keep = (sq[:, None] + (r[None, :] ** 2)).reshape(-1) <= lim
        pts = cand[keep]
        if len(pts) > _MAX_NET:
            raise ParameterError("net too large; increase rho or reduce k")
    norms = h * np.sqrt((pts.astype(float) ** 2).sum(axis=1))
    return pts[(norms >= lo - 1e-12) & (norms <= hi + 1e-12)]


def build_net(V, rho: float) -> Net:
    """Deterministic grid net of the unit sphere of ``span(V)``.

    Coordinates in ``V`` form ``R^(2k)``. A cubic grid whose covering radius
    is ``r = rho sqrt(1 - rho**2/4)`` is cut to the shell ``| ||g|| - 1 | <= r``
    and projected to the sphere. A unit point within ``r`` of a grid point is
    within ``rho`` of its projection, so the result is a ``rho``-net.
    Values ``rho >= 2`` return a single point; values in ``[1, 2)`` use 0.99.

    Parameters
    ----------
    V : array_like, shape (m, k)
        Orthonormal basis (columns).
    rho : float
    """
    V = np.asarray(V, dtype=complex)
    if V.ndim == 1:
        V = V[:, None]
    k = V.shape[1]
    if k == 0:
        raise ParameterError("empty subspace")
    if np.abs(V.conj().T @ V - np.eye(k)).max() > 1e-10:
        raise PreconditionError("basis is not orthonormal")
    if rho <= 0:
        raise ParameterError("rho must be positive")
    if rho >= 2:
        coords = np.zeros((1, k), dtype=complex)
        coords[0, 0] = 1
        return Net(coords @ V.T, rho, V, coords)
    eff = min(rho, 0.99)
    d = 2 * k
    r = eff * math.sqrt(1 - eff ** 2 / 4)
    h = 2 * r / math.sqrt(d)
    z = _grid_shell(d, h, 1 - r, 1 + r).astype(float) * h
    x = z / np.linalg.norm(z, axis=1, keepdims=True)
    # grid points on one ray project to the same net point
    _, first = np.unique(np.round(x, 12), axis=0, return_index=True)
    x = x[np.sort(first)]
    coords = x[:, :k] + 1j * x[:, k:]
    net = Net(coords @ V.T, rho, V, coords)
    if net.cardinality > net.bound():
        raise InternalError(f"net has {net.cardinality} points, above the bound {net.bound():.4g}")
    return net


def covering_radius(net: Net, n_samples: int = 10**4, seed: int = 0) -> float:
    """Largest distance from a random sphere point of the subspace to the net."""
    rng = np.random.default_rng(seed)
    u = random_unit_vectors(n_samples, net.k, rng)
    tree = cKDTree(np.hstack([net.coords.real, net.coords.imag]))
    dist, _ = tree.query(np.hstack([u.real, u.imag]))
    return float(dist.max())


def save_net(net: Net, path) -> None:
    """Write ``path.npy`` (points) and ``path.json`` (``rho``, ``k``, ``cardinality``)."""
    path = Path(path)
    np.save(path.with_suffix(".npy"), net.points)
    np.save(path.with_suffix(".basis.npy"), net.basis)
    meta = {"rho": net.rho, "k": net.k, "cardinality": net.cardinality,
            "support": None if net.support is None else np.asarray(net.support).tolist()}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_net(path) -> Net:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    pts = np.load(path.with_suffix(".npy"))
    basis = np.load(path.with_suffix(".basis.npy"))
    coords = pts @ basis.conj() if len(pts) else np.zeros((0, basis.shape[1]), complex)
    sup = None if meta["support"] is None else np.asarray(meta["support"])
    return Net(pts, meta["rho"], basis, coords, sup)


# ---------------------------------------------------------------------------
# Restricted invertibility


def restricted_invertibility(vectors, beta: float, tol: float = 1e-8) -> np.ndarray:
    """Select ``floor((1-beta)**2 m)`` vectors of an isotropic frame whose
    frame operator has ``k``-th eigenvalue above ``beta**2 m / n``.

    Barrier-potential greedy selection. With ``A`` the current frame
    operator and the barrier ``b`` lowered by ``beta / (n (1 - beta))`` per
    step from ``beta m / n``, each step adds a vector for which the potential
    ``tr (A - b I)^{-1}`` does not increase and one eigenvalue crosses the
    barrier.

    Parameters
    ----------
    vectors : array_like, shape (n, m)
        Rows ``v_i`` with ``sum_i v_i v_i^* = I_m``.
    beta : float
        In ``(0, 1)``.

    Returns
    -------
    ndarray
        Sorted selected indices.
    """
    Vt = np.asarray(vectors, dtype=complex)
    if Vt.ndim != 2:
        raise ParameterError("vectors must be a 2-d array of rows")
    n, m = Vt.shape
    if not 0 < beta < 1:
        raise ParameterError("beta must lie in (0, 1)")
    # row v_i as a column vector: frame operator sum_i v_i v_i^*
    frame = Vt.T @ Vt.conj()
    if np.abs(frame - np.eye(m)).max() > tol:
        raise PreconditionError("vectors are not an isotropic frame")
    k = math.floor((1 - beta) ** 2 * m + 1e-12)
    if k == 0:
        return np.zeros(0, dtype=int)
    b = beta * m / n
    step = beta / (n * (1 - beta))
    A = np.zeros((m, m), dtype=complex)
    chosen: list[int] = []
    avail = np.ones(n, dtype=bool)
    for _ in range(k):
        b_next = b - step
        lam, U = np.linalg.eigh(A)
        W = np.abs(Vt.conj() @ U) ** 2  # |<u_j, v_i>|^2
        Y = W @ (1 / (lam - b_next))
        X = W @ (1 / (lam - b_next) ** 2)
        gap = np.sum(1 / (lam - b)) - np.sum(1 / (lam - b_next))
        score = np.where(avail, X / gap + Y, np.inf)
        i = int(np.argmin(score))
        if score[i] > -1 + 1e-9:
            raise InternalError(f"no admissible vector at step {len(chosen)} (score {score[i]:.3g})")
        chosen.append(i)
        avail[i] = False
        v = Vt[i].conj()
        A = A + np.outer(v, v.conj())
        b = b_next
    lam = np.linalg.eigvalsh(A)
    lam_k = lam[m - k]
    target = beta ** 2 * m / n
    if lam_k < target * (1 - 1e-10):
        raise InternalError(f"selected frame has lambda_k = {lam_k:.6g} < {target:.6g}")
    return np.array(sorted(chosen), dtype=int)


def restricted_rows(M, beta: float) -> np.ndarray:
    """Rows ``I`` of a tall matrix with ``s_|I|(M_I) >= beta s_m(M) sqrt(m / n)``.

    ``|I| = floor((1-beta)**2 m)``. The rows of ``U`` in the thin SVD
    ``M = U S W^*`` form an isotropic frame, and the selection from
    :func:`restricted_invertibility` transfers to ``M``.
    """
    M = np.asarray(M, dtype=complex)
    n, m = M.shape
    if n < m:
        raise PreconditionError("need n >= m")
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s[-1] <= 1e-12 * max(s[0], 1e-300):
        raise PreconditionError("M does not have full column rank")
    I = restricted_invertibility(U, beta)
    if I.size == 0:
        raise ParameterError("(1 - beta)**2 m < 1 selects no rows")
    return I


def kernel_net(M_sub, J, eps: float) -> Net:
    """Net of the unit sphere of ``ker(M_sub)``, a subspace of ``C^J``.

    The kernel is computed from the SVD with tolerance ``1e-10 ||M_sub||``.
    ``M_sub`` must have full row rank, so the kernel has dimension
    ``|J| - |I|``. A trivial kernel returns an empty net.
    """
    M = np.asarray(M_sub, dtype=complex)
    if M.ndim != 2:
        raise ParameterError("M_sub must be 2-d")
    r, c = M.shape
    J = np.asarray(J, dtype=int).ravel()
    if J.size != c:
        raise ParameterError("J must index the columns of M_sub")
    _, s, Wh = np.linalg.svd(M, full_matrices=True)
    tol = 1e-10 * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    if rank != r:
        raise PreconditionError(f"kernel dimension mismatch: rank {rank}, expected {r}")
    dim = c - r
    if dim == 0:
        return Net(np.zeros((0, c), complex), eps, np.zeros((c, 0), complex),
                   np.zeros((0, 0), complex), J)
    basis = Wh[r:].conj().T
    net = build_net(basis, eps)
    net.support = J
    return net
