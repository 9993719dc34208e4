"""Deterministic lower-bound certificates for the smallest singular value.

Every bound combines measured quantities of a concrete matrix through the
Schur complement inequality: for ``M = [[A, B], [C, D]]`` with ``D``
invertible,

    s_min(M) >= min(s_D, s_S) / ((1 + ||B|| / s_D) (1 + ||C|| / s_D))

where ``s_D <= s_min(D)`` and ``s_S <= s_min(A - B D^-1 C)``. The right side
is increasing in ``s_D`` and ``s_S``, so lower bounds may replace the exact
values.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .ensemble import MatrixSample
from .errors import CertificateFailure, DecompositionError, ParameterError, PreconditionError
from .profile import Profile
from .regularity import Decomposition, profile_hash

__all__ = [
    "CertNode",
    "Certificate",
    "schur_formula",
    "schur_bound",
    "svd_leaf",
    "schur_certificate",
    "triangular_certificate",
    "pipeline_certificate",
    "CONSISTENCY_TOL",
]

log = logging.getLogger(__name__)

CONSISTENCY_TOL = 1e-12
_COND_WARN = 1e-6


def _norm(X: np.ndarray) -> float:
    if X.size == 0:
        return 0.0
    return float(np.linalg.norm(X, 2))


def _smin(X: np.ndarray) -> float:
    return float(np.linalg.svd(X, compute_uv=False)[-1])


def schur_formula(norm_B: float, norm_C: float, s_D: float, s_S: float) -> float:
    """``min(s_D, s_S) / ((1 + norm_B / s_D)(1 + norm_C / s_D))``."""
    if not s_D > 0:
        raise ParameterError(f"s_D must be positive, got {s_D!r}")
    return min(s_D, s_S) / ((1 + norm_B / s_D) * (1 + norm_C / s_D))


# ---------------------------------------------------------------------------
# Certificate tree


@dataclass
class CertNode:
    """One step of a certificate.

    ``kind`` is ``"leaf"`` (``method`` is ``"svd"`` or ``"diagonal"``),
    ``"schur"`` (children ``[D, S]``) or ``"residual"`` (one child, minus a
    measured perturbation norm). ``indices`` are the rows and columns of the
    block the node bounds.
    """

    kind: str
    bound: float
    label: str = ""
    indices: list | None = None
    method: str | None = None
    norm_B: float = 0.0
    norm_C: float = 0.0
    residual: float = 0.0
    children: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def recompute(self) -> float:
        """The bound implied by the children and stored norms."""
        if self.kind == "schur":
            d, s = self.children
            return schur_formula(self.norm_B, self.norm_C, d.bound, s.bound)
        if self.kind == "residual":
            return self.children[0].bound - self.residual
        if self.method == "diagonal":
            return self.meta["diag_min"] - self.meta["noise_norm"]
        return self.bound

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "bound": self.bound, "label": self.label}
        if self.indices is not None:
            d["size"] = len(self.indices)
            d["indices"] = [int(i) for i in self.indices]
        if self.kind == "leaf":
            d["method"] = self.method
        if self.kind == "schur":
            d["norm_B"] = self.norm_B
            d["norm_C"] = self.norm_C
        if self.kind == "residual":
            d["residual"] = self.residual
        if self.meta:
            d["meta"] = self.meta
        if self.children:
            d["children"] = [c.to_dict() for c in self.children]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CertNode":
        return cls(d["kind"], d["bound"], d.get("label", ""), d.get("indices"), d.get("method"),
                   d.get("norm_B", 0.0), d.get("norm_C", 0.0), d.get("residual", 0.0),
                   [cls.from_dict(c) for c in d.get("children", [])], d.get("meta", {}))


@dataclass
class Certificate:
    """Lower bound ``bound <= s_min(M)`` with the tree that proves it."""

    bound: float
    tree: CertNode
    meta: dict = field(default_factory=dict)

    def nodes(self):
        return self.tree.walk()

    def consistency_error(self) -> float:
        """Largest relative gap between a stored bound and its recomputation."""
        worst = 0.0
        for node in self.nodes():
            r = node.recompute()
            worst = max(worst, abs(r - node.bound) / max(1.0, abs(node.bound)))
        return worst

    def is_consistent(self, tol: float = CONSISTENCY_TOL) -> bool:
        return self.consistency_error() <= tol and self.bound == max(self.tree.bound, 0.0)

    def leaf_methods(self) -> list[str]:
        return sorted({n.method for n in self.nodes() if n.kind == "leaf"})

    def to_dict(self) -> dict:
        return {"bound": self.bound, "meta": self.meta, "tree": self.tree.to_dict()}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        return cls(d["bound"], CertNode.from_dict(d["tree"]), d.get("meta", {}))


def _finish(root: CertNode, meta: dict) -> Certificate:
    return Certificate(max(root.bound, 0.0), root, meta)


# ---------------------------------------------------------------------------
# Schur steps


def svd_leaf(M: np.ndarray, indices=None, label: str = "") -> CertNode:
    """Leaf bounding ``s_min`` of a block by its measured value."""
    return CertNode("leaf", _smin(M), label, None if indices is None else list(indices), "svd")


def _schur_complement(A, B, C, D) -> np.ndarray:
    """``A - B D^-1 C`` with ``D^-1`` applied through an LU factorization."""
    if C.size == 0 or B.size == 0:
        return A.copy()
    lu = lu_factor(D)
    return A - B @ lu_solve(lu, C)


def _schur_node(A, B, C, D, d_node: CertNode, label: str, indices=None,
                s_label: str = "schur complement") -> CertNode:
    """Combine a lower bound for ``D`` with a measured SVD of the complement."""
    if not d_node.bound > 0:
        raise CertificateFailure(f"{label}: lower bound for D is not positive", block=d_node.label,
                                 value=d_node.bound)
    nD = _norm(D)
    if d_node.bound < _COND_WARN * nD:
        log.warning("%s: s_D = %.3g is below 1e-6 ||D|| = %.3g", label, d_node.bound, _COND_WARN * nD)
    S = _schur_complement(A, B, C, D)
    s_node = svd_leaf(S, label=s_label)
    nB, nC = _norm(B), _norm(C)
    bound = schur_formula(nB, nC, d_node.bound, s_node.bound)
    return CertNode("schur", bound, label, None if indices is None else list(indices),
                    norm_B=nB, norm_C=nC, children=[d_node, s_node])


def schur_bound(M, split: int, s_D: float, s_schur: float) -> float:
    """Schur complement lower bound for ``M`` split after row/column ``split``.

    ``A = M[:split, :split]`` and ``D = M[split:, split:]``; the norms of the
    off-diagonal blocks are measured.
    """
    M = np.asarray(M)
    n = M.shape[0]
    if M.shape != (n, n) or not 0 < split < n:
        raise ParameterError("need a square matrix and 0 < split < n")
    return schur_formula(_norm(M[:split, split:]), _norm(M[split:, :split]), s_D, s_schur)


def schur_certificate(M, split: int) -> Certificate:
    """One Schur step for ``M`` split after ``split`` with SVD leaves."""
    M = np.asarray(M)
    n = M.shape[0]
    if M.shape != (n, n) or not 0 < split < n:
        raise ParameterError("need a square matrix and 0 < split < n")
    top, bot = np.arange(split), np.arange(split, n)
    D = M[split:, split:]
    d_node = svd_leaf(D, bot, "D")
    if not d_node.bound > 0:
        raise CertificateFailure("D is singular", block="D", value=d_node.bound)
    root = _schur_node(M[:split, :split], M[:split, split:], M[split:, :split], D, d_node, "root",
                       range(n))
    root.meta["split"] = [top.size, bot.size]
    return _finish(root, {"n": n, "method": "schur", "split": split})


# ---------------------------------------------------------------------------
# Triangular certificate


def _triangular_tree(noise: np.ndarray, diag: np.ndarray, r0: float | None = None,
                     K: float | None = None, labels=None) -> tuple[CertNode, dict]:
    """Dyadic Schur recursion for ``noise + diag(diag)`` with upper triangular ``noise``.

    ``diag`` plays the role of the shift ``z_i sqrt(n)``. The dimension is
    padded to a power of two with zero noise and diagonal ``r0 sqrt(n)``.
    Leaves at depth ``p0 = floor(2 log2(2K / r0)) + 1`` (capped at the
    number of levels) are bounded by ``min |d_i| - ||noise block||``.
    """
    n = noise.shape[0]
    d = np.asarray(diag)
    if np.tril(noise, -1).any():
        raise PreconditionError("noise part is not upper triangular")
    root_n = math.sqrt(n)
    z = np.abs(d) / root_n
    pad = float(np.abs(d).min()) if r0 is None else float(r0) * root_n
    r0 = float(z.min()) if r0 is None else float(r0)
    if r0 <= 0 or z.min() < r0 * (1 - 1e-12):
        raise PreconditionError("need |z_i| >= r0 > 0")
    K = _norm(noise) / root_n if K is None else float(K)
    q = 1 << max(0, (n - 1).bit_length())
    levels = q.bit_length() - 1
    p0 = 0 if K <= 0 else math.floor(2 * math.log2(2 * K / r0)) + 1
    p0 = min(max(p0, 0), levels)
    N = np.zeros((q, q), dtype=noise.dtype)
    N[:n, :n] = noise
    dd = np.full(q, pad, dtype=complex)
    dd[:n] = d
    labels = list(range(n)) if labels is None else list(labels)
    width = q >> p0

    def ids(a, b):
        return [labels[i] for i in range(a, min(b, n))]

    nodes = []
    for a in range(0, q, width):
        b = a + width
        dmin = float(np.abs(dd[a:b]).min())
        nn = _norm(N[a:b, a:b])
        val = dmin - nn
        if not val > 0:
            raise CertificateFailure(f"leaf block [{a}, {b}) has min|d| = {dmin:.6g} <= "
                                     f"noise norm {nn:.6g}", block=(a, b), value=val)
        nodes.append((a, b, CertNode("leaf", val, f"[{a},{b})", ids(a, b), "diagonal",
                                     meta={"diag_min": dmin, "noise_norm": nn})))
    while len(nodes) > 1:
        merged = []
        for (a0, b0, top), (a1, b1, bot) in zip(nodes[::2], nodes[1::2]):
            nB = _norm(N[a0:b0, a1:b1])
            # lower-left block vanishes, so the complement of D = bottom is the top block
            bound = schur_formula(nB, 0.0, bot.bound, top.bound)
            merged.append((a0, b1, CertNode("schur", bound, f"[{a0},{b1})", ids(a0, b1),
                                            norm_B=nB, norm_C=0.0, children=[bot, top])))
        nodes = merged
    root = nodes[0][2]
    info = {"n": n, "padded_n": q, "p0": p0, "K": K, "r0": r0}
    root.meta.update({"method": "triangular-recursion", **info})
    return root, info


def triangular_certificate(ms: MatrixSample, K: float | None = None,
                           r0: float | None = None) -> Certificate:
    """Certificate for an upper triangular profile with a diagonal shift.

    Parameters
    ----------
    ms : MatrixSample
        Sample whose profile vanishes below the diagonal and whose mean is
        ``diag(z_i sqrt(n))``.
    K : float, optional
        Norm level ``||sigma * X|| / sqrt(n)``; measured when omitted.
    r0 : float, optional
        Lower bound for ``|z_i|``; defaults to ``min |z_i|``.
    """
    if np.tril(ms.sigma, -1).any():
        raise PreconditionError("profile is not upper triangular")
    d = ms.diagonal_shift()
    if d is None:
        raise PreconditionError("mean is not a diagonal shift")
    root, info = _triangular_tree(ms.noise_part, d, r0, K)
    return _finish(root, {"method": "triangular", **info})


# ---------------------------------------------------------------------------
# Pipeline


def pipeline_certificate(ms: MatrixSample, dec: Decomposition, svd_fallback: bool = True) -> Certificate:
    """Three-step certificate along a decomposition of the sample's profile.

    1. The free block: entries below the threshold and entries in ``F`` go
       into a residual of measured norm; the rest is upper triangular in the
       order ``tau`` and gets the triangular certificate. If that degenerates
       the block's smallest singular value is measured instead.
    2. The bad indices join through a Schur step with the free block as ``D``.
    3. The cycle indices join through a Schur step with the previous block
       as ``D``.
    """
    sig = ms.sigma
    if dec.n != ms.n or profile_hash(Profile(sig)) != dec.profile_hash:
        raise ParameterError("decomposition was built from a different profile")
    d = ms.diagonal_shift()
    if d is None:
        raise PreconditionError("pipeline needs a diagonal shift")
    M = ms.matrix
    N = ms.noise_part
    free = np.asarray(dec.J_free, dtype=int)
    bad = np.asarray(dec.J_bad, dtype=int)
    cyc = np.asarray(dec.J_cyc, dtype=int)
    steps = []

    free_node = None
    if free.size:
        sh = dec.params["sigma_hat"]
        keep = sig[np.ix_(free, free)] >= sh
        if len(dec.F):
            fmask = np.zeros((ms.n, ms.n), dtype=bool)
            fmask[dec.F[:, 0], dec.F[:, 1]] = True
            keep &= ~fmask[np.ix_(free, free)]
        if np.tril(keep & (sig[np.ix_(free, free)] > 0), -1).any():
            raise DecompositionError("thresholded free block is not upper triangular", prop=3)
        Nf = N[np.ix_(free, free)]
        kept = np.where(keep, Nf, 0)
        res = _norm(Nf - kept)
        try:
            tri, info = _triangular_tree(kept, d[free], labels=free.tolist())
            free_node = CertNode("residual", tri.bound - res, "free", free.tolist(), residual=res,
                                 children=[tri])
            if not free_node.bound > 0:
                raise CertificateFailure("residual exceeds the triangular bound", block="free",
                                         value=free_node.bound)
            steps.append("triangular")
        except CertificateFailure as exc:
            if not svd_fallback:
                raise
            free_node = svd_leaf(M[np.ix_(free, free)], free, "free")
            free_node.meta["fallback"] = str(exc)
            steps.append("svd-fallback")

    # step 2: M1 on bad + free, bad block first (A), free block as D
    if bad.size and free_node is not None:
        node1 = _schur_node(M[np.ix_(bad, bad)], M[np.ix_(bad, free)], M[np.ix_(free, bad)],
                            M[np.ix_(free, free)], free_node, "bad+free",
                            np.concatenate([bad, free]).tolist(), "bad complement")
        steps.append("schur-bad")
    elif bad.size:
        node1 = svd_leaf(M[np.ix_(bad, bad)], bad, "bad")
    else:
        node1 = free_node
    J1 = np.concatenate([bad, free])

    # step 3: cycle blocks in the order of the cover, previous block as D
    if cyc.size and node1 is not None:
        root = _schur_node(M[np.ix_(cyc, cyc)], M[np.ix_(cyc, J1)], M[np.ix_(J1, cyc)],
                           M[np.ix_(J1, J1)], node1, "full", np.concatenate([cyc, J1]).tolist(),
                           "cycle complement")
        root.children[1].meta["cycle_blocks"] = [len(b) for b in dec.cyc_blocks]
        root.children[1].meta["pi"] = list(dec.pi)
        steps.append("schur-cycle")
    elif cyc.size:
        root = svd_leaf(M, range(ms.n), "cycle")
    else:
        root = node1
    return _finish(root, {"method": "pipeline", "n": ms.n, "steps": steps,
                          "sizes": {"bad": int(bad.size), "free": int(free.size), "cyc": int(cyc.size)}})
