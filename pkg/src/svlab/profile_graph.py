"""Graph views of a thresholded profile and connectivity checkers.

Indices are zero-based throughout. The support pattern of a profile defines a
bipartite graph between rows and columns (for square profiles, a digraph on
``range(n)``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError, PreconditionError
from .profile import Profile, band_profile

__all__ = [
    "ProfileGraph",
    "ConnectivityReport",
    "edge_count",
    "density",
    "broad_neighbors",
    "check_broad_connectivity",
    "check_super_regularity",
    "verify_band_connectivity",
    "recheck_witness",
    "EXHAUSTIVE_BROAD_MAX",
    "EXHAUSTIVE_SUPER_MAX",
]

EXHAUSTIVE_BROAD_MAX = 22
EXHAUSTIVE_SUPER_MAX = 18
TOL = 1e-9  # slack for comparisons such as count >= delta * |J|
_CHUNK = 1 << 18


class ProfileGraph:
    """Support graph of a profile: ``j`` is a neighbor of row ``i`` iff ``sigma_ij > 0``.

    Parameters
    ----------
    base : Profile or array_like
        Profile, assumed already thresholded. A raw array is wrapped.
    """

    def __init__(self, base):
        if not isinstance(base, Profile):
            base = Profile(np.asarray(base, dtype=float))
        self.base = base
        self.adj = base.pattern()
        self.adj.setflags(write=False)
        self.row_degree = self.adj.sum(axis=1)
        self.col_degree = self.adj.sum(axis=0)

    @classmethod
    def from_pattern(cls, pattern) -> "ProfileGraph":
        return cls(Profile(np.asarray(pattern, dtype=bool).astype(float), name="pattern"))

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def m(self) -> int:
        return self.adj.shape[1]

    @property
    def row_adj(self) -> list[np.ndarray]:
        return [np.flatnonzero(r) for r in self.adj]

    @property
    def col_adj(self) -> list[np.ndarray]:
        return [np.flatnonzero(c) for c in self.adj.T]

    @property
    def T(self) -> "ProfileGraph":
        return ProfileGraph(self.base.transpose())

    def subgraph(self, rows, cols) -> "ProfileGraph":
        rows, cols = _idx(rows), _idx(cols)
        return ProfileGraph(Profile(self.base.sigma[np.ix_(rows, cols)], name="sub"))

    def __repr__(self):
        return f"ProfileGraph(n={self.n}, m={self.m}, edges={int(self.adj.sum())})"


def _idx(s) -> np.ndarray:
    a = np.asarray(s if isinstance(s, np.ndarray) else list(s), dtype=int).ravel()
    return np.unique(a)


def edge_count(g: ProfileGraph, I, J) -> int:
    """Number of support entries in ``I x J``."""
    I, J = _idx(I), _idx(J)
    if I.size == 0 or J.size == 0:
        return 0
    return int(g.adj[np.ix_(I, J)].sum())


def density(g: ProfileGraph, I, J) -> float:
    """Edge density ``e(I, J) / (|I| |J|)``; undefined for empty sets."""
    I, J = _idx(I), _idx(J)
    if I.size == 0 or J.size == 0:
        raise ParameterError("density undefined for empty index sets")
    return edge_count(g, I, J) / (I.size * J.size)


def broad_neighbors(g: ProfileGraph, I, delta: float) -> np.ndarray:
    """Columns ``j`` adjacent to at least ``delta |I|`` rows of ``I``."""
    I = _idx(I)
    if I.size == 0:
        raise ParameterError("I must be nonempty")
    counts = g.adj[I].sum(axis=0)
    return np.flatnonzero(counts >= delta * I.size - TOL)


@dataclass
class ConnectivityReport:
    """Verdict of a connectivity check.

    ``witness`` is ``None`` on pass. On failure it names the violated
    ``condition`` (1, 2 or 3) together with the offending row ``i``, column
    ``j``, column set ``J`` or block ``(I, J)``.
    """

    kind: str
    params: dict
    verdict: str
    provenance: str
    witness: dict | None = None
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), default=_jsonable, **kw)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def _degree_conditions(g: ProfileGraph, delta: float):
    """Witness for conditions (1) and (2), or ``None``."""
    bad_rows = np.flatnonzero(g.row_degree < delta * g.m - TOL)
    if bad_rows.size:
        i = int(bad_rows[0])
        return {"condition": 1, "i": i, "degree": int(g.row_degree[i])}
    bad_cols = np.flatnonzero(g.col_degree < delta * g.n - TOL)
    if bad_cols.size:
        j = int(bad_cols[0])
        return {"condition": 2, "j": j, "degree": int(g.col_degree[j])}
    return None


# ---------------------------------------------------------------------------
# Broad connectivity


def _masks_to_sets(masks) -> list[tuple[int, ...]]:
    out = []
    for mk in masks:
        mk = int(mk)
        out.append(tuple(b for b in range(mk.bit_length()) if mk >> b & 1))
    return out


def _exhaustive_expansion(adj: np.ndarray, deltas, min_size: int):
    """For each delta, the failing column sets of minimal size as bitmasks,
    given ``|N(J)| < need`` is decided by the caller via ``acc``.

    Yields ``(masks, sizes, acc)`` chunks where ``acc[d]`` counts rows with
    ``|N(i) & J| >= delta_d |J|``.
    """
    n, m = adj.shape
    weights = (1 << np.arange(m, dtype=np.int64))
    row_masks = (adj.astype(np.int64) * weights).sum(axis=1)
    total = 1 << m
    for lo in range(1, total, _CHUNK):
        masks = np.arange(lo, min(total, lo + _CHUNK), dtype=np.int64)
        sizes = np.bitwise_count(masks).astype(np.int64)
        keep = sizes >= min_size
        masks, sizes = masks[keep], sizes[keep]
        if masks.size == 0:
            continue
        acc = np.zeros((len(deltas), masks.size), dtype=np.int32)
        thr = [d * sizes - TOL for d in deltas]
        for rm in row_masks:
            cnt = np.bitwise_count(masks & rm)
            for k in range(len(deltas)):
                acc[k] += cnt >= thr[k]
        yield masks, sizes, acc


def _sampled_families(adj: np.ndarray, min_size: int, n_random: int, seed: int):
    """Column families for the sampled check of the expansion condition.

    Yields boolean indicator matrices (one row per column set): all
    singletons, groups of equal-degree columns, all cyclic intervals, and
    ``n_random`` uniformly random subsets for each cardinality on a log grid.
    """
    n, m = adj.shape
    eye = np.eye(m, dtype=bool)
    yield "singletons", eye
    deg = adj.sum(axis=0)
    groups = [deg == d for d in np.unique(deg)]
    yield "equal-degree", np.array(groups, dtype=bool)
    ind = np.zeros((m, m), dtype=bool)
    for L in range(1, m + 1):
        ind = ind | np.roll(eye, L - 1, axis=1)
        yield f"intervals:{L}", ind
    rng = np.random.default_rng(seed)
    sizes = np.unique(np.round(np.geomspace(max(1, min_size), m, 12)).astype(int))
    for k in sizes:
        for lo in range(0, n_random, 2500):
            cnt = min(2500, n_random - lo)
            order = np.argsort(rng.random((cnt, m)), axis=1)[:, :k]
            ind = np.zeros((cnt, m), dtype=bool)
            np.put_along_axis(ind, order, True, axis=1)
            yield f"random:{k}", ind


def _expansion_failures(g: ProfileGraph, pairs, theta0, exhaustive, n_random, seed):
    """Evaluate the expansion condition for several ``(delta, nu)`` pairs.

    Returns a list with, per pair, ``None`` on pass or the witness column set.
    """
    n, m = g.n, g.m
    adj = g.adj
    min_size = max(1, math.ceil(theta0 * m - TOL)) if theta0 else 1
    deltas = sorted({d for d, _ in pairs})
    best: list[tuple | None] = [None] * len(pairs)  # (size, tuple)

    def consider(k_pair, sets):
        for s in sets:
            key = (len(s), s)
            if best[k_pair] is None or key < best[k_pair]:
                best[k_pair] = key

    if exhaustive:
        for masks, sizes, acc in _exhaustive_expansion(adj, deltas, min_size):
            for kp, (d, nu) in enumerate(pairs):
                need = np.minimum(n, (1 + nu) * sizes)
                fail = acc[deltas.index(d)] < need - TOL
                if not fail.any():
                    continue
                fs = sizes[fail]
                smallest = fs.min()
                if best[kp] is not None and best[kp][0] < smallest:
                    continue
                consider(kp, _masks_to_sets(masks[fail][fs == smallest]))
    else:
        adj_f = adj.T.astype(np.float32)
        for _, ind in _sampled_families(adj, min_size, n_random, seed):
            sizes = ind.sum(axis=1)
            keep = sizes >= min_size
            if not keep.any():
                continue
            ind, sizes = ind[keep], sizes[keep]
            counts = ind.astype(np.float32) @ adj_f  # |N(i) & J| for every row
            for kp, (d, nu) in enumerate(pairs):
                acc = (counts >= d * sizes[:, None] - TOL).sum(axis=1)
                fail = acc < np.minimum(n, (1 + nu) * sizes) - TOL
                if fail.any():
                    consider(kp, [tuple(np.flatnonzero(r).tolist()) for r in ind[fail][:64]])
    return [None if b is None else list(b[1]) for b in best]


def check_broad_connectivity(g: ProfileGraph, delta: float, nu: float, theta0: float | None = None,
                             side: str = "columns", n_random: int = 10**4,
                             seed: int = 0) -> ConnectivityReport:
    """Check ``(delta, nu)``-broad connectivity.

    Conditions are (1) every row has at least ``delta m`` neighbors, (2) every
    column has at least ``delta n`` neighbors, and (3) every nonempty column
    set ``J`` has at least ``min(n, (1 + nu)|J|)`` rows adjacent to at least
    ``delta |J|`` of its columns.

    Parameters
    ----------
    g : ProfileGraph
    delta, nu : float
    theta0 : float, optional
        Restrict condition (3) to ``|J| >= theta0 m``.
    side : {"columns", "rows"}
        ``"rows"`` checks the expansion over row sets instead; this equals the
        column check on the transpose with conditions (1) and (2) swapped.
    n_random : int
        Random subsets per cardinality in sampled mode.
    seed : int
        Seed of the sampled families.

    Returns
    -------
    ConnectivityReport
        Condition (3) is decided exhaustively when the set side has at most
        22 elements (provenance ``"exact"``) and over sampled families otherwise
        (provenance ``"sampled"``). The reported witness is the smallest failing
        set, lexicographically first among those found.
    """
    if side not in ("columns", "rows"):
        raise ParameterError("side must be 'columns' or 'rows'")
    if side == "rows":
        rep = check_broad_connectivity(g.T, delta, nu, theta0, "columns", n_random, seed)
        if rep.witness is not None:
            w = dict(rep.witness)
            if w["condition"] == 1:
                w = {"condition": 2, "j": w["i"], "degree": w["degree"]}
            elif w["condition"] == 2:
                w = {"condition": 1, "i": w["j"], "degree": w["degree"]}
            else:
                w = {"condition": 3, "I": w["J"], "expansion": w["expansion"]}
            rep.witness = w
        rep.params["side"] = "rows"
        return rep
    params = {"delta": delta, "nu": nu, "theta0": theta0}
    exhaustive = g.m <= EXHAUSTIVE_BROAD_MAX
    prov = "exact" if exhaustive else "sampled"
    w = _degree_conditions(g, delta)
    if w is not None:
        return ConnectivityReport("broad", params, "fail", "exact", w)
    fails = _expansion_failures(g, [(delta, nu)], theta0, exhaustive, n_random, seed)[0]
    if fails is None:
        return ConnectivityReport("broad", params, "pass", prov)
    J = fails
    expansion = int(broad_neighbors(g.T, J, delta).size)
    return ConnectivityReport("broad", params, "fail", prov,
                              {"condition": 3, "J": J, "expansion": expansion})


# ---------------------------------------------------------------------------
# Super-regularity


def _min_block_density_violation(colcounts: np.ndarray, sizes_I: np.ndarray, delta: float,
                                 jmin: int):
    """Rows of ``colcounts`` (one per row set ``I``) violating
    ``e(I, J) >= delta |I||J|`` for some ``|J| >= jmin``.

    Returns ``(row_index, k)`` for the first violation (smallest ``k``) or ``None``.
    """
    srt = np.sort(colcounts, axis=1)
    csum = np.cumsum(srt, axis=1)
    m = colcounts.shape[1]
    ks = np.arange(jmin, m + 1)
    lhs = csum[:, ks - 1]
    rhs = delta * sizes_I[:, None] * ks[None, :] - TOL
    bad = lhs < rhs
    rows = np.flatnonzero(bad.any(axis=1))
    if rows.size == 0:
        return None
    return rows, ks[np.argmax(bad[rows], axis=1)]


def _super_witness(colcounts_row, k):
    J = np.sort(np.argsort(colcounts_row, kind="stable")[:k])
    return J.tolist()


def check_super_regularity(g: ProfileGraph, delta: float, eps: float, n_random: int = 10**4,
                           seed: int = 0) -> ConnectivityReport:
    """Check ``(delta, eps)``-super-regularity.

    Conditions (1) and (2) are the degree bounds of broad connectivity.
    Condition (3) asks ``e(I, J) >= delta |I||J|`` whenever ``|I| >= eps n``
    and ``|J| >= eps m``. For a fixed ``I`` the worst ``J`` of each size
    consists of the columns with fewest neighbors in ``I``, so only row sets
    need enumeration.

    Provenance is ``"exact"`` for ``n, m <= 18``. Larger inputs pass with
    ``"spectral"`` provenance when ``rho - ||P - rho|| / sqrt(|I|min |J|min)``
    is at least ``delta`` (``P`` the 0/1 pattern, ``rho`` its density), which
    bounds every qualifying block density from below. Otherwise a randomized
    witness search runs and the verdict is ``"sampled"``.
    """
    if not (0 < delta <= 1 and 0 < eps < 1):
        raise ParameterError("need delta in (0, 1] and eps in (0, 1)")
    params = {"delta": delta, "eps": eps}
    w = _degree_conditions(g, delta)
    if w is not None:
        return ConnectivityReport("super_regular", params, "fail", "exact", w)
    n, m = g.n, g.m
    imin = max(1, math.ceil(eps * n - TOL))
    jmin = max(1, math.ceil(eps * m - TOL))
    P = g.adj.astype(np.float32)
    if n <= EXHAUSTIVE_SUPER_MAX and m <= EXHAUSTIVE_SUPER_MAX:
        masks = np.arange(1, 1 << n, dtype=np.int64)
        sizes = np.bitwise_count(masks).astype(np.int64)
        masks, sizes = masks[sizes >= imin], sizes[sizes >= imin]
        order = np.lexsort((masks, sizes))
        masks, sizes = masks[order], sizes[order]
        bits = ((masks[:, None] >> np.arange(n)) & 1).astype(np.float32)
        cc = bits @ P
        hit = _min_block_density_violation(cc, sizes, delta, jmin)
        if hit is None:
            return ConnectivityReport("super_regular", params, "pass", "exact")
        r, k = int(hit[0][0]), int(hit[1][0])
        I = np.flatnonzero(bits[r]).tolist()
        J = _super_witness(cc[r], k)
        return ConnectivityReport("super_regular", params, "fail", "exact",
                                  {"condition": 3, "I": I, "J": J,
                                   "density": edge_count(g, I, J) / (len(I) * len(J))})
    rho = float(P.mean())
    dev = float(np.linalg.norm(P - rho, 2))
    lower = rho - dev / math.sqrt(imin * jmin)
    detail = {"rho": rho, "centered_norm": dev, "density_lower_bound": lower}
    if lower >= delta - TOL:
        return ConnectivityReport("super_regular", params, "pass", "spectral", detail=detail)
    # randomized witness search: random and degree-ordered row sets
    rng = np.random.default_rng(seed)
    cands = [np.argsort(g.row_degree, kind="stable")[:s] for s in (imin, min(n, 2 * imin))]
    low_cols = np.argsort(g.col_degree, kind="stable")[:jmin]
    into = g.adj[:, low_cols].sum(axis=1)
    cands.append(np.argsort(into, kind="stable")[:imin])
    sizes_grid = np.unique(np.round(np.geomspace(imin, n, 6)).astype(int))
    per = max(1, n_random // len(sizes_grid))
    for s in sizes_grid:
        order = np.argsort(rng.random((per, n)), axis=1)[:, :s]
        cands.extend(order)
    rowsets = [np.sort(c) for c in cands]
    for lo in range(0, len(rowsets), 2048):
        chunk = rowsets[lo:lo + 2048]
        ind = np.zeros((len(chunk), n), dtype=np.float32)
        for t, c in enumerate(chunk):
            ind[t, c] = 1
        cc = ind @ P
        hit = _min_block_density_violation(cc, ind.sum(axis=1), delta, jmin)
        if hit is not None:
            r, k = int(hit[0][0]), int(hit[1][0])
            I = chunk[r].tolist()
            J = _super_witness(cc[r], k)
            detail["density"] = edge_count(g, I, J) / (len(I) * len(J))
            return ConnectivityReport("super_regular", params, "fail", "sampled",
                                      {"condition": 3, "I": I, "J": J}, detail)
    return ConnectivityReport("super_regular", params, "pass", "sampled", detail=detail)


def recheck_witness(g: ProfileGraph, rep: ConnectivityReport) -> bool:
    """Independently confirm that a failure witness is a genuine violation."""
    w = rep.witness
    if w is None:
        return False
    d = rep.params["delta"]
    c = w["condition"]
    if c == 1:
        return int(g.adj[w["i"]].sum()) < d * g.m - TOL
    if c == 2:
        return int(g.adj[:, w["j"]].sum()) < d * g.n - TOL
    if rep.kind == "broad":
        if "I" in w:  # row-side expansion
            S = w["I"]
            return broad_neighbors(g, S, d).size < min(g.m, (1 + rep.params["nu"]) * len(S)) - TOL
        S = w["J"]
        return broad_neighbors(g.T, S, d).size < min(g.n, (1 + rep.params["nu"]) * len(S)) - TOL
    I, J = w["I"], w["J"]
    eps = rep.params["eps"]
    big = len(I) >= eps * g.n - TOL and len(J) >= eps * g.m - TOL
    return big and edge_count(g, I, J) < d * len(I) * len(J) - TOL


# ---------------------------------------------------------------------------
# Band profiles


def _band_grid(eps: float):
    deltas = sorted({eps ** 2, eps / 8, eps / 4, eps / 2, eps, 2 * eps}, reverse=True)
    nus = sorted({eps / 16, eps / 8, eps / 4}, reverse=True)
    return [(d, nu) for d in deltas if d <= 1 for nu in nus]


def verify_band_connectivity(n: int, eps: float, report: bool = False, n_random: int = 10**4,
                             seed: int = 0):
    """Largest grid point ``(delta, nu)`` for which the full band profile is
    broadly connected.

    The grid is ``delta`` in ``{eps^2, eps/8, eps/4, eps/2, eps, 2 eps}`` and
    ``nu`` in ``{eps/16, eps/8, eps/4}``, searched in decreasing ``delta`` and
    then decreasing ``nu``.

    Returns
    -------
    (delta, nu) or (delta, nu, ConnectivityReport)

    Raises
    ------
    ParameterError
        If ``eps n < 1``.
    PreconditionError
        If no grid point passes; the message lists the first failures.
    """
    if eps * n < 1:
        raise ParameterError(f"eps*n = {eps * n:g} < 1")
    g = ProfileGraph(band_profile(n, eps, 1.0))
    grid = _band_grid(eps)
    exhaustive = g.m <= EXHAUSTIVE_BROAD_MAX
    degree_ok = [(d, nu) for d, nu in grid if _degree_conditions(g, d) is None]
    fails = _expansion_failures(g, degree_ok, None, exhaustive, n_random, seed) if degree_ok else []
    outcome = dict(zip(degree_ok, fails))
    for d, nu in grid:
        if (d, nu) in outcome and outcome[(d, nu)] is None:
            if report:
                rep = ConnectivityReport("broad", {"delta": d, "nu": nu, "theta0": None,
                                                   "n": n, "eps": eps}, "pass",
                                         "exact" if exhaustive else "sampled")
                return d, nu, rep
            return d, nu
    diag = "; ".join(
        f"delta={d:g} nu={nu:g}: " + ("degree" if (d, nu) not in outcome else
                                      f"|J|={len(outcome[(d, nu)])}")
        for d, nu in grid[:6])
    raise PreconditionError(f"no grid point passes for band n={n} eps={eps:g} ({diag})")
