"""Regular pairs, an iterative regularity partitioner and the triangular-plus-cycles
decomposition of a square profile.

A pair of index sets ``(I, J)`` is ``eps``-regular when every sub-block
``I' x J'`` with ``|I'| > eps |I|`` and ``|J'| > eps |J|`` has density within
``eps`` of the density of ``I x J``. Densities count diagonal entries like any
other entry.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DecompositionError, ParameterError, PreconditionError
from .profile import Profile, threshold
from .profile_graph import ProfileGraph, check_super_regularity

__all__ = [
    "PairVerdict",
    "RegularityPartition",
    "ReducedDigraph",
    "CycleSplit",
    "Decomposition",
    "check_regular_pair",
    "partition",
    "reduced_digraph",
    "cycle_cover_split",
    "decompose",
    "check_decomposition",
    "EXACT_PAIR_MAX",
]

EXACT_PAIR_MAX = 14
TOL = 1e-12
_BATCH_ENTRIES = 1 << 22


@dataclass
class PairVerdict:
    """Outcome of a regularity check on one pair.

    ``provenance`` is ``"exact"`` (full enumeration), ``"spectral"`` (rigorous
    norm bound), ``"sampled"`` (randomized search) or ``"trivial"``
    (singleton sides). ``witness`` holds sorted ``(I', J')`` on failure.
    """

    regular: bool
    provenance: str
    density: float
    witness: tuple[list[int], list[int]] | None = None
    witness_density: float | None = None

    def __bool__(self):
        return self.regular


def _min_strict(eps: float, size: int) -> int:
    """Smallest integer strictly larger than ``eps * size``."""
    return math.floor(eps * size + 1e-9) + 1


def _subset_matrix(s: int, kmin: int):
    masks = np.arange(1, 1 << s, dtype=np.int64)
    sizes = np.bitwise_count(masks)
    masks = masks[sizes >= kmin]
    bits = ((masks[:, None] >> np.arange(s)) & 1).astype(float)
    return bits


def _exact_batch(blocks: np.ndarray, eps: float):
    """Exact regularity of a batch of equal-shape 0/1 blocks.

    Parameters
    ----------
    blocks : ndarray, shape (B, s, t)

    Returns
    -------
    regular : ndarray of bool, shape (B,)
    witnesses : list of (rows, cols, density) or None per block
    """
    B, s, t = blocks.shape
    out_reg = np.ones(B, dtype=bool)
    wit: list = [None] * B
    if B == 0:
        return out_reg, wit
    rho = blocks.reshape(B, -1).mean(axis=1)
    kmin_r, kmin_c = _min_strict(eps, s), _min_strict(eps, t)
    if kmin_r > s or kmin_c > t:
        return out_reg, wit
    S = _subset_matrix(s, kmin_r)
    rsize = S.sum(axis=1)
    ks = np.arange(kmin_c, t + 1)
    step = max(1, _BATCH_ENTRIES // (S.shape[0] * t))
    for lo in range(0, B, step):
        blk = blocks[lo:lo + step].astype(float)
        cc = np.einsum("rs,bst->brt", S, blk)  # column counts per row subset
        order = np.argsort(cc, axis=2, kind="stable")
        srt = np.take_along_axis(cc, order, axis=2)
        csum = np.concatenate([np.zeros(srt.shape[:2] + (1,)),
                               np.cumsum(srt, axis=2)], axis=2)
        low = csum[:, :, ks] / (rsize[None, :, None] * ks[None, None, :])
        high = (csum[:, :, -1:] - csum[:, :, t - ks]) / (rsize[None, :, None] * ks[None, None, :])
        r = rho[lo:lo + step, None, None]
        dev_low, dev_high = r - low, high - r
        worst = np.maximum(dev_low, dev_high)
        flat = worst.reshape(worst.shape[0], -1)
        arg = flat.argmax(axis=1)
        best = flat[np.arange(flat.shape[0]), arg]
        for b in np.flatnonzero(best > eps + TOL):
            ri, kj = np.unravel_index(arg[b], worst.shape[1:])
            k = int(ks[kj])
            cols = order[b, ri, :k] if dev_low[b, ri, kj] >= dev_high[b, ri, kj] else order[b, ri, t - k:]
            rows = np.flatnonzero(S[ri])
            sub = blocks[lo + b][np.ix_(rows, np.sort(cols))]
            wit[lo + b] = (rows.tolist(), np.sort(cols).tolist(), float(sub.mean()))
            out_reg[lo + b] = False
    return out_reg, wit


def _sampled_pair(P: np.ndarray, eps: float, n_samples: int, rng: np.random.Generator):
    """Randomized witness search; returns ``(rows, cols, density)`` or ``None``."""
    s, t = P.shape
    rho = P.mean()
    kmin_r, kmin_c = _min_strict(eps, s), _min_strict(eps, t)
    ks = np.arange(kmin_c, t + 1)
    Pf = P.astype(float)

    def best_cols(rowsets):
        ind = np.zeros((len(rowsets), s))
        for q, r in enumerate(rowsets):
            ind[q, r] = 1
        cc = ind @ Pf
        order = np.argsort(cc, axis=1, kind="stable")
        srt = np.take_along_axis(cc, order, axis=1)
        csum = np.concatenate([np.zeros((len(rowsets), 1)), np.cumsum(srt, axis=1)], 1)
        sz = ind.sum(axis=1)[:, None]
        low = csum[:, ks] / (sz * ks)
        high = (csum[:, -1:] - csum[:, t - ks]) / (sz * ks)
        for q in range(len(rowsets)):
            for dev, side in ((rho - low[q], "low"), (high[q] - rho, "high")):
                j = int(np.argmax(dev))
                if dev[j] > eps + TOL:
                    k = int(ks[j])
                    cols = order[q, :k] if side == "low" else order[q, t - k:]
                    rows = np.sort(rowsets[q])
                    cols = np.sort(cols)
                    return rows.tolist(), cols.tolist(), float(P[np.ix_(rows, cols)].mean())
        return None

    # structured starts: lowest- and highest-degree rows
    starts = []
    deg = P.sum(axis=1)
    order = np.argsort(deg, kind="stable")
    for k in {kmin_r, max(kmin_r, s // 2)}:
        starts += [order[:k], order[s - k:]]
    hit = best_cols(starts)
    if hit:
        return hit
    for lo in range(0, n_samples, 1024):
        cnt = min(1024, n_samples - lo)
        sizes = rng.integers(kmin_r, s + 1, size=cnt)
        perm = np.argsort(rng.random((cnt, s)), axis=1)
        hit = best_cols([perm[q, :sizes[q]] for q in range(cnt)])
        if hit:
            return hit
    return None


def _pair_verdict(P: np.ndarray, eps: float, n_samples: int, rng) -> PairVerdict:
    s, t = P.shape
    rho = float(P.mean())
    if s == 1 and t == 1:
        return PairVerdict(True, "trivial", rho)
    if s <= EXACT_PAIR_MAX and t <= EXACT_PAIR_MAX:
        reg, wit = _exact_batch(P[None], eps)
        w = wit[0]
        return PairVerdict(bool(reg[0]), "exact", rho, None if w is None else (w[0], w[1]),
                           None if w is None else w[2])
    dev = float(np.linalg.norm(P.astype(float) - rho, 2))
    if dev <= eps ** 2 * math.sqrt(s * t):
        return PairVerdict(True, "spectral", rho)
    hit = _sampled_pair(P, eps, n_samples, rng)
    if hit is None:
        return PairVerdict(True, "sampled", rho)
    return PairVerdict(False, "sampled", rho, (hit[0], hit[1]), hit[2])


def check_regular_pair(g: ProfileGraph, I, J, eps: float, n_samples: int = 10**5,
                       seed: int = 0) -> PairVerdict:
    """Decide whether ``(I, J)`` is ``eps``-regular.

    Exhaustive when both sides have at most 14 elements. Larger pairs pass
    rigorously (``"spectral"``) when the centered block ``P - rho`` has
    operator norm at most ``eps**2 sqrt(|I||J|)``; otherwise ``n_samples``
    random row subsets, each paired with its optimal column subsets, are
    searched for a witness (``"sampled"``).
    """
    if not 0 < eps < 1:
        raise ParameterError("eps must lie in (0, 1)")
    I = np.asarray(sorted(set(int(x) for x in I)), dtype=int)
    J = np.asarray(sorted(set(int(x) for x in J)), dtype=int)
    if I.size < 2 or J.size < 2:
        raise ParameterError("both sides of a pair need at least 2 elements")
    P = g.adj[np.ix_(I, J)]
    v = _pair_verdict(P, eps, n_samples, np.random.default_rng(seed))
    if v.witness is not None:
        v.witness = (I[v.witness[0]].tolist(), J[v.witness[1]].tolist())
    return v


# ---------------------------------------------------------------------------
# Partition


@dataclass
class RegularityPartition:
    """Equitable partition ``I_1..I_m0`` plus exceptional set ``I_0``.

    ``regular[k, l]`` records the verdict for the pair ``(I_k, I_l)`` (rows
    from ``I_k``, columns from ``I_l``) and ``density[k, l]`` its density.
    ``provenance`` is ``"exact"`` when every verdict is exact, spectral or
    trivial, and ``"sampled"`` when some pass relied on randomized search.
    """

    parts: list[np.ndarray]
    exceptional: np.ndarray
    eps: float
    irregular_pairs: set
    converged: bool
    provenance: str
    regular: np.ndarray
    density: np.ndarray
    refinements: int = 0
    merged: bool = False
    witnesses: dict = field(default_factory=dict, repr=False)

    @property
    def m0(self) -> int:
        return len(self.parts)

    @property
    def part_size(self) -> int:
        return len(self.parts[0]) if self.parts else 0

    def summary(self) -> dict:
        return {"m0": self.m0, "part_size": self.part_size,
                "exceptional": int(len(self.exceptional)),
                "irregular_pairs": len(self.irregular_pairs), "converged": self.converged,
                "provenance": self.provenance, "refinements": self.refinements,
                "merged": self.merged}


def _sweep(g: ProfileGraph, parts, eps, n_samples, rng):
    """All pair verdicts, batched exactly when parts are small."""
    m0 = len(parts)
    regular = np.ones((m0, m0), dtype=bool)
    dens = np.zeros((m0, m0))
    prov = set()
    witnesses = {}
    if m0 == 0:
        return regular, dens, witnesses, prov
    s = len(parts[0])
    stacked = np.stack(parts)
    # blocks[k, l] is adj[parts[k]][:, parts[l]]
    blocks = g.adj[stacked[:, None, :, None], stacked[None, :, None, :]]
    dens = blocks.reshape(m0, m0, -1).mean(axis=2)
    if s == 1:
        prov.add("trivial")
        return regular, dens, witnesses, prov
    if s <= EXACT_PAIR_MAX:
        reg, wit = _exact_batch(blocks.reshape(m0 * m0, s, s), eps)
        regular = reg.reshape(m0, m0)
        for q, w in enumerate(wit):
            if w is not None:
                k, l = divmod(q, m0)
                witnesses[(k, l)] = (parts[k][w[0]], parts[l][w[1]])
        prov.add("exact")
        return regular, dens, witnesses, prov
    for k in range(m0):
        for l in range(m0):
            v = _pair_verdict(blocks[k, l], eps, n_samples, rng)
            regular[k, l] = v.regular
            prov.add(v.provenance)
            if v.witness is not None:
                witnesses[(k, l)] = (parts[k][v.witness[0]], parts[l][v.witness[1]])
    return regular, dens, witnesses, prov


def _closure(adj, I, J, wr, wc):
    """Grow a witness to all columns, then all rows, deviating the same way.

    Minimal witnesses can be a single vertex; their closure follows the
    structure that makes the pair irregular.
    """
    P = adj[np.ix_(I, J)].astype(float)
    d = P.mean()
    sign = 1.0 if adj[np.ix_(wr, wc)].mean() >= d else -1.0
    rows = np.isin(I, wr)
    cols = sign * (P[rows].mean(axis=0) - d) > TOL
    if not cols.any():
        return wr, wc
    rows = sign * (P[:, cols].mean(axis=1) - d) > TOL
    if not rows.any():
        return wr, J[cols]
    return I[rows], J[cols]


def _refine(parts, exceptional, witnesses, new_size, g):
    """Split every part into witness atoms and cut them into chunks of ``new_size``.

    An atom is a set of members with the same witness-membership signature.
    Leftovers of all atoms, together with the old exceptional set, are sorted
    by their density profile against the current parts and regrouped; the
    final remainder (fewer than ``new_size`` vertices) becomes ``I_0``.
    """
    m0 = len(parts)
    by_row = {k: [] for k in range(m0)}
    by_col = {k: [] for k in range(m0)}
    for (k, l), (wr, wc) in sorted(witnesses.items()):
        wr, wc = _closure(g.adj, parts[k], parts[l], wr, wc)
        by_row[k].append(set(wr.tolist()))
        by_col[l].append(set(wc.tolist()))
    new_parts, pool = [], list(exceptional.tolist())
    for k, part in enumerate(parts):
        sigs = by_row[k] + by_col[k]
        atoms: dict = {}
        for x in part.tolist():
            atoms.setdefault(tuple(x not in S for S in sigs), []).append(x)
        for key in sorted(atoms):
            members = atoms[key]
            q = len(members) // new_size
            for c in range(q):
                new_parts.append(np.array(members[c * new_size:(c + 1) * new_size]))
            pool.extend(members[q * new_size:])
    if pool:
        adj = g.adj.astype(float)
        feats = np.hstack([np.stack([adj[pool][:, p].mean(axis=1) for p in parts], axis=1),
                           np.stack([adj[p][:, pool].mean(axis=0) for p in parts], axis=1)])
        keys = np.round(feats, 9)
        order = sorted(range(len(pool)), key=lambda i: (tuple(keys[i]), pool[i]))
        pool = [pool[i] for i in order]
    q = len(pool) // new_size
    for c in range(q):
        new_parts.append(np.array(sorted(pool[c * new_size:(c + 1) * new_size])))
    new_parts.sort(key=lambda a: a[0])
    return new_parts, np.array(sorted(pool[q * new_size:]), dtype=int)


def _twin_merge(parts, dens, regular):
    """Merge parts whose density rows and columns coincide, when every class
    has the same number of members."""
    m0 = len(parts)
    if m0 < 2 or not regular.all():
        return None
    keys = {}
    for k in range(m0):
        key = (np.round(dens[k], 12).tobytes(), np.round(dens[:, k], 12).tobytes())
        keys.setdefault(key, []).append(k)
    classes = list(keys.values())
    sizes = {len(c) for c in classes}
    if len(classes) == m0 or len(sizes) != 1:
        return None
    classes.sort(key=lambda c: c[0])
    return [np.sort(np.concatenate([parts[k] for k in c])) for c in classes]


def partition(g: ProfileGraph, eps: float, cap: int = 64, seed: int = 0, parts=None,
              exceptional=None, n_samples: int = 2000, merge: bool = True) -> RegularityPartition:
    """Iterative refinement toward an ``eps``-regular equitable partition.

    The initial partition splits a random permutation of ``range(n)`` into
    parts of size ``floor(n / ceil(1/eps))``; the few leftover vertices form
    ``I_0``, so ``|I_0| < eps n``. Each round checks every ordered pair of
    parts. While more than ``eps m0**2`` pairs are irregular, every part is
    split into atoms by membership in the witness sets of its irregular
    pairs, and atoms are cut into chunks of half the part size. Leftovers are
    regrouped by density profile, with any remainder going to ``I_0``.
    Refinement stops when the part count would exceed ``cap``, and
    the result is then flagged as not converged.

    A converged partition is finally coarsened by merging parts with identical
    density profiles when all such classes have equal size and the merged
    partition still converges.

    Parameters
    ----------
    g : ProfileGraph
        Square support graph.
    eps : float
    cap : int
        Maximum number of parts.
    seed : int
    parts, exceptional : optional
        Start from the given equitable partition instead.
    n_samples : int
        Randomized witness-search budget for pairs larger than 14.
    merge : bool
        Apply the final coarsening.
    """
    n = g.n
    if g.m != n:
        raise ParameterError("partition needs a square profile")
    if not 0 < eps < 1:
        raise ParameterError("eps must lie in (0, 1)")
    if n < 1 / eps:
        raise PreconditionError(f"n = {n} < 1/eps")
    rng = np.random.default_rng(seed)
    if parts is None:
        s = n // math.ceil(1 / eps - 1e-9)
        perm = rng.permutation(n)
        q = n // s
        parts = [np.sort(perm[c * s:(c + 1) * s]) for c in range(q)]
        exceptional = np.sort(perm[q * s:])
    else:
        parts = [np.sort(np.asarray(p, dtype=int)) for p in parts]
        exceptional = np.sort(np.asarray([] if exceptional is None else exceptional, dtype=int))
        if len({len(p) for p in parts}) > 1:
            raise ParameterError("parts must have equal size")
        if len(np.unique(np.concatenate(parts + [exceptional]))) != n:
            raise ParameterError("parts and exceptional set must partition range(n)")
    refinements = 0
    while True:
        regular, dens, wits, prov = _sweep(g, parts, eps, n_samples, rng)
        m0 = len(parts)
        irregular = int((~regular).sum())
        converged = irregular <= eps * m0 * m0 + TOL
        if converged:
            break
        s = len(parts[0])
        new_size = s // 2
        if new_size < 1 or n // new_size > cap:
            break
        parts, exceptional = _refine(parts, exceptional, wits, new_size, g)
        refinements += 1
    merged = False
    if converged and merge:
        cand = _twin_merge(parts, dens, regular)
        if cand is not None:
            r2, d2, w2, p2 = _sweep(g, cand, eps, n_samples, rng)
            if (~r2).sum() <= eps * len(cand) ** 2 + TOL:
                parts, regular, dens, wits, prov, merged = cand, r2, d2, w2, p2, True
    irr = {(int(k), int(l)) for k, l in zip(*np.nonzero(~regular))}
    provenance = "sampled" if "sampled" in prov else "exact"
    return RegularityPartition(parts, exceptional, eps, irr, bool(converged), provenance, regular,
                               dens, refinements, merged, wits)


# ---------------------------------------------------------------------------
# Reduced digraph and cycle split


@dataclass
class ReducedDigraph:
    """Digraph on part indices with an edge ``(k, l)`` when the pair is regular
    and denser than ``5 delta``."""

    size: int
    adj: np.ndarray
    delta: float

    @property
    def edges(self) -> set:
        return {(int(k), int(l)) for k, l in zip(*np.nonzero(self.adj))}


def reduced_digraph(p: RegularityPartition, g: ProfileGraph, delta: float) -> ReducedDigraph:
    """Edges ``(k, l)`` with ``(I_k, I_l)`` regular and density above ``5 delta``."""
    m0 = p.m0
    dens = np.zeros((m0, m0))
    for k in range(m0):
        for l in range(m0):
            dens[k, l] = g.adj[np.ix_(p.parts[k], p.parts[l])].mean()
    adj = p.regular & (dens > 5 * delta + TOL)
    return ReducedDigraph(m0, adj, delta)


@dataclass
class CycleSplit:
    """Vertex set covered by disjoint cycles plus an ordering of the rest.

    ``pi[k]`` is the successor of ``k`` on its cycle and ``order`` is a
    topological order of the remaining acyclic subgraph.
    """

    T: list[int]
    cycles: list[list[int]]
    pi: dict
    order: list[int]


def _shortest_cycle_from(adj: np.ndarray, alive: np.ndarray, s: int):
    """Lexicographically first shortest cycle through ``s`` using vertices ``>= s``."""
    n = adj.shape[0]
    if adj[s, s]:
        return [s]
    allowed = alive.copy()
    allowed[:s] = False
    # distance from every vertex to s, walking edges forward
    dist = np.full(n, -1)
    dist[s] = 0
    frontier = [s]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for v in frontier:
            for u in np.flatnonzero(adj[:, v] & allowed):
                if dist[u] < 0:
                    dist[u] = d
                    nxt.append(u)
        frontier = nxt
    succ = np.flatnonzero(adj[s] & allowed & (dist > 0))
    if succ.size == 0:
        return None
    L = int(dist[succ].min()) + 1
    cyc, v, rem = [s], int(succ[dist[succ] == L - 1][0]), L - 1
    while v != s:
        cyc.append(v)
        rem -= 1
        if rem == 0:
            break
        cand = np.flatnonzero(adj[v] & allowed & (dist == rem))
        v = int(cand[0])
    return cyc


def cycle_cover_split(r: ReducedDigraph) -> CycleSplit:
    """Greedily remove shortest directed cycles until the rest is acyclic.

    Among shortest cycles the one with the smallest least vertex is taken, and
    among those the lexicographically first when written from that vertex.
    Self-loops are cycles of length one.
    """
    adj = np.asarray(r.adj, dtype=bool)
    n = adj.shape[0]
    alive = np.ones(n, dtype=bool)
    cycles = []
    while True:
        best = None
        for s in np.flatnonzero(alive):
            c = _shortest_cycle_from(adj, alive, int(s))
            if c is not None and (best is None or len(c) < len(best)):
                best = c
                if len(c) == 1:
                    break
        if best is None:
            break
        cycles.append(best)
        alive[best] = False
    pi = {}
    for c in cycles:
        for a, b in zip(c, c[1:] + c[:1]):
            pi[a] = b
    rest = np.flatnonzero(alive)
    indeg = {int(v): int((adj[rest, v]).sum()) for v in rest}
    order = []
    ready = sorted(v for v, d in indeg.items() if d == 0)
    while ready:
        v = ready.pop(0)
        order.append(v)
        for u in np.flatnonzero(adj[v] & alive):
            u = int(u)
            indeg[u] -= 1
            if indeg[u] == 0:
                ready.append(u)
                ready.sort()
    if len(order) != len(rest):  # pragma: no cover - guaranteed by the greedy loop
        raise RuntimeError("remaining digraph is not acyclic")
    T = sorted(int(v) for c in cycles for v in c)
    return CycleSplit(T, [[int(v) for v in c] for c in cycles], pi, order)


# ---------------------------------------------------------------------------
# Decomposition


@dataclass
class Decomposition:
    """Split of ``range(n)`` into ``J_bad``, ``J_free`` and ``J_cyc``.

    Attributes
    ----------
    J_bad : list of int
    J_free : list of int
        Listed in the order ``tau``; within it the thresholded profile is
        strictly upper triangular off the exceptional set ``F``.
    cyc_blocks : list of list of int
        Blocks ``J_1..J_mhat`` of equal size partitioning ``J_cyc``.
    pi : list of int
        ``pi[k]`` is the block paired with block ``k``; every
        ``(J_k, J_pi[k])`` block is super-regular.
    F : ndarray, shape (|F|, 2)
        Exceptional index pairs, sorted.
    params : dict
        ``eps``, ``delta``, ``sigma_hat``.
    """

    n: int
    J_bad: list
    J_free: list
    cyc_blocks: list
    pi: list
    F: np.ndarray
    params: dict
    profile_hash: str
    partition: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def J_cyc(self) -> list:
        return [i for b in self.cyc_blocks for i in b]

    @property
    def tau(self) -> list:
        return list(self.J_free)

    @property
    def mhat(self) -> int:
        return len(self.cyc_blocks)

    def to_dict(self) -> dict:
        return {"n": self.n, "J_bad": self.J_bad, "J_free": self.J_free, "J_cyc": self.J_cyc,
                "cyc_blocks": self.cyc_blocks, "pi": self.pi, "tau": self.tau,
                "F": self.F.tolist(), "params": self.params, "profile_hash": self.profile_hash,
                "partition": self.partition, "checks": self.checks}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "Decomposition":
        F = np.asarray(d["F"], dtype=int).reshape(-1, 2)
        return cls(int(d["n"]), [int(i) for i in d["J_bad"]], [int(i) for i in d["J_free"]],
                   [[int(i) for i in b] for b in d["cyc_blocks"]], [int(k) for k in d["pi"]],
                   F, dict(d["params"]), d["profile_hash"], d.get("partition", {}),
                   d.get("checks", {}))

    @classmethod
    def from_json(cls, text: str) -> "Decomposition":
        return cls.from_dict(json.loads(text))


def profile_hash(profile: Profile) -> str:
    return hashlib.sha256(np.ascontiguousarray(profile.sigma).tobytes()
                          + repr(profile.shape).encode()).hexdigest()[:16]


def _pad_choice(candidates, must, size, score):
    """``must`` plus the lowest-scoring further candidates, to reach ``size``."""
    must = sorted(must)
    if len(must) >= size:
        return must
    rest = sorted((c for c in candidates if c not in set(must)), key=lambda c: (score[c], c))
    return sorted(must + rest[:size - len(must)])


def check_decomposition(profile: Profile, dec: Decomposition, pad_free: bool | None = None,
                        n_samples: int = 10**4) -> dict:
    """Evaluate the four decomposition properties.

    Returns a dict with a boolean per property and details. Property 1 checks
    ``|I_0| < eps n`` and ``|J_bad| <= 15 sqrt(delta) n``; when the free
    removal set was padded as in the construction it also checks the lower
    bound ``min(floor(12 sqrt(delta) n), |I_free|, 2 eps |I_cyc| - mhat)``.
    """
    n = profile.n
    eps, delta, sh = dec.params["eps"], dec.params["delta"], dec.params["sigma_hat"]
    pad_free = dec.params.get("pad_free", False) if pad_free is None else pad_free
    sig = profile.sigma
    At = np.where(sig >= sh, sig, 0.0) > 0
    root = math.sqrt(delta)
    out = {}
    # (0) disjoint cover
    allidx = dec.J_bad + dec.J_free + dec.J_cyc
    out["cover"] = sorted(allidx) == list(range(n))
    # (1)
    info = dec.partition
    ub = len(dec.J_bad) <= 15 * root * n + TOL
    exc_ok = info.get("exceptional", 0) < eps * n
    lb_ok = True
    if pad_free:
        lb = min(math.floor(12 * root * n), info.get("I_free", 0),
                 2 * eps * info.get("I_cyc", 0) - dec.mhat)
        lb_ok = len(dec.J_bad) >= lb - TOL
    out["property1"] = bool(ub and exc_ok and lb_ok)
    # (2)
    F = dec.F
    fset = np.zeros((n, n), dtype=bool)
    if len(F):
        fset[F[:, 0], F[:, 1]] = True
    jf = np.asarray(dec.J_free, dtype=int)
    deg_ok = True
    if jf.size:
        rowdeg = fset[jf].sum(axis=1)
        coldeg = fset[:, jf].sum(axis=0)
        deg_ok = bool(rowdeg.max() < root * n + TOL and coldeg.max() < root * n + TOL)
    out["F_size"] = int(fset.sum())
    out["property2"] = bool(fset.sum() <= 6 * delta * n * n + TOL and deg_ok)
    # (3) below-diagonal entries in tau order are sub-threshold or exceptional
    ok3 = True
    if jf.size:
        sub = At[np.ix_(jf, jf)] & ~fset[np.ix_(jf, jf)]
        ok3 = not np.tril(sub).any()
    out["property3"] = bool(ok3)
    # (4)
    ok4 = len({len(b) for b in dec.cyc_blocks}) <= 1
    reports = []
    gt = ProfileGraph(Profile(np.where(sig >= sh, sig, 0.0)))
    for k, b in enumerate(dec.cyc_blocks):
        nb = dec.cyc_blocks[dec.pi[k]]
        rep = check_super_regularity(gt.subgraph(b, nb), min(1.0, 2 * delta), min(0.999, 2 * eps),
                                     n_random=n_samples)
        reports.append(rep.provenance)
        ok4 = ok4 and rep.passed
    out["property4"] = bool(ok4)
    out["super_regularity_provenance"] = sorted(set(reports))
    return out


def decompose(g, eps: float, delta: float, sigma_hat: float, seed: int = 0, cap: int = 64,
              pad_free: bool = False, n_samples: int = 2000) -> Decomposition:
    """Split the index set of a square profile into bad, free and cycle parts.

    Steps: regularity partition of the thresholded profile, reduced digraph,
    greedy cycle split, removal of ``floor(2 eps |I_k|)`` low-degree vertices
    from each cycle part, the exceptional pair set ``F`` (supported entries
    of non-edge part pairs), and removal of free vertices with ``F``-degree at
    least ``sqrt(delta) n``.

    Parameters
    ----------
    g : ProfileGraph or Profile
        Built from the unthresholded profile; thresholding at ``sigma_hat``
        happens here.
    eps, delta, sigma_hat : float
        Requires ``eps <= min(delta, 1/4)``.
    seed : int
        Seed of the initial random partition.
    cap : int
        Part-count cap of the partitioner.
    pad_free : bool
        Pad the free removal set up to ``min(|I_free|, floor(12 sqrt(delta) n))``
        elements. Off by default, since for moderate ``delta`` it would empty
        the free part.
    n_samples : int
        Randomized search budget for large pairs.

    Raises
    ------
    DecompositionError
        If a property fails; carries the property number.
    """
    profile = g.base if isinstance(g, ProfileGraph) else g
    n = profile.n
    if profile.m != n:
        raise ParameterError("decompose needs a square profile")
    if not (0 < eps <= min(delta, 0.25)):
        raise PreconditionError("need 0 < eps <= min(delta, 1/4)")
    At = threshold(profile, sigma_hat)
    gt = ProfileGraph(At)
    adj = gt.adj
    part = partition(gt, eps, cap=cap, seed=seed, n_samples=n_samples)
    R = reduced_digraph(part, gt, delta)
    split = cycle_cover_split(R)
    parts = part.parts
    # cycle parts
    cyc_parts = [k for c in split.cycles for k in c]
    pred = {b: a for a, b in split.pi.items()}
    low = {}
    for k in cyc_parts:
        Ik = parts[k]
        thr = 4 * delta * len(Ik)
        out_deg = adj[np.ix_(Ik, parts[split.pi[k]])].sum(axis=1)
        in_deg = adj[np.ix_(parts[pred[k]], Ik)].sum(axis=0)
        low[k] = (Ik, out_deg, in_deg, set(Ik[(out_deg < thr - TOL) | (in_deg < thr - TOL)].tolist()))
    rm_size = math.floor(2 * eps * len(parts[0]) + 1e-9) if parts else 0
    overflow = max((len(v[3]) for v in low.values()), default=0)
    rm_size = max(rm_size, overflow)
    if parts and cyc_parts and rm_size >= len(parts[0]):
        raise DecompositionError("cycle-part cleaning would remove whole parts", 4)
    star, blocks = {}, {}
    for k in cyc_parts:
        Ik, od, idg, must = low[k]
        score = {int(x): int(min(a, b)) for x, a, b in zip(Ik, od, idg)}
        star[k] = _pad_choice(Ik.tolist(), must, rm_size, score)
        blocks[k] = sorted(set(Ik.tolist()) - set(star[k]))
    index = {k: q for q, k in enumerate(cyc_parts)}
    cyc_blocks = [blocks[k] for k in cyc_parts]
    pi = [index[split.pi[k]] for k in cyc_parts]
    # exceptional pairs
    label = np.full(n, -1)
    for k, p in enumerate(parts):
        label[p] = k
    inpart = label >= 0
    nonedge = ~R.adj[label[:, None], label[None, :]]
    Fmask = inpart[:, None] & inpart[None, :] & nonedge & adj
    F = np.argwhere(Fmask)
    # free vertices in topological order
    free_order = [int(x) for k in split.order for x in parts[k]]
    root = math.sqrt(delta)
    rowF, colF = Fmask.sum(axis=1), Fmask.sum(axis=0)
    heavy = [x for x in free_order if max(rowF[x], colF[x]) >= root * n - TOL]
    cap_free = math.floor(12 * root * n + 1e-9)
    if len(heavy) > cap_free:
        raise DecompositionError(f"{len(heavy)} heavy free vertices exceed {cap_free}", 2)
    free_star = set(heavy)
    if pad_free:
        target = min(len(free_order), cap_free)
        score = {x: -int(max(rowF[x], colF[x])) for x in free_order}
        free_star = set(_pad_choice(free_order, heavy, target, score))
    J_free = [x for x in free_order if x not in free_star]
    J_bad = sorted(set(part.exceptional.tolist()) | free_star
                   | {x for k in cyc_parts for x in star[k]})
    info = part.summary()
    info.update({"I_free": len(free_order), "I_cyc": sum(len(parts[k]) for k in cyc_parts),
                 "cycle_removal": rm_size, "cycles": split.cycles})
    dec = Decomposition(n, J_bad, J_free, cyc_blocks, pi, F,
                        {"eps": eps, "delta": delta, "sigma_hat": sigma_hat, "seed": seed,
                         "cap": cap, "pad_free": pad_free},
                        profile_hash(profile), info)
    checks = check_decomposition(profile, dec, pad_free)
    dec.checks = checks
    if not checks["cover"]:
        raise DecompositionError("index sets do not partition range(n)", 1)
    for prop in (1, 2, 3, 4):
        if not checks[f"property{prop}"]:
            raise DecompositionError(f"decomposition property {prop} violated", prop)
    return dec
