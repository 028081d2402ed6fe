"""Directed weighted graphs, spectral radius, and node/link removal.

The adjacency convention follows the epidemic models: ``A[i, j] > 0`` means
node ``i`` can be infected by node ``j``.  An edge ``(src, dst, w)`` in the
edge list therefore sets ``A[src, dst] = w``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.csgraph


class SpectralError(RuntimeError):
    """Power iteration failed to converge."""


class GraphFormatError(ValueError):
    """Malformed edge-list text."""


@dataclass(frozen=True)
class Graph:
    """Immutable directed graph on nodes ``0..n-1`` with positive weights."""

    n: int
    edges: tuple[tuple[int, int, float], ...] = ()
    directed: bool = field(default=True, compare=False)
    _adj: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"node count must be non-negative, got {self.n}")
        canon = {}
        for src, dst, w in self.edges:
            src, dst, w = int(src), int(dst), float(w)
            if not (0 <= src < self.n and 0 <= dst < self.n):
                raise ValueError(f"edge ({src}, {dst}) out of range for n={self.n}")
            if src == dst:
                raise ValueError(f"self-loop on node {src}")
            if not w > 0 or not math.isfinite(w):
                raise ValueError(f"edge ({src}, {dst}) has non-positive weight {w}")
            if (src, dst) in canon:
                raise ValueError(f"duplicate edge ({src}, {dst})")
            canon[(src, dst)] = w
        if not self.directed:
            for (src, dst), w in canon.items():
                if canon.get((dst, src)) != w:
                    raise ValueError(
                        f"undirected graph needs symmetric edge ({dst}, {src}) with weight {w}"
                    )
        ordered = tuple(sorted((s, d, w) for (s, d), w in canon.items()))
        object.__setattr__(self, "edges", ordered)
        adj = np.zeros((self.n, self.n))
        for s, d, w in ordered:
            adj[s, d] = w
        adj.setflags(write=False)
        object.__setattr__(self, "_adj", adj)

    @classmethod
    def from_adjacency(cls, A, directed: bool | None = None) -> "Graph":
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("adjacency must be square")
        if directed is None:
            directed = not np.array_equal(A, A.T)
        src, dst = np.nonzero(A)
        return cls(A.shape[0], tuple((int(s), int(d), float(A[s, d])) for s, d in zip(src, dst)), directed)

    @property
    def adjacency(self) -> np.ndarray:
        return self._adj

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def in_neighbors(self, i: int) -> list[int]:
        """Nodes that can infect ``i``."""
        return [int(j) for j in np.nonzero(self._adj[i])[0]]

    def out_neighbors(self, j: int) -> list[int]:
        """Nodes that ``j`` can infect."""
        return [int(i) for i in np.nonzero(self._adj[:, j])[0]]

    def degree(self) -> np.ndarray:
        """Total degree (in plus out, counted once per direction)."""
        binary = self._adj > 0
        return binary.sum(axis=0) + binary.sum(axis=1)

    def induced_subgraph(self, keep: Iterable[int]) -> "Graph":
        """Subgraph on ``keep``, relabelled to ``0..len(keep)-1`` in sorted order."""
        keep = sorted(set(keep))
        index = {v: k for k, v in enumerate(keep)}
        edges = tuple((index[s], index[d], w) for s, d, w in self.edges if s in index and d in index)
        return Graph(len(keep), edges, self.directed)

    def without_edges(self, drop: Iterable[tuple[int, int]]) -> "Graph":
        drop = set(drop)
        edges = tuple(e for e in self.edges if (e[0], e[1]) not in drop)
        return Graph(self.n, edges, directed=True)

    def is_strongly_connected(self) -> bool:
        if self.n == 0:
            return False
        binary = self._adj > 0
        for M in (binary, binary.T):
            seen = {0}
            stack = [0]
            while stack:
                v = stack.pop()
                for w in np.nonzero(M[v])[0]:
                    w = int(w)
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            if len(seen) != self.n:
                return False
        return True


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _undirected(n: int, pairs: Iterable[tuple[int, int]]) -> Graph:
    edges = []
    for a, b in pairs:
        edges.append((a, b, 1.0))
        edges.append((b, a, 1.0))
    return Graph(n, tuple(edges), directed=False)


def generate(kind: str, n: int, *, p: float = 0.0, seed: int = 0,
             rows: int | None = None, cols: int | None = None) -> Graph:
    """Build a standard graph.

    ``kind`` is one of ``complete``, ``star`` (hub 0), ``path``, ``grid`` (needs
    ``rows * cols == n``), ``cycle`` (directed ring ``i -> i+1``) or
    ``erdos_renyi`` (each ordered pair independently with probability ``p``;
    undirected pairs are drawn once and mirrored).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if kind == "complete":
        return _undirected(n, itertools.combinations(range(n), 2))
    if kind == "star":
        return _undirected(n, ((0, k) for k in range(1, n)))
    if kind == "path":
        return _undirected(n, ((k, k + 1) for k in range(n - 1)))
    if kind == "cycle":
        return Graph(n, tuple(((k + 1) % n, k, 1.0) for k in range(n)) if n > 1 else ())
    if kind == "grid":
        if rows is None or cols is None or rows * cols != n or rows < 1 or cols < 1:
            raise ValueError(f"grid dims {rows}x{cols} inconsistent with n={n}")
        pairs = []
        for r in range(rows):
            for c in range(cols):
                v = r * cols + c
                if c + 1 < cols:
                    pairs.append((v, v + 1))
                if r + 1 < rows:
                    pairs.append((v, v + cols))
        return _undirected(n, pairs)
    if kind == "erdos_renyi":
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {p}")
        rng = np.random.default_rng(seed)
        draws = rng.random((n, n))
        pairs = [(a, b) for a, b in itertools.combinations(range(n), 2) if draws[a, b] < p]
        return _undirected(n, pairs)
    raise ValueError(f"unknown graph kind {kind!r}")


def random_strongly_connected(n: int, p: float, seed: int, weighted: bool = False) -> Graph:
    """Directed ring plus random extra arcs; strongly connected by construction."""
    rng = np.random.default_rng(seed)
    A = np.zeros((n, n))
    perm = rng.permutation(n)
    for k in range(n):
        A[perm[(k + 1) % n], perm[k]] = 1.0
    extra = rng.random((n, n)) < p
    np.fill_diagonal(extra, False)
    A[extra] = 1.0
    if n == 1:
        A[:] = 0.0
    if weighted:
        A = A * rng.uniform(0.2, 2.0, size=(n, n))
    return Graph.from_adjacency(A, directed=True)


# ---------------------------------------------------------------------------
# Edge-list text format
# ---------------------------------------------------------------------------


def load_edge_list(text: str, n: int | None = None) -> Graph:
    """Parse ``src dst [weight]`` lines.

    A header line ``n <N>`` fixes the node count; otherwise ``n`` must be
    passed or is inferred as ``max index + 1``.  ``#`` starts a comment.
    """
    header_n = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "n":
            if len(parts) != 2 or header_n is not None:
                raise GraphFormatError(f"line {lineno}: bad header {raw!r}")
            try:
                header_n = int(parts[1])
            except ValueError:
                raise GraphFormatError(f"line {lineno}: bad node count {parts[1]!r}") from None
            continue
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"line {lineno}: expected 'src dst [weight]', got {raw!r}")
        try:
            src, dst = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise GraphFormatError(f"line {lineno}: non-numeric field in {raw!r}") from None
        if src < 0 or dst < 0:
            raise GraphFormatError(f"line {lineno}: negative node index")
        if w < 0:
            raise GraphFormatError(f"line {lineno}: negative weight {w}")
        edges.append((lineno, src, dst, w))

    if header_n is not None and n is not None and header_n != n:
        raise GraphFormatError(f"header says n={header_n} but caller passed n={n}")
    count = header_n if header_n is not None else n
    if count is None:
        count = 1 + max((max(s, d) for _, s, d, _ in edges), default=-1)
    for lineno, src, dst, _ in edges:
        if src >= count or dst >= count:
            raise GraphFormatError(f"line {lineno}: index >= n ({count})")
    kept = tuple((s, d, w) for _, s, d, w in edges if w > 0)
    try:
        g = Graph(count, kept)
    except ValueError as exc:
        raise GraphFormatError(str(exc)) from None
    return Graph(count, g.edges, directed=not np.array_equal(g.adjacency, g.adjacency.T))


def save_edge_list(g: Graph) -> str:
    lines = [f"n {g.n}"]
    for s, d, w in g.edges:
        lines.append(f"{s} {d}" if w == 1.0 else f"{s} {d} {w!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Spectral radius
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralResult:
    lambda_max: float
    right_vector: np.ndarray
    left_vector: np.ndarray
    iterations: int
    residual: float


def _power(M: np.ndarray, max_iter: int, vec_tol: float, res_tol: float, name: str):
    n = M.shape[0]
    v = np.full(n, 1.0 / n)
    for it in range(1, max_iter + 1):
        w = M @ v
        s = w.sum()
        if s <= 0:
            raise SpectralError(f"{name}: iterate collapsed to zero")
        w /= s
        change = np.abs(w - v).max()
        v = w
        if change <= vec_tol:
            Mv = M @ v
            lam = float(v @ Mv / (v @ v))
            res = float(np.abs(Mv - lam * v).max())
            if res <= res_tol:
                return lam, v, it, res
    Mv = M @ v
    lam = float(v @ Mv / (v @ v))
    res = float(np.abs(Mv - lam * v).max())
    raise SpectralError(
        f"{name}: power iteration did not converge in {max_iter} iterations (residual {res:.3e})"
    )


def _reducible_vector(S: np.ndarray, blocks, block_vals, block_vecs, lam: float, res_tol: float,
                      name: str):
    """Nonnegative eigenvector of a reducible ``S`` for its dominant eigenvalue ``lam``.

    Row ``i`` of ``S`` reads from column ``j`` when ``S[i, j] > 0``.  Take a
    dominant block ``K`` with no other dominant block among the nodes that
    read from it, directly or not; call those nodes ``D``.  Then
    ``v_K`` is the block's Perron vector, ``v_D`` solves
    ``(lam I - S_DD) v_D = S_DK v_K`` (a nonsingular M-matrix system, so the
    solution is nonnegative) and ``v`` vanishes elsewhere.  This stays exact
    when ``lam`` is defective, where iterative methods stall.
    """
    n = S.shape[0]
    tol = 1e-9 * max(1.0, abs(lam))
    readers = scipy.sparse.csr_matrix((S - np.diag(np.diag(S)) != 0).T)
    dominant = [k for k, val in enumerate(block_vals) if val >= lam - tol]
    reach = {}
    for k in dominant:
        order = scipy.sparse.csgraph.breadth_first_order(readers, int(blocks[k][0]), directed=True,
                                                         return_predecessors=False)
        reach[k] = np.zeros(n, dtype=bool)
        reach[k][order] = True
    chosen = next(k for k in dominant
                  if not any(j != k and reach[k][blocks[j][0]] for j in dominant))
    K = blocks[chosen]
    D = np.flatnonzero(reach[chosen] & ~np.isin(np.arange(n), K))
    v = np.zeros(n)
    v[K] = block_vecs[chosen]
    if D.size:
        rhs = S[np.ix_(D, K)] @ v[K]
        v[D] = np.maximum(scipy.linalg.solve(lam * np.eye(D.size) - S[np.ix_(D, D)], rhs), 0.0)
    v /= v.sum()
    res = float(np.abs(S @ v - lam * v).max())
    if not res <= res_tol:
        raise SpectralError(f"{name}: reducible eigenvector residual {res:.3e} exceeds {res_tol:.1e}")
    return v, res


def _strong_components(M: np.ndarray) -> list[np.ndarray]:
    count, labels = scipy.sparse.csgraph.connected_components(
        scipy.sparse.csr_matrix(M != 0), directed=True, connection="strong")
    return [np.nonzero(labels == k)[0] for k in range(count)]


def lambda_max(M, *, max_iter: int = 100_000, vec_tol: float = 1e-12,
               res_tol: float = 1e-10, name: str = "matrix") -> SpectralResult:
    """Dominant real eigenvalue of a nonnegative or Metzler matrix.

    The matrix is shifted by ``phi = max(0, -min diag) + 1`` so every entry is
    nonnegative and the diagonal strictly positive.  An irreducible matrix is
    then primitive and plain power iteration converges.  A reducible matrix
    has the largest eigenvalue among its strongly connected diagonal blocks;
    each block is solved by power iteration and the Perron vectors of the
    whole matrix are assembled from the block vectors (see
    :func:`_reducible_vector`).  Both vectors are normalised to sum to one.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    n = M.shape[0]
    if n == 0:
        return SpectralResult(0.0, np.zeros(0), np.zeros(0), 0, 0.0)
    off = M - np.diag(np.diag(M))
    if (off < 0).any():
        raise ValueError(f"{name} has negative off-diagonal entries (not Metzler)")
    phi = max(0.0, -float(np.diag(M).min())) + 1.0
    S = M + phi * np.eye(n)
    blocks = _strong_components(off)
    if len(blocks) == 1:
        lam_r, right, it_r, res_r = _power(S, max_iter, vec_tol, res_tol, name)
        lam_l, left, it_l, res_l = _power(S.T, max_iter, vec_tol, res_tol, name + " (transpose)")
        return SpectralResult(lam_r - phi, right, left, max(it_r, it_l), max(res_r, res_l))
    vals, rights, lefts, iters = [], [], [], 0
    for idx in blocks:
        if idx.size == 1:
            vals.append(float(S[idx[0], idx[0]]))
            rights.append(np.ones(1))
            lefts.append(np.ones(1))
            continue
        block = S[np.ix_(idx, idx)]
        val, r, it_r, _ = _power(block, max_iter, vec_tol, res_tol, name)
        _, l, it_l, _ = _power(block.T, max_iter, vec_tol, res_tol, name + " (transpose)")
        vals.append(val)
        rights.append(r)
        lefts.append(l)
        iters = max(iters, it_r, it_l)
    lam = max(vals)
    right, res_r = _reducible_vector(S, blocks, vals, rights, lam, res_tol, name)
    left, res_l = _reducible_vector(S.T, blocks, vals, lefts, lam, res_tol, name + " (transpose)")
    return SpectralResult(lam - phi, right, left, iters, max(res_r, res_l))


def spectral_radius(A) -> float:
    """``lambda_max`` of an adjacency matrix or graph, zero for the empty graph."""
    if isinstance(A, Graph):
        A = A.adjacency
    return lambda_max(A).lambda_max


# ---------------------------------------------------------------------------
# Node and link removal
# ---------------------------------------------------------------------------

MAX_EXACT_NODES = 15


def _lambda_without(A: np.ndarray, removed: Sequence[int]) -> float:
    keep = [k for k in range(A.shape[0]) if k not in set(removed)]
    if not keep:
        return 0.0
    return lambda_max(A[np.ix_(keep, keep)]).lambda_max


def remove_nodes_exact(g: Graph, budget: int) -> tuple[tuple[int, ...], float]:
    """Globally optimal removal of at most ``budget`` nodes by enumeration.

    Removing more nodes never increases the spectral radius, so only sets of
    exactly ``budget`` nodes are enumerated.  Ties go to the lexicographically
    smallest set.
    """
    if g.n > MAX_EXACT_NODES:
        raise ValueError(
            f"exact node removal enumerates subsets; n={g.n} exceeds {MAX_EXACT_NODES}, "
            "use remove_nodes_greedy instead"
        )
    if not 0 <= budget <= g.n:
        raise ValueError(f"budget must be in [0, {g.n}], got {budget}")
    A = g.adjacency
    best_set: tuple[int, ...] = ()
    best = math.inf
    for subset in itertools.combinations(range(g.n), budget):
        lam = _lambda_without(A, subset)
        if lam < best - 1e-12:
            best, best_set = lam, subset
    return best_set, best


def remove_nodes_greedy(g: Graph, budget: int, score: str = "degree") -> tuple[tuple[int, ...], float]:
    """Remove nodes one at a time by highest ``degree`` or ``perron_product`` score.

    Scores are recomputed on the remaining graph after each removal; ties go
    to the smallest original index.
    """
    if not 0 <= budget <= g.n:
        raise ValueError(f"budget must be in [0, {g.n}], got {budget}")
    if score not in ("degree", "perron_product"):
        raise ValueError(f"unknown score {score!r}")
    A = g.adjacency
    remaining = list(range(g.n))
    removed = []
    for _ in range(budget):
        sub = A[np.ix_(remaining, remaining)]
        if score == "degree":
            binary = sub > 0
            scores = (binary.sum(axis=0) + binary.sum(axis=1)).astype(float)
        else:
            res = lambda_max(sub)
            scores = res.left_vector * res.right_vector
        k = int(np.argmax(scores))  # first maximum = smallest index
        removed.append(remaining.pop(k))
    return tuple(sorted(removed)), _lambda_without(A, removed)


def remove_links_greedy(g: Graph, budget: int) -> tuple[tuple[tuple[int, int], ...], float]:
    """Remove edges one at a time by largest ``left[i] * right[j]`` score."""
    if not 0 <= budget <= g.num_edges:
        raise ValueError(f"budget must be in [0, {g.num_edges}], got {budget}")
    A = g.adjacency.copy()
    removed = []
    for _ in range(budget):
        res = lambda_max(A)
        rows, cols = np.nonzero(A)  # row-major order = lexicographic
        scores = res.left_vector[rows] * res.right_vector[cols]
        k = int(np.argmax(scores))
        edge = (int(rows[k]), int(cols[k]))
        A[edge] = 0.0
        removed.append(edge)
    return tuple(sorted(removed)), lambda_max(A).lambda_max


def remove_links_exact(g: Graph, budget: int) -> tuple[tuple[tuple[int, int], ...], float]:
    """Exhaustive link removal; intended for small graphs and tests."""
    if not 0 <= budget <= g.num_edges:
        raise ValueError(f"budget must be in [0, {g.num_edges}], got {budget}")
    if math.comb(g.num_edges, budget) > 200_000:
        raise ValueError("too many edge subsets for exhaustive search, use remove_links_greedy")
    pairs = [(s, d) for s, d, _ in g.edges]
    best_set: tuple[tuple[int, int], ...] = ()
    best = math.inf
    for subset in itertools.combinations(pairs, budget):
        A = g.adjacency.copy()
        for e in subset:
            A[e] = 0.0
        lam = lambda_max(A).lambda_max
        if lam < best - 1e-12:
            best, best_set = lam, subset
    return best_set, best
