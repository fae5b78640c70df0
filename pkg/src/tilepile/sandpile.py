"""Sandpile configurations, stabilization and the sandpile group.

The heavy lifting (toppling) is done by numba kernels that work on full
length chip arrays, with the sink entry kept at zero.  The public
:class:`Configuration` stores chips on the non-sink vertices only.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._intlinalg import exact_det
from .tiling import FiniteSandpileGraph

# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _stabilize_inplace(chips, indptr, indices, weights, degree, sink, odometer):
    """Queue based multi-toppling.  Returns False on overflow."""
    n = chips.shape[0]
    queue = np.empty(n, dtype=np.int64)
    inq = np.zeros(n, dtype=np.bool_)
    head = 0
    size = 0
    for v in range(n):
        if v != sink and chips[v] >= degree[v]:
            queue[(head + size) % n] = v
            size += 1
            inq[v] = True
    limit = np.int64(1) << 61
    while size > 0:
        v = queue[head]
        head = (head + 1) % n
        size -= 1
        inq[v] = False
        k = chips[v] // degree[v]
        if k <= 0:
            continue
        chips[v] -= k * degree[v]
        odometer[v] += k
        for p in range(indptr[v], indptr[v + 1]):
            w = indices[p]
            if w == sink:
                continue
            chips[w] += k * weights[p]
            if chips[w] > limit:
                return False
            if not inq[w] and chips[w] >= degree[w]:
                queue[(head + size) % n] = w
                size += 1
                inq[w] = True
    return True


@njit(cache=True)
def _run_chain(chips, indptr, indices, weights, degree, sink, moves):
    """Apply a sequence of chip additions (``-1`` = lazy step), stabilizing each."""
    n = chips.shape[0]
    odo = np.zeros(n, dtype=np.int64)
    for t in range(moves.shape[0]):
        v = moves[t]
        if v < 0:
            continue
        chips[v] += 1
        if chips[v] >= degree[v]:
            _stabilize_inplace(chips, indptr, indices, weights, degree, sink, odo)
    return odo


def _kernel_args(graph: FiniteSandpileGraph):
    return graph.indptr, graph.indices, graph.weights, graph.degree, graph.sink


# ---------------------------------------------------------------------------
# configuration type
# ---------------------------------------------------------------------------


class Configuration:
    """Chip counts on the non-sink vertices of ``graph``.

    Parameters
    ----------
    graph : FiniteSandpileGraph
    chips : array_like of int
        One entry per non-sink vertex, in increasing vertex order.
    """

    __slots__ = ("graph", "chips")

    def __init__(self, graph: FiniteSandpileGraph, chips):
        chips = np.asarray(chips, dtype=np.int64).copy()
        if chips.shape != (graph.n_vertices - 1,):
            raise ValueError(f"expected {graph.n_vertices - 1} chip counts, got shape {chips.shape}")
        if np.any(chips < 0):
            raise ValueError("chip counts must be non-negative")
        chips.setflags(write=False)
        self.graph = graph
        self.chips = chips

    @classmethod
    def from_full(cls, graph, full):
        full = np.asarray(full, dtype=np.int64)
        return cls(graph, full[graph.nonsink])

    def full(self) -> np.ndarray:
        """Chip array over all vertices with a zero sink entry."""
        out = np.zeros(self.graph.n_vertices, dtype=np.int64)
        out[self.graph.nonsink] = self.chips
        return out

    def is_stable(self) -> bool:
        return bool(np.all(self.chips < self.graph.degree[self.graph.nonsink]))

    def total(self) -> int:
        return int(self.chips.sum())

    def __add__(self, other):
        return add(self, other)

    def __eq__(self, other):
        return isinstance(other, Configuration) and other.graph is self.graph and np.array_equal(self.chips, other.chips)

    def __hash__(self):
        return hash(self.chips.tobytes())

    def key(self) -> bytes:
        return self.chips.tobytes()

    def __repr__(self):
        return f"Configuration({self.chips.tolist()})"


def max_stable(graph: FiniteSandpileGraph) -> Configuration:
    """The maximal stable configuration ``sigma_full`` (``deg - 1`` everywhere)."""
    return Configuration(graph, graph.degree[graph.nonsink] - 1)


def zero(graph: FiniteSandpileGraph) -> Configuration:
    return Configuration(graph, np.zeros(graph.n_vertices - 1, dtype=np.int64))


def stabilize(sigma: Configuration):
    """Stabilize ``sigma``.

    Returns
    -------
    (Configuration, numpy.ndarray)
        The stable configuration and the odometer (topplings per non-sink
        vertex).
    """
    g = sigma.graph
    full = sigma.full()
    odo = np.zeros(g.n_vertices, dtype=np.int64)
    ok = _stabilize_inplace(full, *_kernel_args(g), odo)
    if not ok:
        raise OverflowError("chip count overflow during stabilization")
    return Configuration.from_full(g, full), odo[g.nonsink]


def add(a: Configuration, b: Configuration) -> Configuration:
    """``(a + b)^o``; the group law on recurrent configurations."""
    if a.graph is not b.graph:
        raise ValueError("configurations live on different graphs")
    return stabilize(Configuration(a.graph, a.chips + b.chips))[0]


def identity(graph: FiniteSandpileGraph) -> Configuration:
    """Neutral element of the sandpile group.

    Computed as ``(sigma_full + (sigma_full - (2 sigma_full)^o))^o``.
    """
    full = max_stable(graph)
    two = stabilize(Configuration(graph, 2 * full.chips))[0]
    return stabilize(Configuration(graph, full.chips + (full.chips - two.chips)))[0]


def is_recurrent(sigma: Configuration) -> bool:
    """Burning test: fire the sink once; recurrent iff every vertex topples once."""
    g = sigma.graph
    if not sigma.is_stable():
        return False
    row = g.adjacency.getrow(g.sink).toarray().ravel()
    fired = Configuration(g, sigma.chips + row[g.nonsink])
    _, odo = stabilize(fired)
    return bool(np.all(odo == 1))


def multiply(a: Configuration, k: int) -> Configuration:
    """``a`` added to itself ``k`` times in the group (``k >= 1``), by doubling."""
    if k < 1:
        raise ValueError("k must be positive")
    result = None
    base = a
    while k:
        if k & 1:
            result = base if result is None else add(result, base)
        k >>= 1
        if k:
            base = add(base, base)
    return result


def inverse(a: Configuration, order: int | None = None) -> Configuration:
    """Group inverse, ``a`` added ``|G| - 1`` times."""
    if order is None:
        order = group_order(a.graph)
    if order == 1:
        return identity(a.graph)
    return multiply(a, order - 1)


def step(sigma: Configuration, rng: np.random.Generator) -> Configuration:
    """One step of the dynamics ``mu = (delta_id + sum_v delta_v) / |V|``."""
    g = sigma.graph
    u = int(rng.integers(g.n_vertices))
    if u == g.sink:
        return sigma
    full = sigma.full()
    full[u] += 1
    odo = np.zeros(g.n_vertices, dtype=np.int64)
    _stabilize_inplace(full, *_kernel_args(g), odo)
    return Configuration.from_full(g, full)


def reduced_laplacian(graph: FiniteSandpileGraph) -> np.ndarray:
    """Laplacian with the sink row and column removed (dense int64)."""
    keep = graph.nonsink
    L = graph.laplacian().toarray().astype(np.int64)
    return L[np.ix_(keep, keep)]


def group_order(graph: FiniteSandpileGraph) -> int:
    """``|G| = det`` of the reduced Laplacian, exactly."""
    if graph.n_vertices == 1:
        return 1
    return exact_det(reduced_laplacian(graph))


def recurrent_orbit(graph: FiniteSandpileGraph, cap: int = 10 ** 6):
    """All recurrent configurations, by closing ``sigma_full`` under the generators.

    Returns a dict ``bytes -> chips array``.  Raises ``RuntimeError`` past
    ``cap`` states.
    """
    g = graph
    start = max_stable(g).full()
    args = _kernel_args(g)
    seen = {start.tobytes(): start}
    frontier = [start]
    nonsink = g.nonsink
    while frontier:
        nxt = []
        for st in frontier:
            for v in nonsink:
                c = st.copy()
                c[v] += 1
                odo = np.zeros(g.n_vertices, dtype=np.int64)
                _stabilize_inplace(c, *args, odo)
                key = c.tobytes()
                if key not in seen:
                    seen[key] = c
                    nxt.append(c)
                    if len(seen) > cap:
                        raise RuntimeError("orbit exceeds cap")
        frontier = nxt
    return seen


def run_chain(sigma: Configuration, moves: np.ndarray) -> Configuration:
    """Apply prescribed moves (vertex indices, ``-1`` for a lazy step)."""
    g = sigma.graph
    full = sigma.full()
    _run_chain(full, *_kernel_args(g), np.asarray(moves, dtype=np.int64))
    return Configuration.from_full(g, full)
