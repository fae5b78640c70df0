"""Slow, independent reference implementations used by the tests."""

import itertools

import numpy as np


def neighbours(graph):
    A = graph.adjacency.tocsr()
    return [dict(zip(A.indices[A.indptr[v]:A.indptr[v + 1]], A.data[A.indptr[v]:A.indptr[v + 1]]))
            for v in range(graph.n_vertices)]


def stabilize_random_order(graph, full, rng):
    """Topple one unstable vertex at a time, chosen uniformly at random."""
    chips = np.array(full, dtype=np.int64)
    nb = neighbours(graph)
    deg = graph.degree
    odo = np.zeros(graph.n_vertices, dtype=np.int64)
    while True:
        unstable = [v for v in range(graph.n_vertices) if v != graph.sink and chips[v] >= deg[v]]
        if not unstable:
            break
        v = unstable[rng.integers(len(unstable))]
        chips[v] -= deg[v]
        odo[v] += 1
        for w, k in nb[v].items():
            chips[w] += k
    chips[graph.sink] = 0
    return chips, odo


def stable_configurations(graph):
    deg = graph.degree[graph.nonsink]
    return itertools.product(*[range(int(d)) for d in deg])


def reachable_from_full(graph, rng=None):
    """Recurrent states as the closure of sigma_full under add-a-chip moves."""
    rng = rng or np.random.default_rng(0)
    start = np.zeros(graph.n_vertices, dtype=np.int64)
    start[graph.nonsink] = graph.degree[graph.nonsink] - 1
    seen = {tuple(start[graph.nonsink])}
    frontier = [start]
    while frontier:
        nxt = []
        for st in frontier:
            for v in graph.nonsink:
                c = st.copy()
                c[v] += 1
                c, _ = stabilize_random_order(graph, c, rng)
                key = tuple(c[graph.nonsink])
                if key not in seen:
                    seen.add(key)
                    nxt.append(c)
        frontier = nxt
    return seen


def cycle_with_sink(n):
    from tilepile.tiling import FiniteSandpileGraph

    return FiniteSandpileGraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], sink=0, name=f"C{n}")


def grid_with_sink(a, b):
    """``a x b`` grid whose boundary edges go to a sink (the open square graph)."""
    from tilepile.tiling import FiniteSandpileGraph

    idx = lambda i, j: 1 + i * b + j
    edges = []
    for i in range(a):
        for j in range(b):
            for di, dj in ((1, 0), (0, 1), (-1, 0), (0, -1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < a and 0 <= jj < b:
                    if (ii, jj) > (i, j):
                        edges.append((idx(i, j), idx(ii, jj)))
                else:
                    edges.append((idx(i, j), 0))
    return FiniteSandpileGraph.from_edges(1 + a * b, edges, sink=0, name=f"grid{a}x{b}")


def random_connected_graph(n, p, rng, max_mult=2):
    from tilepile.tiling import FiniteSandpileGraph

    edges = [(i, int(rng.integers(i)), int(rng.integers(1, max_mult + 1))) for i in range(1, n)]
    for i in range(n):
        for j in range(i):
            if rng.random() < p:
                edges.append((i, j, int(rng.integers(1, max_mult + 1))))
    return FiniteSandpileGraph.from_edges(n, edges, sink=0, name=f"rand{n}")
