"""Finitely supported functions on a tiling."""

from __future__ import annotations

from typing import Iterable

import numpy as np


class FunctionOnTiling(dict):
    """Finitely supported map ``(cell, n) -> value``.

    ``n`` is the lattice coordinate tuple of the cell.  Zero values are
    dropped on construction.

    Examples
    --------
    >>> eta = FunctionOnTiling({(0, (0, 0)): 1, (0, (1, 0)): -1})
    >>> eta.total(), eta.l1()
    (0, 2)
    """

    def __init__(self, data=None, **kwargs):
        super().__init__()
        items = data.items() if isinstance(data, dict) else (data or [])
        for key, val in items:
            cell, n = key
            key = (int(cell), tuple(int(x) for x in n))
            if val != 0:
                self[key] = self.get(key, 0) + val
                if self[key] == 0:
                    del self[key]

    @classmethod
    def delta(cls, cell, n, value=1):
        return cls({(cell, tuple(n)): value})

    @property
    def dim(self):
        for (_, n) in self:
            return len(n)
        return None

    def total(self):
        return sum(self.values())

    def l1(self):
        return sum(abs(v) for v in self.values())

    def l2sq(self):
        return sum(v * v for v in self.values())

    def is_integer(self) -> bool:
        return all(float(v).is_integer() for v in self.values())

    def translate(self, shift) -> "FunctionOnTiling":
        shift = tuple(int(s) for s in shift)
        return FunctionOnTiling({(c, tuple(a + b for a, b in zip(n, shift))): v for (c, n), v in self.items()})

    def scale(self, a) -> "FunctionOnTiling":
        return FunctionOnTiling({k: a * v for k, v in self.items()})

    def __add__(self, other):
        out = FunctionOnTiling(self)
        for k, v in other.items():
            out[k] = out.get(k, 0) + v
            if out[k] == 0:
                del out[k]
        return out

    def __sub__(self, other):
        return self + other.scale(-1)

    def __neg__(self):
        return self.scale(-1)

    def to_torus(self, n_cells: int, m: int, d: int) -> np.ndarray:
        """Wrap onto ``T / m Lambda`` as an array of shape ``(n_cells,) + (m,)*d``."""
        arr = np.zeros((n_cells,) + (m,) * d, dtype=float)
        for (c, n), v in self.items():
            arr[(c,) + tuple(x % m for x in n)] += v
        return arr

    def sorted_items(self):
        return sorted(self.items())

    def key(self):
        """Hashable canonical tuple of the items."""
        return tuple(sorted(self.items()))

    def to_json(self):
        return [[c, list(n), (int(v) if float(v).is_integer() else float(v))] for (c, n), v in self.sorted_items()]

    @classmethod
    def from_json(cls, data) -> "FunctionOnTiling":
        """Accept ``[[cell, [n...], value], ...]`` or ``{"cell,n1,n2": value}``."""
        if isinstance(data, dict):
            items = []
            for k, v in data.items():
                parts = [int(x) for x in str(k).split(",")]
                items.append(((parts[0], tuple(parts[1:])), v))
            return cls(items)
        return cls([((int(c), tuple(n)), v) for c, n, v in data])

    def __repr__(self):
        return f"FunctionOnTiling({dict(self.sorted_items())})"


def laplacian_of(spec, w: "FunctionOnTiling") -> FunctionOnTiling:
    """``Delta w`` on the infinite tiling, ``(Delta w)(x) = deg(x) w(x) - sum_{y~x} w(y)``."""
    out = {}
    deg = spec.degree
    for (c, n), v in w.items():
        out[(c, n)] = out.get((c, n), 0) + deg[c] * v
        for e in np.nonzero(spec.edge_src == c)[0]:
            j = int(spec.edge_dst[e])
            nn = tuple(int(a + b) for a, b in zip(n, spec.edge_off[e]))
            out[(j, nn)] = out.get((j, nn), 0) - int(spec.edge_mult[e]) * v
    return FunctionOnTiling({k: int(v) if float(v).is_integer() else v for k, v in out.items()})


def ball(spec, R: int, center=(0, None)) -> list:
    """Vertices within graph distance ``R`` of ``center`` (BFS on the tiling)."""
    c0, n0 = center
    if n0 is None:
        n0 = (0,) * spec.dim
    start = (int(c0), tuple(int(x) for x in n0))
    dist = {start: 0}
    frontier = [start]
    nbrs = {}
    for c in range(spec.n_cells):
        sel = np.nonzero(spec.edge_src == c)[0]
        nbrs[c] = [(int(spec.edge_dst[e]), tuple(int(x) for x in spec.edge_off[e])) for e in sel]
    for r in range(1, R + 1):
        nxt = []
        for (c, n) in frontier:
            for (j, o) in nbrs[c]:
                key = (j, tuple(a + b for a, b in zip(n, o)))
                if key not in dist:
                    dist[key] = r
                    nxt.append(key)
        frontier = nxt
    return sorted(dist, key=lambda k: (dist[k], k)), dist


def as_function(obj) -> FunctionOnTiling:
    if isinstance(obj, FunctionOnTiling):
        return obj
    if isinstance(obj, dict):
        return FunctionOnTiling(obj)
    return FunctionOnTiling.from_json(obj)
