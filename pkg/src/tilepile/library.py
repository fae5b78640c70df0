"""Built-in tilings and reflection families.

Every tiling is stored with exact fractional cell coordinates and a lattice
basis whose Gram matrix is rational, so geometric predicates are exact.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .tiling import ReflectionFamily, TilingSpec

SQ3 = np.sqrt(3.0)


@lru_cache(maxsize=None)
def square() -> TilingSpec:
    """The square lattice Z^2 with nearest-neighbour edges."""
    return cubic(2)


@lru_cache(maxsize=None)
def cubic(d: int) -> TilingSpec:
    """The cubic lattice Z^d, ``1 <= d <= 8``."""
    if not 1 <= d <= 8:
        raise ValueError("Z^d is provided for 1 <= d <= 8")
    edges = []
    for i in range(d):
        e = [0] * d
        e[i] = 1
        edges.append((0, 0, tuple(e), 1))
    name = "square" if d == 2 else f"Z{d}"
    return TilingSpec(np.eye(d), None, edges, fractional=[[0] * d], name=name)


@lru_cache(maxsize=None)
def triangular() -> TilingSpec:
    """Triangular lattice with basis (1, 0), (1/2, sqrt(3)/2)."""
    M = np.array([[1.0, 0.5], [0.0, SQ3 / 2]])
    edges = [(0, 0, (1, 0), 1), (0, 0, (0, 1), 1), (0, 0, (1, -1), 1)]
    return TilingSpec(M, None, edges, fractional=[[0, 0]], name="triangular")


@lru_cache(maxsize=None)
def hexagonal() -> TilingSpec:
    """Honeycomb tiling with unit bonds.

    Cell vertex ``A`` sits at the origin and ``B`` at Cartesian (1, 0); the
    lattice is spanned by (3/2, sqrt(3)/2) and (3/2, -sqrt(3)/2).
    """
    M = np.array([[1.5, 1.5], [SQ3 / 2, -SQ3 / 2]])
    frac = [[0, 0], [Fraction(1, 3), Fraction(1, 3)]]
    edges = [(0, 1, (0, 0), 1), (0, 1, (-1, 0), 1), (0, 1, (0, -1), 1)]
    return TilingSpec(M, None, edges, fractional=frac, name="hexagonal")


@lru_cache(maxsize=None)
def tetrakis() -> TilingSpec:
    """Tetrakis square tiling: Z^2 plus square centres joined to the corners."""
    frac = [[0, 0], [Fraction(1, 2), Fraction(1, 2)]]
    edges = [(0, 0, (1, 0), 1), (0, 0, (0, 1), 1),
             (0, 1, (0, 0), 1), (0, 1, (-1, 0), 1), (0, 1, (0, -1), 1), (0, 1, (-1, -1), 1)]
    return TilingSpec(np.eye(2), None, edges, fractional=frac, name="tetrakis")


@lru_cache(maxsize=None)
def fcc() -> TilingSpec:
    """Face centred cubic lattice with its 12 nearest neighbours."""
    v1 = [1.0, 0.0, 0.0]
    v2 = [0.5, SQ3 / 2, 0.0]
    v3 = [0.5, 1 / (2 * SQ3), np.sqrt(2.0 / 3.0)]
    M = np.array([v1, v2, v3]).T
    edges = []
    for i in range(3):
        e = [0, 0, 0]
        e[i] = 1
        edges.append((0, 0, tuple(e), 1))
    for i, j in itertools.combinations(range(3), 2):
        e = [0, 0, 0]
        e[i], e[j] = 1, -1
        edges.append((0, 0, tuple(e), 1))
    return TilingSpec(M, None, edges, fractional=[[0, 0, 0]], name="fcc")


@lru_cache(maxsize=None)
def d4() -> TilingSpec:
    """The D4 (Hurwitz) lattice with its 24 unit neighbours.

    Basis columns are e1, e2, e3 and h = (1/2, 1/2, 1/2, 1/2).
    """
    h = np.full(4, 0.5)
    M = np.column_stack([np.eye(4)[:, 0], np.eye(4)[:, 1], np.eye(4)[:, 2], h])
    Minv = np.linalg.inv(M)
    units = [np.eye(4)[i] * s for i in range(4) for s in (1, -1)]
    units += [0.5 * np.array(eps) for eps in itertools.product((1, -1), repeat=4)]
    edges = set()
    for u in units:
        o = tuple(int(x) for x in np.rint(Minv @ u))
        neg = tuple(-x for x in o)
        if neg not in edges:
            edges.add(o)
    return TilingSpec(M, None, [(0, 0, o, 1) for o in sorted(edges)], fractional=[[0] * 4], name="D4")


# ---------------------------------------------------------------------------
# reflection families
# ---------------------------------------------------------------------------


def _unit_box_region(d):
    region = []
    for i in range(d):
        region += [(i, 0, 1), (i, 1, -1)]
    return region


@lru_cache(maxsize=None)
def cubic_family(d: int) -> ReflectionFamily:
    """Coordinate hyperplanes ``x_i = k``; region ``(0, 1)^d``."""
    return ReflectionFamily(np.eye(d, dtype=int).tolist(), _unit_box_region(d), name=f"axes{d}")


def square_family() -> ReflectionFamily:
    return cubic_family(2)


@lru_cache(maxsize=None)
def triangular_family() -> ReflectionFamily:
    """Three line families of the triangular lattice; region a unit triangle."""
    cov = [[0, 1], [1, 0], [1, 1]]
    region = [(0, 0, 1), (1, 0, 1), (2, 1, -1)]
    return ReflectionFamily(cov, region, name="triangular-lines")


@lru_cache(maxsize=None)
def hexagonal_family() -> ReflectionFamily:
    """Lines through the bonds of the honeycomb at 0, 60 and 120 degrees."""
    cov = [[1, -1], [1, 2], [2, 1]]
    region = [(0, 0, 1), (1, 0, 1), (2, 1, -1)]
    return ReflectionFamily(cov, region, name="hexagonal-lines")


@lru_cache(maxsize=None)
def tetrakis_family() -> ReflectionFamily:
    """Axis and diagonal lines; region the triangle (0,0), (1,0), (1/2,1/2)."""
    cov = [[1, 0], [0, 1], [1, 1], [1, -1]]
    region = [(1, 0, 1), (3, 0, 1), (2, 1, -1)]
    return ReflectionFamily(cov, region, name="tetrakis-lines")


@lru_cache(maxsize=None)
def d4_family() -> ReflectionFamily:
    """Hyperplanes ``<x, v_j> = 2n`` for v = (1,1,0,0), (1,-1,0,0), (0,0,1,1), (0,0,1,-1).

    In the plane coordinates ``y_j = <x, v_j> / 2`` the region is ``(0, 1)^4``.
    """
    spec = d4()
    vs = np.array([[1, 1, 0, 0], [1, -1, 0, 0], [0, 0, 1, 1], [0, 0, 1, -1]], dtype=float)
    cov = (vs @ spec.basis.matrix) / 2.0
    cov = [[Fraction(x).limit_denominator(4) for x in row] for row in cov]
    return ReflectionFamily(cov, _unit_box_region(4), name="D4-planes")


BUILTIN_SPECS = {
    "square": square,
    "triangular": triangular,
    "hexagonal": hexagonal,
    "tetrakis": tetrakis,
    "fcc": fcc,
    "D4": d4,
}
for _d in range(1, 9):
    BUILTIN_SPECS[f"Z{_d}"] = (lambda d=_d: cubic(d))

BUILTIN_FAMILIES = {
    "square": square_family,
    "triangular": triangular_family,
    "hexagonal": hexagonal_family,
    "tetrakis": tetrakis_family,
    "D4": d4_family,
}
for _d in range(1, 9):
    BUILTIN_FAMILIES[f"Z{_d}"] = (lambda d=_d: cubic_family(d))

ALIASES = {"tri": "triangular", "hex": "hexagonal", "honeycomb": "hexagonal", "d4": "D4",
           "Z2": "square", "sq": "square"}


def get_spec(name: str) -> TilingSpec:
    """Look up a built-in tiling by name (``square``, ``tri``, ``Z3``, ...)."""
    key = ALIASES.get(name, name)
    if key not in BUILTIN_SPECS:
        raise KeyError(f"unknown built-in tiling {name!r}")
    return BUILTIN_SPECS[key]()


def get_family(name: str) -> ReflectionFamily:
    """Look up the built-in reflection family of a tiling."""
    key = ALIASES.get(name, name)
    if key not in BUILTIN_FAMILIES:
        raise KeyError(f"no built-in reflection family for {name!r}")
    return BUILTIN_FAMILIES[key]()


def builtin_names():
    """Canonical names of all built-in tilings."""
    return list(BUILTIN_SPECS)
