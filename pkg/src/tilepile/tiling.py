"""Lattice-periodic tilings and the finite sandpile graphs built from them.

A tiling is described by a lattice basis ``M`` (columns generate the period
lattice), a list of cell vertices inside the fundamental parallelepiped and a
list of directed edges ``(i, j, offset, multiplicity)``.  An edge connects
vertex ``i`` of the cell at lattice coordinate ``n`` with vertex ``j`` of the
cell at ``n + offset``.

Geometry is carried in *fractional* coordinates (coordinates with respect to
the lattice basis).  For every built-in tiling these are rational, and so is
the Gram matrix ``M^T M``, which makes all crossing and reflection tests exact
even when the Cartesian embedding involves square roots.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import floor, gcd
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ._intlinalg import generates_full_lattice, lcm
from .exceptions import ConditionAViolated, NotReflectionSymmetric, SpecError

EPS_DET = 1e-12
FLOAT_TOL = 1e-9
MAX_MULTIPLICITY = 2 ** 16


def rationalize(x, tol: float = FLOAT_TOL, max_den: int = 10 ** 6):
    """Return ``x`` as a :class:`~fractions.Fraction` or ``None``.

    Strings such as ``"1/3"`` are parsed exactly.  Floats are accepted when
    they lie within ``tol`` of a fraction with denominator at most
    ``max_den``.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x)
    xf = float(x)
    fr = Fraction(xf).limit_denominator(max_den)
    if abs(float(fr) - xf) <= tol:
        return fr
    return None


def _rationalize_all(values):
    out = [rationalize(v) for v in values]
    if any(v is None for v in out):
        return None
    return tuple(out)


def _denominator_lcm(fracs) -> int:
    L = 1
    for f in fracs:
        L = lcm(L, f.denominator)
    return L


# ---------------------------------------------------------------------------
# lattice and tiling specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LatticeBasis:
    """Lattice ``M Z^d`` given by the columns of ``matrix``."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise SpecError("basis must be a square d x d matrix")
        if abs(np.linalg.det(M)) <= EPS_DET:
            raise SpecError("basis matrix is singular")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def gram(self):
        """Exact Gram matrix ``M^T M`` as Fractions, or ``None`` if irrational."""
        G = self.matrix.T @ self.matrix
        rows = [_rationalize_all(row) for row in G]
        if any(r is None for r in rows):
            return None
        return tuple(rows)


@dataclass(frozen=True)
class Transition:
    """One directed transition of the quotient chain."""

    src: int
    dst: int
    displacement: tuple
    multiplicity: int
    probability: float


@dataclass(frozen=True)
class QuotientGraph:
    """The finite chain on cell classes with lattice displacement data."""

    n_states: int
    transitions: tuple

    def transition_matrix(self) -> np.ndarray:
        P = np.zeros((self.n_states, self.n_states))
        for t in self.transitions:
            P[t.src, t.dst] += t.probability
        return P


class TilingSpec:
    """A lattice-periodic graph.

    Parameters
    ----------
    basis : array_like or LatticeBasis
        ``d x d`` matrix whose columns generate the period lattice.
    positions : sequence
        Cartesian positions of the cell vertices, entries may be floats or
        strings ``"p/q"``.  Vertex 0 must sit at the origin.
    edges : iterable of (i, j, offset, multiplicity)
        Directed edges.  Missing reversed copies are added when
        ``complete_reversal`` is true.
    fractional : sequence, optional
        Exact fractional coordinates of the cells.  When given, ``positions``
        may be ``None`` and is derived as ``M @ fractional``.
    name : str, optional
    """

    def __init__(self, basis, positions, edges, *, fractional=None, name=None,
                 complete_reversal=True):
        self.basis = basis if isinstance(basis, LatticeBasis) else LatticeBasis(np.asarray(basis, dtype=float))
        d = self.basis.dim
        M = self.basis.matrix
        self.name = name or "tiling"

        if fractional is not None:
            frac = [tuple(rationalize(x) for x in row) for row in fractional]
            if any(x is None for row in frac for x in row):
                raise SpecError("fractional coordinates must be rational")
            pos = np.array([[float(x) for x in row] for row in frac]) @ M.T
        else:
            pos = np.array([[float(Fraction(x)) if isinstance(x, str) else float(x) for x in row]
                            for row in positions], dtype=float).reshape(-1, d)
            fl = np.linalg.solve(M, pos.T).T
            frac = []
            for row in fl:
                r = _rationalize_all(row)
                frac.append(r)
            if any(r is None for r in frac):
                frac = None
        self.positions = np.asarray(pos, dtype=float).reshape(-1, d)
        self.positions.setflags(write=False)
        self.n_cells = self.positions.shape[0]
        self.exact = frac is not None
        if frac is not None:
            self.frac_exact = tuple(frac)
            self.frac = np.array([[float(x) for x in row] for row in frac]).reshape(-1, d)
        else:
            self.frac_exact = None
            self.frac = np.linalg.solve(M, self.positions.T).T
        self.frac.setflags(write=False)
        self._build_edges(edges, complete_reversal)
        self._validate()

    # -- construction helpers -------------------------------------------
    def _build_edges(self, edges, complete_reversal):
        d = self.dim
        table = {}
        for e in edges:
            if len(e) == 3:
                i, j, off = e
                mult = 1
            else:
                i, j, off, mult = e
            off = tuple(int(o) for o in off)
            if len(off) != d:
                raise SpecError(f"edge offset {off} has wrong dimension")
            mult = int(mult)
            if mult < 1:
                raise SpecError("edge multiplicity must be positive")
            key = (int(i), int(j), off)
            table[key] = table.get(key, 0) + mult
        if complete_reversal:
            for (i, j, off), mult in list(table.items()):
                rev = (j, i, tuple(-o for o in off))
                if rev not in table:
                    table[rev] = mult
        keys = sorted(table)
        self.edge_src = np.array([k[0] for k in keys], dtype=np.int64)
        self.edge_dst = np.array([k[1] for k in keys], dtype=np.int64)
        self.edge_off = np.array([k[2] for k in keys], dtype=np.int64).reshape(-1, d)
        self.edge_mult = np.array([table[k] for k in keys], dtype=np.int64)
        for arr in (self.edge_src, self.edge_dst, self.edge_off, self.edge_mult):
            arr.setflags(write=False)
        self._edge_table = table

    def _validate(self):
        d, k = self.dim, self.n_cells
        if k == 0:
            raise SpecError("a tiling needs at least one cell vertex")
        if np.any(np.abs(self.positions[0]) > FLOAT_TOL):
            raise SpecError("cell vertex 0 must lie at the origin")
        if self.exact:
            for row in self.frac_exact:
                if any(x < 0 or x >= 1 for x in row):
                    raise SpecError("cell positions must lie in the fundamental parallelepiped")
        elif np.any(self.frac < -FLOAT_TOL) or np.any(self.frac >= 1 - FLOAT_TOL):
            raise SpecError("cell positions must lie in the fundamental parallelepiped")
        if len(self.edge_src) == 0:
            raise SpecError("tiling has no edges")
        if self.edge_src.max() >= k or self.edge_dst.max() >= k or self.edge_src.min() < 0 or self.edge_dst.min() < 0:
            raise SpecError("edge refers to an unknown cell")
        if np.any(self.edge_mult > MAX_MULTIPLICITY):
            raise SpecError(f"edge multiplicity exceeds {MAX_MULTIPLICITY}")
        loops = (self.edge_src == self.edge_dst) & np.all(self.edge_off == 0, axis=1)
        if np.any(loops):
            raise SpecError("self-loop in edge list")
        for (i, j, off), mult in self._edge_table.items():
            rev = (j, i, tuple(-o for o in off))
            if self._edge_table.get(rev) != mult:
                raise SpecError(f"edge {(i, j, off)} is not matched by its reversal")
        deg = self.degree
        if np.any(deg < 1):
            raise SpecError("every cell vertex needs degree at least 1")
        # quotient connectivity
        A = sp.coo_matrix((np.ones(len(self.edge_src)), (self.edge_src, self.edge_dst)), shape=(k, k))
        ncomp, _ = connected_components(A, directed=False)
        if ncomp != 1:
            raise SpecError("the quotient graph is not connected")
        # the infinite graph is connected iff cycle displacements span Z^d
        pot = self._tree_potentials()
        cyc = [tuple(int(o) + pot[i][t] - pot[j][t] for t, o in enumerate(off))
               for (i, j, off) in self._edge_table]
        if not generates_full_lattice(cyc, d):
            raise SpecError("the periodic graph is not connected")

    def _tree_potentials(self):
        k, d = self.n_cells, self.dim
        pot = {0: [0] * d}
        stack = [0]
        while stack:
            i = stack.pop()
            for (a, b, off) in self._edge_table:
                if a == i and b not in pot:
                    pot[b] = [pot[i][t] + off[t] for t in range(d)]
                    stack.append(b)
        return pot

    # -- basic properties ---------------------------------------------------
    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def degree(self) -> np.ndarray:
        deg = np.zeros(self.n_cells, dtype=np.int64)
        np.add.at(deg, self.edge_src, self.edge_mult)
        return deg

    @property
    def n_edges(self) -> int:
        """Number of directed edge records (each undirected edge counted twice)."""
        return len(self.edge_src)

    def edges(self):
        """Iterate over ``(i, j, offset, multiplicity)`` records."""
        for a, b, o, m in zip(self.edge_src, self.edge_dst, self.edge_off, self.edge_mult):
            yield int(a), int(b), tuple(int(x) for x in o), int(m)

    def vertex_position(self, cell: int, n) -> np.ndarray:
        """Cartesian position of vertex ``(cell, n)``."""
        return self.positions[cell] + self.basis.matrix @ np.asarray(n, dtype=float)

    def vertex_frac(self, cell: int, n):
        """Exact fractional coordinates of vertex ``(cell, n)``."""
        if self.exact:
            return tuple(self.frac_exact[cell][t] + int(n[t]) for t in range(self.dim))
        return tuple(self.frac[cell] + np.asarray(n, dtype=float))

    def locate(self, f):
        """Inverse of :meth:`vertex_frac`; ``None`` if ``f`` is not a vertex."""
        for c in range(self.n_cells):
            if self.exact and all(isinstance(x, Fraction) for x in f):
                diff = [f[t] - self.frac_exact[c][t] for t in range(self.dim)]
                if all(x.denominator == 1 for x in diff):
                    return c, tuple(int(x) for x in diff)
            else:
                diff = np.asarray(f, dtype=float) - self.frac[c]
                r = np.rint(diff)
                if np.all(np.abs(diff - r) < FLOAT_TOL):
                    return c, tuple(int(x) for x in r)
        return None

    def neighbors(self, cell: int, n):
        """List of ``((cell', n'), multiplicity)`` for the vertex ``(cell, n)``."""
        n = np.asarray(n, dtype=np.int64)
        sel = np.nonzero(self.edge_src == cell)[0]
        return [((int(self.edge_dst[e]), tuple(int(x) for x in n + self.edge_off[e])), int(self.edge_mult[e]))
                for e in sel]

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        pos = []
        for c in range(self.n_cells):
            pos.append([float(x) for x in self.positions[c]])
        out = {
            "name": self.name,
            "dim": self.dim,
            "basis": self.basis.matrix.T.tolist(),
            "cells": pos,
            "edges": [[i, j, list(o), m] for (i, j, o, m) in self.edges()],
        }
        if self.exact:
            out["fractional"] = [[str(x) for x in row] for row in self.frac_exact]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TilingSpec":
        try:
            d = int(data["dim"])
            basis = np.array(data["basis"], dtype=float).reshape(d, d).T
            fractional = data.get("fractional")
            cells = data.get("cells")
            edges = [(e[0], e[1], e[2], e[3] if len(e) > 3 else 1) for e in data["edges"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"malformed tiling spec: {exc}") from exc
        return cls(basis, cells, edges, fractional=fractional, name=data.get("name"))

    def spec_hash(self) -> str:
        """Stable content hash of the specification."""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def __repr__(self):
        return f"TilingSpec(name={self.name!r}, dim={self.dim}, cells={self.n_cells}, edges={self.n_edges})"


def quotient_graph(spec: TilingSpec) -> QuotientGraph:
    """Random-walk chain on the cell classes with lattice displacements.

    Examples
    --------
    >>> from tilepile.library import square
    >>> len(quotient_graph(square()).transitions)
    4
    """
    deg = spec.degree
    trans = tuple(Transition(i, j, o, m, m / deg[i]) for (i, j, o, m) in spec.edges())
    return QuotientGraph(spec.n_cells, trans)


# ---------------------------------------------------------------------------
# reflection families
# ---------------------------------------------------------------------------


class ReflectionFamily:
    """Periodic families of reflecting hyperplanes and a fundamental region.

    Family ``i`` consists of the hyperplanes ``{f : c_i . f = k}``, ``k`` an
    integer, where ``f`` are fractional coordinates and ``c_i`` a rational
    covector.  The region is the open set cut out by half-spaces
    ``sign * (c_i . f - k) > 0`` listed as ``(i, k, sign)`` triples.

    Parameters
    ----------
    covectors : sequence of sequences
        Rational covectors in fractional coordinates.
    region : sequence of (family, k, sign)
    name : str, optional
    """

    def __init__(self, covectors, region, name=None):
        cov = []
        for row in covectors:
            r = _rationalize_all(row)
            if r is None:
                raise SpecError("family covectors must be rational in fractional coordinates")
            cov.append(r)
        self.covectors = tuple(cov)
        self.region = tuple((int(i), int(k), 1 if s > 0 else -1) for (i, k, s) in region)
        self.name = name or "family"
        if not self.covectors:
            raise SpecError("a reflection family needs at least one hyperplane family")
        for (i, _, _) in self.region:
            if not 0 <= i < len(self.covectors):
                raise SpecError("region refers to an unknown family")

    @property
    def n_families(self) -> int:
        return len(self.covectors)

    @property
    def dim(self) -> int:
        return len(self.covectors[0])

    def covector_array(self) -> np.ndarray:
        return np.array([[float(x) for x in c] for c in self.covectors])

    def normals(self, spec: TilingSpec) -> np.ndarray:
        """Cartesian normal vectors ``M^{-T} c_i`` (planes ``<x, n_i> = k``)."""
        return np.linalg.solve(spec.basis.matrix.T, self.covector_array().T).T

    def plane_transform(self) -> np.ndarray:
        """Matrix mapping fractional coordinates to plane coordinates.

        Row ``i`` evaluates ``c_i``; the hyperplanes become the coordinate
        planes ``y_i = k``.
        """
        return self.covector_array()

    def axes(self, spec: TilingSpec):
        """Exact reflection axes ``a_i`` with ``c_i . a_i = 2``.

        The reflection in ``c_i . f = k`` is ``f - (c_i . f - k) a_i``.
        """
        G = spec.basis.gram()
        out = []
        for c in self.covectors:
            if G is None:
                Gf = spec.basis.matrix.T @ spec.basis.matrix
                cf = np.array([float(x) for x in c])
                w = np.linalg.solve(Gf, cf)
                out.append(tuple(2 * w / float(cf @ w)))
                continue
            w = _solve_exact(G, c)
            norm = sum(ci * wi for ci, wi in zip(c, w))
            out.append(tuple(2 * wi / norm for wi in w))
        return tuple(out)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "covectors": [[str(x) for x in c] for c in self.covectors],
            "region": [list(r) for r in self.region],
        }

    @classmethod
    def from_dict(cls, data: dict, spec: TilingSpec | None = None) -> "ReflectionFamily":
        if "covectors" in data:
            cov = [[Fraction(x) if isinstance(x, str) else x for x in row] for row in data["covectors"]]
        elif "normals" in data:
            if spec is None:
                raise SpecError("Cartesian normals need the tiling basis to convert")
            normals = np.array(data["normals"], dtype=float)
            spacings = np.array(data.get("spacings", [1.0] * len(normals)), dtype=float)
            cov = (normals @ spec.basis.matrix) / spacings[:, None]
        else:
            raise SpecError("reflection family needs 'covectors' or 'normals'")
        return cls(cov, data["region"], name=data.get("name"))

    def __repr__(self):
        return f"ReflectionFamily(name={self.name!r}, families={self.n_families}, region={self.region})"


def _solve_exact(G, b):
    """Solve ``G w = b`` over the rationals by Gauss-Jordan elimination."""
    n = len(b)
    A = [[Fraction(x) for x in row] + [Fraction(b[i])] for i, row in enumerate(G)]
    for col in range(n):
        piv = next(r for r in range(col, n) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        p = A[col][col]
        A[col] = [x / p for x in A[col]]
        for r in range(n):
            if r != col and A[r][col] != 0:
                f = A[r][col]
                A[r] = [x - f * y for x, y in zip(A[r], A[col])]
    return [A[i][n] for i in range(n)]


class _ScaledFrame:
    """Integer-scaled fractional coordinates for exact vectorized tests.

    A vertex ``(c, n)`` is represented by ``F = D * (p_c + n)`` with a common
    denominator ``D``; a covector ``c`` by ``L * c`` so that
    ``c . f = (L c) . F / (L D)``.
    """

    def __init__(self, spec: TilingSpec, family: ReflectionFamily | None = None, extra=()):
        if not spec.exact:
            raise ValueError("scaled frame needs exact coordinates")
        fr = [x for row in spec.frac_exact for x in row]
        for row in extra:
            fr.extend(row)
        self.D = _denominator_lcm(fr)
        self.cellF = np.array([[int(x * self.D) for x in row] for row in spec.frac_exact], dtype=np.int64)
        self.spec = spec

    def vertex_F(self, cells, coords):
        return self.cellF[cells] + self.D * np.asarray(coords, dtype=np.int64)

    def locate_F(self, F):
        """Map scaled coordinates to (cell, n); cell = -1 where not a vertex."""
        F = np.asarray(F, dtype=np.int64)
        cells = np.full(F.shape[0], -1, dtype=np.int64)
        coords = np.zeros_like(F)
        for c in range(self.cellF.shape[0]):
            diff = F - self.cellF[c]
            ok = np.all(diff % self.D == 0, axis=1) & (cells < 0)
            cells[ok] = c
            coords[ok] = diff[ok] // self.D
        return cells, coords


def _covector_scaled(c):
    L = _denominator_lcm(c)
    return L, np.array([int(x * L) for x in c], dtype=np.int64)


# ---------------------------------------------------------------------------
# predicates
# ---------------------------------------------------------------------------


def _plane_values_period(c, spec):
    """Residues of ``c . n`` (n in Z^d) modulo 1 as Fractions, one period."""
    L, cs = _covector_scaled(c)
    g = 0
    for x in cs:
        g = gcd(g, int(x))
    if g == 0:
        return [Fraction(0)]
    step = Fraction(g, L)
    # multiples of step modulo 1
    out, v = [], Fraction(0)
    seen = set()
    while v not in seen:
        seen.add(v)
        out.append(v)
        v = (v + step) % 1
    return out


def _crosses(a, b, tol=0.0) -> bool:
    lo, hi = (a, b) if a <= b else (b, a)
    if tol == 0.0:
        return floor(lo) + 1 < hi
    return floor(lo + tol) + 1 < hi - tol


def check_condition_A(spec: TilingSpec, family: ReflectionFamily) -> bool:
    """True iff no edge crosses a family hyperplane transversally.

    Edges lying inside a hyperplane, or touching one at an endpoint, are
    allowed.  Periodicity reduces the test to one residue class of plane
    offsets per edge record.
    """
    if spec.exact:
        for c in family.covectors:
            residues = _plane_values_period(c, spec)
            for (i, j, off, _) in spec.edges():
                a0 = sum(ci * pi for ci, pi in zip(c, spec.frac_exact[i]))
                b0 = sum(ci * (pj + o) for ci, pj, o in zip(c, spec.frac_exact[j], off))
                for r in residues:
                    if _crosses(a0 + r, b0 + r):
                        return False
        return True
    cf = family.covector_array()
    for c in cf:
        for (i, j, off, _) in spec.edges():
            for n in itertools.product(range(-2, 3), repeat=spec.dim):
                a = float(c @ (spec.frac[i] + n))
                b = float(c @ (spec.frac[j] + np.add(n, off)))
                if _crosses(a, b, FLOAT_TOL):
                    return False
    return True


def _reflection_linear_part(c, a):
    d = len(c)
    return [[(1 if r == s else 0) - a[r] * c[s] for s in range(d)] for r in range(d)]


def check_reflection(spec: TilingSpec, family: ReflectionFamily, patch: int = 2) -> bool:
    """True iff every family reflection maps the tiling onto itself.

    Vertices in a ``patch``-period box are reflected in every hyperplane of
    each family that meets a period of plane offsets; images must be
    vertices and neighbor multisets must map onto neighbor multisets.
    """
    if not spec.exact:
        raise SpecError("reflection checks need exact (rational) cell coordinates")
    axes = family.axes(spec)
    if any(not isinstance(x, Fraction) for a in axes for x in a):
        raise SpecError("reflection axes are not rational for this basis")
    d = spec.dim
    frame = _ScaledFrame(spec, extra=axes)
    D = frame.D
    cells_all = np.arange(spec.n_cells)
    box = np.array(list(itertools.product(range(-patch, patch), repeat=d)), dtype=np.int64)
    cells = np.repeat(cells_all, len(box))
    coords = np.tile(box, (spec.n_cells, 1))
    F = frame.vertex_F(cells, coords)
    # neighbor displacement patterns per cell, in scaled units
    patterns = {}
    for c in range(spec.n_cells):
        rows = []
        for (i, j, off, m) in spec.edges():
            if i == c:
                disp = frame.cellF[j] - frame.cellF[c] + D * np.array(off)
                rows.append((tuple(int(x) for x in disp), m))
        patterns[c] = sorted(rows)
    for c, a in zip(family.covectors, axes):
        L, cs = _covector_scaled(c)
        aD = np.array([int(x * D) for x in a], dtype=np.int64)
        lin = _reflection_linear_part(c, a)
        if any(Fraction(x).denominator != 1 for row in lin for x in row):
            return False
        # planes c.f = k and k + c.lambda are related by lattice translations
        g = 0
        for x in cs:
            g = gcd(g, int(x))
        ks = range(max(1, g // gcd(g, L)))
        num = F @ cs  # = L*D * (c . f)
        for k in ks:
            shift = num - k * L * D
            prod = shift[:, None] * aD[None, :]
            if np.any(prod % (L * D) != 0):
                return False
            Fimg = F - prod // (L * D)
            icells, _ = frame.locate_F(Fimg)
            if np.any(icells < 0):
                return False
            for c0, c1 in set(zip(cells.tolist(), icells.tolist())):
                mapped = []
                for disp, m in patterns[c0]:
                    v = [sum(Fraction(lin[r][s]) * disp[s] for s in range(d)) for r in range(d)]
                    if any(x.denominator != 1 for x in v):
                        return False
                    mapped.append((tuple(int(x) for x in v), m))
                if sorted(mapped) != patterns[c1]:
                    return False
    return True


def region_vertices(spec: TilingSpec, family: ReflectionFamily):
    """Corners of the closed region (exact fractional coordinates)."""
    cons = [(family.covectors[i], k, s) for (i, k, s) in family.region]
    d = spec.dim
    corners = []
    for sub in itertools.combinations(range(len(cons)), d):
        G = [list(cons[t][0]) for t in sub]
        b = [Fraction(cons[t][1]) for t in sub]
        try:
            x = _solve_exact(G, b)
        except StopIteration:
            continue
        if all(s * (sum(ci * xi for ci, xi in zip(c, x)) - k) >= 0 for (c, k, s) in cons):
            if x not in corners:
                corners.append(x)
    if not corners:
        raise SpecError("reflection region is empty or unbounded")
    return corners


def _interior_mask(F, D, family, m):
    """Boolean mask of scaled points strictly inside ``m * region``."""
    mask = np.ones(F.shape[0], dtype=bool)
    for (i, k, s) in family.region:
        L, cs = _covector_scaled(family.covectors[i])
        val = s * (F @ cs - m * k * L * D)
        mask &= val > 0
    return mask


# ---------------------------------------------------------------------------
# finite graphs
# ---------------------------------------------------------------------------


class FiniteSandpileGraph:
    """Finite multigraph with a designated sink.

    Adjacency is stored in CSR form (``indptr``, ``indices``, ``weights``)
    with multiplicities as integer weights.  Optional geometry gives, for each
    vertex, its cell class and lattice coordinate in the tiling.
    """

    def __init__(self, adjacency, sink: int = 0, *, kind: str = "custom", spec=None,
                 family=None, m=None, cells=None, coords=None, name=None):
        A = sp.csr_matrix(adjacency, dtype=np.int64)
        A.sum_duplicates()
        A.eliminate_zeros()
        if A.shape[0] != A.shape[1]:
            raise ValueError("adjacency must be square")
        if (A != A.T).nnz:
            raise ValueError("adjacency must be symmetric")
        if A.diagonal().any():
            raise ValueError("graph must not have loops")
        n = A.shape[0]
        if not 0 <= sink < n:
            raise ValueError("sink index out of range")
        if n > 1:
            ncomp, _ = connected_components(A, directed=False)
            if ncomp != 1:
                raise ValueError("graph must be connected")
        A.sort_indices()
        self.adjacency = A
        self.indptr = A.indptr.astype(np.int64)
        self.indices = A.indices.astype(np.int64)
        self.weights = A.data.astype(np.int64)
        self.degree = np.asarray(A.sum(axis=1)).ravel().astype(np.int64)
        self.sink = int(sink)
        self.kind = kind
        self.spec = spec
        self.family = family
        self.m = m
        self.cells = cells
        self.coords = coords
        self.name = name or kind
        for arr in (self.indptr, self.indices, self.weights, self.degree):
            arr.setflags(write=False)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable, sink: int = 0, name=None) -> "FiniteSandpileGraph":
        """Build from undirected ``(u, v)`` or ``(u, v, multiplicity)`` records."""
        rows, cols, vals = [], [], []
        for e in edges:
            u, v = int(e[0]), int(e[1])
            w = int(e[2]) if len(e) > 2 else 1
            rows += [u, v]
            cols += [v, u]
            vals += [w, w]
        A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(A, sink=sink, name=name)

    @property
    def n_vertices(self) -> int:
        return self.adjacency.shape[0]

    @property
    def nonsink(self) -> np.ndarray:
        idx = np.arange(self.n_vertices)
        return idx[idx != self.sink]

    def neighbors(self, v: int):
        lo, hi = self.indptr[v], self.indptr[v + 1]
        return self.indices[lo:hi], self.weights[lo:hi]

    def n_edges(self) -> int:
        """Number of undirected edges counted with multiplicity."""
        return int(self.weights.sum() // 2)

    def laplacian(self) -> sp.csr_matrix:
        return (sp.diags(self.degree) - self.adjacency).tocsr()

    def descriptor(self) -> dict:
        out = {"kind": self.kind, "name": self.name, "n_vertices": self.n_vertices, "sink": self.sink}
        if self.m is not None:
            out["m"] = self.m
        if self.spec is not None:
            out["spec_hash"] = self.spec.spec_hash()
        return out

    def graph_hash(self) -> str:
        """Relabeling-invariant hash (Weisfeiler-Lehman on the weighted graph)."""
        import networkx as nx

        G = nx.Graph()
        for v in range(self.n_vertices):
            G.add_node(v, label="s" if v == self.sink else "v")
        coo = self.adjacency.tocoo()
        for u, v, w in zip(coo.row, coo.col, coo.data):
            if u < v:
                G.add_edge(int(u), int(v), w=str(int(w)))
        return nx.weisfeiler_lehman_graph_hash(G, node_attr="label", edge_attr="w", iterations=4)

    def __repr__(self):
        return f"FiniteSandpileGraph(kind={self.kind!r}, n_vertices={self.n_vertices}, sink={self.sink})"


def build_torus(spec: TilingSpec, m: int) -> FiniteSandpileGraph:
    """The torus graph ``T / m Lambda`` with sink at vertex ``(cell 0, 0)``.

    Vertex ``(c, n)`` gets index ``c * m**d + ravel(n mod m)``.

    Examples
    --------
    >>> from tilepile.library import square
    >>> g = build_torus(square(), 2)
    >>> g.n_vertices, g.degree.tolist()
    (4, [4, 4, 4, 4])
    """
    m = int(m)
    if m < 1:
        raise ValueError("m must be at least 1")
    d, k = spec.dim, spec.n_cells
    N = m ** d
    for (i, j, off, _) in spec.edges():
        if i == j and all(o % m == 0 for o in off):
            raise ValueError(f"m = {m} wraps edge {(i, j, off)} into a self-loop")
    grid = np.indices((m,) * d).reshape(d, -1).T
    rows, cols, vals = [], [], []
    flat = np.arange(N)
    for (i, j, off, mult) in spec.edges():
        tgt = np.ravel_multi_index(tuple(((grid + np.array(off)) % m).T), (m,) * d)
        rows.append(i * N + flat)
        cols.append(j * N + tgt)
        vals.append(np.full(N, mult, dtype=np.int64))
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(k * N, k * N))
    cells = np.repeat(np.arange(k), N)
    coords = np.tile(grid, (k, 1))
    return FiniteSandpileGraph(A, sink=0, kind="torus", spec=spec, m=m, cells=cells, coords=coords,
                               name=f"{spec.name}-torus-{m}")


def build_open(spec: TilingSpec, family: ReflectionFamily, m: int) -> FiniteSandpileGraph:
    """Open-boundary graph: vertices strictly inside ``m * region`` plus a sink.

    Edges leaving the open region (including edges to vertices on its
    boundary) are redirected to the sink, so interior degrees agree with
    the infinite tiling.  The sink has index 0.

    Raises
    ------
    ConditionAViolated, NotReflectionSymmetric
    """
    m = int(m)
    if m < 1:
        raise ValueError("m must be at least 1")
    if not check_condition_A(spec, family):
        raise ConditionAViolated(f"an edge of {spec.name} crosses a hyperplane of {family.name}")
    if not check_reflection(spec, family):
        raise NotReflectionSymmetric(f"{spec.name} is not symmetric under {family.name}")
    d, k = spec.dim, spec.n_cells
    frame = _ScaledFrame(spec)
    D = frame.D
    corners = region_vertices(spec, family)
    lo = np.floor(np.min([[float(x) for x in c] for c in corners], axis=0) * m).astype(int) - 1
    hi = np.ceil(np.max([[float(x) for x in c] for c in corners], axis=0) * m).astype(int) + 1
    ranges = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    box = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, d).astype(np.int64)
    cells = np.repeat(np.arange(k), len(box))
    coords = np.tile(box, (k, 1))
    F = frame.vertex_F(cells, coords)
    inside = _interior_mask(F, D, family, m)
    cells, coords = cells[inside], coords[inside]
    n_int = len(cells)
    if n_int == 0:
        raise ValueError(f"m = {m} leaves no interior vertices")
    index = {(int(c), tuple(int(x) for x in n)): t + 1 for t, (c, n) in enumerate(zip(cells, coords))}
    rows, cols, vals = [], [], []
    for t in range(n_int):
        c = int(cells[t])
        n = coords[t]
        for e in np.nonzero(spec.edge_src == c)[0]:
            key = (int(spec.edge_dst[e]), tuple(int(x) for x in n + spec.edge_off[e]))
            u = index.get(key, 0)
            w = int(spec.edge_mult[e])
            rows.append(t + 1)
            cols.append(u)
            vals.append(w)
            if u == 0:
                rows.append(0)
                cols.append(t + 1)
                vals.append(w)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n_int + 1, n_int + 1))
    cells_all = np.concatenate([[-1], cells])
    coords_all = np.concatenate([np.zeros((1, d), dtype=np.int64), coords])
    return FiniteSandpileGraph(A, sink=0, kind="open", spec=spec, family=family, m=m,
                               cells=cells_all, coords=coords_all, name=f"{spec.name}-open-{m}")


def boundary_lines(family: ReflectionFamily):
    """Families that contribute a face of the region."""
    return sorted({i for (i, _, _) in family.region})


def region_corners(spec: TilingSpec, family: ReflectionFamily):
    """Pairs of families whose faces meet at a corner of a planar region."""
    if spec.dim != 2:
        raise ValueError("corners are defined for planar regions")
    corners = region_vertices(spec, family)
    pairs = set()
    for x in corners:
        active = sorted({i for (i, k, s) in family.region
                         if sum(ci * xi for ci, xi in zip(family.covectors[i], x)) == k})
        for a, b in itertools.combinations(active, 2):
            pairs.add((a, b))
    return sorted(pairs)


def region_corner_mirrors(spec: TilingSpec, family: ReflectionFamily):
    """Corners of a planar region with the two boundary lines meeting there.

    Returns a list of ``(point, ((i, k), (j, l)))`` with ``point`` in exact
    fractional coordinates.
    """
    if spec.dim != 2:
        raise ValueError("corners are defined for planar regions")
    out = []
    for x in region_vertices(spec, family):
        active = sorted({(i, k) for (i, k, s) in family.region
                         if sum(ci * xi for ci, xi in zip(family.covectors[i], x)) == k})
        for a, b in itertools.combinations(active, 2):
            out.append((tuple(x), (a, b)))
    return out


def reflect_vertices(spec: TilingSpec, family: ReflectionFamily, plane, cells, coords):
    """Images of vertices under the reflection in ``c_i . f = k``.

    Parameters
    ----------
    plane : (i, k)
    cells, coords : array_like
        Vertex classes and lattice coordinates.

    Returns
    -------
    (ndarray, ndarray)
        Image classes and coordinates.

    Raises
    ------
    NotReflectionSymmetric
        If an image is not a vertex.
    """
    i, k = plane
    c = family.covectors[i]
    a = family.axes(spec)[i]
    frame = _ScaledFrame(spec, extra=[a])
    D = frame.D
    L, cs = _covector_scaled(c)
    aD = np.array([int(x * D) for x in a], dtype=np.int64)
    F = frame.vertex_F(np.asarray(cells, dtype=np.int64), np.atleast_2d(np.asarray(coords, dtype=np.int64)))
    shift = F @ cs - int(k) * L * D
    prod = shift[:, None] * aD[None, :]
    if np.any(prod % (L * D) != 0):
        raise NotReflectionSymmetric("reflection does not map vertices to vertices")
    ic, ico = frame.locate_F(F - prod // (L * D))
    if np.any(ic < 0):
        raise NotReflectionSymmetric("reflection does not map vertices to vertices")
    return ic, ico


def plane_side(spec: TilingSpec, family: ReflectionFamily, plane, cells, coords) -> np.ndarray:
    """Sign of ``c_i . f - k`` for each vertex (exact; 0 on the plane)."""
    i, k = plane
    frame = _ScaledFrame(spec)
    L, cs = _covector_scaled(family.covectors[i])
    F = frame.vertex_F(np.asarray(cells, dtype=np.int64), np.atleast_2d(np.asarray(coords, dtype=np.int64)))
    return np.sign(F @ cs - int(k) * L * frame.D)
