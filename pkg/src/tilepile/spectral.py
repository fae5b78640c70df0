"""Savings functionals and the spectral parameters of a tiling.

For a prevector ``nu`` (an integer function whose Green's convolution
``xi = g * nu`` is square summable) the savings functional is
``f(xi) = sum_x 1 - cos(2 pi xi_x)``.  It is evaluated on a ladder of tori
``T / m Lambda`` where it equals ``|T_m| - |sum_x e(xi_x)|``, and the limit
``m -> oo`` is taken by Richardson extrapolation with the decay rate of the
tail.  The spectral parameters are minima of ``f`` over bounded boxes of
prevectors, optionally antisymmetrized under a set of mirrors.
"""

from __future__ import annotations

import itertools
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .exceptions import (ClassMismatch, NotAntisymmetric, OverlappingIntervals,
                         PrecisionUnreachable)
from .functions import FunctionOnTiling, as_function, ball, laplacian_of
from .greens import (classify, greens_torus, greens_torus_point, hitting_moments,
                     required_class)
from .tiling import (ReflectionFamily, TilingSpec, _covector_scaled, _denominator_lcm,
                     _ScaledFrame, region_corner_mirrors, region_vertices)

TWO_PI = 2.0 * np.pi
TORUS_CAP = 2 ** 21

LADDERS = {2: (32, 64, 128, 256), 3: (16, 32, 64, 128), 4: (12, 16, 24, 32, 40)}
SCREEN_SIZES = {2: 32, 3: 16, 4: 12}


def default_ladder(spec: TilingSpec) -> tuple:
    """Torus sides used to extrapolate savings to the infinite tiling."""
    d, k = spec.dim, spec.n_cells
    ms = LADDERS.get(d, (6, 8, 10, 12, 16))
    ms = tuple(m for m in ms if k * m ** d <= TORUS_CAP)
    if len(ms) < 3:
        raise ValueError(f"torus cap {TORUS_CAP} leaves fewer than three ladder levels in d = {d}")
    return ms


def default_screen_size(spec: TilingSpec) -> int:
    return SCREEN_SIZES.get(spec.dim, default_ladder(spec)[0])


def savings_rate(d: int, level: int) -> int:
    """Exponent ``q`` of the ``m^-q`` convergence of torus savings.

    ``xi`` decays like ``r^-beta`` with ``beta = d - 2 + level`` so the tail
    of ``sum xi^2`` beyond radius ``m`` is ``O(m^(d - 2 beta))``.
    """
    beta = d - 2 + level
    return max(2 * beta - d, 1)


# ---------------------------------------------------------------------------
# savings on finite sets
# ---------------------------------------------------------------------------


def savings(xi, mask=None) -> float:
    """``sav(xi; S) = |S| - |sum_{x in S} e(xi_x)|``.

    Parameters
    ----------
    xi : array_like
        Values of the character on the vertices.
    mask : array_like of bool or int, optional
        Selects the set ``S``; all vertices when omitted.
    """
    xi = np.asarray(xi, dtype=float).ravel()
    if mask is not None:
        xi = xi[np.asarray(mask).ravel()]
    return float(xi.size - abs(np.exp(1j * TWO_PI * xi).sum()))


class TorusResponse:
    """Green's columns of the torus ``T / m Lambda``.

    ``columns[c]`` is ``g_{T_m} * delta_{(c, 0)}`` normalized so that its
    Laplacian is ``delta_{(c, 0)} - m^-d 1_Lambda``.  The convolution with a
    prevector is a signed sum of rolled columns.
    """

    def __init__(self, spec: TilingSpec, m: int):
        self.spec, self.m = spec, int(m)
        d = spec.dim
        g0 = np.asarray(greens_torus_point(spec, self.m).values)
        cols = [g0]
        z = (0,) * d
        for c in range(1, spec.n_cells):
            cols.append(g0 + np.asarray(greens_torus(spec, self.m, {(c, z): 1, (0, z): -1}).values))
        self.columns = np.stack(cols)
        self._axes = tuple(range(1, d + 1))

    @property
    def n_vertices(self) -> int:
        return self.spec.n_cells * self.m ** self.spec.dim

    def point_row(self, cell: int, n) -> np.ndarray:
        return np.roll(self.columns[cell], tuple(int(x) for x in n), axis=self._axes).ravel()

    def point_matrix(self, points) -> np.ndarray:
        """Rows for ``points`` followed by one zero row used as padding."""
        X = np.zeros((len(points) + 1, self.n_vertices))
        for r, (c, n) in enumerate(points):
            X[r] = self.point_row(c, n)
        return X

    def xi(self, nu) -> np.ndarray:
        nu = as_function(nu)
        out = np.zeros(self.columns.shape[1:])
        for (c, n), v in nu.items():
            out += float(v) * np.roll(self.columns[c], tuple(int(x) for x in n), axis=self._axes)
        return out

    def savings(self, nu) -> float:
        return savings(self.xi(nu))


_RESPONSES: "OrderedDict[tuple, TorusResponse]" = OrderedDict()


def torus_response(spec: TilingSpec, m: int) -> TorusResponse:
    """Cached :class:`TorusResponse`."""
    key = (spec.spec_hash(), int(m))
    if key in _RESPONSES:
        _RESPONSES.move_to_end(key)
        return _RESPONSES[key]
    resp = TorusResponse(spec, m)
    _RESPONSES[key] = resp
    while len(_RESPONSES) > 8:
        _RESPONSES.popitem(last=False)
    return resp


# ---------------------------------------------------------------------------
# mirrors
# ---------------------------------------------------------------------------


class MirrorSet:
    """Group generated by reflections in a set of hyperplanes ``c_i . f = k``.

    Parameters
    ----------
    spec : TilingSpec
    family : ReflectionFamily
    planes : sequence of (i, k)
    sides : sequence of +-1, optional
        Chamber side of each plane.  Taken from the family's region when the
        plane bounds it, else +1.

    Attributes
    ----------
    order : int
        Size of the reflection group ``|W|``.
    """

    def __init__(self, spec: TilingSpec, family: ReflectionFamily, planes, sides=None):
        self.spec, self.family = spec, family
        self.planes = tuple((int(i), int(k)) for i, k in planes)
        if sides is None:
            lookup = {(i, k): s for (i, k, s) in family.region}
            sides = [lookup.get(p, 1) for p in self.planes]
        self.sides = tuple(int(s) for s in sides)
        self._frame = _ScaledFrame(spec)
        self._elements = self._close()
        self.order = len(self._elements)

    def _generator(self, t):
        i, k = self.planes[t]
        c = self.family.covectors[i]
        a = self.family.axes(self.spec)[i]
        d = self.spec.dim
        A = [[Fraction(int(r == s)) - a[r] * c[s] for s in range(d)] for r in range(d)]
        b = [k * a[r] for r in range(d)]
        return A, b

    def _close(self, cap: int = 512):
        d = self.spec.dim
        ident = ([[Fraction(int(r == s)) for s in range(d)] for r in range(d)], [Fraction(0)] * d)

        def compose(g, h):  # g after h
            (A, b), (B, c) = g, h
            AB = [[sum(A[r][t] * B[t][s] for t in range(d)) for s in range(d)] for r in range(d)]
            Ac = [sum(A[r][t] * c[t] for t in range(d)) + b[r] for r in range(d)]
            return AB, Ac

        def key(g):
            return tuple(x for row in g[0] for x in row) + tuple(g[1])

        gens = [self._generator(t) for t in range(len(self.planes))]
        elems = OrderedDict({key(ident): (ident, 1)})
        frontier = [(ident, 1)]
        while frontier:
            nxt = []
            for g, sgn in frontier:
                for r in gens:
                    h = compose(r, g)
                    kh = key(h)
                    if kh not in elems:
                        elems[kh] = (h, -sgn)
                        nxt.append((h, -sgn))
                        if len(elems) > cap:
                            raise ValueError("mirror set generates an infinite or very large group")
            frontier = nxt
        return list(elems.values())

    def _apply(self, g, cells, coords):
        A, b = g
        D = self._frame.D
        dens = [x.denominator for row in A for x in row] + [(x * D).denominator for x in b]
        L = 1
        for q in dens:
            L = L * q // math.gcd(L, q)
        As = np.array([[int(x * L) for x in row] for row in A], dtype=np.int64)
        bs = np.array([int(x * D * L) for x in b], dtype=np.int64)
        F = self._frame.vertex_F(np.asarray(cells, dtype=np.int64), np.atleast_2d(coords))
        G = F @ As.T + bs
        if np.any(G % L):
            raise NotAntisymmetric("a mirror does not map vertices to vertices")
        ic, ico = self._frame.locate_F(G // L)
        if np.any(ic < 0):
            raise NotAntisymmetric("a mirror does not map vertices to vertices")
        return ic, ico

    def side_values(self, cells, coords) -> np.ndarray:
        """Signed scaled distances ``side * (c . f - k)``, shape ``(P, n_planes)``."""
        F = self._frame.vertex_F(np.asarray(cells, dtype=np.int64), np.atleast_2d(coords))
        out = np.zeros((F.shape[0], len(self.planes)), dtype=np.int64)
        for t, (i, k) in enumerate(self.planes):
            L, cs = _covector_scaled(self.family.covectors[i])
            out[:, t] = self.sides[t] * (F @ cs - int(k) * L * self._frame.D)
        return out

    def in_chamber(self, cells, coords) -> np.ndarray:
        return np.all(self.side_values(cells, coords) > 0, axis=1)

    def orbit_table(self, cells, coords):
        """Images of vertices under every group element.

        Returns
        -------
        cells : ndarray, shape (|W|, P)
        coords : ndarray, shape (|W|, P, d)
        signs : ndarray, shape (|W|,)
        """
        cells = np.asarray(cells, dtype=np.int64)
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        oc, ox, sg = [], [], []
        for g, s in self._elements:
            c, x = self._apply(g, cells, coords)
            oc.append(c)
            ox.append(x)
            sg.append(s)
        return np.array(oc), np.array(ox), np.array(sg, dtype=np.int64)

    def antisymmetrize(self, seed) -> FunctionOnTiling:
        """``sum_w sgn(w) w.seed``."""
        seed = as_function(seed)
        if not seed:
            return FunctionOnTiling()
        keys = list(seed)
        cells = [c for c, _ in keys]
        coords = [n for _, n in keys]
        oc, ox, sg = self.orbit_table(cells, coords)
        out = {}
        for w in range(len(sg)):
            for p, key in enumerate(keys):
                img = (int(oc[w, p]), tuple(int(v) for v in ox[w, p]))
                out[img] = out.get(img, 0) + int(sg[w]) * seed[key]
        return FunctionOnTiling(out)

    def reflect(self, t: int, nu) -> FunctionOnTiling:
        """Image of ``nu`` under the reflection in plane ``t``."""
        nu = as_function(nu)
        if not nu:
            return FunctionOnTiling()
        keys = list(nu)
        g = (self._generator(t))
        c, x = self._apply(g, [k[0] for k in keys], [k[1] for k in keys])
        return FunctionOnTiling({(int(c[p]), tuple(int(v) for v in x[p])): nu[key]
                                 for p, key in enumerate(keys)})

    def is_antisymmetric(self, nu) -> bool:
        nu = as_function(nu)
        return all((self.reflect(t, nu) + nu) == FunctionOnTiling() for t in range(len(self.planes)))

    def describe(self) -> dict:
        return {"planes": [list(p) for p in self.planes], "sides": list(self.sides), "order": self.order}


def nearest_vertex(spec: TilingSpec, point) -> tuple:
    """Vertex closest (Cartesian) to a point given in fractional coordinates."""
    p = np.array([float(x) for x in point])
    best = None
    for c in range(spec.n_cells):
        base = np.floor(p - spec.frac[c]).astype(int)
        for shift in itertools.product((0, 1), repeat=spec.dim):
            n = tuple(int(x) for x in base + np.array(shift))
            dist = float(np.linalg.norm(spec.vertex_position(c, n) - spec.basis.matrix @ p))
            cand = (round(dist, 12), c, n)
            if best is None or cand < best:
                best = cand
    return best[1], best[2]


def mirror_sets(spec: TilingSpec, family: ReflectionFamily, j: int):
    """The mirror configurations entering ``gamma_j``, each with a search centre.

    In the plane these are the boundary lines (``j = 1``) and the corners
    (``j = 2``) of the fundamental region; in higher dimension the subsets
    ``S`` of size ``j`` of the planes ``c_i . f = 0``.

    Returns
    -------
    list of (MirrorSet, centre vertex)
    """
    d = spec.dim
    if not 1 <= j <= d:
        raise ValueError(f"j must lie in 1..{d}")
    out = []
    if d == 2:
        if j == 1:
            verts = region_vertices(spec, family)
            for (i, k, s) in family.region:
                c = family.covectors[i]
                on = [x for x in verts if sum(ci * xi for ci, xi in zip(c, x)) == k]
                out.append((MirrorSet(spec, family, [(i, k)], [s]), nearest_vertex(spec, on[0])))
        else:
            sides = {(i, k): s for (i, k, s) in family.region}
            for x, pair in region_corner_mirrors(spec, family):
                out.append((MirrorSet(spec, family, pair, [sides[p] for p in pair]),
                            nearest_vertex(spec, x)))
        return out
    origin = (0, (0,) * d)
    for S in itertools.combinations(range(family.n_families), j):
        out.append((MirrorSet(spec, family, [(i, 0) for i in S]), origin))
    return out


# ---------------------------------------------------------------------------
# prevectors
# ---------------------------------------------------------------------------


def reduce_mod_laplacian(spec: TilingSpec, nu) -> FunctionOnTiling:
    """Greedy reduction modulo ``I = {Delta w}``.

    Repeatedly subtracts the multiple ``+-Delta delta_x`` that lowers
    ``||nu||_2`` the most, until no such step lowers it.
    """
    cur = FunctionOnTiling(as_function(nu))
    cache = {}

    def lap(x):
        if x not in cache:
            cache[x] = laplacian_of(spec, FunctionOnTiling.delta(*x))
        return cache[x]

    while cur:
        sites = set(cur)
        for (c, n) in list(cur):
            for (y, _) in spec.neighbors(c, n):
                sites.add(y)
        best, best_gain = None, 0
        for x in sorted(sites):
            L = lap(x)
            dot = sum(cur.get(y, 0) * v for y, v in L.items())
            norm = sum(v * v for v in L.values())
            for s in (1, -1):
                gain = -2 * s * dot + norm  # change of ||cur - s L||^2
                if gain < best_gain:
                    best, best_gain = (x, s), gain
        if best is None:
            break
        cur = cur - lap(best[0]).scale(best[1])
    return cur


def _translate_key(nu: FunctionOnTiling):
    items = sorted(nu.items(), key=lambda kv: (kv[0][1], kv[0][0]))
    n0 = items[0][0][1]
    t = tuple(-x for x in n0)
    return nu.translate(t)


def canonical_form(spec: TilingSpec, nu, reduce: bool = True) -> FunctionOnTiling:
    """Translation and sign normal form, after reduction modulo ``I``.

    The lexicographically smallest support point ``(n, cell)`` is moved to
    ``n = 0``; of ``nu`` and ``-nu`` the one with the smaller sorted item
    tuple is kept.  The zero function is its own canonical form.
    """
    nu = as_function(nu)
    if reduce:
        nu = reduce_mod_laplacian(spec, nu)
    if not nu:
        return nu
    a = _translate_key(nu)
    b = _translate_key(-nu)
    return a if a.key() <= b.key() else b


@dataclass
class Prevector:
    """An integer function with its class tag and optional mirror symmetry."""

    nu: FunctionOnTiling
    spec: TilingSpec
    symmetry: MirrorSet | None = None

    def __post_init__(self):
        self.nu = as_function(self.nu)
        if not self.nu.is_integer():
            raise ValueError("prevectors are integer valued")

    @property
    def cls(self) -> str:
        return classify(self.nu, self.spec).tag

    @property
    def l1(self) -> int:
        return int(self.nu.l1())

    def reduced(self) -> "Prevector":
        return Prevector(reduce_mod_laplacian(self.spec, self.nu), self.spec, None)

    def canonical(self) -> "Prevector":
        if self.symmetry is not None:
            a, b = self.nu, -self.nu
            return Prevector(a if a.key() <= b.key() else b, self.spec, self.symmetry)
        return Prevector(canonical_form(self.spec, self.nu), self.spec, None)

    def key(self):
        return self.canonical().nu.key()

    def to_json(self):
        out = {"nu": self.nu.to_json(), "class": self.cls}
        if self.symmetry is not None:
            out["symmetry"] = self.symmetry.describe()
        return out


def _multisets(N: int, p: int) -> np.ndarray:
    rows = list(itertools.combinations_with_replacement(range(N), p))
    return np.array(rows, dtype=np.int64).reshape(len(rows), p)


def _signed_multisets(N: int, B: int, balanced: bool, both_signs: bool = False):
    """Rows of point indices and +-1 coefficients with ``p + q <= B`` slots.

    Yields ``(idx, coef)`` blocks for each ``(p, q)``; padding uses index
    ``N`` with coefficient 0.  Rows where a point carries both signs are
    dropped.  Unless ``both_signs``, only ``p >= q`` is produced since
    ``-nu`` has the same savings.
    """
    for p in range(B + 1):
        for q in range(B + 1 - p):
            if p + q == 0 or (balanced and p != q) or (not both_signs and p < q):
                continue
            pos = _multisets(N, p)
            neg = _multisets(N, q)
            P = np.repeat(pos, len(neg), axis=0)
            Q = np.tile(neg, (len(pos), 1))
            if p and q:
                clash = (P[:, :, None] == Q[:, None, :]).any(axis=(1, 2))
                P, Q = P[~clash], Q[~clash]
            idx = np.full((len(P), B), N, dtype=np.int64)
            coef = np.zeros((len(P), B), dtype=np.int64)
            idx[:, :p], coef[:, :p] = P, 1
            idx[:, p:p + q], coef[:, p:p + q] = Q, -1
            yield p, q, idx, coef


def _row_function(points, idx_row, coef_row) -> FunctionOnTiling:
    out = {}
    for i, c in zip(idx_row, coef_row):
        if c:
            key = points[int(i)]
            out[key] = out.get(key, 0) + int(c)
    return FunctionOnTiling(out)


def enumerate_prevectors(spec: TilingSpec, B: int, R0: int, cls: str = "C1",
                         symmetry: MirrorSet | None = None, center=None):
    """Stream the prevectors of a bounded box, one per canonical form.

    Parameters
    ----------
    spec : TilingSpec
    B : int
        Bound on ``||nu||_1`` (on the seed when ``symmetry`` is given).
    R0 : int
        Support lies in the graph ball of radius ``R0`` about ``center`` (the
        origin by default; with ``symmetry`` the chamber vertex nearest to it).
    cls : {"C0", "C1", "C2"}
        Minimal class of the emitted ``nu``.
    symmetry : MirrorSet, optional
        Emit antisymmetrizations of seeds supported in the open chamber.

    Yields
    ------
    Prevector
    """
    if B < 1 or R0 < 1:
        raise ValueError("B and R0 must be at least 1")
    level = {"C0": 0, "C1": 1, "C2": 2}[cls]
    center = center or (0, (0,) * spec.dim)
    if symmetry is not None:
        center = chamber_anchor(symmetry, center)
    pts, _ = ball(spec, R0, center)
    if symmetry is not None:
        mask = symmetry.in_chamber([c for c, _ in pts], [n for _, n in pts])
        pts = [p for p, ok in zip(pts, mask) if ok]
    seen = set()
    N = len(pts)
    for size in range(1, B + 1):
        for support in itertools.combinations(range(N), size):
            for vals in itertools.product(*[[v for v in range(-B, B + 1) if v] for _ in support]):
                if sum(abs(v) for v in vals) > B:
                    continue
                nu = FunctionOnTiling({pts[i]: v for i, v in zip(support, vals)})
                if symmetry is not None:
                    nu = symmetry.antisymmetrize(nu)
                if not nu or classify(nu, spec).level < level:
                    continue
                pv = Prevector(nu, spec, symmetry)
                can = pv.canonical()
                if not can.nu:
                    continue
                k = can.nu.key()
                if k in seen:
                    continue
                seen.add(k)
                yield can


# ---------------------------------------------------------------------------
# extrapolated savings
# ---------------------------------------------------------------------------


@dataclass
class SavingsReport:
    """Extrapolated value of a savings functional.

    ``levels`` holds ``(m, value_m)`` for the torus ladder, ``tail`` the
    extrapolation correction beyond the finest torus and ``error`` the
    difference of the last two Richardson values.
    """

    value: float
    error: float
    levels: list
    rate: int
    nu: FunctionOnTiling
    order: int = 1
    symmetry: dict | None = None
    converged: bool = True
    xi: np.ndarray | None = None

    @property
    def tail(self) -> float:
        return self.value - self.levels[-1][1]

    def to_dict(self) -> dict:
        return {"value": self.value, "error": self.error, "levels": [list(x) for x in self.levels],
                "rate": self.rate, "tail": self.tail, "nu": self.nu.to_json(), "order": self.order,
                "symmetry": self.symmetry, "converged": self.converged}


def richardson(ms, values, q: int):
    """Richardson values on consecutive ladder pairs for ``v_m = v + a m^-q``."""
    out = []
    for (ma, va), (mb, vb) in zip(zip(ms, values), zip(ms[1:], values[1:])):
        wa, wb = float(ma) ** q, float(mb) ** q
        out.append((wb * vb - wa * va) / (wb - wa))
    return out


def _ladder_eval(spec, nu, precision, ladder, order, rate, symmetry, keep_xi):
    ms, vals = [], []
    value, err = None, math.inf
    xi = None
    for m in ladder:
        resp = torus_response(spec, m)
        x = resp.xi(nu)
        ms.append(m)
        vals.append(savings(x) / order)
        if keep_xi:
            xi = x
        if len(vals) >= 2 and max(abs(v) for v in vals) < 1e-10:
            value, err = 0.0, 0.0
            break
        R = richardson(ms, vals, rate)
        if len(R) >= 2:
            value, err = R[-1], abs(R[-1] - R[-2])
            if err < precision:
                break
    if value is None:
        R = richardson(ms, vals, rate)
        value = R[-1] if R else vals[-1]
    rep = SavingsReport(float(value), float(err), list(zip(ms, vals)), rate, nu, order,
                        symmetry, err < precision, xi)
    if not rep.converged:
        raise PrecisionUnreachable(
            f"extrapolation error {err:.3g} above target {precision:.3g} after m = {ms[-1]}", rep)
    return rep


def f_eval(spec: TilingSpec, nu, precision: float = 1e-3, ladder=None, keep_xi: bool = False) -> SavingsReport:
    """``f(g * nu) = sum_x 1 - cos(2 pi xi_x)`` on the infinite tiling.

    Parameters
    ----------
    spec : TilingSpec
    nu : FunctionOnTiling or mapping
        Must lie in the class ``C^rho`` that makes ``g * nu`` square
        summable in this dimension.
    precision : float
        Target for the extrapolation error bar.
    ladder : sequence of int, optional
        Torus sides; see :func:`default_ladder`.

    Raises
    ------
    ClassMismatch
    PrecisionUnreachable
        Carries the best :class:`SavingsReport` as ``report``.
    """
    nu = as_function(nu)
    d = spec.dim
    level = classify(nu, spec).level
    if level < required_class(d):
        raise ClassMismatch(f"C{level} prevector, C{required_class(d)} needed in dimension {d}")
    return _ladder_eval(spec, nu, precision, tuple(ladder or default_ladder(spec)), 1,
                        savings_rate(d, level), None, keep_xi)


def f_eval_antisymmetric(spec: TilingSpec, nu, mirrors: MirrorSet, precision: float = 1e-3,
                         ladder=None, keep_xi: bool = False) -> SavingsReport:
    """Savings of an antisymmetric prevector per fundamental domain.

    The sum over the quotient of the tiling by the reflection group equals
    ``f / |W|``; in the plane this is the factor 1/2 for a boundary line
    and the quadrant sum for a corner.

    Raises
    ------
    NotAntisymmetric
        If ``nu`` is not antisymmetric in every plane, or vanishes.
    """
    nu = as_function(nu)
    if not nu:
        raise NotAntisymmetric("the antisymmetrized prevector vanishes identically")
    if not mirrors.is_antisymmetric(nu):
        raise NotAntisymmetric("prevector is not antisymmetric in the mirror set")
    d = spec.dim
    level = classify(nu, spec).level
    if level < required_class(d):
        raise ClassMismatch(f"C{level} prevector, C{required_class(d)} needed in dimension {d}")
    return _ladder_eval(spec, nu, precision, tuple(ladder or default_ladder(spec)), mirrors.order,
                        savings_rate(d, level), mirrors.describe(), keep_xi)


# ---------------------------------------------------------------------------
# bounded search
# ---------------------------------------------------------------------------


def _batch_savings(X, idx, coef, cols=None, budget: int = 1 << 22) -> np.ndarray:
    Xc = X if cols is None else X[:, cols]
    V = Xc.shape[1]
    out = np.empty(len(idx))
    step = max(1, budget // V)
    for s in range(0, len(idx), step):
        e = min(s + step, len(idx))
        xi = np.zeros((e - s, V))
        for t in range(idx.shape[1]):
            ct = coef[s:e, t]
            if np.any(ct):
                xi += ct[:, None] * Xc[idx[s:e, t]]
        z = np.exp(1j * TWO_PI * xi).sum(axis=1)
        out[s:e] = V - np.abs(z)
    return out


def _translation_dedupe(points, idx, coef, p_counts):
    """Keep one row per translation and sign class."""
    N = len(points)
    cells = np.array([c for c, _ in points] + [0])
    coords = np.array([n for _, n in points] + [points[0][1]], dtype=np.int64)
    k = int(cells.max()) + 1
    order = sorted(range(N), key=lambda i: (points[i][1], points[i][0]))
    rank = np.empty(N + 1, dtype=np.int64)
    rank[order] = np.arange(N)
    rank[N] = N + 1
    anchor = idx[np.arange(len(idx)), np.argmin(rank[idx], axis=1)]
    R = int(np.abs(coords).max())
    base = 4 * R + 1
    rel = coords[idx] - coords[anchor][:, None, :] + 2 * R
    code = cells[idx].astype(np.int64)
    mul = k
    for t in range(coords.shape[1]):
        code = code + mul * rel[:, :, t]
        mul *= base
    code = np.where(coef == 0, -1, code)
    pos = np.where(coef > 0, code, np.iinfo(np.int64).max)
    neg = np.where(coef < 0, code, np.iinfo(np.int64).max)
    pos.sort(axis=1)
    neg.sort(axis=1)
    key_a = np.concatenate([p_counts[:, None], pos, neg], axis=1)
    key_b = np.concatenate([p_counts[:, None], neg, pos], axis=1)
    swap = np.zeros(len(idx), dtype=bool)
    diff = key_a != key_b
    has = diff.any(axis=1)
    first = np.argmax(diff, axis=1)
    r = np.arange(len(idx))
    swap[has] = key_b[r[has], first[has]] < key_a[r[has], first[has]]
    key = np.where(swap[:, None], key_b, key_a)
    _, keep = np.unique(key, axis=0, return_index=True)
    keep.sort()
    return keep


@dataclass
class GammaEntry:
    """Result of one bounded minimization."""

    j: int
    value: float
    error: float
    argmin: FunctionOnTiling
    mirrors: dict | None
    order: int
    bounds: dict
    screen_m: int
    screen_value: float
    n_candidates: int
    n_evaluated: int
    report: SavingsReport
    finalists: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"j": self.j, "value": self.value, "error": self.error, "argmin": self.argmin.to_json(),
                "mirrors": self.mirrors, "order": self.order, "bounds": self.bounds,
                "screen_m": self.screen_m, "screen_value": self.screen_value,
                "n_candidates": self.n_candidates, "n_evaluated": self.n_evaluated,
                "converged": self.report.converged, "levels": [list(x) for x in self.report.levels],
                "finalists": self.finalists}


class _Search:
    """Vectorized minimization of torus savings over a candidate box."""

    def __init__(self, spec, B, R0, precision, screen_m=None, ladder=None, margin=0.05,
                 n_finalists=4, verbose=False):
        self.spec, self.B, self.R0 = spec, int(B), int(R0)
        self.precision = float(precision)
        self.screen_m = int(screen_m or default_screen_size(spec))
        self.ladder = tuple(ladder or default_ladder(spec))
        self.margin, self.n_finalists = float(margin), int(n_finalists)
        self.verbose = verbose

    def _inner_columns(self, points):
        spec, m = self.spec, self.screen_m
        d, k = spec.dim, spec.n_cells
        ns = np.array([n for _, n in points])
        lo, hi = ns.min(axis=0) - 2, ns.max(axis=0) + 2
        if np.any(hi - lo + 1 >= m):
            return None
        grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij")
        box = np.stack([g.ravel() for g in grids], axis=1) % m
        flat = np.ravel_multi_index(tuple(box.T), (m,) * d)
        cols = (np.arange(k)[:, None] * m ** d + flat[None, :]).ravel()
        if len(cols) * 2 > k * m ** d:
            return None
        return np.sort(cols)

    def run(self, points, idx, coef, order, level, j, mirrors_desc):
        spec = self.spec
        n_cand = len(idx)
        if n_cand == 0:
            raise ValueError("empty candidate set")
        resp = torus_response(spec, self.screen_m)
        X = resp.point_matrix(points)
        cols = self._inner_columns(points)
        if cols is not None:
            s_in = _batch_savings(X, idx, coef, cols)
        else:
            s_in = np.zeros(n_cand)
        ordr = np.argsort(s_in, kind="stable")
        full = np.full(n_cand, np.inf)
        best = np.inf
        pos = 0
        chunk = 256
        while pos < n_cand:
            thr = best * (1 + self.margin) + 1e-9
            if s_in[ordr[pos]] > thr:
                break  # partial sums are lower bounds of the full savings
            sel = ordr[pos:pos + chunk]
            vals = _batch_savings(X, idx[sel], coef[sel])
            full[sel] = vals
            nz = vals[vals > 1e-8]
            if nz.size:
                best = min(best, float(nz.min()))
            pos += len(sel)
            chunk = min(chunk * 2, 8192)
        n_eval = int(np.isfinite(full).sum())
        thr = best * (1 + self.margin) + 1e-9
        fin = np.nonzero((full <= thr) & (full > 1e-8))[0]
        fin = fin[np.argsort(full[fin], kind="stable")][: max(self.n_finalists * 4, 16)]
        cands = []
        seen = set()
        for r in fin:
            nu = _row_function(points, idx[r], coef[r])
            key = (canonical_form(spec, nu, reduce=False) if mirrors_desc is None
                   else min(nu, -nu, key=lambda f: f.key())).key()
            if key in seen:
                continue
            seen.add(key)
            cands.append((float(full[r]), key, nu))
            if len(cands) >= self.n_finalists:
                break
        rate = savings_rate(spec.dim, level)
        results = []
        for sv, key, nu in cands:
            try:
                rep = _ladder_eval(spec, nu, self.precision, self.ladder, order,
                                   savings_rate(spec.dim, min(2, classify(nu, spec).level)),
                                   mirrors_desc, False)
            except PrecisionUnreachable as exc:
                rep = exc.report
            results.append((rep.value, key, nu, rep, sv))
        results.sort(key=lambda r: (round(r[0], 12), r[1]))
        val, key, nu, rep, sv = results[0]
        return GammaEntry(j=j, value=float(val), error=float(rep.error), argmin=nu, mirrors=mirrors_desc,
                          order=order, bounds={"B": self.B, "R0": self.R0, "precision": self.precision},
                          screen_m=self.screen_m, screen_value=sv / order, n_candidates=n_cand,
                          n_evaluated=n_eval, report=rep,
                          finalists=[{"nu": r[2].to_json(), "value": r[0], "error": r[3].error,
                                      "screen": r[4] / order} for r in results])


def _point_moments(spec, points):
    M = hitting_moments(spec)
    mom = np.zeros((len(points) + 1, spec.dim))
    for r, (c, n) in enumerate(points):
        mom[r] = np.asarray(n, dtype=float) + M[c]
    return mom


def _class_filter(idx, coef, mom, level):
    tot = coef.sum(axis=1)
    keep = np.ones(len(idx), dtype=bool)
    if level >= 1:
        keep &= tot == 0
    if level >= 2:
        mv = np.einsum("rt,rtd->rd", coef.astype(float), mom[idx])
        keep &= np.all(np.abs(mv) < 1e-9, axis=1)
    return keep


def candidate_box(spec: TilingSpec, B: int, R0: int, level: int):
    """Vectorized candidate set for the unsymmetrized search.

    Returns ``points, idx, coef``; one row per translation and sign class
    of integer functions on the ball of radius ``R0`` with ``||nu||_1 <= B``
    in class ``C^level``.
    """
    points, _ = ball(spec, R0)
    N = len(points)
    mom = _point_moments(spec, points)
    idxs, coefs, ps = [], [], []
    for p, q, idx, coef in _signed_multisets(N, B, balanced=level >= 1, both_signs=True):
        keep = _class_filter(idx, coef, mom, level)
        idxs.append(idx[keep])
        coefs.append(coef[keep])
        ps.append(np.full(int(keep.sum()), p, dtype=np.int64))
    idx = np.concatenate(idxs)
    coef = np.concatenate(coefs)
    keep = _translation_dedupe(points, idx, coef, np.concatenate(ps))
    return points, idx[keep], coef[keep]


def chamber_anchor(mirrors: MirrorSet, center, max_radius: int = 32) -> tuple:
    """The open-chamber vertex nearest (graph distance) to ``center``.

    Ties are broken by the smallest ``(cell, n)``.
    """
    for r in range(max_radius + 1):
        pts, dist = ball(mirrors.spec, r, center)
        shell = [p for p in pts if dist[p] == r]
        mask = mirrors.in_chamber([c for c, _ in shell], [n for _, n in shell])
        inside = sorted(p for p, ok in zip(shell, mask) if ok)
        if inside:
            return inside[0]
    raise ValueError("no chamber vertex near the mirrors")


def antisymmetric_box(spec: TilingSpec, mirrors: MirrorSet, center, B: int, R0: int, level: int):
    """Candidate set of antisymmetrized seeds.

    Seeds are integer functions with ``||s||_1 <= B`` supported on the open
    chamber inside the ball of radius ``R0`` about the chamber vertex
    nearest to ``center`` (see :func:`chamber_anchor`).  Returns
    ``points, idx, coef`` where rows describe ``nu = sum_w sgn(w) w.s``.
    """
    anchor = chamber_anchor(mirrors, center)
    pts, _ = ball(spec, R0, anchor)
    mask = mirrors.in_chamber([c for c, _ in pts], [n for _, n in pts])
    seeds = [p for p, ok in zip(pts, mask) if ok]
    oc, ox, sg = mirrors.orbit_table([c for c, _ in seeds], [n for _, n in seeds])
    W, S = oc.shape
    images = {}
    img_index = np.empty((S, W), dtype=np.int64)
    for s in range(S):
        for w in range(W):
            key = (int(oc[w, s]), tuple(int(v) for v in ox[w, s]))
            img_index[s, w] = images.setdefault(key, len(images))
    points = list(images)
    P = len(points)
    mom = _point_moments(spec, points)
    idxs, coefs = [], []
    for p, q, idx, coef in _signed_multisets(S, B, balanced=False):
        pad = idx == S
        full_idx = np.where(pad[:, :, None], P, img_index[np.minimum(idx, S - 1)])
        full_coef = coef[:, :, None] * sg[None, None, :]
        full_idx = full_idx.reshape(len(idx), idx.shape[1] * W)
        full_coef = full_coef.reshape(len(idx), idx.shape[1] * W)
        keep = _class_filter(full_idx, full_coef, mom, level)
        idxs.append(full_idx[keep])
        coefs.append(full_coef[keep])
    return points, np.concatenate(idxs), np.concatenate(coefs)


def _search_level(spec, for_gamma: bool) -> int:
    rho = required_class(spec.dim)
    return max(rho, 1) if for_gamma else rho


def gamma_j_search(spec: TilingSpec, family: ReflectionFamily | None, j: int, B: int = 4, R0: int = 2,
                   precision: float = 1e-3, **knobs) -> GammaEntry:
    """Bounded minimization for ``gamma_j``.

    ``j = 0`` searches unsymmetrized prevectors of class ``C^rho``; ``j >= 1``
    searches antisymmetrized seeds for every mirror configuration of size
    ``j`` and keeps the smallest value.  The result is an upper bound,
    exact relative to the box ``(B, R0)``.
    """
    srch = _Search(spec, B, R0, precision, **knobs)
    if j == 0:
        level = _search_level(spec, for_gamma=False)
        points, idx, coef = candidate_box(spec, B, R0, level)
        return srch.run(points, idx, coef, 1, level, 0, None)
    if family is None:
        raise ValueError("gamma_j with j >= 1 needs a reflection family")
    level = required_class(spec.dim)
    best = None
    for mirrors, center in mirror_sets(spec, family, j):
        points, idx, coef = antisymmetric_box(spec, mirrors, center, B, R0, level)
        if len(idx) == 0:
            continue
        entry = srch.run(points, idx, coef, mirrors.order, level, j, mirrors.describe())
        if best is None or entry.value < best.value - 1e-12:
            best = entry
    if best is None:
        raise ValueError(f"no admissible antisymmetric candidates for j = {j}")
    return best


@dataclass
class SpectralParams:
    """Spectral parameters of a tiling with their provenance.

    ``gamma_j[j]`` is ``None`` where not computed.  ``bounds`` records the
    search box ``(B, R0)``; every value is an upper bound relative to it.
    """

    dim: int
    gamma: float
    gamma_error: float
    gamma_j: list
    gamma_j_errors: list
    argmins: dict
    bounds: dict
    spec_name: str = ""
    spec_hash: str = ""
    entries: dict = field(default_factory=dict)

    @property
    def factors(self):
        return spectral_factors(self)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "gamma": self.gamma, "gamma_error": self.gamma_error,
                "gamma_j": list(self.gamma_j), "gamma_j_errors": list(self.gamma_j_errors),
                "argmins": {k: v.to_json() for k, v in self.argmins.items()},
                "bounds": dict(self.bounds), "spec_name": self.spec_name, "spec_hash": self.spec_hash,
                "entries": {k: v for k, v in self.entries.items()}}

    @classmethod
    def from_dict(cls, data: dict) -> "SpectralParams":
        return cls(dim=int(data["dim"]), gamma=data["gamma"], gamma_error=data["gamma_error"],
                   gamma_j=list(data["gamma_j"]), gamma_j_errors=list(data["gamma_j_errors"]),
                   argmins={k: FunctionOnTiling.from_json(v) for k, v in data["argmins"].items()},
                   bounds=dict(data["bounds"]), spec_name=data.get("spec_name", ""),
                   spec_hash=data.get("spec_hash", ""), entries=dict(data.get("entries", {})))


def gamma_search(spec: TilingSpec, B: int = 4, R0: int = 2, precision: float = 1e-3, **knobs) -> SpectralParams:
    """``gamma`` and ``gamma_0`` by bounded minimization.

    In dimensions 2 to 4 both run over the same class ``C^max(rho, 1)``
    (square summability forces it), so a single search serves both.
    """
    d = spec.dim
    srch = _Search(spec, B, R0, precision, **knobs)
    lv_g, lv_0 = _search_level(spec, True), _search_level(spec, False)
    points, idx, coef = candidate_box(spec, B, R0, lv_g)
    eg = srch.run(points, idx, coef, 1, lv_g, 0, None)
    if lv_0 == lv_g:
        e0 = eg
    else:
        points, idx, coef = candidate_box(spec, B, R0, lv_0)
        e0 = srch.run(points, idx, coef, 1, lv_0, 0, None)
    gj = [e0.value] + [None] * d
    ge = [e0.error] + [None] * d
    return SpectralParams(dim=d, gamma=eg.value, gamma_error=eg.error, gamma_j=gj, gamma_j_errors=ge,
                          argmins={"gamma": eg.argmin, "gamma_0": e0.argmin},
                          bounds={"B": B, "R0": R0, "precision": precision,
                                  "screen_m": srch.screen_m, "ladder": list(srch.ladder)},
                          spec_name=spec.name, spec_hash=spec.spec_hash(),
                          entries={"gamma": eg.to_dict(), "gamma_0": e0.to_dict()})


@dataclass
class FactorTable:
    """Spectral factors ``Gamma_j = (d - j) / gamma_j`` with propagated bars."""

    factors: list
    errors: list
    Gamma: float
    controlling: int
    ambiguous: bool

    def to_dict(self) -> dict:
        return {"factors": self.factors, "errors": self.errors, "Gamma": self.Gamma,
                "controlling": self.controlling, "ambiguous": self.ambiguous}


def spectral_factors(params, errors=None, dim: int | None = None, strict: bool = False) -> FactorTable:
    """Spectral factors, their maximum and the controlling index.

    Parameters
    ----------
    params : SpectralParams or sequence of float
        ``gamma_0, gamma_1, ...``; entries that are ``None`` are skipped.
    errors : sequence of float, optional
        Error bars of the ``gamma_j`` (ignored for :class:`SpectralParams`).
    dim : int, optional
        Ambient dimension, default ``len(gamma) - 1``.
    strict : bool
        Raise :class:`OverlappingIntervals` when the bars do not separate the
        largest factor from the runner-up.

    Examples
    --------
    >>> t = spectral_factors([0.5, 1.0, 2.0], dim=2)
    >>> t.factors, t.controlling
    ([4.0, 1.0, 0.0], 0)
    """
    if isinstance(params, SpectralParams):
        gam, errs, d = params.gamma_j, params.gamma_j_errors, params.dim
    else:
        gam = list(params)
        errs = list(errors) if errors is not None else [0.0] * len(gam)
        d = dim if dim is not None else len(gam) - 1
    fac, fer = [], []
    for j, (g, e) in enumerate(zip(gam, errs)):
        if g is None:
            fac.append(None)
            fer.append(None)
            continue
        fac.append(float((d - j) / g))
        fer.append(float((d - j) * (e or 0.0) / g ** 2))
    known = [(f, j) for j, f in enumerate(fac) if f is not None]
    G, jmax = max(known)
    ambiguous = False
    for f, j in known:
        if j != jmax and f + fer[j] >= G - fer[jmax]:
            ambiguous = True
    if ambiguous and strict:
        raise OverlappingIntervals(f"error bars do not separate Gamma_{jmax} from the other factors")
    return FactorTable(fac, fer, G, jmax, ambiguous)


class SpectralSearch:
    """Estimator for the spectral parameters of a tiling.

    Parameters
    ----------
    B : int
        ``l1`` bound of the prevectors (of the seeds for antisymmetric
        searches).
    R0 : int
        Graph radius of the support ball.
    precision : float
        Target error bar of the extrapolated savings.
    js : sequence of int, optional
        Which ``gamma_j`` to compute; all ``0..d`` when a family is given.

    Examples
    --------
    >>> from tilepile.library import triangular
    >>> est = SpectralSearch(B=4, R0=2, precision=2e-3).fit(triangular())  # doctest: +SKIP
    >>> round(est.params_.gamma, 3)  # doctest: +SKIP
    1.694
    """

    def __init__(self, B: int = 4, R0: int = 2, precision: float = 1e-3, js=None, screen_m=None,
                 margin: float = 0.05, n_finalists: int = 4):
        self.B, self.R0, self.precision = B, R0, precision
        self.js, self.screen_m, self.margin, self.n_finalists = js, screen_m, margin, n_finalists

    def get_params(self, deep=True):
        return {"B": self.B, "R0": self.R0, "precision": self.precision, "js": self.js,
                "screen_m": self.screen_m, "margin": self.margin, "n_finalists": self.n_finalists}

    def set_params(self, **params):
        for k, v in params.items():
            if k not in self.get_params():
                raise ValueError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, spec: TilingSpec, family: ReflectionFamily | None = None):
        knobs = {"screen_m": self.screen_m, "margin": self.margin, "n_finalists": self.n_finalists}
        params = gamma_search(spec, self.B, self.R0, self.precision, **knobs)
        d = spec.dim
        js = self.js if self.js is not None else (range(1, d + 1) if family is not None else [])
        for j in js:
            if j == 0:
                continue
            e = gamma_j_search(spec, family, j, self.B, self.R0, self.precision, **knobs)
            params.gamma_j[j] = e.value
            params.gamma_j_errors[j] = e.error
            params.argmins[f"gamma_{j}"] = e.argmin
            params.entries[f"gamma_{j}"] = e.to_dict()
        self.params_ = params
        self.factors_ = spectral_factors(params) if all(g is not None for g in params.gamma_j) else None
        return self

    def predict(self, X=None):
        """The computed ``[gamma_0, ..., gamma_d]``."""
        return list(self.params_.gamma_j)
