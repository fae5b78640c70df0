"""Fourier analysis on the sandpile group and mixing-time experiments.

The dynamics adds a chip at a uniformly chosen vertex (the sink choice is a
lazy step) and stabilizes, so the step law is
``mu = (delta_id + sum_{v != s} delta_v) / |V|`` and its Fourier coefficient
at a dual character ``xi`` is ``mu_hat(xi) = (1 + sum_v e(xi_v)) / |V|``.

Small groups are handled exactly through the Smith normal form of the
reduced Laplacian; larger graphs use Monte Carlo chains and a character-sum
statistic built from translates of the spectral-gap minimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from numba import njit
from scipy.special import ndtr

from ._intlinalg import exact_det, matmul
from ._intlinalg import smith_normal_form as _snf
from .exceptions import GroupTooLarge, InequalityNotSatisfiable
from .functions import FunctionOnTiling, as_function
from .sandpile import _stabilize_inplace, reduced_laplacian
from .tiling import FiniteSandpileGraph, build_open, build_torus

TWO_PI = 2.0 * np.pi
DEFAULT_CAP = 10 ** 7
CONVOLUTION_CAP = 10 ** 5


# ---------------------------------------------------------------------------
# Smith normal form and the dual group
# ---------------------------------------------------------------------------


@dataclass
class SNFDecomposition:
    """``U A V = diag(D)`` with unimodular ``U``, ``V`` (nested int lists)."""

    D: list
    U: list
    V: list

    @property
    def factors(self) -> list:
        """Invariant factors larger than one."""
        return [d for d in self.D if d > 1]

    @property
    def order(self) -> int:
        return math.prod(self.D)


def smith_normal_form(A, verify: bool = True) -> SNFDecomposition:
    """Exact Smith normal form of a square integer matrix.

    Examples
    --------
    >>> smith_normal_form([[2, -1], [-1, 2]]).D
    [1, 3]
    """
    A = [[int(x) for x in row] for row in np.asarray(A, dtype=object).tolist()]
    U, D, V = _snf(A)
    diag = [D[i][i] for i in range(len(D))]
    if verify:
        if matmul(matmul(U, A), V) != D:
            raise ArithmeticError("Smith normal form failed to verify")
        if abs(exact_det(U)) != 1 or abs(exact_det(V)) != 1:
            raise ArithmeticError("Smith transforms are not unimodular")
    return SNFDecomposition(diag, U, V)


@dataclass
class DualCharacter:
    """A character ``xi in (Delta')^-1 Z^n / Z^n`` with its exact numerators.

    ``xi = numerators / denominator``; ``mu_hat`` is the Fourier coefficient
    of the step law.
    """

    k: tuple
    numerators: np.ndarray
    denominator: int
    mu_hat: complex

    @property
    def xi(self) -> np.ndarray:
        return self.numerators / self.denominator

    def is_valid(self, laplacian) -> bool:
        """``Delta' xi`` is integral (checked in exact integer arithmetic)."""
        r = np.asarray(laplacian, dtype=np.int64) @ self.numerators.astype(np.int64)
        return bool(np.all(r % self.denominator == 0))


def mu_hat(xi, n_vertices: int) -> np.ndarray:
    """``(1 + sum_v e(xi_v)) / |V|`` along the last axis."""
    xi = np.asarray(xi, dtype=float)
    return (1.0 + np.exp(1j * TWO_PI * xi).sum(axis=-1)) / n_vertices


class DualGroup:
    """Coordinates of the sandpile group and its dual via the Smith form.

    A configuration ``x`` maps to ``(U x)_i mod d_i``; the character with
    coordinates ``k`` is ``xi = sum_i k_i U[i, :] / d_i mod 1``.

    Raises
    ------
    GroupTooLarge
        If ``|G|`` exceeds ``cap``.
    """

    def __init__(self, graph: FiniteSandpileGraph, cap: int = DEFAULT_CAP):
        self.graph = graph
        self.laplacian = reduced_laplacian(graph)
        n = self.laplacian.shape[0]
        order = exact_det(self.laplacian) if n else 1
        if order > cap:
            raise GroupTooLarge(f"|G| = {order} exceeds the cap {cap}")
        self.snf = smith_normal_form(self.laplacian)
        if self.snf.order != order:
            raise ArithmeticError("invariant factors do not multiply to det")
        self.order = order
        keep = [i for i, d in enumerate(self.snf.D) if d > 1]
        self.factors = [self.snf.D[i] for i in keep]
        self.denominator = self.factors[-1] if self.factors else 1
        L = self.denominator
        self.rows = np.array([[x % self.snf.D[i] for x in self.snf.U[i]] for i in keep],
                             dtype=np.int64).reshape(len(keep), n)
        scale = np.array([L // d for d in self.factors], dtype=np.int64)
        self.weights = self.rows * scale[:, None]
        self.n_vertices = graph.n_vertices

    def coordinates(self, x) -> np.ndarray:
        """Group coordinates of integer vectors (last axis over non-sink vertices)."""
        x = np.asarray(x, dtype=np.int64)
        return (x @ self.rows.T) % np.array(self.factors, dtype=np.int64)

    def numerators(self, ks) -> np.ndarray:
        ks = np.atleast_2d(np.asarray(ks, dtype=np.int64))
        return (ks @ self.weights) % self.denominator

    def character_chunks(self, chunk: int = 1 << 16, include_zero: bool = False):
        """Yield ``(ks, numerators)`` blocks covering the dual group."""
        total = self.order
        shape = tuple(self.factors)
        start = 0 if include_zero else 1
        for s in range(start, total, chunk):
            e = min(total, s + chunk)
            ks = np.stack(np.unravel_index(np.arange(s, e), shape), axis=1) if shape else np.zeros((e - s, 0), np.int64)
            yield ks, self.numerators(ks) if shape else np.zeros((e - s, self.laplacian.shape[0]), np.int64)

    def abs_mu_hat(self) -> np.ndarray:
        """``|mu_hat|`` for every nonzero character, in enumeration order."""
        out = []
        for ks, num in self.character_chunks():
            out.append(np.abs(mu_hat(num / self.denominator, self.n_vertices)))
        return np.concatenate(out) if out else np.zeros(0)


def enumerate_dual(graph: FiniteSandpileGraph, cap: int = DEFAULT_CAP):
    """Stream every nonzero dual character of ``graph``.

    Raises
    ------
    GroupTooLarge
    """
    G = DualGroup(graph, cap)
    for ks, num in G.character_chunks():
        mh = mu_hat(num / G.denominator, G.n_vertices)
        for r in range(len(ks)):
            yield DualCharacter(tuple(int(x) for x in ks[r]), num[r], G.denominator, complex(mh[r]))


def centered(xi, mh=None) -> np.ndarray:
    """Centred representative ``xi* = xi - C`` reduced to ``(-1/2, 1/2]``.

    ``xi`` is given on all vertices (sink value 0) along the last axis;
    ``C = arg(mu_hat) / 2 pi`` where only the phase of ``mh`` matters.
    """
    xi = np.asarray(xi, dtype=float)
    if mh is None:
        mh = np.exp(1j * TWO_PI * xi).sum(axis=-1)
    C = np.angle(mh)[..., None] / TWO_PI
    y = xi - C
    return y - np.ceil(y - 0.5)


def distinguished_prevector(graph: FiniteSandpileGraph, xi_nonsink) -> np.ndarray:
    """Integer ``nu = Delta xi*`` on all vertices for the centred ``xi*``.

    Accepts one character or a stack of them (last axis over non-sink
    vertices).
    """
    xi_nonsink = np.asarray(xi_nonsink, dtype=float)
    full = np.zeros(xi_nonsink.shape[:-1] + (graph.n_vertices,))
    full[..., graph.nonsink] = xi_nonsink
    star = centered(full)
    nu = np.asarray(graph.laplacian() @ star.reshape(-1, graph.n_vertices).T).T.reshape(star.shape)
    r = np.rint(nu)
    if np.max(np.abs(nu - r), initial=0.0) > 1e-6:
        raise ArithmeticError("xi is not a dual character")
    return r.astype(np.int64)


# ---------------------------------------------------------------------------
# exact profiles
# ---------------------------------------------------------------------------


@dataclass
class MixingProfile:
    """Distance-to-uniform samples along the dynamics.

    ``samples`` holds dict rows with the CSV columns ``N, l2, tv_upper,
    tv_lower, observable_re, observable_im, stderr`` (missing entries are
    ``nan``).  ``t_mix`` collects estimates, ``predicted`` the formula
    values.
    """

    graph: dict
    samples: list
    t_mix: dict = field(default_factory=dict)
    predicted: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    COLUMNS = ("N", "l2", "tv_upper", "tv_lower", "observable_re", "observable_im", "stderr")

    def column(self, name: str) -> np.ndarray:
        return np.array([row.get(name, np.nan) for row in self.samples], dtype=float)

    def rows(self):
        for row in self.samples:
            yield [row.get(c, np.nan) for c in self.COLUMNS]


def l2_profile(graph: FiniteSandpileGraph, steps, cap: int = DEFAULT_CAP) -> MixingProfile:
    """``||mu^N - U||_2 = (sum_{xi != 0} |mu_hat(xi)|^2N)^1/2`` and ``TV <= l2 / 2``.

    The sums run over chunks with :func:`math.fsum` on the chunk totals.
    """
    G = DualGroup(graph, cap)
    a = G.abs_mu_hat()
    rows = []
    for N in steps:
        N = int(N)
        parts = [float(np.sum(a[s:s + 1 << 20] ** (2 * N))) for s in range(0, len(a), 1 << 20)]
        l2 = math.sqrt(math.fsum(parts))
        rows.append({"N": N, "l2": l2, "tv_upper": 0.5 * l2})
    return MixingProfile(graph.descriptor(), rows, meta={"order": G.order, "factors": G.factors})


def exact_distribution(graph: FiniteSandpileGraph, steps, cap: int = CONVOLUTION_CAP):
    """Law of ``sigma_N`` relative to the start, by repeated convolution.

    The group is realized as ``Z/d_1 x ... x Z/d_r``; adding a chip at ``v``
    shifts by the coordinates of ``e_v``.  Returns ``{N: P_N}``.
    """
    G = DualGroup(graph, cap)
    if G.order > cap:
        raise GroupTooLarge(f"|G| = {G.order} exceeds the convolution cap {cap}")
    shape = tuple(G.factors)
    shifts = {}
    for col in range(G.rows.shape[1]):
        key = tuple(int(x) for x in G.rows[:, col] % np.array(G.factors))
        shifts[key] = shifts.get(key, 0) + 1
    n = graph.n_vertices
    P = np.zeros(shape if shape else (1,))
    P[(0,) * max(len(shape), 1)] = 1.0
    want = sorted(set(int(s) for s in steps))
    out = {}
    N = 0
    axes = tuple(range(len(shape)))
    for target in want:
        while N < target:
            Q = P.copy()  # lazy step at the sink
            for sh, cnt in shifts.items():
                Q += cnt * np.roll(P, sh, axis=axes) if shape else cnt * P
            P = Q / n
            N += 1
        out[target] = P.copy()
    return out


def tv_exact(P: np.ndarray) -> float:
    return 0.5 * float(np.abs(P - 1.0 / P.size).sum())


def l2_from_distribution(P: np.ndarray) -> float:
    """``(|G| sum (P - 1/|G|)^2)^1/2``, equal to the Fourier L2 by Parseval."""
    return math.sqrt(P.size * float(((P - 1.0 / P.size) ** 2).sum()))


@dataclass
class WitnessBound:
    """Second-moment lower bound ``1 - 4 eps1^2 - 4 eps2^2`` with its inputs."""

    value: float
    eps1: float
    eps2: float
    S1: float
    S2: float
    size: int
    satisfied: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _as_character_matrix(chars) -> np.ndarray:
    if isinstance(chars, np.ndarray):
        return np.atleast_2d(chars.astype(float))
    return np.array([c.xi if isinstance(c, DualCharacter) else np.asarray(c, float) for c in chars])


def tv_lower_witness(graph: FiniteSandpileGraph, chars, N: int, strict: bool = False) -> WitnessBound:
    """Total-variation lower bound from a set of characters.

    With ``S1 = sum_X |mu_hat|^N`` and ``S2 = sum_{X x X} |mu_hat(xi1 - xi2)|^N``
    the hypotheses hold for ``eps1 = |X|^1/2 / S1`` and
    ``eps2^2 = max(S2 / S1^2 - 1, 0)``; the bound ``1 - 4 eps1^2 - 4 eps2^2``
    is clamped to ``[0, 1]``.

    Raises
    ------
    InequalityNotSatisfiable
        Only with ``strict=True``, when ``eps1`` or ``eps2`` is not below 1.
    """
    X = _as_character_matrix(chars)
    n = graph.n_vertices
    K = X.shape[0]
    E = np.exp(1j * TWO_PI * X)
    a = np.abs((1.0 + E.sum(axis=1)) / n)
    S1 = float(np.sum(a ** N))
    pair = np.abs((1.0 + E @ E.conj().T) / n)
    S2 = float(np.sum(pair ** N))
    eps1 = math.sqrt(K) / S1 if S1 > 0 else math.inf
    eps2 = math.sqrt(max(S2 / S1 / S1 - 1.0, 0.0)) if S1 > 0 else math.inf  # S1**2 can underflow
    ok = eps1 < 1 and eps2 < 1
    val = min(1.0, max(0.0, 1 - 4 * eps1 ** 2 - 4 * eps2 ** 2)) if ok else 0.0
    if strict and not ok:
        raise InequalityNotSatisfiable(f"eps1 = {eps1:.3g}, eps2 = {eps2:.3g}")
    return WitnessBound(val, eps1, eps2, S1, S2, K, ok)


def best_witness(graph: FiniteSandpileGraph, chars, N: int, max_size: int = 4096) -> WitnessBound:
    """Largest witness bound over prefixes of ``chars`` sorted by ``|mu_hat|``.

    Prefix sizes double from 1 up to ``min(len(chars), max_size)``.
    """
    X = _as_character_matrix(chars)
    a = np.abs(mu_hat(X, graph.n_vertices))
    X = X[np.argsort(-a, kind="stable")]
    top = min(len(X), max_size)
    sizes = sorted(set([1 << i for i in range(top.bit_length()) if 1 << i <= top] + [top]))
    best = None
    for K in sizes:
        w = tv_lower_witness(graph, X[:K], N)
        if best is None or w.value > best.value:
            best = w
    return best


# ---------------------------------------------------------------------------
# characters from prevectors
# ---------------------------------------------------------------------------


def torus_characters(graph: FiniteSandpileGraph, nu) -> np.ndarray:
    """Characters of all lattice translates of ``nu`` on a torus graph.

    Returns an array ``(m^d, n_nonsink)``; row ``t`` is
    ``xi_t(v) = Xi(v - t) - Xi(s - t)`` with ``Delta Xi = nu``.
    """
    from .spectral import torus_response

    nu = as_function(nu)
    if abs(float(nu.total())) > 1e-12:
        raise ValueError("nu must have total sum zero")
    spec, m = graph.spec, graph.m
    d = spec.dim
    Xi = torus_response(spec, m).xi(nu)
    axes = tuple(range(1, d + 1))
    rows = []
    for t in np.ndindex(*(m,) * d):
        sh = np.roll(Xi, t, axis=axes).ravel()
        rows.append(sh - sh[graph.sink])
    X = np.array(rows)[:, graph.nonsink]
    return X


def open_characters(graph: FiniteSandpileGraph, nu, margin: int = 1) -> np.ndarray:
    """Characters ``(Delta')^-1 nu_t`` for translates inside an open graph.

    A translate is used when its support and the ``margin``-neighbourhood
    of the support avoid the sink.
    """
    nu = as_function(nu)
    index = {}
    for v in range(graph.n_vertices):
        if v != graph.sink:
            index[(int(graph.cells[v]), tuple(int(x) for x in graph.coords[v]))] = v
    pos = graph.nonsink
    col = {int(v): r for r, v in enumerate(pos)}
    spec = graph.spec
    offsets = set()
    for (c, n) in nu:
        offsets.add((c, n))
        frontier = [(c, n)]
        for _ in range(margin):
            nxt = []
            for (a, b) in frontier:
                for (y, _) in spec.neighbors(a, b):
                    if y not in offsets:
                        offsets.add(y)
                        nxt.append(y)
            frontier = nxt
    coords = np.array([n for (_, n) in index])
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    rhs = []
    for t in np.ndindex(*(hi - lo + 1)):
        t = tuple(int(a + b) for a, b in zip(t, lo))
        if all((c, tuple(x + y for x, y in zip(n, t))) in index for (c, n) in offsets):
            b = np.zeros(len(pos))
            for (c, n), v in nu.items():
                b[col[index[(c, tuple(x + y for x, y in zip(n, t)))]]] += v
            rhs.append(b)
    if not rhs:
        raise ValueError("no translate of nu fits inside the open graph")
    Lp = graph.laplacian()[pos][:, pos].tocsc().astype(float)
    lu = spla.splu(Lp)
    return lu.solve(np.array(rhs).T).T


def minimizer_characters(graph: FiniteSandpileGraph, nu=None, gamma: float | None = None):
    """Translates of the spectral-gap minimizer as characters of ``graph``.

    Returns ``(X, nu, gamma)``.
    """
    if nu is None:
        from .spectral import gamma_search

        params = gamma_search(graph.spec)
        nu, gamma = params.argmins["gamma_0"], params.gamma_j[0]
    X = torus_characters(graph, nu) if graph.kind == "torus" else open_characters(graph, nu)
    return X, as_function(nu), gamma


def prevector_characters(graph: FiniteSandpileGraph, B: int = 4) -> np.ndarray:
    """Distinct nonzero characters ``Delta^-1 nu`` on a torus for sum-zero ``||nu||_1 <= B``.

    Rows are sorted by decreasing ``|mu_hat|``.
    """
    from .spectral import _signed_multisets, torus_response

    if graph.kind != "torus":
        raise ValueError("prevector characters are built on torus graphs")
    spec, m = graph.spec, graph.m
    points = [(c, n) for c in range(spec.n_cells) for n in np.ndindex(*(m,) * spec.dim)]
    P = torus_response(spec, m).point_matrix(points)
    blocks = []
    for p, q, idx, coef in _signed_multisets(len(points), B, balanced=True, both_signs=True):
        Xi = np.einsum("rs,rsv->rv", coef.astype(float), P[idx])
        Xi = (Xi - Xi[:, [graph.sink]])[:, graph.nonsink]
        blocks.append(Xi - np.floor(Xi + 1e-9))
    X = np.concatenate(blocks)
    X[np.abs(X - 1) < 1e-9] = 0.0
    _, keep = np.unique(np.round(X * 1e7).astype(np.int64), axis=0, return_index=True)
    X = X[np.sort(keep)]
    a = np.abs(mu_hat(X, graph.n_vertices))
    X, a = X[a < 1 - 1e-9], a[a < 1 - 1e-9]
    return X[np.argsort(-a, kind="stable")]


# ---------------------------------------------------------------------------
# spectral gap on small tori
# ---------------------------------------------------------------------------


def exact_gap(graph: FiniteSandpileGraph, cap: int = DEFAULT_CAP) -> float:
    """``min_{xi != 0} 1 - |mu_hat(xi)|`` by full enumeration."""
    a = DualGroup(graph, cap).abs_mu_hat()
    return float(1.0 - a.max())


def prevector_gap(spec, m: int, B: int = 4) -> float:
    """Smallest ``1 - |mu_hat|`` over characters ``Delta^-1 nu`` on the torus.

    ``nu`` runs over sum-zero integer functions with ``||nu||_1 <= B`` that
    have a support point at lattice coordinate 0.  This is an upper bound
    for the spectral gap.
    """
    from .spectral import _signed_multisets, _batch_savings, torus_response

    d, k = spec.dim, spec.n_cells
    points = [(c, n) for c in range(k) for n in np.ndindex(*(m,) * d)]
    anchored = np.array([all(x == 0 for x in n) for _, n in points] + [False])
    X = torus_response(spec, m).point_matrix(points)
    V = X.shape[1]
    best = math.inf
    for p, q, idx, coef in _signed_multisets(len(points), B, balanced=True):
        idx, coef = idx[anchored[idx].any(axis=1)], coef[anchored[idx].any(axis=1)]
        if len(idx) == 0:
            continue
        s = _batch_savings(X, idx, coef)
        s = s[s > 1e-8]
        if s.size:
            best = min(best, float(s.min()))
    return best / V


def spectral_gap_scan(spec, ms=(3, 4, 5, 6), cap: int = DEFAULT_CAP, B: int = 4) -> list:
    """``|T_m| * gap`` on small tori: exact where ``|G| <= cap``, else by prevectors.

    Returns a list of dicts with keys ``m, n_vertices, method, scaled_gap``.
    """
    out = []
    for m in ms:
        g = build_torus(spec, m)
        try:
            gap = exact_gap(g, cap)
            method = "exact"
        except GroupTooLarge:
            gap = prevector_gap(spec, m, B)
            method = "prevector-bound"
        out.append({"m": m, "n_vertices": g.n_vertices, "method": method,
                    "scaled_gap": g.n_vertices * gap})
    return out


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@njit(cache=True)
def _advance(states, indptr, indices, weights, degree, sink, moves):
    n = states.shape[1]
    odo = np.zeros(n, dtype=np.int64)
    for c in range(states.shape[0]):
        chips = states[c]
        for t in range(moves.shape[1]):
            v = moves[c, t]
            if v < 0:
                continue
            chips[v] += 1
            if chips[v] >= degree[v]:
                _stabilize_inplace(chips, indptr, indices, weights, degree, sink, odo)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) used by every experiment."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _moves(rng, graph, chains, n):
    mv = rng.integers(0, graph.n_vertices, size=(chains, n), dtype=np.int64)
    mv[mv == graph.sink] = -1
    return mv


def tv_proxy(mean_abs) -> np.ndarray:
    """TV between unit complex Gaussians whose means differ by ``|mean|``."""
    return 2.0 * ndtr(np.asarray(mean_abs) / math.sqrt(2.0)) - 1.0


def _first_crossing(N, y, level):
    """Linear interpolation of the first ``N`` where ``y`` drops below ``level``."""
    below = np.nonzero(y < level)[0]
    if below.size == 0:
        return math.nan
    i = below[0]
    if i == 0:
        return float(N[0])
    x0, x1, y0, y1 = N[i - 1], N[i], y[i - 1], y[i]
    return float(x0 + (y0 - level) * (x1 - x0) / (y0 - y1))


def mc_mixing(graph: FiniteSandpileGraph, chains: int, steps, observables=None, seed: int = 0,
              gamma: float | None = None) -> MixingProfile:
    """Monte Carlo profile of the character statistic.

    For characters ``xi_1..xi_K`` with phases ``w_k = mu_hat_k / |mu_hat_k|``
    each chain contributes
    ``Z_N = K^-1/2 sum_k e(xi_k . (sigma_N - sigma_0)) conj(w_k)^N``, whose mean
    is ``K^-1/2 sum_k |mu_hat_k|^N`` along the chain and 0 under the
    uniform law.  ``tv_lower`` is the Gaussian proxy
    ``2 Phi(|mean Z| / sqrt 2) - 1``; ``observable_re/im`` estimate
    ``E[e(xi_1 . sigma_N)]``.

    Parameters
    ----------
    graph : FiniteSandpileGraph
    chains : int
    steps : sequence of int
        Checkpoints (sorted, starting from any ``N >= 0``).
    observables : ndarray, optional
        Characters ``(K, n_nonsink)``; defaults to translates of the
        spectral-gap minimizer.
    seed : int
    """
    steps = sorted(int(s) for s in steps)
    if observables is None:
        observables, _, gamma_default = minimizer_characters(graph)
        gamma = gamma if gamma is not None else gamma_default
    X = np.atleast_2d(np.asarray(observables, dtype=float))
    K = X.shape[0]
    n = graph.n_vertices
    mh = mu_hat(X, n)
    w = mh / np.abs(mh)
    rng = make_rng(seed)
    states = np.tile(np.where(np.arange(n) == graph.sink, 0, graph.degree - 1), (chains, 1)).astype(np.int64)
    nonsink = graph.nonsink
    phi0 = states[0, nonsink].astype(float) @ X.T
    rows = []
    N = 0
    args = (graph.indptr, graph.indices, graph.weights, graph.degree, graph.sink)
    for target in steps:
        if target > N:
            _advance(states, *args, _moves(rng, graph, chains, target - N))
            N = target
        phi = states[:, nonsink].astype(float) @ X.T - phi0
        E = np.exp(1j * TWO_PI * phi)
        Z = (E * np.conj(w) ** N).sum(axis=1) / math.sqrt(K)
        mz = Z.mean()
        obs = np.exp(1j * TWO_PI * (phi[:, 0] + phi0[0]))
        rows.append({"N": N, "l2": math.nan, "tv_upper": math.nan,
                     "tv_lower": float(tv_proxy(abs(mz))),
                     "observable_re": float(obs.real.mean()), "observable_im": float(obs.imag.mean()),
                     "stderr": float(Z.std(ddof=1) / math.sqrt(chains)) if chains > 1 else math.nan,
                     "statistic": float(abs(mz)),
                     "statistic_expected": float(np.sum(np.abs(mh) ** N) / math.sqrt(K))})
    prof = MixingProfile(graph.descriptor(), rows, meta={"chains": chains, "seed": int(seed), "K": K,
                                                         "rng": "Philox"})
    Ns = prof.column("N")
    tv = prof.column("tv_lower")
    prof.t_mix = {"t_mix": _first_crossing(Ns, tv, 1 / math.e),
                  "t_75": _first_crossing(Ns, tv, 0.75), "t_25": _first_crossing(Ns, tv, 0.25)}
    prof.t_mix["width"] = prof.t_mix["t_25"] - prof.t_mix["t_75"]
    if gamma is not None:
        prof.predicted = predicted_mixing_time(graph, gamma)
    return prof


def predicted_mixing_time(graph: FiniteSandpileGraph, gamma: float) -> dict:
    """``(Gamma_0 / 2) |V'| log m`` with ``Gamma_0 = d / gamma``, ``|V'|`` the non-sink count."""
    d = graph.spec.dim
    size = graph.n_vertices if graph.kind == "torus" else graph.n_vertices - 1
    G0 = d / gamma
    return {"Gamma_0": G0, "size": size, "t_pred": 0.5 * G0 * size * math.log(graph.m)}


def cutoff_scan(spec, boundary: str = "torus", ms=(8, 16, 32), family=None, chains: int = 1000,
                seed: int = 0, n_checkpoints: int = 120, horizon: float = 2.2, nu=None,
                gamma: float | None = None) -> list:
    """Empirical mixing times and profile widths over a range of sizes.

    For each ``m`` the chain runs to ``horizon`` times the predicted mixing
    time with ``n_checkpoints`` equally spaced checkpoints.  ``t_mix`` is
    the first crossing of the TV proxy below ``1/e`` and the width is
    ``N(0.25) - N(0.75)``.

    Returns
    -------
    list of dict
        Keys ``m, n_vertices, t_mix, width, ratio, t_pred, seed``.
    """
    if nu is None or gamma is None:
        from .spectral import gamma_search

        params = gamma_search(spec)
        nu = nu if nu is not None else params.argmins["gamma_0"]
        gamma = gamma if gamma is not None else params.gamma_j[0]
    out = []
    for i, m in enumerate(ms):
        g = build_torus(spec, m) if boundary == "torus" else build_open(spec, family, m)
        pred = predicted_mixing_time(g, gamma)
        X = torus_characters(g, nu) if boundary == "torus" else open_characters(g, nu)
        Nmax = int(math.ceil(horizon * pred["t_pred"]))
        steps = np.unique(np.linspace(0, Nmax, n_checkpoints).astype(int))
        prof = mc_mixing(g, chains, steps, X, seed=seed + i, gamma=gamma)
        t = prof.t_mix
        out.append({"m": m, "boundary": boundary, "n_vertices": g.n_vertices, "t_mix": t["t_mix"],
                    "width": t["width"], "ratio": t["width"] / t["t_mix"], "t_pred": pred["t_pred"],
                    "chains": chains, "seed": seed + i, "profile": prof})
    return out
