"""Stopped-walk measures, transfer matrices and Green's functions on tilings.

Fourier convention: for a function ``f`` on the lattice ``Z^d``,
``f_hat(x) = sum_n f(n) e(-n . x)`` with ``e(t) = exp(2 pi i t)``, which is
what :func:`numpy.fft.fftn` computes on the torus grid ``x = j / m``.

The random walk on the tiling is reduced to the period lattice by stopping it
when it hits a chosen vertex class.  The transfer matrix ``Q(z)`` records the
one-step transitions between classes weighted by ``z ** -offset``; the law of
the hitting position then has characteristic function
``Q00 + r0 (I - Q') ** -1 c0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .exceptions import ClassMismatch, MeanNotZero, NonConvergent, PoleAtZero, SingularSolve
from .functions import FunctionOnTiling, as_function, ball
from .tiling import TilingSpec

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# transfer matrix
# ---------------------------------------------------------------------------


class TransferMatrix:
    """Laurent-polynomial one-step transition matrix between cell classes.

    ``Q[i][j]`` maps a lattice offset ``o`` to the weight ``mult / deg(i)`` of
    the edges from class ``i`` to class ``j`` at offset ``o``.  Evaluated at
    a frequency ``x`` each offset contributes ``weight * e(-o . x)``.
    """

    def __init__(self, spec: TilingSpec):
        self.spec = spec
        self.size = spec.n_cells
        deg = spec.degree
        self.entries = [[{} for _ in range(self.size)] for _ in range(self.size)]
        for i, j, off, mult in spec.edges():
            d = self.entries[i][j]
            off = tuple(int(o) for o in off)
            d[off] = d.get(off, 0.0) + mult / deg[i]

    def at_one(self) -> np.ndarray:
        """``Q(1)``, a row-stochastic matrix."""
        return np.array([[sum(e.values()) for e in row] for row in self.entries])

    def evaluate(self, x) -> np.ndarray:
        """``Q`` at frequencies ``x`` of shape ``(..., d)``; returns ``(..., k, k)``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.size, self.size), dtype=complex)
        for i in range(self.size):
            for j in range(self.size):
                for off, w in self.entries[i][j].items():
                    out[..., i, j] += w * np.exp(-1j * TWO_PI * (x @ np.asarray(off, dtype=float)))
        return out

    def evaluate_grid(self, m: int) -> np.ndarray:
        """``Q`` on the torus grid ``j / m``; returns ``(k, k) + (m,)*d``."""
        d = self.spec.dim
        phases = _grid_phases(m, d)
        out = np.zeros((self.size, self.size) + (m,) * d, dtype=complex)
        for i in range(self.size):
            for j in range(self.size):
                for off, w in self.entries[i][j].items():
                    out[i, j] += w * _offset_phase(phases, off, sign=-1)
        return out


def _grid_phases(m: int, d: int):
    """Per-axis ``e(j / m)`` vectors, shaped for broadcasting."""
    base = np.exp(1j * TWO_PI * np.arange(m) / m)
    out = []
    for ax in range(d):
        shape = [1] * d
        shape[ax] = m
        out.append(base.reshape(shape))
    return out


def _offset_phase(phases, off, sign=1):
    """``e(sign * o . x)`` on the grid, broadcast to full shape."""
    m = phases[0].size
    d = len(phases)
    res = np.ones((1,) * d, dtype=complex)
    for ax, o in enumerate(off):
        if o:
            res = res * phases[ax] ** (int(sign * o) % m)
    return np.broadcast_to(res, (m,) * d)


def _hitting_vector(Q: np.ndarray, target: int = 0) -> np.ndarray:
    """Characteristic functions ``h_c`` of the hitting position of class ``target``.

    ``h_c = E[e(-x . Y)]`` for the walk started at ``(c, 0)`` and stopped at
    its first visit to the target class (time 0 for ``c == target``).
    ``Q`` has shape ``(..., k, k)``.  Returns ``(..., k)``.
    """
    k = Q.shape[-1]
    out = np.ones(Q.shape[:-2] + (k,), dtype=complex)
    if k == 1:
        return out
    rest = [c for c in range(k) if c != target]
    Qp = Q[..., rest, :][..., :, rest]
    c0 = Q[..., rest, target]
    A = np.eye(k - 1) - Qp
    try:
        sol = np.linalg.solve(A, c0[..., None])[..., 0]
    except np.linalg.LinAlgError:
        sol = _series_solve(Qp, c0)
    if not np.all(np.isfinite(sol)):
        sol = _series_solve(Qp, c0)
    out[..., rest] = sol
    return out


def _series_solve(Qp, c0, nmax=10 ** 5, tol=1e-15):
    """``sum_n Qp^n c0`` by iteration, the fallback for an ill-conditioned solve."""
    acc = c0.copy()
    term = c0.copy()
    for _ in range(nmax):
        term = np.einsum("...ij,...j->...i", Qp, term)
        acc = acc + term
        if np.max(np.abs(term)) < tol:
            return acc
    raise SingularSolve("series for (I - Q')^-1 did not converge")


# ---------------------------------------------------------------------------
# characteristic functions
# ---------------------------------------------------------------------------


def rho_hat(spec: TilingSpec, x) -> np.ndarray:
    """Characteristic function of the first-return measure of the lattice walk.

    Parameters
    ----------
    spec : TilingSpec
    x : array_like, shape ``(d,)`` or ``(n, d)``
        Frequencies in ``(R/Z)^d``.

    Returns
    -------
    complex or ndarray of complex
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    X = np.atleast_2d(x)
    Q = TransferMatrix(spec).evaluate(X)
    h = _hitting_vector(Q, 0)
    val = np.einsum("...j,...j->...", Q[..., 0, :], h)
    if np.any(~np.isfinite(val)):
        raise SingularSolve("I - Q'(z) is singular")
    return val[0] if scalar else val


def _near_zero(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    centred = x - np.round(x)
    return np.linalg.norm(centred, axis=-1) < 1e-9


def g_hat(spec: TilingSpec, x) -> np.ndarray:
    """Fourier transform of the lattice restriction of the Green's function.

    ``deg(0) * g_hat(x) = 1 / (1 - rho_hat(x))`` for ``x != 0`` mod 1.

    Raises
    ------
    PoleAtZero
        If any ``x`` is within 1e-9 of the origin of the torus.
    """
    x = np.asarray(x, dtype=float)
    if np.any(_near_zero(x)):
        raise PoleAtZero("g_hat has a pole at x = 0")
    r = rho_hat(spec, x)
    return 1.0 / (spec.degree[0] * (1.0 - r))


# ---------------------------------------------------------------------------
# stopped walk measures
# ---------------------------------------------------------------------------


@dataclass
class StoppedWalkMeasure:
    """Law of the stopped walk's position, on lattice coordinates.

    Attributes
    ----------
    weights : dict
        ``n -> probability`` for the hit vertex ``(target, n)``.
    start : tuple
        Start vertex ``(cell, n)``.
    target : int
        Class whose visits stop the walk.
    residual : float
        Mass not yet absorbed when the iteration stopped.
    """

    weights: dict
    start: tuple
    target: int = 0
    residual: float = 0.0
    dim: int = field(default=0)

    @property
    def mass(self) -> float:
        return float(sum(self.weights.values()))

    @property
    def moment(self) -> np.ndarray:
        """First moment in lattice coordinates of the hit cell."""
        if not self.weights:
            return np.zeros(self.dim)
        pts = np.array(list(self.weights), dtype=float)
        w = np.array(list(self.weights.values()))
        return w @ pts

    def covariance(self) -> np.ndarray:
        pts = np.array(list(self.weights), dtype=float)
        w = np.array(list(self.weights.values()))
        mu = w @ pts
        c = pts - mu
        return (c * w[:, None]).T @ c

    def fourier(self, x) -> np.ndarray:
        """Direct sum ``sum_n rho(n) e(-n . x)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pts = np.array(list(self.weights), dtype=float)
        w = np.array(list(self.weights.values()))
        return np.exp(-1j * TWO_PI * (x @ pts.T)) @ w

    def tail_mass(self, radius: float) -> float:
        return float(sum(v for n, v in self.weights.items() if max(abs(a) for a in n) > radius))

    def as_arrays(self):
        pts = np.array(list(self.weights), dtype=np.int64)
        w = np.array(list(self.weights.values()))
        return pts, w


def stopped_measure(spec: TilingSpec, v=(0, None), *, target: int = 0, positive: bool = True,
                    tol: float = 1e-14, max_steps: int = 100_000) -> StoppedWalkMeasure:
    """Hitting distribution of the class ``target`` for simple random walk from ``v``.

    The walk is stopped at the first time ``n >= 1`` it visits a vertex of
    class ``target`` (``n >= 0`` when ``positive`` is false).  The
    distribution is propagated exactly step by step over the transient
    states until the unabsorbed mass drops below ``tol``.

    Raises
    ------
    NonConvergent
        If the unabsorbed mass stops decaying.
    """
    cell, n = v
    d = spec.dim
    n = (0,) * d if n is None else tuple(int(a) for a in n)
    deg = spec.degree
    trans = [[] for _ in range(spec.n_cells)]
    for i, j, off, mult in spec.edges():
        trans[i].append((j, np.asarray(off, dtype=np.int64), mult / deg[i]))
    absorbed: dict = {}
    if cell == target and not positive:
        return StoppedWalkMeasure({n: 1.0}, (cell, n), target, 0.0, d)
    cur = {(int(cell), n): 1.0}
    first = True
    step = 0
    while cur:
        nxt: dict = {}
        for (c, p), mass in cur.items():
            if c == target and not first:
                absorbed[p] = absorbed.get(p, 0.0) + mass
                continue
            pa = np.asarray(p)
            for j, off, w in trans[c]:
                q = (j, tuple(int(a) for a in pa + off))
                nxt[q] = nxt.get(q, 0.0) + mass * w
        first = False
        for key in [k for k in nxt if k[0] == target]:
            absorbed[key[1]] = absorbed.get(key[1], 0.0) + nxt.pop(key)
        cur = nxt
        resid = float(sum(cur.values()))
        step += 1
        if resid < tol:
            break
        if step >= max_steps:
            raise NonConvergent(f"residual mass {resid:.3g} after {step} steps")
    resid = float(sum(cur.values())) if cur else 0.0
    return StoppedWalkMeasure(absorbed, (int(cell), n), target, resid, d)


def hitting_moments(spec: TilingSpec, target: int = 0) -> np.ndarray:
    """Exact first moments ``E[Y]`` of the stopped walk, by linear solve.

    Returns an array ``M`` of shape ``(k, d)``: ``M[c]`` is the mean lattice
    coordinate of the first visit to class ``target`` for the walk from
    ``(c, 0)``, counting only times ``>= 1``.
    """
    k, d = spec.n_cells, spec.dim
    P = np.zeros((k, k))
    drift = np.zeros((k, d))
    deg = spec.degree
    for i, j, off, mult in spec.edges():
        P[i, j] += mult / deg[i]
        drift[i] += mult / deg[i] * np.asarray(off, dtype=float)
    rest = [c for c in range(k) if c != target]
    M_rest = np.zeros((k, d))
    if rest:
        A = np.eye(len(rest)) - P[np.ix_(rest, rest)]
        M_rest[rest] = np.linalg.solve(A, drift[rest])
    out = np.zeros((k, d))
    for c in range(k):
        if c == target:
            out[c] = drift[c] + P[c, rest] @ M_rest[rest] if rest else drift[c]
        else:
            out[c] = M_rest[c]
    return out


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


@dataclass
class Classification:
    """Class tag of a finitely supported function with its moment vector."""

    tag: str
    total: float
    moment: np.ndarray

    @property
    def level(self) -> int:
        return {"C0": 0, "C1": 1, "C2": 2}[self.tag]


def moment_vector(spec: TilingSpec, eta, target: int = 0) -> np.ndarray:
    """``sum_x eta(x) E[Y_{x,T}]`` with ``T`` the first positive visit to ``target``."""
    eta = as_function(eta)
    M = hitting_moments(spec, target)
    out = np.zeros(spec.dim)
    for (c, n), v in eta.items():
        out += float(v) * (np.asarray(n, dtype=float) + M[c])
    return out


def classify(eta, spec: TilingSpec, tol: float = 1e-10) -> Classification:
    """Classify ``eta`` as ``C0``, ``C1`` (sum zero) or ``C2`` (also zero moment).

    Examples
    --------
    >>> from tilepile.library import square
    >>> classify({(0, (0, 0)): 1, (0, (1, 0)): -1}, square()).tag
    'C1'
    """
    eta = as_function(eta)
    total = float(eta.total())
    mom = moment_vector(spec, eta)
    if abs(total) > tol:
        return Classification("C0", total, mom)
    if np.max(np.abs(mom)) > tol:
        return Classification("C1", total, mom)
    return Classification("C2", total, mom)


def required_class(d: int) -> int:
    """Class index ``rho`` that makes the Green's convolution square summable."""
    if d <= 2:
        return 2
    if d <= 4:
        return 1
    return 0


def decay_exponent(d: int, rho: int | None = None) -> int:
    """``beta = d - 2 + rho``, the decay exponent of ``g * eta`` for ``eta`` in ``C^rho``."""
    if rho is None:
        rho = required_class(d)
    return d - 2 + rho


# ---------------------------------------------------------------------------
# torus Green's function
# ---------------------------------------------------------------------------


@dataclass
class GreensTable:
    """Values of a Green's convolution on a torus or on a ball.

    For ``kind == "torus"`` the values are an array of shape
    ``(n_cells,) + (m,)*d`` indexed by ``(cell, n mod m)``.  For
    ``kind == "ball"`` the values are a dict ``(cell, n) -> value`` with a
    matching dict of error estimates.
    """

    spec: TilingSpec
    kind: str
    values: object
    m: int | None = None
    radius: int | None = None
    normalization: str = "lattice-mean-zero"
    errors: dict | None = None
    derivative: tuple = ()
    meta: dict = field(default_factory=dict)

    def value(self, cell: int, n) -> float:
        if self.kind == "torus":
            return float(self.values[(int(cell),) + tuple(int(a) % self.m for a in n)])
        return float(self.values[(int(cell), tuple(int(a) for a in n))])

    def flat(self) -> np.ndarray:
        """Torus values in the vertex order of :func:`~tilepile.tiling.build_torus`."""
        if self.kind != "torus":
            raise ValueError("flat() is defined for torus tables")
        return np.asarray(self.values).reshape(-1)

    def class_means(self) -> np.ndarray:
        if self.kind != "torus":
            raise ValueError("class means are defined for torus tables")
        k = self.spec.n_cells
        return np.asarray(self.values).reshape(k, -1).mean(axis=1)

    def rows(self):
        """``(cell, coords, value, tag)`` tuples for CSV output."""
        tag = "D" + "".join(str(a) for a in self.derivative) if self.derivative else ""
        if self.kind == "torus":
            arr = np.asarray(self.values)
            for idx in np.ndindex(arr.shape):
                yield idx[0], idx[1:], float(arr[idx]), tag
        else:
            for (c, n), v in sorted(self.values.items()):
                yield c, n, float(v), tag


def torus_laplacian(spec: TilingSpec, values: np.ndarray) -> np.ndarray:
    """Apply the graph Laplacian of ``T / m Lambda`` to an array ``(k,) + (m,)*d``."""
    values = np.asarray(values)
    out = spec.degree.reshape((-1,) + (1,) * spec.dim) * values
    axes = tuple(range(spec.dim))
    for i, j, off, mult in spec.edges():
        out[i] -= mult * np.roll(values[j], shift=tuple(-int(o) for o in off), axis=axes)
    return out


def _laplacian_symbol(spec: TilingSpec, m: int) -> np.ndarray:
    """``L_hat(x)`` on the grid: ``(k, k) + (m,)*d``, ``(L f)_hat = L_hat f_hat``."""
    k, d = spec.n_cells, spec.dim
    phases = _grid_phases(m, d)
    L = np.zeros((k, k) + (m,) * d, dtype=complex)
    for i in range(k):
        L[i, i] += spec.degree[i]
    for i, j, off, mult in spec.edges():
        L[i, j] -= mult * _offset_phase(phases, off, sign=1)
    return L


def _eta_hat(spec: TilingSpec, eta: FunctionOnTiling, m: int) -> np.ndarray:
    arr = eta.to_torus(spec.n_cells, m, spec.dim)
    axes = tuple(range(1, spec.dim + 1))
    return sfft.fftn(arr, axes=axes)


_KERNELS: dict = {}


def _torus_kernel(spec: TilingSpec, m: int):
    """Per-frequency data of the torus solve, cached for the last two ``(spec, m)``."""
    key = (spec.spec_hash(), int(m))
    if key not in _KERNELS:
        k = spec.n_cells
        Q = TransferMatrix(spec).evaluate_grid(m)
        Qm = np.moveaxis(Q.reshape(k, k, -1), -1, 0)  # (N, k, k)
        h = _hitting_vector(Qm, 0)  # (N, k)
        rho = np.einsum("nj,nj->n", Qm[:, 0, :], h)
        denom = spec.degree[0] * (1.0 - rho)
        denom[0] = 1.0
        Lm = None
        if k > 1:
            L = _laplacian_symbol(spec, m)
            Lm = np.moveaxis(L.reshape(k, k, -1), -1, 0)
        while len(_KERNELS) >= 2:
            _KERNELS.pop(next(iter(_KERNELS)))
        _KERNELS[key] = (h, denom, Lm)
    return _KERNELS[key]


def _solve_torus_hat(spec: TilingSpec, m: int, eta_hat: np.ndarray) -> np.ndarray:
    """Transfer-matrix solve of ``L g = eta`` in Fourier space.

    The lattice class is solved through the stopped-walk push-forward,
    ``g0_hat = rho_eta_hat / (deg0 (1 - rho_hat))`` with the zero mode set
    to 0; the other classes follow by block elimination.
    """
    k, d = spec.n_cells, spec.dim
    h, denom, Lm = _torus_kernel(spec, m)
    eh = eta_hat.reshape(k, -1).T  # (N, k)
    # lattice push-forward: lattice vertices act as point masses
    rho_eta = eh[:, 0] + (np.einsum("nc,nc->n", eh[:, 1:], h[:, 1:]) if k > 1 else 0.0)
    scale = max(1.0, float(np.abs(eh).max()))
    if abs(rho_eta[0]) > 1e-10 * scale:
        raise MeanNotZero(f"sum of eta is {rho_eta[0].real:.6g}, expected 0")
    g0 = rho_eta / denom
    g0[0] = 0.0
    out = np.zeros_like(eh)
    out[:, 0] = g0
    if k > 1:
        rhs = eh[:, 1:] - Lm[:, 1:, 0] * g0[:, None]
        out[:, 1:] = np.linalg.solve(Lm[:, 1:, 1:], rhs[..., None])[..., 0]
    return out.T.reshape((k,) + (m,) * d)


def greens_torus(spec: TilingSpec, m: int, eta) -> GreensTable:
    """The torus Green's convolution ``g_{T_m} * eta``.

    Parameters
    ----------
    spec : TilingSpec
    m : int
        Torus side, the graph is ``T / m Lambda``.
    eta : FunctionOnTiling or mapping
        Finitely supported with total sum zero.

    Returns
    -------
    GreensTable
        Values on all of ``T / m Lambda``; the lattice class has mean zero.

    Raises
    ------
    MeanNotZero
    """
    eta = as_function(eta)
    m = int(m)
    eh = _eta_hat(spec, eta, m)
    gh = _solve_torus_hat(spec, m, eh)
    axes = tuple(range(1, spec.dim + 1))
    vals = sfft.ifftn(gh, axes=axes).real
    return GreensTable(spec, "torus", vals, m=m, normalization="lattice-mean-zero",
                       meta={"route": "transfer-matrix"})


def greens_torus_point(spec: TilingSpec, m: int) -> GreensTable:
    """``g_{0,T_m}``: ``Delta g = delta_0 - m^-d 1_Lambda``, lattice mean zero."""
    k, d = spec.n_cells, spec.dim
    eh = np.zeros((k,) + (m,) * d, dtype=complex)
    eh[0] = 1.0
    eh[(0,) + (0,) * d] = 0.0  # removes the uniform lattice mass
    gh = _solve_torus_hat(spec, m, eh)
    vals = sfft.ifftn(gh, axes=tuple(range(1, d + 1))).real
    return GreensTable(spec, "torus", vals, m=m, normalization="lattice-mean-zero",
                       meta={"route": "transfer-matrix", "source": "point"})


def greens_torus_direct(spec: TilingSpec, m: int, eta) -> GreensTable:
    """Reference route: per-frequency solve of the full ``k x k`` block system.

    Independent of the stopped-walk reduction; used to cross-check
    :func:`greens_torus`.  Normalized so that the lattice class has mean zero.
    """
    eta = as_function(eta)
    if abs(float(eta.total())) > 1e-10:
        raise MeanNotZero("sum of eta must vanish")
    k, d = spec.n_cells, spec.dim
    eh = _eta_hat(spec, eta, m).reshape(k, -1).T
    L = np.moveaxis(_laplacian_symbol(spec, m).reshape(k, k, -1), -1, 0)
    out = np.zeros_like(eh)
    out[1:] = np.linalg.solve(L[1:], eh[1:, :, None])[..., 0]
    out[0] = np.linalg.lstsq(L[0], eh[0], rcond=None)[0]
    out[0] -= out[0, 0]  # lattice class mean zero; constants are harmonic
    vals = sfft.ifftn(out.T.reshape((k,) + (m,) * d), axes=tuple(range(1, d + 1))).real
    return GreensTable(spec, "torus", vals, m=m, meta={"route": "direct"})


# ---------------------------------------------------------------------------
# infinite tiling by extrapolation
# ---------------------------------------------------------------------------


def default_torus_size(d: int, radius: int) -> int:
    if d <= 2:
        return max(8 * radius, 128)
    if d == 3:
        return max(64, 4 * radius)
    return max(32, 4 * radius)


def richardson_exponent(d: int) -> int:
    """Assumed convergence order in ``1/m`` of torus values to the tiling values."""
    return 2 if d <= 2 else d - 2


def greens_infinite(spec: TilingSpec, eta, radius: int, m1: int | None = None,
                    check_class: bool = True) -> GreensTable:
    """``g * eta`` on the graph ball of radius ``radius`` around the origin.

    Two torus solves at ``m1`` and ``2 m1`` are combined by Richardson
    extrapolation in ``1/m``; the difference between the extrapolant and the
    finer level is reported as the error estimate.

    Raises
    ------
    ClassMismatch
        If ``eta`` is not in the class needed for convergence in this
        dimension.
    """
    eta = as_function(eta)
    d = spec.dim
    rho = required_class(d)
    if check_class:
        cl = classify(eta, spec)
        if cl.level < max(rho, 1):
            raise ClassMismatch(f"{cl.tag} input, C{max(rho, 1)} required in dimension {d}")
    if m1 is None:
        m1 = default_torus_size(d, radius)
    m2 = 2 * m1
    verts, _ = ball(spec, radius)
    t1 = greens_torus(spec, m1, eta)
    t2 = greens_torus(spec, m2, eta)
    p = richardson_exponent(d)
    w = m2 ** p / (m2 ** p - m1 ** p)
    vals, errs = {}, {}
    for (c, n) in verts:
        a, b = t1.value(c, n), t2.value(c, n)
        ext = w * b + (1 - w) * a
        vals[(c, n)] = ext
        errs[(c, n)] = abs(ext - b)
    return GreensTable(spec, "ball", vals, radius=radius, errors=errs,
                       normalization="decaying" if d >= 3 or rho == 2 else "regularized",
                       meta={"m": [m1, m2], "richardson_order": p})


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def discrete_derivative(table: GreensTable, a) -> GreensTable:
    """``D^a`` with ``D_i f(n) = f(n + e_i) - f(n)`` along lattice directions.

    On a torus the shift is periodic; on a ball the domain shrinks to the
    vertices whose shifted stencil lies in the table.
    """
    a = tuple(int(x) for x in a)
    spec = table.spec
    d = spec.dim
    if len(a) != d or min(a) < 0:
        raise ValueError("multi-index must have d non-negative entries")
    if table.kind == "torus":
        arr = np.asarray(table.values, dtype=float)
        for ax, times in enumerate(a):
            for _ in range(times):
                arr = np.roll(arr, -1, axis=ax + 1) - arr
        return GreensTable(spec, "torus", arr, m=table.m, normalization=table.normalization,
                           derivative=tuple(x + y for x, y in zip(table.derivative or (0,) * d, a)),
                           meta=dict(table.meta))
    vals = dict(table.values)
    errs = dict(table.errors or {})
    for ax, times in enumerate(a):
        e = np.zeros(d, dtype=np.int64)
        e[ax] = 1
        for _ in range(times):
            nv, ne = {}, {}
            for (c, n), v in vals.items():
                key = (c, tuple(int(x) for x in np.asarray(n) + e))
                if key in vals:
                    nv[(c, n)] = vals[key] - v
                    ne[(c, n)] = errs.get(key, 0.0) + errs.get((c, n), 0.0)
            vals, errs = nv, ne
    return GreensTable(spec, "ball", vals, radius=table.radius, errors=errs,
                       normalization=table.normalization,
                       derivative=tuple(x + y for x, y in zip(table.derivative or (0,) * d, a)),
                       meta=dict(table.meta))


def _table_positions(table: GreensTable, cell: int | None = None):
    """Cartesian positions (minimum image on a torus) and values of a table."""
    spec = table.spec
    d = spec.dim
    if table.kind == "torus":
        m = table.m
        arr = np.asarray(table.values, dtype=float)
        n = np.indices((m,) * d).reshape(d, -1).T
        n = np.where(n > m // 2, n - m, n)
        cells = range(spec.n_cells) if cell is None else [cell]
        pos = np.concatenate([n @ spec.basis.matrix.T + spec.positions[c] for c in cells])
        vals = np.concatenate([arr[c].reshape(-1) for c in cells])
        return pos, vals
    keys = [k for k in table.values if cell is None or k[0] == cell]
    pos = np.array([spec.vertex_position(c, n) for c, n in keys])
    return pos, np.array([table.values[k] for k in keys])


def decay_slope(table: GreensTable, r_min: float, r_max: float, n_shells: int = 12,
                cell: int | None = None, combine=None) -> dict:
    """Log-log slope of the shell maxima of ``|values|`` against distance.

    Distances are Euclidean from the origin vertex (minimum image on a
    torus); shells are logarithmically spaced on ``[r_min, r_max]`` and the
    slope is the least-squares fit of ``log max|value|`` on ``log r``.

    Parameters
    ----------
    combine : sequence of GreensTable, optional
        Further tables (e.g. the other partial derivatives); the magnitude
        is then the Euclidean norm across ``table`` and ``combine``.
    """
    pos, vals = _table_positions(table, cell)
    mag = vals ** 2
    for t in combine or ():
        mag = mag + _table_positions(t, cell)[1] ** 2
    mag = np.sqrt(mag)
    r = np.linalg.norm(pos, axis=1)
    edges = np.geomspace(r_min, r_max, n_shells + 1)
    radii, peaks = [], []
    for lo, hi in zip(edges, edges[1:]):
        sel = (r >= lo) & (r < hi)
        if sel.any():
            radii.append(math.sqrt(lo * hi))
            peaks.append(float(mag[sel].max()))
    radii, peaks = np.array(radii), np.array(peaks)
    slope = float(np.polyfit(np.log(radii), np.log(peaks), 1)[0])
    return {"slope": slope, "radii": radii, "peaks": peaks, "decades": math.log10(r_max / r_min)}


# ---------------------------------------------------------------------------
# local limit theorem check
# ---------------------------------------------------------------------------


def _is_hypercubic(spec: TilingSpec) -> bool:
    if spec.n_cells != 1 or not np.allclose(spec.basis.matrix, np.eye(spec.dim)):
        return False
    offs = sorted(tuple(int(a) for a in off) for _, _, off, mult in spec.edges() if mult == 1)
    unit = sorted(tuple(int(s * (i == k)) for k in range(spec.dim)) for i in range(spec.dim) for s in (1, -1))
    return len(offs) == len(list(spec.edges())) and offs == unit


def _partitions(total: int, parts: int, largest: int | None = None):
    largest = total if largest is None else largest
    if parts == 0:
        if total == 0:
            yield ()
        return
    for a in range(min(total, largest), -1, -1):
        for rest in _partitions(total - a, parts - 1, a):
            yield (a,) + rest


def _hypercubic_law(d: int, N_max: int, points: np.ndarray) -> np.ndarray:
    """Law of the half-lazy walk on ``Z^d`` at ``points`` for ``N = 0..N_max``.

    Exact up to rounding: ``k`` moving steps are split over the coordinates
    one coordinate at a time with binomial weights, and each coordinate is a
    one-dimensional simple walk with ``C(j, (j + x) / 2) / 2^j``.
    """
    from scipy.stats import binom

    ks = np.arange(N_max + 1)
    X = np.abs(points)

    def q(x):  # 1d simple walk law at x after j steps, shape (P, N_max + 1)
        out = np.zeros((len(x), N_max + 1))
        for j in ks:
            ok = (x <= j) & ((j + x) % 2 == 0)
            out[ok, j] = binom.pmf((j + x[ok]) // 2, j, 0.5)
        return out

    F = q(X[:, 0])
    for i in range(2, d + 1):
        Q = q(X[:, i - 1])
        G = np.zeros_like(F)
        for j in ks:  # j of the k moving steps go to coordinate i
            w = binom.pmf(j, ks[j:], 1.0 / i)
            G[:, j:] += w * Q[:, j:j + 1] * F[:, :N_max + 1 - j]
        F = G
    lazy = np.array([binom.pmf(ks, N, 0.5) for N in ks])  # (N, k)
    return F @ lazy.T


def _probe_points(cov: np.ndarray, N: int, d: int) -> np.ndarray:
    """Lattice points at ``sqrt(N) * L t`` for ``t in {-2..2}^d`` (``cov = L L^T``)."""
    ts = np.stack(np.meshgrid(*[np.arange(-2, 3)] * d, indexing="ij"), -1).reshape(-1, d)
    return np.unique(np.rint(ts @ (np.linalg.cholesky(cov) * math.sqrt(N)).T).astype(np.int64), axis=0)


def _whitened_quadrature(pts, w, cov, N: int, X: np.ndarray, half_width: float = 6.0,
                         nodes: int = 20, chunk: int = 20000) -> np.ndarray:
    """``rho^{*N}(x) = int phi(t)^N e(x . t) dt`` near ``t = 0`` in whitened frequencies.

    Valid once ``phi^N`` is negligible away from the origin of the torus
    (aperiodic walks and ``N >= 32`` in practice).
    """
    d = cov.shape[0]
    ev, V = np.linalg.eigh(cov)
    A = V @ np.diag(ev ** -0.5) @ V.T / (TWO_PI * math.sqrt(N))
    g = np.linspace(-half_width, half_width, nodes)
    U = np.stack(np.meshgrid(*[g] * d, indexing="ij"), -1).reshape(-1, d)
    P = np.asarray(pts, dtype=float)
    X = np.asarray(X, dtype=float)
    out = np.zeros(len(X), dtype=complex)
    for s in range(0, len(U), chunk):
        T = U[s:s + chunk] @ A.T
        phi = np.exp(-1j * TWO_PI * (T @ P.T)) @ w
        out += np.exp(1j * TWO_PI * (X @ T.T)) @ (phi ** N)
    return (out * abs(np.linalg.det(A)) * (g[1] - g[0]) ** d).real


def local_limit_check(spec: TilingSpec, N_max: int = 256, N_min: int = 4, window_cap: int = 2 ** 24) -> dict:
    """Compare ``rho_{1/2}^{*N}`` with the Gaussian of matching covariance.

    ``rho_{1/2} = (rho + delta_0) / 2`` is the half-lazy first-return
    measure.  Its ``N``-fold convolution is computed by FFT powers on a
    periodic window wide enough that wrap-around is negligible (8 standard
    deviations).  Powers that no window under ``window_cap`` entries
    resolves are evaluated at probe points on the diffusive scale: exactly
    for the hypercubic lattice, else by quadrature of the Fourier integral
    in whitened frequencies (``N >= 32``; smaller unresolved powers are
    left out of ``N``).

    Returns
    -------
    dict
        ``N``, ``scaled_error`` (``N^{d/2} sup|rho^{*N} - G_N|``), ``method``
        per ``N``, ``bounded`` (no growth over the second half of the ``N``
        range), ``decreasing`` (for ``N >= 64``) and ``passed``.
    """
    d = spec.dim
    rho = stopped_measure(spec, (0, None))
    pts, w = rho.as_arrays()
    pts = np.vstack([pts, np.zeros((1, d), dtype=np.int64)])
    w = np.concatenate([0.5 * w, [0.5]])
    mu = w @ pts
    cov = ((pts - mu) * w[:, None]).T @ (pts - mu)
    inv = np.linalg.inv(cov)
    det = np.linalg.det(cov)
    lam = max(np.linalg.eigvalsh(cov).max(), 1e-12)
    reach = int(np.abs(pts).max())
    Ns = []
    N = N_min
    while N <= N_max:
        Ns.append(N)
        N *= 2

    def gauss(grid, N):
        q = np.einsum("ij,jk,ik->i", grid, inv, grid) / N
        return np.exp(-0.5 * q) / ((2 * np.pi * N) ** (d / 2) * math.sqrt(det))

    def needed(N):
        return int(2 ** math.ceil(math.log2(2 * (8 * math.sqrt(lam * N) + reach) + 1)))

    W = needed(Ns[-1])
    while W ** d > window_cap and W > 8:
        W //= 2
    fft_Ns = [N for N in Ns if needed(N) <= W]
    errs, methods = {}, {}
    if fft_Ns and W ** d <= window_cap:
        arr = np.zeros((W,) * d)
        for p, v in zip(pts, w):
            arr[tuple(int(a) % W for a in p)] += v
        fh = sfft.fftn(arr)
        grid = np.indices((W,) * d).reshape(d, -1).T
        grid = np.where(grid >= W // 2, grid - W, grid).astype(float)
        for N in fft_Ns:
            pN = sfft.ifftn(fh ** N).real.reshape(-1)
            errs[N] = float(N ** (d / 2) * np.max(np.abs(pN - gauss(grid, N))))
            methods[N] = "fft-window"
    rest = [N for N in Ns if N not in errs]
    if rest and _is_hypercubic(spec):
        near = [np.array(p) for r in range(7) for p in _partitions(r, d)]
        probes = {N: np.array(near + [np.sort(np.abs(x))[::-1] for x in _probe_points(cov, N, d)]) for N in rest}
        allp = np.unique(np.concatenate(list(probes.values())), axis=0)
        law = _hypercubic_law(d, rest[-1], allp)
        for N in rest:
            errs[N] = float(N ** (d / 2) * np.max(np.abs(law[:, N] - gauss(allp.astype(float), N))))
            methods[N] = "exact-probes"
    elif rest:
        skipped = [N for N in rest if N < 32]
        Ns = [N for N in Ns if N not in skipped]
        if len(Ns) < 3:
            raise NonConvergent(f"fewer than three convolution powers resolved in dimension {d}")
        for N in rest[len(skipped):]:
            X = _probe_points(cov, N, d)
            errs[N] = float(N ** (d / 2) * np.max(np.abs(_whitened_quadrature(pts, w, cov, N, X)
                                                         - gauss(X.astype(float), N))))
            methods[N] = "quadrature-probes"
    e = [errs[N] for N in Ns]
    half = len(e) // 2
    tail = [errs[N] for N in Ns if N >= 64]
    decreasing = all(b < a for a, b in zip(tail, tail[1:]))
    bounded = bool(np.all(np.isfinite(e))) and max(e[half:]) <= max(e[:half] or e)
    return {"N": Ns, "scaled_error": e, "covariance": cov, "window": W, "method": [methods[N] for N in Ns],
            "bounded": bounded, "decreasing": decreasing, "passed": bool(bounded and decreasing)}


# ---------------------------------------------------------------------------
# estimator front end
# ---------------------------------------------------------------------------


class GreensFunction:
    """Estimator-style wrapper around the Green's convolution solvers.

    Parameters
    ----------
    spec : TilingSpec
    m : int, optional
        Torus size.  When omitted, ``fit`` extrapolates to the infinite tiling
        on the ball of radius ``radius``.
    radius : int
        Ball radius for the infinite-tiling mode.

    Examples
    --------
    >>> from tilepile.library import square
    >>> gf = GreensFunction(square(), m=16).fit({(0, (0, 0)): 1, (0, (1, 0)): -1})
    >>> v = gf.predict([(0, (0, 0)), (0, (1, 0))])
    >>> round(float(v[0] - v[1]), 6)
    0.498047
    """

    def __init__(self, spec: TilingSpec, m: int | None = None, radius: int = 10):
        self.spec = spec
        self.m = m
        self.radius = radius

    def get_params(self, deep=True):
        return {"spec": self.spec, "m": self.m, "radius": self.radius}

    def set_params(self, **params):
        for k, v in params.items():
            setattr(self, k, v)
        return self

    def fit(self, eta, y=None):
        eta = as_function(eta)
        self.eta_ = eta
        self.class_ = classify(eta, self.spec)
        if self.m is not None:
            self.table_ = greens_torus(self.spec, self.m, eta)
        else:
            self.table_ = greens_infinite(self.spec, eta, self.radius)
        return self

    def predict(self, vertices):
        return np.array([self.table_.value(c, n) for c, n in vertices])
