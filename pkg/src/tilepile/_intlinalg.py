"""Exact integer linear algebra on Python integers.

Matrices are plain nested lists (or anything ``int()`` accepts entrywise);
results are Python ``int`` so there is no overflow.
"""

from __future__ import annotations

from math import gcd, isqrt, log

import numpy as np


def _as_int_rows(A):
    return [[int(x) for x in row] for row in np.asarray(A, dtype=object).tolist()]


def _identity(n):
    return [[1 if i == j else 0 for j in range(n)] for i in range(n)]


def bareiss_det(A) -> int:
    """Determinant by fraction-free Gaussian elimination."""
    M = _as_int_rows(A)
    n = len(M)
    if n == 0:
        return 1
    sign = 1
    prev = 1
    for k in range(n - 1):
        if M[k][k] == 0:
            for i in range(k + 1, n):
                if M[i][k] != 0:
                    M[k], M[i] = M[i], M[k]
                    sign = -sign
                    break
            else:
                return 0
        pivot = M[k][k]
        rowk = M[k]
        for i in range(k + 1, n):
            rowi = M[i]
            a = rowi[k]
            for j in range(k + 1, n):
                rowi[j] = (pivot * rowi[j] - a * rowk[j]) // prev
            rowi[k] = 0
        prev = pivot
    return sign * M[n - 1][n - 1]


def _primes_below(limit, count):
    """``count`` primes just below ``limit`` (trial division; limit ~ 2**31)."""
    out = []
    p = limit - 1
    while len(out) < count:
        if p % 2:
            r = isqrt(p)
            f = 3
            ok = True
            while f <= r:
                if p % f == 0:
                    ok = False
                    break
                f += 2
            if ok:
                out.append(p)
        p -= 1
    return out


def _det_mod_p(A: np.ndarray, p: int) -> int:
    M = np.mod(A, p).astype(np.int64)
    n = M.shape[0]
    det = 1
    for k in range(n):
        nz = np.nonzero(M[k:, k])[0]
        if nz.size == 0:
            return 0
        i = k + nz[0]
        if i != k:
            M[[k, i]] = M[[i, k]]
            det = -det
        piv = int(M[k, k])
        det = (det * piv) % p
        inv = pow(piv, p - 2, p)
        if k + 1 < n:
            factors = (M[k + 1:, k] * inv) % p
            # products stay below 2**62 for p < 2**31
            M[k + 1:, k:] = (M[k + 1:, k:] - (factors[:, None] * M[k, k:][None, :]) % p) % p
    return det % p


def exact_det(A) -> int:
    """Exact integer determinant.

    Small matrices use Bareiss elimination; larger ones are reduced modulo
    enough 31-bit primes to cover the Hadamard bound and recombined by CRT.
    """
    arr = np.asarray(A)
    n = arr.shape[0]
    if n <= 60:
        return bareiss_det(arr)
    a = arr.astype(np.int64)
    # Hadamard bound on |det|
    logbound = 0.5 * float(np.sum(np.log(np.maximum(np.sum(a.astype(float) ** 2, axis=1), 1.0))))
    nprimes = int(logbound / log(2 ** 30)) + 2
    primes = _primes_below(2 ** 31, nprimes)
    value, modulus = 0, 1
    for p in primes:
        r = _det_mod_p(a, p)
        # CRT step
        t = ((r - value) * pow(modulus, -1, p)) % p
        value += modulus * t
        modulus *= p
    if value > modulus // 2:
        value -= modulus
    return value


def smith_normal_form(A):
    """Smith normal form with unimodular transforms.

    Returns ``(U, D, V)`` as nested lists of Python ints with
    ``U @ A @ V == D``, ``D`` diagonal, non-negative and each diagonal entry
    dividing the next.
    """
    M = _as_int_rows(A)
    m = len(M)
    n = len(M[0]) if m else 0
    U = _identity(m)
    V = _identity(n)

    def swap_rows(i, j):
        M[i], M[j] = M[j], M[i]
        U[i], U[j] = U[j], U[i]

    def swap_cols(i, j):
        for row in M:
            row[i], row[j] = row[j], row[i]
        for row in V:
            row[i], row[j] = row[j], row[i]

    def add_row(dst, src, q):
        # row_dst += q * row_src
        rd, rs = M[dst], M[src]
        for k in range(n):
            if rs[k]:
                rd[k] += q * rs[k]
        ud, us = U[dst], U[src]
        for k in range(m):
            if us[k]:
                ud[k] += q * us[k]

    def add_col(dst, src, q):
        for row in M:
            if row[src]:
                row[dst] += q * row[src]
        for row in V:
            if row[src]:
                row[dst] += q * row[src]

    t = 0
    while t < min(m, n):
        while True:
            best = None
            for i in range(t, m):
                row = M[i]
                for j in range(t, n):
                    v = row[j]
                    if v and (best is None or abs(v) < best[0]):
                        best = (abs(v), i, j)
                        if best[0] == 1:
                            break
                if best is not None and best[0] == 1:
                    break
            if best is None:
                return U, [[M[i][j] if i == j else 0 for j in range(n)] for i in range(m)], V
            _, i, j = best
            if i != t:
                swap_rows(t, i)
            if j != t:
                swap_cols(t, j)
            piv = M[t][t]
            clean = True
            for i in range(t + 1, m):
                if M[i][t]:
                    add_row(i, t, -(M[i][t] // piv))
                    if M[i][t]:
                        clean = False
            for j in range(t + 1, n):
                if M[t][j]:
                    add_col(j, t, -(M[t][j] // piv))
                    if M[t][j]:
                        clean = False
            if not clean:
                continue
            bad = None
            for i in range(t + 1, m):
                for j in range(t + 1, n):
                    if M[i][j] % piv:
                        bad = i
                        break
                if bad is not None:
                    break
            if bad is None:
                break
            add_row(t, bad, 1)
        if M[t][t] < 0:
            M[t] = [-x for x in M[t]]
            U[t] = [-x for x in U[t]]
        t += 1
    D = [[M[i][j] if i == j else 0 for j in range(n)] for i in range(m)]
    return U, D, V


def matmul(A, B):
    """Exact product of nested-list integer matrices."""
    Bt = list(zip(*B))
    return [[sum(a * b for a, b in zip(row, col)) for col in Bt] for row in A]


def generates_full_lattice(vectors, d: int) -> bool:
    """True iff the integer ``vectors`` span all of Z^d over the integers."""
    vecs = [list(map(int, v)) for v in vectors if any(v)]
    if len(vecs) < d:
        return False
    cols = [list(x) for x in zip(*vecs)]  # d x k
    _, D, _ = smith_normal_form(cols)
    diag = [D[i][i] for i in range(d)]
    return all(x == 1 for x in diag)


def lcm(a: int, b: int) -> int:
    return a // gcd(a, b) * b
