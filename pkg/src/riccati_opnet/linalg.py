"""Dense real-matrix kernel.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  Every
factorization and eigen-solver used elsewhere in the package lives here and
is written out explicitly (LU, Cholesky, Kronecker-Lyapunov, Hessenberg-QR,
Jacobi), so that all downstream tolerances can be traced to code in this file.
numpy is used for storage and for elementwise/row operations only.
"""

import math

import numpy as np

from .errors import NoConvergence, NotSymmetric, SingularMatrix

SYM_RTOL = 1e-10
PIVOT_RTOL = 1e-13
STABILITY_MARGIN = 1e-9


def as_mat(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-d matrix, got shape {a.shape}")
    return a


def frob_norm(a):
    a = np.asarray(a)
    return math.sqrt(float(np.sum(np.abs(a) ** 2)))


def is_symmetric(a, rtol=SYM_RTOL):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    return frob_norm(a - a.T) <= rtol * max(frob_norm(a), 1e-300)


def symmetrize(a):
    return 0.5 * (a + a.T)


# ---------------------------------------------------------------------------
# LU with partial pivoting
# ---------------------------------------------------------------------------

def lu_factor(a):
    """Return ``(lu, perm)`` with ``a[perm] = L @ U`` packed into ``lu``.

    Raises SingularMatrix when a pivot falls below ``1e-13 * ||a||_F``.
    """
    a = as_mat(a)
    n, ncols = a.shape
    if n != ncols:
        raise ValueError("lu_factor needs a square matrix")
    lu = a.copy()
    perm = np.arange(n)
    tol = PIVOT_RTOL * frob_norm(a)
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[p, k]) <= tol or lu[p, k] == 0.0:
            raise SingularMatrix(f"pivot {k} has magnitude {abs(lu[p, k]):.3e}")
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        if k + 1 < n:
            lu[k + 1:, k] /= lu[k, k]
            lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, perm


def lu_solve(lu, perm, b):
    b = np.asarray(b, dtype=float)
    vec = b.ndim == 1
    x = (b.reshape(-1, 1) if vec else b)[perm].copy()
    n = lu.shape[0]
    for i in range(1, n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[i] -= lu[i, i + 1:] @ x[i + 1:]
        x[i] /= lu[i, i]
    return x.ravel() if vec else x


def solve_linear(a, b):
    """Solve ``a X = b`` for square ``a`` by LU with partial pivoting."""
    a = as_mat(a)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"row mismatch: a is {a.shape}, b is {b.shape}")
    lu, perm = lu_factor(a)
    return lu_solve(lu, perm, b)


def inv(a):
    a = as_mat(a)
    return solve_linear(a, np.eye(a.shape[0]))


def solve_triangular(t, b, lower=True):
    t = as_mat(t)
    b = np.asarray(b, dtype=float)
    vec = b.ndim == 1
    x = (b.reshape(-1, 1) if vec else b).copy()
    n = t.shape[0]
    order = range(n) if lower else range(n - 1, -1, -1)
    for i in order:
        if lower:
            if i:
                x[i] -= t[i, :i] @ x[:i]
        elif i + 1 < n:
            x[i] -= t[i, i + 1:] @ x[i + 1:]
        if t[i, i] == 0.0:
            raise SingularMatrix(f"zero diagonal at {i}")
        x[i] /= t[i, i]
    return x.ravel() if vec else x


# ---------------------------------------------------------------------------
# Cholesky
# ---------------------------------------------------------------------------

def cholesky(a):
    """Lower Cholesky factor of a symmetric matrix, or ``None`` if not SPD.

    ``None`` is the positive-definiteness verdict, not an error; asymmetric
    input raises NotSymmetric.
    """
    a = as_mat(a)
    if not is_symmetric(a):
        raise NotSymmetric("cholesky input is not symmetric")
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if not d > 0.0:
            return None
        low[j, j] = math.sqrt(d)
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


def is_spd(a):
    try:
        return cholesky(a) is not None
    except NotSymmetric:
        return False


# ---------------------------------------------------------------------------
# Lyapunov equation
# ---------------------------------------------------------------------------

def solve_lyapunov(a_cl, m):
    """Solve ``a_cl^T P + P a_cl = -m`` by Kronecker vectorization.

    The n^2 x n^2 system is solved with :func:`solve_linear`; the result is
    symmetrized.  A singular system (eigenvalue pairs with
    ``lambda_i + conj(lambda_j) ~ 0``) raises SingularMatrix.
    """
    a_cl = as_mat(a_cl)
    m = as_mat(m)
    n = a_cl.shape[0]
    if a_cl.shape != (n, n) or m.shape != (n, n):
        raise ValueError("solve_lyapunov needs square matrices of equal order")
    if n > 32:
        raise ValueError("solve_lyapunov supports n <= 32")
    eye = np.eye(n)
    # row-major vec: vec(A^T P) = (A^T kron I) vec(P), vec(P A) = (I kron A^T) vec(P)
    kron = np.kron(a_cl.T, eye) + np.kron(eye, a_cl.T)
    p = solve_linear(kron, -m.reshape(-1)).reshape(n, n)
    return symmetrize(p)


# ---------------------------------------------------------------------------
# Eigenvalues: balancing, Hessenberg reduction, Francis double-shift QR
# ---------------------------------------------------------------------------

def balance(a):
    """Diagonal similarity scaling (powers of two) to equalize row/column norms."""
    a = as_mat(a).copy()
    n = a.shape[0]
    radix = 2.0
    sqrdx = radix * radix
    converged = False
    while not converged:
        converged = True
        for i in range(n):
            c = float(np.sum(np.abs(a[:, i]))) - abs(a[i, i])
            r = float(np.sum(np.abs(a[i, :]))) - abs(a[i, i])
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sqrdx
            g = r * radix
            while c > g:
                f /= radix
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                converged = False
                a[i, :] /= f
                a[:, i] *= f
    return a


def hessenberg(a):
    """Householder reduction to upper Hessenberg form (similarity transform)."""
    h = as_mat(a).copy()
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        alpha = frob_norm(x)
        if alpha == 0.0:
            continue
        v = x
        v[0] += math.copysign(alpha, x[0])
        vn = frob_norm(v)
        if vn == 0.0:
            continue
        v /= vn
        h[k + 1:, :] -= 2.0 * np.outer(v, v @ h[k + 1:, :])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h


def _hqr(h, max_iter):
    """Eigenvalues of an upper Hessenberg matrix (Francis double shift).

    Works on a 1-based list-of-lists copy; deflates 1x1 and 2x2 real-Schur
    blocks from the bottom.  Returns (wr, wi) lists.
    """
    n = h.shape[0]
    a = [[0.0] * (n + 1)] + [[0.0] + [float(v) for v in row] for row in h]
    wr = [0.0] * (n + 1)
    wi = [0.0] * (n + 1)
    anorm = 0.0
    for i in range(1, n + 1):
        for j in range(max(i - 1, 1), n + 1):
            anorm += abs(a[i][j])
    nn = n
    t = 0.0
    total = 0
    while nn >= 1:
        its = 0
        while True:
            l = 1
            for ll in range(nn, 1, -1):
                s = abs(a[ll - 1][ll - 1]) + abs(a[ll][ll])
                if s == 0.0:
                    s = anorm
                if abs(a[ll][ll - 1]) + s == s:
                    a[ll][ll - 1] = 0.0
                    l = ll
                    break
            x = a[nn][nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1][nn - 1]
            w = a[nn][nn - 1] * a[nn - 1][nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if total >= max_iter:
                partial = [complex(wr[i], wi[i]) for i in range(nn + 1, n + 1)]
                raise NoConvergence(
                    f"QR iteration did not converge after {total} iterations",
                    partial=np.array(partial, dtype=complex),
                )
            if its and its % 10 == 0:
                # exceptional shift
                t += x
                for i in range(1, nn + 1):
                    a[i][i] -= x
                s = abs(a[nn][nn - 1]) + abs(a[nn - 1][nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            total += 1
            m = nn - 2
            while m >= l:
                z = a[m][m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1][m] + a[m][m + 1]
                q = a[m + 1][m + 1] - z - r - s
                r = a[m + 2][m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m][m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1][m - 1]) + abs(z) + abs(a[m + 1][m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i][i - 2] = 0.0
                if i != m + 2:
                    a[i][i - 3] = 0.0
            for k in range(m, nn):
                if k != m:
                    p = a[k][k - 1]
                    q = a[k + 1][k - 1]
                    r = a[k + 2][k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k][k - 1] = -a[k][k - 1]
                else:
                    a[k][k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k][j] + q * a[k + 1][j]
                    if k != nn - 1:
                        p += r * a[k + 2][j]
                        a[k + 2][j] -= p * z
                    a[k + 1][j] -= p * y
                    a[k][j] -= p * x
                for i in range(l, min(nn, k + 3) + 1):
                    p = x * a[i][k] + y * a[i][k + 1]
                    if k != nn - 1:
                        p += z * a[i][k + 2]
                        a[i][k + 2] -= p * r
                    a[i][k + 1] -= p * q
                    a[i][k] -= p
    return wr[1:], wi[1:]


def eigenvalues(a):
    """Eigenvalues of a real square matrix as a complex array.

    Balancing, Householder-Hessenberg reduction, then Francis double-shift QR
    with 2x2 real-Schur deflation.  Complex eigenvalues come out as exact
    conjugate pairs.  Raises NoConvergence (carrying the partial spectrum)
    after ``100 * n`` QR sweeps.
    """
    a = as_mat(a)
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError("eigenvalues needs a square matrix")
    if n > 32:
        raise ValueError("eigenvalues supports n <= 32")
    if not np.all(np.isfinite(a)):
        raise ValueError("eigenvalues input has non-finite entries")
    if n == 1:
        return np.array([complex(a[0, 0], 0.0)])
    h = hessenberg(balance(a))
    wr, wi = _hqr(h, max_iter=100 * n)
    return np.array([complex(r, i) for r, i in zip(wr, wi)])


def spectral_abscissa(a):
    return float(np.max(eigenvalues(a).real))


def symmetric_eig(a, tol=1e-15, max_sweeps=60):
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns ``(w, v)`` with ascending eigenvalues ``w`` and orthonormal
    eigenvector columns ``v``.
    """
    a = symmetrize(as_mat(a))
    n = a.shape[0]
    v = np.eye(n)
    scale = frob_norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = frob_norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise NoConvergence("Jacobi sweeps did not converge", partial=np.diag(a).copy())
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def op_norm2(a):
    """Largest singular value: sqrt of the top eigenvalue of ``a^T a``."""
    a = as_mat(a)
    w, _ = symmetric_eig(a.T @ a)
    return math.sqrt(max(float(w[-1]), 0.0))


def sqrt_psd(q):
    """Symmetric square root of a PSD matrix; negative eigenvalues clamp to 0."""
    w, v = symmetric_eig(q)
    return symmetrize((v * np.sqrt(np.clip(w, 0.0, None))) @ v.T)


def rank(a, rtol=1e-8):
    """Numerical rank by Gaussian elimination with complete (column) pivoting.

    Accepts real or complex input.  A pivot counts when its magnitude exceeds
    ``rtol * max|a_ij|``.
    """
    a = np.array(a, dtype=complex if np.iscomplexobj(a) else float)
    if a.size == 0:
        return 0
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return 0
    tol = rtol * scale
    rows, cols = a.shape
    r = 0
    for k in range(min(rows, cols)):
        sub = np.abs(a[k:, k:])
        i, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
        if sub[i, j] <= tol:
            break
        i += k
        j += k
        a[[k, i]] = a[[i, k]]
        a[:, [k, j]] = a[:, [j, k]]
        a[k + 1:, k:] -= np.outer(a[k + 1:, k] / a[k, k], a[k, k:])
        r += 1
    return r


def stability_tests(a_cl):
    """Run the spectral and Lyapunov-SPD stability tests on ``a_cl``.

    Returns ``(spectral_stable, lyapunov_stable, spectrum)``.
    """
    a_cl = as_mat(a_cl)
    spectrum = eigenvalues(a_cl)
    spectral = bool(np.max(spectrum.real) < -STABILITY_MARGIN)
    try:
        p = solve_lyapunov(a_cl, np.eye(a_cl.shape[0]))
        lyap = is_spd(p)
    except SingularMatrix:
        lyap = False
    return spectral, lyap, spectrum


def is_hurwitz(a_cl):
    spectral, lyap, _ = stability_tests(a_cl)
    return spectral and lyap
