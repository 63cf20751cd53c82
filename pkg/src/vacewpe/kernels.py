"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public dispatchers take a ``backend`` argument (``"numba"``, ``"numpy"``
or ``None`` for the process default, see :mod:`vacewpe._accel`). Both
implementations compute the same quantity; they differ only in summation
order, so results agree to roughly machine precision rather than bitwise.
"""

import math

import numpy as np

from ._accel import njit, resolve_backend

# ---------------------------------------------------------------------------
# PSD-weighted correlation statistics
# ---------------------------------------------------------------------------


@njit
def _correlations_nb(stack, x, weight):
    F, T, n = stack.shape
    D = x.shape[2]
    R = np.zeros((F, n, n), dtype=np.complex128)
    P = np.zeros((F, n, D), dtype=np.complex128)
    for f in range(F):
        for t in range(T):
            w = weight[f, t]
            if w == 0.0:
                continue
            for i in range(n):
                si = stack[f, t, i] * w
                if si == 0:
                    continue
                # upper triangle only; mirrored below
                for j in range(i, n):
                    R[f, i, j] += si * np.conj(stack[f, t, j])
                for d in range(D):
                    P[f, i, d] += si * np.conj(x[f, t, d])
        for i in range(n):
            for j in range(i + 1, n):
                R[f, j, i] = np.conj(R[f, i, j])
    return R, P


def _correlations_np(stack, x, weight):
    weighted = stack * weight[:, :, None]
    R = np.matmul(weighted.transpose(0, 2, 1), stack.conj())
    P = np.matmul(weighted.transpose(0, 2, 1), x.conj())
    return R, P


def weighted_correlations(stack, x, weight, backend=None):
    """Return ``R[f] = sum_t w x~ x~^H`` and ``P[f] = sum_t w x~ x^H``.

    ``stack`` is (F, T, n), ``x`` is (F, T, D) and ``weight`` is (F, T),
    all frequency-major.
    """
    stack = np.ascontiguousarray(stack, dtype=np.complex128)
    x = np.ascontiguousarray(x, dtype=np.complex128)
    weight = np.ascontiguousarray(weight, dtype=np.float64)
    if resolve_backend(backend) == "numba":
        return _correlations_nb(stack, x, weight)
    return _correlations_np(stack, x, weight)


# ---------------------------------------------------------------------------
# Batched Hermitian positive-definite solve
# ---------------------------------------------------------------------------


@njit
def _cholesky_solve_nb(A, B):
    F, n, _ = A.shape
    m = B.shape[2]
    X = np.zeros((F, n, m), dtype=np.complex128)
    failed = np.zeros(F, dtype=np.bool_)
    L = np.zeros((n, n), dtype=np.complex128)
    y = np.zeros((n, m), dtype=np.complex128)
    for f in range(F):
        L[:, :] = 0.0
        ok = True
        for j in range(n):
            s = A[f, j, j].real
            for k in range(j):
                s -= L[j, k].real * L[j, k].real + L[j, k].imag * L[j, k].imag
            if not (s > 0.0) or not math.isfinite(s):
                ok = False
                break
            ljj = math.sqrt(s)
            L[j, j] = ljj
            for i in range(j + 1, n):
                acc = A[f, i, j]
                for k in range(j):
                    acc -= L[i, k] * np.conj(L[j, k])
                L[i, j] = acc / ljj
        if not ok:
            failed[f] = True
            continue
        for c in range(m):
            for i in range(n):
                acc = B[f, i, c]
                for k in range(i):
                    acc -= L[i, k] * y[k, c]
                y[i, c] = acc / L[i, i].real
            for i in range(n - 1, -1, -1):
                acc = y[i, c]
                for k in range(i + 1, n):
                    acc -= np.conj(L[k, i]) * X[f, k, c]
                X[f, i, c] = acc / L[i, i].real
        for i in range(n):
            for c in range(m):
                if not math.isfinite(X[f, i, c].real) or not math.isfinite(X[f, i, c].imag):
                    failed[f] = True
        if failed[f]:
            X[f, :, :] = 0.0
    return X, failed


def _cholesky_one(A, B):
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None
    y = np.linalg.solve(L, B)
    return np.linalg.solve(L.conj().T, y)


def _cholesky_solve_np(A, B):
    F, n, _ = A.shape
    failed = np.zeros(F, dtype=bool)
    X = np.zeros(B.shape, dtype=np.complex128)
    finite = np.isfinite(A).all(axis=(1, 2))
    try:
        with np.errstate(all="ignore"):
            L = np.linalg.cholesky(A[finite])
            y = np.linalg.solve(L, B[finite])
            X[finite] = np.linalg.solve(np.conj(np.swapaxes(L, 1, 2)), y)
    except np.linalg.LinAlgError:
        # one bad frequency poisons the batched call; redo frequency by frequency
        for f in np.flatnonzero(finite):
            sol = _cholesky_one(A[f], B[f])
            if sol is None:
                failed[f] = True
            else:
                X[f] = sol
    failed |= ~finite
    failed |= ~np.isfinite(X).all(axis=(1, 2))
    X[failed] = 0.0
    return X, failed


def hermitian_solve(A, B, backend=None):
    """Solve ``A[f] X[f] = B[f]`` for Hermitian positive-definite ``A[f]``.

    Uses a Cholesky factorization per frequency. Returns ``(X, failed)``;
    frequencies whose factorization breaks down get ``X[f] = 0`` and
    ``failed[f] = True``.
    """
    A = np.ascontiguousarray(A, dtype=np.complex128)
    B = np.ascontiguousarray(B, dtype=np.complex128)
    if resolve_backend(backend) == "numba":
        return _cholesky_solve_nb(A, B)
    return _cholesky_solve_np(A, B)


# ---------------------------------------------------------------------------
# Image-source room impulse response accumulation
# ---------------------------------------------------------------------------

FRACTIONAL_HALF_WIDTH = 40


@njit
def _image_rir_nb(src, mics, dims, beta, max_order, n_taps, fs, c, fractional, half_width):
    M = mics.shape[0]
    taps = np.zeros((n_taps, M), dtype=np.float64)
    max_dist = (n_taps + half_width) / fs * c
    nmax = np.zeros(3, dtype=np.int64)
    for a in range(3):
        nmax[a] = int(math.ceil(max_dist / (2.0 * dims[a]))) + 1
        if max_order >= 0:
            nmax[a] = min(nmax[a], max_order // 2 + 1)
    for m in range(M):
        for nx in range(-nmax[0], nmax[0] + 1):
            for qx in range(2):
                rx_ = abs(nx - qx) + abs(nx)
                px = (1 - 2 * qx) * src[0] + 2 * nx * dims[0] - mics[m, 0]
                gx = beta[0] ** abs(nx - qx) * beta[1] ** abs(nx)
                for ny in range(-nmax[1], nmax[1] + 1):
                    for qy in range(2):
                        ry_ = abs(ny - qy) + abs(ny)
                        if max_order >= 0 and rx_ + ry_ > max_order:
                            continue
                        py = (1 - 2 * qy) * src[1] + 2 * ny * dims[1] - mics[m, 1]
                        gy = beta[2] ** abs(ny - qy) * beta[3] ** abs(ny)
                        for nz in range(-nmax[2], nmax[2] + 1):
                            for qz in range(2):
                                rz_ = abs(nz - qz) + abs(nz)
                                if max_order >= 0 and rx_ + ry_ + rz_ > max_order:
                                    continue
                                pz = (1 - 2 * qz) * src[2] + 2 * nz * dims[2] - mics[m, 2]
                                gz = beta[4] ** abs(nz - qz) * beta[5] ** abs(nz)
                                dist = math.sqrt(px * px + py * py + pz * pz)
                                delay = dist / c * fs
                                amp = gx * gy * gz / (4.0 * math.pi * dist)
                                if not fractional:
                                    idx = int(math.floor(delay + 0.5))
                                    if idx < n_taps:
                                        taps[idx, m] += amp
                                else:
                                    centre = int(math.floor(delay + 0.5))
                                    for k in range(centre - half_width, centre + half_width + 1):
                                        if k < 0 or k >= n_taps:
                                            continue
                                        t = k - delay
                                        if abs(t) > half_width:
                                            continue
                                        win = 0.5 * (1.0 + math.cos(math.pi * t / (half_width + 1)))
                                        if t == 0.0:
                                            s = 1.0
                                        else:
                                            s = math.sin(math.pi * t) / (math.pi * t)
                                        taps[k, m] += amp * win * s
    return taps


def _image_rir_np(src, mics, dims, beta, max_order, n_taps, fs, c, fractional, half_width):
    M = mics.shape[0]
    taps = np.zeros((n_taps, M))
    max_dist = (n_taps + half_width) / fs * c
    nmax = np.ceil(max_dist / (2.0 * dims)).astype(int) + 1
    if max_order >= 0:
        nmax = np.minimum(nmax, max_order // 2 + 1)
    axes = [np.arange(-k, k + 1) for k in nmax]
    n = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 1, 3)
    q = np.stack(np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij"), axis=-1).reshape(1, -1, 3)
    n = np.broadcast_to(n, (n.shape[0], 8, 3)).reshape(-1, 3)
    q = np.broadcast_to(q, (len(n) // 8, 8, 3)).reshape(-1, 3)
    low_walls = np.abs(n - q)
    high_walls = np.abs(n)
    if max_order >= 0:
        keep = (low_walls + high_walls).sum(axis=1) <= max_order
        n, q, low_walls, high_walls = n[keep], q[keep], low_walls[keep], high_walls[keep]
    gain = np.prod(beta[0::2] ** low_walls * beta[1::2] ** high_walls, axis=1)
    images = (1 - 2 * q) * src + 2 * n * dims
    for m in range(M):
        dist = np.sqrt(((images - mics[m]) ** 2).sum(axis=1))
        delay = dist / c * fs
        amp = gain / (4.0 * np.pi * dist)
        centre = np.floor(delay + 0.5).astype(np.int64)
        if not fractional:
            ok = centre < n_taps
            taps[:, m] = np.bincount(centre[ok], weights=amp[ok], minlength=n_taps)[:n_taps]
            continue
        ok = centre - half_width < n_taps
        centre, delay, amp = centre[ok], delay[ok], amp[ok]
        offsets = np.arange(-half_width, half_width + 1)
        k = centre[:, None] + offsets[None, :]
        t = k - delay[:, None]
        win = 0.5 * (1.0 + np.cos(np.pi * t / (half_width + 1)))
        vals = amp[:, None] * win * np.sinc(t)
        valid = (k >= 0) & (k < n_taps) & (np.abs(t) <= half_width)
        taps[:, m] = np.bincount(k[valid], weights=vals[valid], minlength=n_taps)[:n_taps]
    return taps


def image_source_rir(src, mics, dims, beta, max_order, n_taps, fs, c,
                     fractional=False, backend=None):
    """Accumulate image-source contributions into an (n_taps, n_mics) array.

    ``beta`` holds the six wall reflection coefficients ordered
    (x=0, x=Lx, y=0, y=Ly, z=0, z=Lz). ``max_order < 0`` keeps every image
    that arrives within ``n_taps``.
    """
    src = np.asarray(src, dtype=np.float64)
    mics = np.atleast_2d(np.asarray(mics, dtype=np.float64))
    dims = np.asarray(dims, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    args = (src, mics, dims, beta, int(max_order), int(n_taps), float(fs), float(c),
            bool(fractional), FRACTIONAL_HALF_WIDTH)
    if resolve_backend(backend) == "numba":
        return _image_rir_nb(*args)
    return _image_rir_np(*args)


# ---------------------------------------------------------------------------
# Levinson-Durbin recursion over many frames
# ---------------------------------------------------------------------------


@njit
def _levinson_nb(r, rel_tol):
    M, p1 = r.shape
    p = p1 - 1
    a = np.zeros((M, p1))
    err = np.zeros(M)
    valid = np.ones(M, dtype=np.bool_)
    prev = np.zeros(p1)
    for m in range(M):
        a[m, 0] = 1.0
        e = r[m, 0]
        if not (e > 0.0):
            valid[m] = False
            continue
        floor = e * rel_tol
        for i in range(1, p + 1):
            acc = r[m, i]
            for j in range(1, i):
                acc += a[m, j] * r[m, i - j]
            k = -acc / e
            for j in range(i):
                prev[j] = a[m, j]
            for j in range(1, i):
                a[m, j] = prev[j] + k * prev[i - j]
            a[m, i] = k
            e = e * (1.0 - k * k)
            if not (e > floor):
                valid[m] = False
                break
        err[m] = e
        if not valid[m]:
            a[m, :] = 0.0
            a[m, 0] = 1.0
            err[m] = 0.0
    return a, err, valid


def _levinson_np(r, rel_tol):
    M, p1 = r.shape
    p = p1 - 1
    a = np.zeros((M, p1))
    a[:, 0] = 1.0
    e = r[:, 0].copy()
    valid = e > 0.0
    floor = e * rel_tol
    safe_e = np.where(valid, e, 1.0)
    for i in range(1, p + 1):
        acc = r[:, i] + np.einsum("mj,mj->m", a[:, 1:i], r[:, i - 1:0:-1]) if i > 1 else r[:, i].copy()
        k = np.where(valid, -acc / safe_e, 0.0)
        prev = a.copy()
        a[:, 1:i] = prev[:, 1:i] + k[:, None] * prev[:, i - 1:0:-1]
        a[:, i] = k
        e = e * (1.0 - k * k)
        valid &= e > floor
        safe_e = np.where(valid, e, 1.0)
    a[~valid] = 0.0
    a[~valid, 0] = 1.0
    e = np.where(valid, e, 0.0)
    return a, e, valid


def levinson(r, rel_tol=1e-12, backend=None):
    """Batched Levinson-Durbin on autocorrelation rows ``r`` of shape (M, p+1).

    Returns ``(a, err, valid)`` with ``a[:, 0] == 1`` so that the
    prediction-error filter is ``A(z) = sum_k a_k z^-k``. Rows with a
    non-positive lag-0 value or a collapsing error power are marked invalid.
    """
    r = np.ascontiguousarray(np.atleast_2d(r), dtype=np.float64)
    if resolve_backend(backend) == "numba":
        return _levinson_nb(r, float(rel_tol))
    return _levinson_np(r, float(rel_tol))
