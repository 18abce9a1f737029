"""Hot loops, each in a numba-compiled and a vectorised numpy flavour.

The public dispatchers pick the flavour from ``_backend.USE_NUMBA``; the
``*_numba`` / ``*_numpy`` functions stay importable so the two paths can be
compared directly (see ``benchmarks/bench_backends.py``).
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from . import _backend
from ._backend import njit

# --- Perona-Malik ------------------------------------------------------------


@njit
def _perona_malik_loops(img, K, dt, iterations):
    h, w = img.shape
    cur = img.copy()
    nxt = np.empty_like(cur)
    inv_k2 = 1.0 / (K * K)
    for _ in range(iterations):
        for i in range(h):
            for j in range(w):
                c = cur[i, j]
                dn = cur[i - 1, j] - c if i > 0 else 0.0
                ds = cur[i + 1, j] - c if i < h - 1 else 0.0
                de = cur[i, j + 1] - c if j < w - 1 else 0.0
                dw = cur[i, j - 1] - c if j > 0 else 0.0
                fn = np.exp(-(dn * dn) * inv_k2) * dn
                fs = np.exp(-(ds * ds) * inv_k2) * ds
                fe = np.exp(-(de * de) * inv_k2) * de
                fw = np.exp(-(dw * dw) * inv_k2) * dw
                nxt[i, j] = c + dt * (fn + fs + fe + fw)
        cur, nxt = nxt, cur
    return cur


def perona_malik_numba(img, K, dt, iterations):
    return _perona_malik_loops(np.ascontiguousarray(img, dtype=np.float64), float(K), float(dt), int(iterations))


def perona_malik_numpy(img, K, dt, iterations):
    cur = np.array(img, dtype=np.float64)
    inv_k2 = 1.0 / (K * K)
    for _ in range(int(iterations)):
        dn = np.zeros_like(cur)
        ds = np.zeros_like(cur)
        de = np.zeros_like(cur)
        dw = np.zeros_like(cur)
        dn[1:, :] = cur[:-1, :] - cur[1:, :]
        ds[:-1, :] = cur[1:, :] - cur[:-1, :]
        de[:, :-1] = cur[:, 1:] - cur[:, :-1]
        dw[:, 1:] = cur[:, :-1] - cur[:, 1:]
        fn = np.exp(-(dn * dn) * inv_k2) * dn
        fs = np.exp(-(ds * ds) * inv_k2) * ds
        fe = np.exp(-(de * de) * inv_k2) * de
        fw = np.exp(-(dw * dw) * inv_k2) * dw
        cur = cur + dt * (fn + fs + fe + fw)
    return cur


def perona_malik(img, K, dt, iterations):
    fn = perona_malik_numba if _backend.USE_NUMBA else perona_malik_numpy
    return fn(img, K, dt, iterations)


# --- 8-connected labeling ----------------------------------------------------


@njit
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit
def _label8_loops(mask):
    h, w = mask.shape
    prov = np.zeros((h, w), dtype=np.int64)
    parent = np.zeros(h * w // 2 + 2, dtype=np.int64)
    n = 0
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            best = 0
            # already visited neighbours: W, NW, N, NE
            for di, dj in ((0, -1), (-1, -1), (-1, 0), (-1, 1)):
                ii, jj = i + di, j + dj
                if ii < 0 or jj < 0 or jj >= w:
                    continue
                lab = prov[ii, jj]
                if lab == 0:
                    continue
                if best == 0:
                    best = _find(parent, lab)
                else:
                    a = _find(parent, lab)
                    if a != best:
                        if a < best:
                            parent[best] = a
                            best = a
                        else:
                            parent[a] = best
            if best == 0:
                n += 1
                if n >= parent.size:
                    grown = np.zeros(parent.size * 2, dtype=np.int64)
                    grown[: parent.size] = parent
                    parent = grown
                parent[n] = n
                best = n
            prov[i, j] = best
    # relabel roots in raster order of first appearance
    final = np.zeros(n + 1, dtype=np.int64)
    count = 0
    out = np.zeros((h, w), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            lab = prov[i, j]
            if lab == 0:
                continue
            root = _find(parent, lab)
            if final[root] == 0:
                count += 1
                final[root] = count
            out[i, j] = final[root]
    return out, count


def label8_numba(mask):
    return _label8_loops(np.ascontiguousarray(mask, dtype=np.bool_))


def label8_numpy(mask):
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=np.ones((3, 3), dtype=int))
    return labels.astype(np.int64), int(n)


def label8(mask):
    fn = label8_numba if _backend.USE_NUMBA else label8_numpy
    return fn(mask)


# --- monoplane Levenberg-Marquardt -------------------------------------------
# Solver status codes shared with reconstruct.py
LM_MAX_ITER = 0
LM_CONVERGED = 1
LM_SINGULAR = -1
LM_DEGENERATE = -2


@njit
def _monoplane_residual(X0, uv, dmeas, M, x, out):
    """Residuals for one electrode; returns False if a point maps to w ~ 0."""
    n_pairs = dmeas.shape[0]
    px = X0[0]
    py = X0[1]
    pz = X0[2]
    w = M[2, 0] * px + M[2, 1] * py + M[2, 2] * pz + M[2, 3]
    if abs(w) < 1e-12:
        return False
    pu = (M[0, 0] * px + M[0, 1] * py + M[0, 2] * pz + M[0, 3]) / w
    pv = (M[1, 0] * px + M[1, 1] * py + M[1, 2] * pz + M[1, 3]) / w
    for i in range(n_pairs):
        px += x[3 * i]
        py += x[3 * i + 1]
        pz += x[3 * i + 2]
        w = M[2, 0] * px + M[2, 1] * py + M[2, 2] * pz + M[2, 3]
        if abs(w) < 1e-12:
            return False
        u = (M[0, 0] * px + M[0, 1] * py + M[0, 2] * pz + M[0, 3]) / w
        v = (M[1, 0] * px + M[1, 1] * py + M[1, 2] * pz + M[1, 3]) / w
        out[3 * i] = u - uv[i + 1, 0]
        out[3 * i + 1] = v - uv[i + 1, 1]
        out[3 * i + 2] = np.sqrt((u - pu) ** 2 + (v - pv) ** 2) - dmeas[i]
        pu = u
        pv = v
    return True


@njit
def _cholesky_solve(A, b):
    """Solve an SPD system in place; returns (x, ok)."""
    n = A.shape[0]
    L = np.zeros_like(A)
    scale = 0.0
    for i in range(n):
        scale = max(scale, abs(A[i, i]))
    tiny = 1e-14 * scale if scale > 0 else 1e-300
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > tiny:
            return b * 0.0, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    for i in range(n):
        if not np.isfinite(x[i]):
            return x, False
    return x, True


@njit
def _lm_one(X0, uv, dmeas, M, x, lambda0, lam_up, lam_down, max_iter, step_tol, grad_tol, lambda_max):
    n = x.shape[0]
    r = np.empty(n)
    rt = np.empty(n)
    J = np.empty((n, n))
    if not _monoplane_residual(X0, uv, dmeas, M, x, r):
        return x, LM_DEGENERATE, 0, np.inf
    cost = 0.0
    for i in range(n):
        cost += r[i] * r[i]
    lam = lambda0
    it = 0
    status = LM_MAX_ITER
    while it < max_iter:
        for j in range(n):
            h = max(1e-6, 1e-6 * abs(x[j]))
            xj = x[j]
            x[j] = xj + h
            ok = _monoplane_residual(X0, uv, dmeas, M, x, rt)
            x[j] = xj
            if not ok:
                return x, LM_DEGENERATE, it, np.sqrt(cost)
            for i in range(n):
                J[i, j] = (rt[i] - r[i]) / h
        g = J.T @ r
        gmax = 0.0
        for i in range(n):
            gmax = max(gmax, abs(g[i]))
        if gmax <= grad_tol:
            status = LM_CONVERGED
            break
        A = J.T @ J
        xnorm = np.sqrt(np.sum(x * x))
        done = False
        while True:
            Ad = A.copy()
            for i in range(n):
                Ad[i, i] += lam * A[i, i]
            delta, ok = _cholesky_solve(Ad, -g)
            if not ok:
                lam *= lam_up
                if lam > lambda_max:
                    return x, LM_SINGULAR, it, np.sqrt(cost)
                continue
            xn = x + delta
            if not _monoplane_residual(X0, uv, dmeas, M, xn, rt):
                cn = np.inf
            else:
                cn = 0.0
                for i in range(n):
                    cn += rt[i] * rt[i]
            small = np.sqrt(np.sum(delta * delta)) <= step_tol * (xnorm + step_tol)
            if cn < cost:
                x = xn
                r[:] = rt
                cost = cn
                lam *= lam_down
                if small:
                    done = True
                break
            lam *= lam_up
            if small or lam > lambda_max:
                done = True
                break
        it += 1
        if done:
            status = LM_CONVERGED
            break
    return x, status, it, np.sqrt(cost)


@njit
def _lm_monoplane_batch(X0s, tracks, dmeas, M, x0s, lambda0, lam_up, lam_down, max_iter,
                        step_tol, grad_tol, lambda_max):
    n_el = X0s.shape[0]
    xs = x0s.copy()
    status = np.zeros(n_el, dtype=np.int64)
    iters = np.zeros(n_el, dtype=np.int64)
    norms = np.zeros(n_el)
    for e in range(n_el):
        x, st, it, nrm = _lm_one(X0s[e], tracks[:, e, :], dmeas[e], M, xs[e].copy(), lambda0, lam_up,
                                 lam_down, max_iter, step_tol, grad_tol, lambda_max)
        xs[e] = x
        status[e] = st
        iters[e] = it
        norms[e] = nrm
    return xs, status, iters, norms


def lm_monoplane_numba(X0s, tracks, dmeas, M, x0s, opts):
    """Solve every electrode's chain; ``x0s`` is ``(n_el, 3 * (N - 1))``."""
    return _lm_monoplane_batch(
        np.ascontiguousarray(X0s, dtype=np.float64),
        np.ascontiguousarray(tracks, dtype=np.float64),
        np.ascontiguousarray(dmeas, dtype=np.float64),
        np.ascontiguousarray(M, dtype=np.float64),
        np.ascontiguousarray(x0s, dtype=np.float64),
        float(opts.lambda0), float(opts.lambda_up), float(opts.lambda_down), int(opts.max_iterations),
        float(opts.step_tol), float(opts.grad_tol), float(opts.lambda_max),
    )
