"""Two-view triangulation and single-view displacement recovery.

The monoplane problem anchors each electrode at its a priori position and
solves for the chain of 3-D displacements that reproduces the electrode's
2-D track in one view, constrained also by the measured pixel distance
between consecutive detections.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _backend, kernels
from .camera import Extrinsics, ProjectionMatrix, Variant, project
from .errors import (
    CountMismatch, DegenerateProjection, IllConditioned, InvalidConfig, NonPositiveDepth,
    SingularNormalEquations, TooFewFrames,
)
from .simulate import RmsReport, rms3d_report

COND_LIMIT = 1e10
SUPPORTED_FRAMES = (3, 6)


# --- triangulation -----------------------------------------------------------

@dataclass(frozen=True)
class Triangulation:
    points: np.ndarray
    reprojection_px: np.ndarray
    condition: np.ndarray


def _require_full(*Ps: ProjectionMatrix) -> None:
    for P in Ps:
        if P.variant is not Variant.FULL:
            raise InvalidConfig(f"a full perspective projection is required, got {P.variant.value}")


def _triangulate_one(MA, MB, ma, mb):
    rows = np.array([
        ma[0] * MA[2] - MA[0],
        ma[1] * MA[2] - MA[1],
        mb[0] * MB[2] - MB[0],
        mb[1] * MB[2] - MB[1],
    ])
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    A, b = rows[:, :3], -rows[:, 3]
    cond = np.linalg.cond(A)
    if not cond <= COND_LIMIT:
        raise IllConditioned(f"projection rays are nearly parallel (condition number {cond:.3g})")
    X = np.linalg.lstsq(A, b, rcond=None)[0]
    return X, cond


def triangulate(P_A: ProjectionMatrix, P_B: ProjectionMatrix, m_A, m_B) -> Triangulation:
    """Linear least squares over the four projection equations per point.

    ``m_A`` / ``m_B`` are ``(2,)`` or ``(n, 2)`` pixel coordinates. The
    reported reprojection error is the RMS over both views in pixels.
    """
    _require_full(P_A, P_B)
    ma = np.atleast_2d(np.asarray(m_A, dtype=float))
    mb = np.atleast_2d(np.asarray(m_B, dtype=float))
    if ma.shape != mb.shape or ma.shape[1] != 2:
        raise CountMismatch(f"view A has {ma.shape[0]} points, view B has {mb.shape[0]}")
    pts = np.empty((ma.shape[0], 3))
    conds = np.empty(ma.shape[0])
    for i in range(ma.shape[0]):
        pts[i], conds[i] = _triangulate_one(P_A.M, P_B.M, ma[i], mb[i])
    ra = project(P_A, pts) - ma
    rb = project(P_B, pts) - mb
    reproj = np.sqrt((np.sum(ra ** 2, axis=1) + np.sum(rb ** 2, axis=1)) / 2.0)
    return Triangulation(pts, reproj, conds)


def to_camera_frame(points_world, extr: Extrinsics) -> np.ndarray:
    return np.asarray(points_world, dtype=float) @ extr.R.T + extr.t


def from_camera_frame(points_cam, extr: Extrinsics) -> np.ndarray:
    return (np.asarray(points_cam, dtype=float) - extr.t) @ extr.R


# --- a priori model and options ----------------------------------------------

class AprioriSource(str, Enum):
    BIPLANE = "biplane"
    EXTERNAL = "external"


@dataclass(frozen=True, eq=False)
class AprioriModel:
    """Electrode positions at t=0, in the reconstructing camera's frame."""

    points0: np.ndarray
    source: AprioriSource = AprioriSource.BIPLANE

    def __post_init__(self):
        pts = np.array(self.points0, dtype=float).reshape(-1, 3)
        if np.any(pts[:, 2] <= 0):
            raise NonPositiveDepth("a priori points must lie in front of the source (Z > 0)")
        pts.setflags(write=False)
        object.__setattr__(self, "points0", pts)
        object.__setattr__(self, "source", AprioriSource(self.source))

    @property
    def n_electrodes(self) -> int:
        return self.points0.shape[0]


@dataclass(frozen=True)
class LmOptions:
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    max_iterations: int = 200
    step_tol: float = 1e-10
    grad_tol: float = 1e-10
    lambda_max: float = 1e16

    def __post_init__(self):
        if min(self.lambda0, self.step_tol, self.grad_tol, self.lambda_max) <= 0 or self.max_iterations < 1:
            raise InvalidConfig("LM options must be positive")
        if not (self.lambda_up > 1.0 and 0.0 < self.lambda_down < 1.0):
            raise InvalidConfig("LM needs lambda_up > 1 and 0 < lambda_down < 1")


# --- residuals ---------------------------------------------------------------

def _check_track(apriori: AprioriModel, track) -> np.ndarray:
    track = np.asarray(track, dtype=float)
    if track.ndim == 2:
        track = track[:, None, :]
    if track.ndim != 3 or track.shape[2] != 2:
        raise CountMismatch("track must have shape (n_frames, n_electrodes, 2)")
    if track.shape[1] != apriori.n_electrodes:
        raise CountMismatch(f"track has {track.shape[1]} electrodes, a priori model {apriori.n_electrodes}")
    return track


def measured_distances(track) -> np.ndarray:
    """``(n_electrodes, n_frames - 1)`` pixel distances between consecutive detections."""
    track = np.asarray(track, dtype=float)
    return np.linalg.norm(np.diff(track, axis=0), axis=2).T


def electrode_residuals(X0, uv, dmeas, M, x) -> np.ndarray:
    """Residuals ``[du, dv, dd]`` per frame pair for one electrode."""
    X0 = np.asarray(X0, dtype=float)
    D = np.asarray(x, dtype=float).reshape(-1, 3)
    pts = np.vstack([X0, X0 + np.cumsum(D, axis=0)])
    h = pts @ M[:, :3].T + M[:, 3]
    if np.any(np.abs(h[:, 2]) < 1e-12):
        raise DegenerateProjection("point projects to infinity (|w| < 1e-12)")
    est = h[:, :2] / h[:, 2:3]
    du = est[1:] - uv[1:]
    dd = np.linalg.norm(np.diff(est, axis=0), axis=1) - dmeas
    return np.column_stack([du, dd]).ravel()


def assemble_residuals(apriori: AprioriModel, track, P: ProjectionMatrix, x) -> np.ndarray:
    """Full residual vector ordered frame-major, then electrode, then ``[u, v, d]``.

    ``x`` holds the displacements with shape ``(n_electrodes, 3 * (N - 1))``.
    """
    _require_full(P)
    track = _check_track(apriori, track)
    n_frames, n_el = track.shape[:2]
    x = np.asarray(x, dtype=float).reshape(n_el, 3 * (n_frames - 1))
    dm = measured_distances(track)
    per = np.stack([
        electrode_residuals(apriori.points0[e], track[:, e], dm[e], P.M, x[e]).reshape(n_frames - 1, 3)
        for e in range(n_el)
    ])
    return per.transpose(1, 0, 2).ravel()


def fd_jacobian(fn, x, r0=None) -> np.ndarray:
    """Forward differences with step ``max(1e-6, 1e-6 |x_j|)``."""
    x = np.array(x, dtype=float)
    r0 = fn(x) if r0 is None else r0
    J = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = max(1e-6, 1e-6 * abs(x[j]))
        xj = x[j]
        x[j] = xj + h
        J[:, j] = (fn(x) - r0) / h
        x[j] = xj
    return J


# --- Levenberg-Marquardt -----------------------------------------------------

@dataclass
class LmResult:
    x: np.ndarray
    converged: bool
    iterations: int
    final_norm: float


def _spd_solve(A, b):
    """Cholesky solve with the same pivot floor as the compiled kernel."""
    scale = float(np.max(np.abs(np.diag(A)))) if A.size else 0.0
    tiny = 1e-14 * scale if scale > 0 else 1e-300
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.diag(L) ** 2 <= tiny):
        return None
    y = np.linalg.solve(L, b)
    x = np.linalg.solve(L.T, y)
    return x if np.all(np.isfinite(x)) else None


def _cost(fn, x):
    try:
        r = fn(x)
    except DegenerateProjection:
        return None, np.inf
    return r, float(r @ r)


def levenberg_marquardt(residual_fn, x0, opts: LmOptions = LmOptions()) -> LmResult:
    """Minimise ``||r(x)||^2`` with Marquardt's diagonal damping.

    Each step solves ``(J^T J + lambda diag(J^T J)) delta = -J^T r``. The
    loop stops when the gradient or the step becomes negligible, or after
    ``max_iterations``.
    """
    x = np.array(x0, dtype=float)
    r = residual_fn(x)
    cost = float(r @ r)
    lam = opts.lambda0
    it = 0
    converged = False
    while it < opts.max_iterations:
        J = fd_jacobian(residual_fn, x, r)
        g = J.T @ r
        if np.max(np.abs(g), initial=0.0) <= opts.grad_tol:
            converged = True
            break
        A = J.T @ J
        xnorm = float(np.linalg.norm(x))
        done = False
        while True:
            delta = _spd_solve(A + lam * np.diag(np.diag(A)), -g)
            if delta is None:
                lam *= opts.lambda_up
                if lam > opts.lambda_max:
                    raise SingularNormalEquations(f"damped normal equations singular at lambda={lam:.3g}")
                continue
            xn = x + delta
            rn, cn = _cost(residual_fn, xn)
            small = np.linalg.norm(delta) <= opts.step_tol * (xnorm + opts.step_tol)
            if cn < cost:
                x, r, cost = xn, rn, cn
                lam *= opts.lambda_down
                done = bool(small)
                break
            lam *= opts.lambda_up
            if small or lam > opts.lambda_max:
                done = True
                break
        it += 1
        if done:
            converged = True
            break
    return LmResult(x, converged, it, float(np.sqrt(cost)))


# --- monoplane ---------------------------------------------------------------

def _backproject(M, uv, depth):
    """Points on the rays through ``uv`` whose projective depth ``w`` is ``depth``."""
    uv = np.atleast_2d(uv)
    depth = np.broadcast_to(np.asarray(depth, dtype=float), (uv.shape[0],))
    rhs = np.column_stack([uv * depth[:, None], depth]) - M[:, 3]
    return np.linalg.solve(M[:, :3], rhs.T).T


def _depth(M, X):
    return np.asarray(X, dtype=float) @ M[2, :3] + M[2, 3]


INIT_MODES = ("parallel", "ray")


def init_displacements(track, apriori: AprioriModel, P: ProjectionMatrix, dz_guess_mm=1.0,
                       mode: str = "parallel") -> np.ndarray:
    """Starting displacements, ``(n_electrodes, 3 * (N - 1))``.

    ``parallel`` back-projects the pixel motion at the a priori depth and
    adds ``dz_guess_mm`` along the optical axis for every pair. ``ray``
    places each frame's guess on that frame's viewing ray, at the a priori
    depth plus ``dz_guess_mm`` per elapsed frame, so the starting point
    already reprojects onto the measured track.

    ``dz_guess_mm`` is a scalar or an ``(n_electrodes, N - 1)`` array.
    """
    if mode not in INIT_MODES:
        raise InvalidConfig(f"init mode must be one of {INIT_MODES}")
    _require_full(P)
    track = _check_track(apriori, track)
    n_frames, n_el = track.shape[:2]
    if n_frames < 2:
        raise TooFewFrames("need at least two frames to form a displacement")
    dz = np.broadcast_to(np.asarray(dz_guess_mm, dtype=float), (n_el, n_frames - 1))
    M = P.M
    out = np.empty((n_el, n_frames - 1, 3))
    for e in range(n_el):
        X0 = apriori.points0[e]
        w0 = _depth(M, X0)
        if mode == "parallel":
            flat = _backproject(M, track[:, e], w0)
            step = np.diff(flat, axis=0)
            # move along the optical axis by dz
            axis = M[2, :3] / np.linalg.norm(M[2, :3]) ** 2
            out[e] = step + dz[e][:, None] * axis
        else:
            depths = w0 + np.cumsum(dz[e])
            pts = _backproject(M, track[1:, e], depths)
            out[e] = np.diff(np.vstack([X0, pts]), axis=0)
    return out.reshape(n_el, -1)


@dataclass
class MonoplaneSolution:
    positions: np.ndarray  # (n_frames, n_electrodes, 3)
    displacements: np.ndarray  # (n_electrodes, n_frames - 1, 3)
    residual_norm: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    status: np.ndarray
    frames_warning: bool = False
    rms: RmsReport | None = None
    backend: str = field(default="numpy")

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]


def _solve_numpy(X0s, track, dmeas, M, x0s, opts):
    n_el = X0s.shape[0]
    xs = np.array(x0s, dtype=float)
    status = np.zeros(n_el, dtype=np.int64)
    iters = np.zeros(n_el, dtype=np.int64)
    norms = np.zeros(n_el)
    for e in range(n_el):
        fn = lambda x, e=e: electrode_residuals(X0s[e], track[:, e], dmeas[e], M, x)
        try:
            res = levenberg_marquardt(fn, xs[e], opts)
        except SingularNormalEquations:
            status[e], norms[e] = kernels.LM_SINGULAR, np.nan
            continue
        except DegenerateProjection:
            status[e], norms[e] = kernels.LM_DEGENERATE, np.inf
            continue
        xs[e] = res.x
        status[e] = kernels.LM_CONVERGED if res.converged else kernels.LM_MAX_ITER
        iters[e] = res.iterations
        norms[e] = res.final_norm
    return xs, status, iters, norms


def monoplane_reconstruct(apriori: AprioriModel, track, P: ProjectionMatrix, dz_init_mm=1.0,
                          opts: LmOptions = LmOptions(), init: str = "ray", truth=None,
                          use_numba: bool | None = None) -> MonoplaneSolution:
    """Recover every electrode's positions in frames ``1..N-1`` from one view.

    ``track`` is ``(N, n_electrodes, 2)``; frame 0 of the result is the a
    priori model itself. Electrodes are solved independently, and one that
    fails is reported through ``status`` while the others are kept.
    ``truth`` (``(N, n_electrodes, 3)`` in the same frame) adds an RMS
    report over frames ``1..N-1``.
    """
    _require_full(P)
    track = _check_track(apriori, track)
    n_frames, n_el = track.shape[:2]
    if n_frames < SUPPORTED_FRAMES[0]:
        raise TooFewFrames(f"monoplane reconstruction needs at least {SUPPORTED_FRAMES[0]} frames, got {n_frames}")
    x0s = init_displacements(track, apriori, P, dz_init_mm, init)
    dmeas = measured_distances(track)
    use_numba = _backend.USE_NUMBA if use_numba is None else (use_numba and _backend.NUMBA_AVAILABLE)
    solver = kernels.lm_monoplane_numba if use_numba else _solve_numpy
    xs, status, iters, norms = solver(apriori.points0, track, dmeas, P.M, x0s, opts)

    disp = np.asarray(xs).reshape(n_el, n_frames - 1, 3)
    positions = np.empty((n_frames, n_el, 3))
    positions[0] = apriori.points0
    positions[1:] = apriori.points0[None] + np.cumsum(disp, axis=1).transpose(1, 0, 2)
    sol = MonoplaneSolution(
        positions, disp, np.asarray(norms, dtype=float), np.asarray(iters), np.asarray(status) == kernels.LM_CONVERGED,
        np.asarray(status), n_frames > SUPPORTED_FRAMES[1], backend="numba" if use_numba else "numpy",
    )
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        sol.rms = rms3d_report(list(positions[1:]), list(truth[1:n_frames]))
    return sol


def select_diastolic_frame(seq) -> int:
    """Index ``i >= 1`` with the smallest RMS difference to frame ``i - 1``."""
    frames = [np.asarray(f, dtype=float) for f in seq]
    if len(frames) < 2:
        raise TooFewFrames("need at least two frames")
    rms = [np.sqrt(np.mean((frames[i] - frames[i - 1]) ** 2)) for i in range(1, len(frames))]
    return int(np.argmin(rms)) + 1
