"""Active-set limited-memory BFGS trust-region method for box constraints."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .common import (
    LMBFGS,
    TRUST_REGION,
    FitResult,
    OptimizerConfig,
    run_guarded,
    stopping,
)

__all__ = [
    "LimitedMemoryOperator",
    "compact_update",
    "active_set",
    "tr_subproblem",
    "steihaug",
    "exact_trust_region",
    "blend_search",
    "lmbfgs_tr",
]


class LimitedMemoryOperator:
    """Compact BFGS matrix ``B = theta I - W M W^T`` with ``W = (Y | theta S)``.

    ``S`` holds the steps and ``Y`` the gradient differences as columns,
    oldest first.
    """

    def __init__(self, n: int, theta: float, S=None, Y=None):
        self.n = n
        self.theta = float(theta)
        self.S = np.zeros((n, 0)) if S is None else np.asarray(S, float)
        self.Y = np.zeros((n, 0)) if Y is None else np.asarray(Y, float)
        self.W = np.zeros((n, 0))
        self.M = np.zeros((0, 0))
        if self.S.shape[1]:
            self._assemble()

    @property
    def size(self) -> int:
        return self.S.shape[1]

    def _assemble(self):
        S, Y, th = self.S, self.Y, self.theta
        SY = S.T @ Y
        D = np.diag(np.diag(SY))
        L = np.tril(SY, -1)
        middle = np.block([[-D, L.T], [L, th * (S.T @ S)]])
        self.M = np.linalg.inv(middle)
        if not np.all(np.isfinite(self.M)):
            raise np.linalg.LinAlgError("singular middle matrix")
        self.W = np.hstack([Y, th * S])

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if not self.size:
            return self.theta * v
        return self.theta * v - self.W @ (self.M @ (self.W.T @ v))

    def columns(self, idx) -> np.ndarray:
        """Columns ``B[:, idx]``."""
        idx = np.asarray(idx, dtype=int)
        cols = np.zeros((self.n, idx.size))
        cols[idx, np.arange(idx.size)] = self.theta
        if self.size:
            cols -= self.W @ (self.M @ self.W[idx].T)
        return cols

    def dense(self) -> np.ndarray:
        return self.columns(np.arange(self.n))


def compact_update(S, Y, theta: float) -> LimitedMemoryOperator:
    """Assemble the compact operator, dropping the oldest pairs while the
    middle matrix is singular."""
    S = np.asarray(S, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if S.ndim == 1:
        S, Y = S[:, None], Y[:, None]
    n = S.shape[0]
    while S.shape[1]:
        try:
            with np.errstate(all="raise"):
                op = LimitedMemoryOperator(n, theta, S, Y)
            cond = np.linalg.cond(np.linalg.inv(op.M)) if op.size else 1.0
            if math.isfinite(cond) and cond < 1e14:
                return op
        except (np.linalg.LinAlgError, FloatingPointError):
            pass
        S, Y = S[:, 1:], Y[:, 1:]
    return LimitedMemoryOperator(n, theta)


def active_set(x, grad, lower, upper, psi: float, c: float, zeta: float):
    """Strongly-active and inactive index sets with ``xi = min(psi, c |g|^zeta)``.

    Returns ``(A, I, xi)`` as integer index arrays plus the threshold.
    """
    x = np.asarray(x, dtype=float)
    gnorm = float(np.linalg.norm(grad))
    xi = min(psi, c * gnorm**zeta) if gnorm > 0 else 0.0
    near = (x <= np.asarray(lower) + xi) | (x >= np.asarray(upper) - xi)
    return np.flatnonzero(near), np.flatnonzero(~near), xi


def _model_value(H, g, d) -> float:
    return float(g @ d + 0.5 * d @ (H @ d))


def steihaug(H, g, radius: float, tol: float = 1e-12, max_iter: int | None = None):
    """Steihaug-Toint truncated CG for ``min g.d + 1/2 d.H d, |d| <= radius``."""
    n = g.size
    d = np.zeros(n)
    r = g.copy()
    gnorm = np.linalg.norm(g)
    if gnorm == 0:
        return d
    p = -r
    rr = r @ r
    for _ in range(max_iter or 2 * n + 10):
        Hp = H @ p
        curv = p @ Hp
        if curv <= 0:
            return d + _to_boundary(d, p, radius) * p
        a = rr / curv
        d_next = d + a * p
        if np.linalg.norm(d_next) >= radius:
            return d + _to_boundary(d, p, radius) * p
        d = d_next
        r = r + a * Hp
        rr_next = r @ r
        if math.sqrt(rr_next) <= tol * gnorm:
            return d
        p = -r + (rr_next / rr) * p
        rr = rr_next
    return d


def _to_boundary(d, p, radius) -> float:
    """Positive ``tau`` with ``|d + tau p| = radius``."""
    a = p @ p
    b = 2 * d @ p
    c = d @ d - radius**2
    return (-b + math.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a)


def exact_trust_region(H, g, radius: float) -> np.ndarray:
    """Global minimiser of ``g.d + 1/2 d.H d`` on the ball, by eigen-decomposition.

    Solves the secular equation ``|d(lam)| = radius`` for the multiplier,
    including the hard case.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    evals, V = np.linalg.eigh(0.5 * (H + H.T))
    gh = V.T @ g
    lam_min = evals[0]
    tiny = 1e-12 * max(1.0, float(np.max(np.abs(evals))))
    low = evals <= lam_min + tiny
    lam0 = max(0.0, -lam_min)

    def step(lam):
        denom = evals + lam
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(gh == 0.0, 0.0, gh / denom)
        return -V @ coef

    if lam_min > tiny:
        d = step(0.0)
        if np.linalg.norm(d) <= radius:
            return d
    if np.linalg.norm(gh[low]) <= 1e-14 * max(1.0, float(np.linalg.norm(g))):
        gh = np.where(low, 0.0, gh)
        d = step(lam0)
        dn = float(np.linalg.norm(d))
        if dn <= radius:
            if lam_min >= -tiny:
                return d  # interior (possibly singular) minimiser
            return d + math.sqrt(radius**2 - dn**2) * V[:, 0]  # hard case

    def phi(lam):
        with np.errstate(divide="ignore"):
            return 1.0 / radius - 1.0 / np.linalg.norm(step(lam))

    hi = lam0 + float(np.linalg.norm(g)) / radius
    lam = brentq(phi, lam0, hi, xtol=1e-15 * max(1.0, hi), maxiter=500)
    return step(lam)


def tr_subproblem(B_I, B_A, d_A, grad, radius: float, exact_dim: int = 64) -> np.ndarray:
    """Reduced trust-region step on the inactive coordinates.

    Minimises ``d.[B_I^T (g + B_A d_A)] + 1/2 d.B_I^T B_I d`` over
    ``|d| <= radius``. Small problems are solved exactly, larger ones by
    truncated CG.
    """
    B_I = np.asarray(B_I, dtype=float)
    if B_I.shape[1] == 0:
        return np.zeros(0)
    rhs = np.asarray(grad, float)
    if B_A is not None and np.size(d_A):
        rhs = rhs + np.asarray(B_A, float) @ np.asarray(d_A, float)
    g_lin = B_I.T @ rhs
    H = B_I.T @ B_I
    if B_I.shape[1] <= exact_dim:
        d = exact_trust_region(H, g_lin, radius)
    else:
        d = steihaug(H, g_lin, radius)
    # never return a step that increases the model
    if _model_value(H, g_lin, d) > 0:
        return np.zeros_like(d)
    nd = np.linalg.norm(d)
    if nd > radius:
        d *= radius / nd
    return d


def blend_search(fun, x, d_G, d_tr, tol: float = 1e-3) -> tuple[float, float]:
    """``t`` in ``[0, 1]`` approximately minimising ``fun(x + t d_G + (1-t) d_tr)``.

    Bounded Brent search (golden section with parabolic steps) to ``tol`` in
    ``t``, compared against both endpoints. Returns ``(t, value)``.
    """
    if np.allclose(d_G, d_tr, rtol=0.0, atol=1e-15 * max(1.0, np.linalg.norm(x))):
        return 0.0, fun(x + d_tr)
    cache = {}

    def phi(t):
        t = float(t)
        if t not in cache:
            cache[t] = fun(x + t * d_G + (1.0 - t) * d_tr)
        return cache[t]

    res = minimize_scalar(phi, bounds=(0.0, 1.0), method="bounded", options={"xatol": tol})
    candidates = [(phi(0.0), 0.0), (phi(1.0), 1.0), (phi(res.x), float(res.x))]
    best = min(candidates, key=lambda c: c[0])
    return best[1], best[0]


def _lmbfgs_body(view, hist, cfg: OptimizerConfig) -> str:
    lo, hi = view.lower, view.upper
    psi = cfg.resolve_psi(lo, hi)
    x = view.x0
    n = x.size
    j = view.value(x)
    g = view.gradient(x)
    hist.record(x, j, view.norm_r(g))
    S_list: list[np.ndarray] = []
    Y_list: list[np.ndarray] = []
    op = LimitedMemoryOperator(n, cfg.theta_bar)
    radius = cfg.delta0
    while True:
        radius = min(cfg.delta_max, max(cfg.delta_min, radius))
        r_hat = radius
        A, I, xi = active_set(x, g, lo, hi, psi, cfg.c, cfg.zeta)
        gnorm = float(np.linalg.norm(g))
        kappa = min(1.0, cfg.delta_max / gnorm, cfg.omega / gnorm) if gnorm > 0 else 1.0
        B_A = op.columns(A)
        B_I = op.columns(I)
        lower_act = x[A] <= lo[A] + xi
        v = np.where(lower_act, lo[A] - x[A], hi[A] - x[A])
        vnorm = float(np.linalg.norm(v))
        n_reject = 0
        while True:
            d_A = v * (min(1.0, r_hat / vnorm) if vnorm > 0 else 0.0)
            d_I = tr_subproblem(B_I, B_A, d_A, g, r_hat, cfg.exact_tr_dim)
            step = np.zeros(n)
            step[A] = d_A
            step[I] = d_I
            d_tr = view.project(x + step) - x
            d_G = view.project(x - (r_hat / cfg.delta_max) * kappa * g) - x
            if not np.any(d_G) and not np.any(d_tr):
                return "stationary"
            t, j_new = blend_search(view.value, x, d_G, d_tr, cfg.blend_tol)
            d = t * d_G + (1.0 - t) * d_tr
            pred = float(g @ d + 0.5 * d @ op.matvec(d))
            ratio = (j_new - j) / pred if pred < 0 else -math.inf
            sufficient = j - j_new >= -cfg.sigma * float(g @ d_G)
            if sufficient and ratio >= cfg.tau_accept:
                break
            n_reject += 1
            r_hat *= cfg.nu_dec
            if r_hat < cfg.delta_min:
                return "radius_collapse"
        x_new = x + d
        g_new = view.gradient(x_new)
        y = g_new - g
        curvature = float(d @ y)
        stored = curvature > 1e-12 * np.linalg.norm(d) * np.linalg.norm(y)
        if stored:
            S_list.append(d)
            Y_list.append(y)
            if len(S_list) > cfg.memory:
                S_list.pop(0)
                Y_list.pop(0)
            op = compact_update(np.array(S_list).T, np.array(Y_list).T, cfg.theta_bar)
            if op.size < len(S_list):
                S_list = S_list[len(S_list) - op.size :]
                Y_list = Y_list[len(Y_list) - op.size :]
        hist.record(
            x_new, j_new, view.norm_r(g_new),
            radius=radius, radius_used=r_hat, t=t, ratio=ratio, pred=pred,
            sufficient_rhs=-cfg.sigma * float(g @ d_G), decrease=j - j_new,
            rejections=n_reject, pair_stored=bool(stored), curvature=curvature,
            n_active=int(A.size),
        )
        radius = cfg.nu_inc * r_hat if ratio >= cfg.tau_inc else r_hat
        x, j, g = x_new, j_new, g_new
        decision = stopping(hist, cfg, TRUST_REGION)
        if decision.stop:
            return decision.reason


def lmbfgs_tr(problem, cfg: OptimizerConfig | None = None) -> FitResult:
    """Active-set limited-memory BFGS trust-region method.

    Steps blend a projected gradient direction with a projected trust-region
    direction built from the compact BFGS model; acceptance needs sufficient
    decrease and an actual/predicted ratio of at least ``tau_accept``.
    """
    return run_guarded(
        _lmbfgs_body, problem, cfg or OptimizerConfig(LMBFGS, it_max=100), LMBFGS
    )
