"""First-order methods: projected gradient, FISTA and nmAPG with backtracking."""

from __future__ import annotations

import numpy as np

from .common import (
    FISTA,
    NMAPG,
    PGD,
    FitResult,
    OptimizerConfig,
    run_guarded,
    stopping,
)

__all__ = ["pgd", "fista", "nmapg", "surrogate_Q", "prox_step", "bb_stepsize"]


def prox_step(omega, L: float, grad, lower, upper) -> np.ndarray:
    """``P_L(omega) = proj(omega - grad / L)``."""
    if L <= 0:
        raise ValueError("L must be positive")
    return np.clip(np.asarray(omega) - np.asarray(grad) / L, lower, upper)


def surrogate_Q(alpha, omega, L: float, j_omega: float, grad_omega) -> float:
    """Quadratic upper model of ``j`` around ``omega`` (feasible points)."""
    diff = np.asarray(alpha) - np.asarray(omega)
    return float(j_omega + diff @ grad_omega + 0.5 * L * (diff @ diff))


def bb_stepsize(s, r, l_min: float, l_max: float) -> tuple[float, bool]:
    """Barzilai-Borwein curvature ``s.r / s.s`` clipped to ``[l_min, l_max]``.

    Returns ``(L, degenerate)``; ``degenerate`` is set (and ``L = l_min``)
    when ``s = 0``.
    """
    s = np.asarray(s, dtype=float)
    ss = float(s @ s)
    if ss == 0.0:
        return l_min, True
    return float(np.clip(float(s @ np.asarray(r, float)) / ss, l_min, l_max)), False


# --------------------------------------------------------------------------


def _pgd_body(view, hist, cfg: OptimizerConfig) -> str:
    x = view.x0
    j = view.value(x)
    g = view.gradient(x)
    hist.record(x, j, view.norm_r(g))
    step = cfg.step0
    while True:
        for i in range(cfg.max_backtracks + 1):
            x_new = view.project(x - step * g)
            j_new = view.value(x_new)
            if j_new <= j + cfg.armijo * float(g @ (x_new - x)):
                break
            step *= 0.5
        else:
            return "backtrack_limit"
        g_new = view.gradient(x_new)
        hist.record(x_new, j_new, view.norm_r(g_new), step=step, backtracks=i)
        x, j, g = x_new, j_new, g_new
        decision = stopping(hist, cfg)
        if decision.stop:
            return decision.reason
        step *= cfg.step_growth


def pgd(problem, cfg: OptimizerConfig | None = None) -> FitResult:
    """Projected gradient descent with Armijo backtracking.

    The trial step starts from the last accepted one (times ``step_growth``)
    and is halved until ``j(x+) <= j(x) + armijo * g.(x+ - x)``.
    """
    return run_guarded(_pgd_body, problem, cfg or OptimizerConfig(PGD), PGD)


def _fista_body(view, hist, cfg: OptimizerConfig) -> str:
    x = view.x0
    j = view.value(x)
    hist.record(x, j)
    omega = x.copy()
    theta = 1.0
    L = cfg.L0
    k = 0
    while True:
        j_w = view.value(omega)
        g_w = view.gradient(omega)
        for i in range(cfg.max_backtracks + 1):
            trial_L = L * cfg.eta**i
            x_new = view.project(omega - g_w / trial_L)
            j_new = view.value(x_new)
            q_val = surrogate_Q(x_new, omega, trial_L, j_w, g_w)
            if j_new <= q_val:
                break
        else:
            return "backtrack_limit"
        L = trial_L
        theta_next = 1.0 + k / cfg.nu
        omega = x_new + ((theta - 1.0) / theta_next) * (x_new - x)
        hist.record(x_new, j_new, view.norm_r(g_w), L=L, backtracks=i, j_new=j_new, Q=q_val)
        x, theta = x_new, theta_next
        k += 1
        decision = stopping(hist, cfg)
        if decision.stop:
            return decision.reason


def fista(problem, cfg: OptimizerConfig | None = None) -> FitResult:
    """FISTA with backtracking on the Lipschitz estimate.

    ``L`` never decreases; the inertia follows ``theta_{k+1} = 1 + k / nu``.
    The objective may go up, so the best iterate is reported separately.
    Gradient norms are recorded at the extrapolated points where they are
    computed.
    """
    return run_guarded(_fista_body, problem, cfg or OptimizerConfig(FISTA), FISTA)


def _backtrack(view, start, g_start, L_trial, threshold, cfg):
    """Smallest ``i`` with ``j(P_L(start)) <= threshold - delta |P_L - start|^2``."""
    for i in range(cfg.max_backtracks + 1):
        L = L_trial * cfg.eta**i
        z = view.project(start - g_start / L)
        jz = view.value(z)
        d = z - start
        if jz <= threshold - cfg.delta * float(d @ d):
            return z, jz, L, i
    return None


def _nmapg_body(view, hist, cfg: OptimizerConfig) -> str:
    x = view.x0
    j = view.value(x)
    g_x = None
    hist.record(x, j)
    x_prev = x.copy()
    omega = x.copy()
    nu_prev = x.copy()
    g_nu_prev = None
    theta_prev, theta = 0.0, 1.0
    c = j
    lam = 1.0
    L_last = 1.0
    while True:
        nu = (
            x
            + (theta_prev / theta) * (omega - x)
            + ((theta_prev - 1.0) / theta) * (x - x_prev)
        )
        g_nu = view.gradient(nu)
        j_nu = view.value(nu)
        if g_nu_prev is None:
            L_bb, degenerate = cfg.l_min, True
        else:
            L_bb, degenerate = bb_stepsize(nu - nu_prev, g_nu - g_nu_prev, cfg.l_min, cfg.l_max)
        if degenerate:
            L_bb = L_last
        found = _backtrack(view, nu, g_nu, L_bb, max(c, j_nu), cfg)
        if found is None:
            return "backtrack_limit"
        omega, j_omega, L_used, n_bt = found
        d = omega - nu
        info = {"c": c, "j_nu": j_nu, "L": L_used, "backtracks": n_bt}
        if j_omega <= c - cfg.delta * float(d @ d):
            x_new, j_new = omega, j_omega
            info["branch"] = "extrapolated"
        else:
            if g_x is None:
                g_x = view.gradient(x)
            if g_nu_prev is None:
                L_c, degenerate = cfg.l_min, True
            else:
                L_c, degenerate = bb_stepsize(
                    x - nu_prev, g_x - g_nu_prev, cfg.l_min, cfg.l_max
                )
            if degenerate:
                L_c = L_used
            found = _backtrack(view, x, g_x, L_c, c, cfg)
            if found is None:
                return "backtrack_limit"
            xi, j_xi, L_c, _ = found
            if j_omega <= j_xi:
                x_new, j_new = omega, j_omega
                info["branch"] = "max_test"
            else:
                x_new, j_new = xi, j_xi
                info["branch"] = "correction"
            L_used = L_c if info["branch"] == "correction" else L_used
        L_last = L_used
        theta_prev, theta = theta, 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta**2))
        lam_next = cfg.mu * lam + 1.0
        c_next = (cfg.mu * lam * c + j_new) / lam_next
        info.update(j_new=j_new, c_next=c_next)
        nu_prev, g_nu_prev = nu, g_nu
        x_prev, x = x, x_new
        g_x = None
        lam, c = lam_next, c_next
        hist.record(x, j_new, view.norm_r(g_nu), **info)
        decision = stopping(hist, cfg)
        if decision.stop:
            return decision.reason


def nmapg(problem, cfg: OptimizerConfig | None = None) -> FitResult:
    """Nonmonotone accelerated proximal gradient with Barzilai-Borwein trial steps.

    When the Barzilai-Borwein quotient is undefined (first iteration, or a
    zero displacement) the last accepted ``L`` is reused, starting from 1.
    """
    return run_guarded(_nmapg_body, problem, cfg or OptimizerConfig(NMAPG), NMAPG)
