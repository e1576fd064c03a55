"""Shared test oracles: central finite differences, gradient comparison, and
numerical solvers for the single-state constrained improvement program."""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy import optimize


def fd_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def assert_grads_match(analytic: np.ndarray, numeric: np.ndarray,
                       rtol: float = 1e-4, floor: float = 1e-6) -> None:
    """Relative error < rtol on every coordinate whose magnitude exceeds floor."""
    analytic = np.asarray(analytic).ravel()
    numeric = np.asarray(numeric).ravel()
    assert analytic.shape == numeric.shape
    mask = np.abs(numeric) > floor
    if not mask.any():
        return
    rel = np.abs(analytic[mask] - numeric[mask]) / np.abs(numeric[mask])
    worst = rel.max()
    assert worst < rtol, f"worst relative gradient error {worst:.3e} >= {rtol}"


# -------- single-state constrained improvement: max_p p.q  s.t. KL(p||mu) <= eps

def exp_tilt(mu: np.ndarray, q: np.ndarray, beta: float) -> np.ndarray:
    """The analytic candidate p ~ mu * exp(beta q) (for comparison only)."""
    w = mu * np.exp(beta * (q - q.max()))
    return w / w.sum()


def kl_div(p: np.ndarray, mu: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / mu[mask])))


def solve_improvement_slsqp(mu: np.ndarray, q: np.ndarray, eps: float) -> np.ndarray:
    """Direct numerical solve of the raw constrained program over the simplex.

    SLSQP occasionally stalls depending on the start point, so several starts
    are tried and the best feasible solution wins.
    """
    n = len(mu)
    cons = [
        {"type": "eq", "fun": lambda p: p.sum() - 1.0},
        {"type": "ineq", "fun": lambda p: eps - kl_div(np.maximum(p, 1e-300), mu)},
    ]
    starts = [mu.copy(), np.full(n, 1.0 / n)]
    starts += list(np.random.default_rng(0).dirichlet(np.ones(n), size=3))
    best, best_obj = None, -np.inf
    for x0 in starts:
        res = optimize.minimize(
            lambda p: -float(p @ q), x0, method="SLSQP",
            bounds=[(0.0, 1.0)] * n, constraints=cons,
            options={"ftol": 1e-14, "maxiter": 1000},
        )
        p = np.maximum(res.x, 0.0)
        feasible = abs(p.sum() - 1.0) < 1e-9 and kl_div(p, mu) <= eps + 1e-9
        if feasible and p @ q > best_obj:
            best, best_obj = p / p.sum(), float(p @ q)
    assert best is not None, "no SLSQP start produced a feasible solution"
    return best


def solve_improvement_kkt(mu: np.ndarray, q: np.ndarray, eps: float) -> np.ndarray:
    """Solve the KKT system numerically: stationarity forces an exponential
    family p_b ~ mu * exp(b q); complementary slackness pins b by root-finding
    KL(p_b || mu) = eps."""
    def gap(b: float) -> float:
        return kl_div(exp_tilt(mu, q, b), mu) - eps

    hi = 1.0
    while gap(hi) < 0.0:
        hi *= 2.0
    b = optimize.brentq(gap, 0.0, hi, xtol=1e-14, rtol=8.9e-16)
    return exp_tilt(mu, q, b)
