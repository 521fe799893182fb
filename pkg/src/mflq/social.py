"""Cooperative (team-optimal) synthesis for the mean-field LQ population.

Finite horizon: the individual Riccati equation, the population-average
equation, and the offset are integrated backward jointly, then the mean-field
path runs forward on the same grid.  Infinite horizon: stable-subspace
algebraic roots, closed-form offset for constant forcing, truncated mean-field
path with its steady state.

The decentralized control reads

    u_i(t) = -R^{-1} B^T [ P(t) x_i + K(t) x_bar(t) + s(t) ],   K = Pi - P,

and the centralized benchmark replaces x_bar by the realized average x^(N).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import MeanFieldInfeasibleError
from .model import ModelParams, derived_weights, validate
from .riccati import (
    BLOWUP_CAP,
    build_hamiltonian,
    control_gain_matrix,
    default_grid,
    hermite_midpoints,
    integrate_backward,
    solve_are_allow_degenerate,
)

__all__ = [
    "SocialGains",
    "synth_social_finite",
    "synth_social_infinite",
    "decentralized_social_control",
    "centralized_social_control",
    "adjoint_coefficients",
    "social_law",
    "centralized_law",
    "settle_mean_field",
    "default_infinite_horizon",
]


def _interp(grid: np.ndarray, values: np.ndarray, t: float) -> np.ndarray:
    if t <= grid[0]:
        return values[0]
    if t >= grid[-1]:
        return values[-1]
    k = int(np.searchsorted(grid, t) - 1)
    w = (t - grid[k]) / (grid[k + 1] - grid[k])
    return (1.0 - w) * values[k] + w * values[k + 1]


@dataclass(frozen=True, eq=False)
class SocialGains:
    """Synthesized cooperative gains; paths are time-indexed on ``grid`` for
    the finite horizon and constant matrices for the infinite horizon."""

    horizon: str                    # "finite" | "infinite"
    grid: np.ndarray
    P: np.ndarray                   # (n,n) or (K+1,n,n)
    Pi: np.ndarray
    K: np.ndarray
    s: np.ndarray                   # (n,) or (K+1,n)
    x_bar: np.ndarray               # (K+1,n)
    params: ModelParams
    x_bar_tail: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def _mat(self, M: np.ndarray, t: float) -> np.ndarray:
        return M if M.ndim == 2 else _interp(self.grid, M, t)

    def P_at(self, t: float) -> np.ndarray:
        return self._mat(self.P, t)

    def Pi_at(self, t: float) -> np.ndarray:
        return self._mat(self.Pi, t)

    def K_at(self, t: float) -> np.ndarray:
        return self._mat(self.K, t)

    def s_at(self, t: float) -> np.ndarray:
        return self.s if self.s.ndim == 1 else _interp(self.grid, self.s, t)

    def x_bar_at(self, t: float) -> np.ndarray:
        if t >= self.grid[-1] and self.x_bar_tail is not None:
            return self.x_bar_tail
        return _interp(self.grid, self.x_bar, t)

    def to_dict(self) -> dict:
        d = {
            "horizon": self.horizon,
            "grid": self.grid.tolist(),
            "P": self.P.tolist(),
            "Pi": self.Pi.tolist(),
            "K": self.K.tolist(),
            "s": self.s.tolist(),
            "x_bar": self.x_bar.tolist(),
            "meta": {k: v for k, v in self.meta.items() if not isinstance(v, np.ndarray)},
        }
        if self.x_bar_tail is not None:
            d["x_bar_tail"] = self.x_bar_tail.tolist()
        return d


# ---------------------------------------------------------------------------
# shared forward mean-field machinery
# ---------------------------------------------------------------------------

def _forward_affine(grid, A_of, c_of, x0):
    """RK4 for x' = A(t) x + c(t) where A, c are (value, midpoint) samplers."""
    K = grid.size - 1
    out = np.empty((K + 1, x0.size))
    x = np.array(x0, dtype=float)
    out[0] = x
    for k in range(K):
        h = grid[k + 1] - grid[k]
        A0, Am, A1 = A_of(k)
        c0, cm, c1 = c_of(k)
        k1 = A0 @ x + c0
        k2 = Am @ (x + 0.5 * h * k1) + cm
        k3 = Am @ (x + 0.5 * h * k2) + cm
        k4 = A1 @ (x + h * k3) + c1
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return out


def settle_mean_field(Acl: np.ndarray, forcing: Callable[[float], np.ndarray],
                      constant_forcing: np.ndarray | None, x0: np.ndarray,
                      rho: float, grid: np.ndarray,
                      what: str = "mean-field path") -> tuple[np.ndarray, np.ndarray | None]:
    """Forward path of x' = Acl x + forcing with discounted-growth feasibility.

    Modes of ``Acl`` with real part at or above rho/2 do not decay in the
    discounted norm; when the initial state (relative to the steady state)
    excites one, no admissible path exists and the error names the required
    initial state.  Returns (path on grid, steady-state tail or None).
    """
    n = x0.size
    lam, V = np.linalg.eig(Acl)
    scale = 1.0 + float(np.max(np.abs(lam.real)))
    unstable = lam.real >= 0.5 * rho - 1e-9 * scale
    tail = None
    if constant_forcing is not None:
        x_part = None
        try:
            x_part = np.linalg.solve(Acl, -constant_forcing)
        except np.linalg.LinAlgError:
            pass
        if np.any(unstable):
            if x_part is None:
                raise MeanFieldInfeasibleError(
                    f"{what}: non-decaying closed-loop mode with no steady state; "
                    "no admissible discounted path")
            coeff = np.linalg.solve(V, (x0 - x_part).astype(complex))
            tol_c = 1e-8 * (1.0 + float(np.linalg.norm(x0)) + float(np.linalg.norm(x_part)))
            if np.any(np.abs(coeff[unstable]) > tol_c):
                raise MeanFieldInfeasibleError(
                    f"{what}: infeasible unless the initial mean equals "
                    f"{np.array2string(x_part, precision=10)} "
                    "(a non-decaying closed-loop mode is excited)",
                    required_x0=x_part,
                )
        if x_part is not None:
            tail = x_part

    def A_of(k):
        return Acl, Acl, Acl

    def c_of(k):
        t0, t1 = grid[k], grid[k + 1]
        return forcing(float(t0)), forcing(float(0.5 * (t0 + t1))), forcing(float(t1))

    path = _forward_affine(grid, A_of, c_of, np.asarray(x0, dtype=float))
    if tail is None:
        tail = path[-1]
    return path, tail


def default_infinite_horizon(rho: float, tail_tol: float = 1e-8) -> float:
    """Truncation horizon with discounted tail weight below ``tail_tol``."""
    return float(np.clip(np.log(1.0 / tail_tol) / rho, 20.0, 200.0))


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def synth_social_finite(params: ModelParams, T: float, steps: int | None = None) -> SocialGains:
    """Backward pass for (P, Pi, s) on [0, T] with zero terminal data, then the
    forward mean-field path; all on one RK4 grid."""
    validate(params)
    w = derived_weights(params)
    A, G, Q, rho = params.A, params.G, params.Q, params.rho
    n = params.n
    S = control_gain_matrix(params.B, params.R)
    AG = A + G
    grid = default_grid(T, steps)

    def unpack(y):
        P = y[: n * n].reshape(n, n)
        Pi = y[n * n: 2 * n * n].reshape(n, n)
        s = y[2 * n * n:]
        return P, Pi, s

    def rhs(t, y):
        P, Pi, s = unpack(y)
        dP = rho * P - A.T @ P - P @ A + P @ S @ P - Q
        dPi = rho * Pi - AG.T @ Pi - Pi @ AG + Pi @ S @ Pi - w.Q_hat
        Acl = AG - S @ Pi
        ds = rho * s - Acl.T @ s - (Pi @ params.f_at(t) - w.eta_bar)
        return np.concatenate([dP.ravel(), dPi.ravel(), ds])

    terminal = np.zeros(2 * n * n + n)
    ys = integrate_backward(rhs, terminal, grid, cap=BLOWUP_CAP, what="cooperative Riccati")
    P_path = ys[:, : n * n].reshape(-1, n, n)
    Pi_path = ys[:, n * n: 2 * n * n].reshape(-1, n, n)
    s_path = ys[:, 2 * n * n:]
    P_path = 0.5 * (P_path + np.transpose(P_path, (0, 2, 1)))
    Pi_path = 0.5 * (Pi_path + np.transpose(Pi_path, (0, 2, 1)))
    K_path = Pi_path - P_path

    # forward mean-field pass; midpoint samples via Hermite from exact slopes
    dPi_path = (rho * Pi_path - np.einsum("ij,tjk->tik", AG.T, Pi_path)
                - np.einsum("tij,jk->tik", Pi_path, AG)
                + np.einsum("tij,jk,tkl->til", Pi_path, S, Pi_path) - w.Q_hat)
    Acl_path = AG - np.einsum("ij,tjk->tik", S, Pi_path)
    ds_path = (rho * s_path - np.einsum("tij,tj->ti", np.transpose(Acl_path, (0, 2, 1)), s_path)
               - (np.einsum("tij,tj->ti", Pi_path,
                            np.array([params.f_at(t) for t in grid])) - w.eta_bar))
    Pi_mid = hermite_midpoints(grid, Pi_path, dPi_path)
    s_mid = hermite_midpoints(grid, s_path, ds_path)

    def A_of(k):
        return (AG - S @ Pi_path[k], AG - S @ Pi_mid[k], AG - S @ Pi_path[k + 1])

    def c_of(k):
        t0, t1 = grid[k], grid[k + 1]
        tm = 0.5 * (t0 + t1)
        return (-S @ s_path[k] + params.f_at(t0),
                -S @ s_mid[k] + params.f_at(tm),
                -S @ s_path[k + 1] + params.f_at(t1))

    x_path = _forward_affine(grid, A_of, c_of, params.x_bar0)

    return SocialGains(
        horizon="finite", grid=grid, P=P_path, Pi=Pi_path, K=K_path, s=s_path,
        x_bar=x_path, params=params, meta={"T": float(T)},
    )


def synth_social_infinite(params: ModelParams, T_max: float | None = None,
                          steps: int | None = None, tail_tol: float = 1e-8) -> SocialGains:
    """Algebraic gains plus the truncated mean-field path.

    For constant forcing the offset solves (rho I - Acl^T) s = Pi f - eta_bar
    exactly; a time-varying forcing falls back to backward integration from a
    quasi-static terminal value.
    """
    validate(params)
    w = derived_weights(params)
    A, G, rho = params.A, params.G, params.rho
    n = params.n
    S = control_gain_matrix(params.B, params.R)
    AG = A + G

    P, P_stab, _ = solve_are_allow_degenerate(build_hamiltonian(params, w, "M1"), params.Q)
    Pi, Pi_stab, _ = solve_are_allow_degenerate(build_hamiltonian(params, w, "M2"), w.Q_hat)
    K = Pi - P
    Acl = AG - S @ Pi

    horizon = T_max if T_max is not None else default_infinite_horizon(rho, tail_tol)
    grid = default_grid(horizon, steps)

    if params.constant_forcing:
        fbar = params.f_at(0.0)
        try:
            s = np.linalg.solve(rho * np.eye(n) - Acl.T, Pi @ fbar - w.eta_bar)
        except np.linalg.LinAlgError as exc:
            raise MeanFieldInfeasibleError(
                "offset equation singular: a closed-loop mode sits exactly at the discount rate"
            ) from exc
        s_store = s
        s_fn = lambda t: s
    else:
        from .riccati import solve_linear_backward
        f_term = params.f_at(float(grid[-1]))
        s_T = np.linalg.solve(rho * np.eye(n) - Acl.T, Pi @ f_term - w.eta_bar)
        s_store = solve_linear_backward(
            Acl, rho, lambda t: Pi @ params.f_at(t) - w.eta_bar, s_T, grid)
        s_fn = lambda t: _interp(grid, s_store, t)

    forcing = lambda t: -S @ s_fn(t) + params.f_at(t)
    const = (-S @ s_store + params.f_at(0.0)) if params.constant_forcing else None
    x_path, x_tail = settle_mean_field(Acl, forcing, const, params.x_bar0, rho, grid,
                                       what="cooperative mean-field path")

    return SocialGains(
        horizon="infinite", grid=grid, P=P, Pi=Pi, K=K, s=s_store, x_bar=x_path,
        params=params, x_bar_tail=x_tail,
        meta={
            "T_max": horizon, "tail_tol": tail_tol,
            "P_rho_stabilizing": P_stab, "Pi_rho_stabilizing": Pi_stab,
            "tail_weight": float(np.exp(-rho * horizon)),
        },
    )


# ---------------------------------------------------------------------------
# control evaluation
# ---------------------------------------------------------------------------

def _feedback(params: ModelParams, Pm: np.ndarray, x: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """-R^{-1} B^T (Pm x + offset) for single states or batches (m, n)."""
    RB = np.linalg.solve(params.R, params.B.T)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return -RB @ (Pm @ x + offset)
    return -(x @ Pm.T + offset) @ RB.T


def decentralized_social_control(gains: SocialGains, t: float, x: np.ndarray) -> np.ndarray:
    """u_i = -R^{-1} B^T (P x_i + K x_bar + s); ``x`` may be (n,) or (m, n)."""
    off = gains.K_at(t) @ gains.x_bar_at(t) + gains.s_at(t)
    return _feedback(gains.params, gains.P_at(t), x, off)


def centralized_social_control(gains: SocialGains, t: float, x: np.ndarray,
                               x_avg: np.ndarray) -> np.ndarray:
    """Exact population optimum: the realized average replaces x_bar."""
    off = gains.K_at(t) @ np.asarray(x_avg, dtype=float) + gains.s_at(t)
    return _feedback(gains.params, gains.P_at(t), x, off)


def adjoint_coefficients(gains: SocialGains, N: int, t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Diffusion loadings of the population adjoint processes.

    beta_self = P sigma + K sigma / N (own noise), beta_cross = K sigma / N
    (every other agent's noise); requires a constant sigma.
    """
    if callable(gains.params.sigma):
        raise ValueError("adjoint coefficients are reported for constant sigma only")
    sig = gains.params.sigma_at(t)
    cross = (gains.K_at(t) @ sig) / float(N)
    return gains.P_at(t) @ sig + cross, cross


def social_law(gains: SocialGains):
    """Simulation callable (t, X) -> U for the decentralized control."""
    def law(t, X):
        return decentralized_social_control(gains, t, X)
    law.x_bar_at = gains.x_bar_at
    return law


def centralized_law(gains: SocialGains):
    """Simulation callable using the realized average (exact optimum)."""
    def law(t, X):
        X = np.atleast_2d(X)
        return centralized_social_control(gains, t, X, X.mean(axis=0))
    law.x_bar_at = gains.x_bar_at
    return law
