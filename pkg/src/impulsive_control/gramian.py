"""Controllability Gramians, resolvent solves and the strong-decay diagnostic.

All four operators are pieces of ``W = L L*`` where ``L`` maps the controls
``(u, v_1, ..., v_p)`` to their contribution to the terminal state:

* ``gamma``        continuous control on the last subinterval ``(t_p, b]``
* ``gamma_tilde``  the last impulse control ``v_p``
* ``theta``        continuous control on the earlier subintervals
* ``theta_tilde``  the earlier impulse controls ``v_1 .. v_{p-1}``
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .operators import ImpulsiveSystem, downstream_maps
from .quadrature import QuadratureGrid

__all__ = [
    "GramianSet",
    "A0Report",
    "assemble",
    "input_to_terminal_matrix",
    "resolvent_solve",
    "a0_diagnostic",
    "interval_kernels",
]


@dataclass(frozen=True, eq=False)
class GramianSet:
    gamma: np.ndarray
    gamma_tilde: np.ndarray
    theta: np.ndarray
    theta_tilde: np.ndarray
    weights: np.ndarray
    _factors: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    @property
    def total(self) -> np.ndarray:
        """``W = gamma + gamma_tilde + theta + theta_tilde``."""
        return self.gamma + self.gamma_tilde + self.theta + self.theta_tilde

    @property
    def parts(self) -> dict:
        return {
            "Gamma": self.gamma,
            "Gamma_tilde": self.gamma_tilde,
            "Theta": self.theta,
            "Theta_tilde": self.theta_tilde,
        }

    def symmetric_form(self, M) -> np.ndarray:
        """``G^(1/2) M G^(-1/2)``: symmetric exactly when ``M`` is self-adjoint in ``H``."""
        r = np.sqrt(self.weights)
        return (r[:, None] * np.asarray(M)) / r[None, :]

    def eigenvalues(self, M=None) -> np.ndarray:
        M = self.total if M is None else M
        S = self.symmetric_form(M)
        return np.linalg.eigvalsh((S + S.T) / 2)

    def norm(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.sqrt(np.sum(self.weights * x * x)))

    def factor(self, alpha):
        """Cholesky factor of ``G (alpha I + W)``, cached per ``alpha``."""
        alpha = float(alpha)
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        fac = self._factors.get(alpha)
        if fac is None:
            A = _metric_system(self.total, alpha, self.weights)
            fac = la.cho_factor(A, lower=True, check_finite=True)
            with self._lock:
                self._factors[alpha] = fac
        return fac

    def solve(self, alpha, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        return la.cho_solve(self.factor(alpha), self.weights * rhs)


def _metric_system(W, alpha, weights):
    A = weights[:, None] * (alpha * np.eye(len(weights)) + W)
    return (A + A.T) / 2


def _sandwich(model, X, Y):
    """``X Y X*`` for ``X, Y : H -> H`` with ``Y`` built from an input map product."""
    return X @ Y @ model.adjoint(X)


def interval_kernels(system, grid):
    """Per subinterval ``k``: ``(K_q, w_q)`` with ``K_q`` mapping a state-space
    forcing at node ``s_q`` to its contribution to the state at ``t_{k+1}``,
    i.e. ``S(t_{k+1} - s_q)``."""
    model = system.model
    out = []
    for k in range(grid.n_intervals):
        end = grid.breakpoints[k + 1]
        ts, ws = grid.nodes(k).ravel(), grid.weights(k).ravel()
        out.append(([model.matrix(end - s) for s in ts], ws))
    return out


def _interval_gramian(model, kernels, weights, Omega):
    OO = Omega @ model.input_adjoint(Omega)
    total = np.zeros((model.dim, model.dim))
    for K, w in zip(kernels, weights):
        total += w * _sandwich(model, K, OO)
    return total


def assemble(system: ImpulsiveSystem, grid: QuadratureGrid | None = None) -> GramianSet:
    """Build the four controllability operators with the grid's quadrature.

    With no impulses only ``gamma`` is nonzero.
    """
    if grid is None:
        grid = QuadratureGrid.for_system(system)
    elif not grid.matches(system.breakpoints):
        raise ValueError("quadrature grid inconsistent with impulse schedule")
    model = system.model
    d, p = system.dim, system.n_impulses
    E = downstream_maps(system)
    kernels = interval_kernels(system, grid)
    Omega = system.input_map

    gamma = _interval_gramian(model, kernels[p][0], kernels[p][1], Omega)
    theta = np.zeros((d, d))
    for i in range(1, p + 1):
        inner = _interval_gramian(model, kernels[i - 1][0], kernels[i - 1][1], Omega)
        X = E[i] @ (np.eye(d) + system.jumps[i - 1])
        theta += _sandwich(model, X, inner)

    def impulse_term(k):
        D = system.impulse_inputs[k - 1]
        return _sandwich(model, E[k], D @ model.input_adjoint(D))

    gamma_tilde = impulse_term(p) if p else np.zeros((d, d))
    theta_tilde = np.zeros((d, d))
    for k in range(1, p):
        theta_tilde += impulse_term(k)
    return GramianSet(gamma, gamma_tilde, theta, theta_tilde, model.weights.copy())


def input_to_terminal_matrix(system: ImpulsiveSystem, grid: QuadratureGrid | None = None):
    """Explicit discretized input-to-terminal map ``L``.

    Columns are ``sqrt(w_q) K(s_q) Omega`` for every node and then
    ``E_k D_k`` for every impulse, so ``L @ L.T @ diag(weights)`` is the
    Hilbert-space product ``L L*``.
    """
    if grid is None:
        grid = QuadratureGrid.for_system(system)
    d, p = system.dim, system.n_impulses
    E = downstream_maps(system)
    kernels = interval_kernels(system, grid)
    cols = []
    for k in range(grid.n_intervals):
        post = E[k + 1] @ (np.eye(d) + system.jumps[k]) if k < p else np.eye(d)
        for K, w in zip(*kernels[k]):
            cols.append(np.sqrt(w) * post @ K @ system.input_map)
    for k in range(1, p + 1):
        cols.append(E[k] @ system.impulse_inputs[k - 1])
    return np.hstack(cols)


def resolvent_solve(W, alpha, rhs, weights=None) -> np.ndarray:
    """Solve ``(alpha I + W) x = rhs`` with a Cholesky factorization.

    ``W`` is either a :class:`GramianSet` (its factorization is cached) or a
    matrix that is self-adjoint in the inner product with diagonal
    ``weights`` (Euclidean when omitted).
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if isinstance(W, GramianSet):
        return W.solve(alpha, rhs)
    W = np.asarray(W, dtype=float)
    w = np.ones(W.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    GW = w[:, None] * W
    scale = max(1.0, np.max(np.abs(GW)))
    if np.max(np.abs(GW - GW.T)) > 1e-10 * scale:
        raise ValueError("W is not self-adjoint")
    A = _metric_system(W, alpha, w)
    return la.cho_solve(la.cho_factor(A, lower=True), w * np.asarray(rhs, dtype=float))


@dataclass
class A0Report:
    alphas: np.ndarray
    ratios: np.ndarray  # (n_alpha, n_probe)
    threshold: float

    @property
    def satisfied(self) -> bool:
        return bool(np.all(self.ratios[-1] < self.threshold))

    @property
    def status(self) -> str:
        return "A0-satisfied" if self.satisfied else "A0-violated"


def a0_diagnostic(gramians: GramianSet, alphas, probes, threshold=1e-3) -> A0Report:
    """Tabulate ``|alpha (alpha I + W)^-1 x| / |x|`` along a decreasing ``alpha`` schedule.

    The resolvent condition holds numerically when every probe's ratio is
    below ``threshold`` at the smallest ``alpha``.
    """
    alphas = np.asarray(alphas, dtype=float)
    probes = [np.asarray(x, dtype=float) for x in probes]
    if alphas.size == 0 or not probes:
        raise ValueError("need at least one alpha and one probe")
    if np.any(alphas <= 0) or np.any(np.diff(alphas) >= 0):
        raise ValueError("alphas must be positive and strictly decreasing")
    ratios = np.empty((alphas.size, len(probes)))
    for i, a in enumerate(alphas):
        for j, x in enumerate(probes):
            nx = gramians.norm(x)
            if nx == 0:
                raise ValueError("probe vectors must be nonzero")
            ratios[i, j] = gramians.norm(a * gramians.solve(a, x)) / nx
    return A0Report(alphas, ratios, threshold)
