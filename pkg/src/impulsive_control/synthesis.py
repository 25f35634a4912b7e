"""Regularized control synthesis and its verification.

Given the controllability operator ``W`` and the moment vector ``p`` (target
minus the free terminal state), the control pair is ``L* phi`` with
``phi = (alpha I + W)^-1 p``.  For a known forcing the resulting terminal
defect is exactly ``-alpha (alpha I + W)^-1 p``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from .exceptions import ConvergenceError, DivergenceError
from .gramian import GramianSet, assemble
from .operators import ImpulsiveSystem, Nonlinearity, downstream_maps, evolve_adjoint
from .propagator import (
    Trajectory,
    _check_grid,
    _forcing_arrays,
    _kappa_on_nodes,
    _propagate,
    interval_control,
    mild_solve_semilinear,
)
from .quadrature import QuadratureGrid

__all__ = [
    "DEFAULT_ALPHAS",
    "ControlLaw",
    "SynthesisResult",
    "LemmaCheck",
    "SweepRow",
    "moment_vector",
    "synthesize",
    "predicted_deviation",
    "verify_lemma31",
    "semilinear_synthesize",
    "alpha_sweep",
    "forcing_on_nodes",
    "kernel_component",
]

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 1e-5, 1e-6)


def forcing_on_nodes(system: ImpulsiveSystem, grid: QuadratureGrid, kappa_forcing=None):
    """Known forcing sampled on the grid nodes, one ``(panels, order, d)`` array per subinterval.

    ``kappa_forcing`` may be a callable ``t -> R^d``, a list of node arrays
    (returned as is) or ``None``.  With ``None`` the system's own
    nonlinearity is used: a tabulated one is sampled, a state-dependent one
    is evaluated along the uncontrolled semilinear solution.
    """
    if isinstance(kappa_forcing, list):
        return kappa_forcing
    d = system.dim
    if kappa_forcing is None:
        nl = system.nonlinearity
        if nl.kind == "none":
            return [np.zeros(grid.nodes(k).shape + (d,)) for k in range(grid.n_intervals)]
        if nl.kind == "tabulated":
            kappa_forcing = nl.table
        else:
            free = mild_solve_semilinear(system, grid=grid)
            return _kappa_on_nodes(nl, free, grid)
    return _forcing_arrays(_plain(system), grid, None, kappa_forcing)


def _plain(system):
    if system.nonlinearity.kind == "none":
        return system
    return system.replace(nonlinearity=Nonlinearity())


def _solve_with_nodes(system, grid, u, v, kappa_nodes, x0=None, jump_offsets=None):
    """Linear mild solution whose forcing is given directly on the nodes."""
    F = _forcing_arrays(_plain(system), grid, u, None)
    F = [a + b for a, b in zip(F, kappa_nodes)]
    x0 = system.x0 if x0 is None else x0
    v = system.zero_impulse_controls() if v is None else v
    return _propagate(system, x0, F, grid, v, jump_offsets)


def moment_vector(system: ImpulsiveSystem, kappa_forcing, h, grid: QuadratureGrid | None = None,
                  x0=None, jump_offsets=None) -> np.ndarray:
    """``p = h - xi_free(b)`` where ``xi_free`` has zero controls and the given forcing.

    ``x0`` and ``jump_offsets`` override the start value and add fixed
    vectors to each right limit (used by the neutral reduction).
    """
    grid = _check_grid(system, grid)
    h = np.asarray(h, dtype=float)
    if h.shape != (system.dim,):
        raise ValueError(f"target must have shape ({system.dim},), got {h.shape}")
    kap = forcing_on_nodes(system, grid, kappa_forcing)
    free = _solve_with_nodes(system, grid, None, None, kap, x0, jump_offsets)
    p = h - free.terminal
    if not np.all(np.isfinite(p)):
        raise DivergenceError("moment vector is not finite")
    return p


class ControlLaw:
    """Synthesized control pair for a given ``phi``.

    On subinterval ``k`` (between ``t_k`` and ``t_{k+1}``) the continuous
    control is ``u(s) = Omega* S*(t_{k+1} - s) psi_k`` with
    ``psi_k = ((I + B_{k+1})* E_{k+1}*) phi`` before the last impulse and
    ``psi_p = phi`` after it.  Impulse controls are ``v_k = D_k* E_k* phi``.

    With ``paper_literal=True`` the continuous control is
    ``Omega* S*(b - s) phi`` on every subinterval and ``v_k`` (``k < p``)
    carries the extra factor ``S*(t_k - t_{k-1}) (I + B_k)*``.  That variant
    is not the adjoint of the input-to-terminal map, so the terminal
    identity generally fails for it.
    """

    def __init__(self, system: ImpulsiveSystem, phi, alpha: float, paper_literal: bool = False):
        self.system = system
        self.phi = np.asarray(phi, dtype=float)
        self.alpha = float(alpha)
        self.paper_literal = bool(paper_literal)
        model = system.model
        p, d = system.n_impulses, system.dim
        bp = system.breakpoints
        E = downstream_maps(system)
        self._omega_adj = model.input_adjoint(system.input_map)
        if paper_literal:
            self._ends = [system.horizon] * (p + 1)
            self._psi = [self.phi] * (p + 1)
        else:
            self._ends = list(bp[1:])
            self._psi = [
                model.adjoint(E[k + 1] @ (np.eye(d) + system.jumps[k])) @ self.phi for k in range(p)
            ] + [self.phi]
        v = []
        for k in range(1, p + 1):
            T = E[k]
            if paper_literal and k < p:
                T = E[k] @ (np.eye(d) + system.jumps[k - 1]) @ model.matrix(bp[k] - bp[k - 1])
            v.append(model.input_adjoint(system.impulse_inputs[k - 1]) @ model.adjoint(T) @ self.phi)
        self.v = v

    def segment(self, k: int):
        end, psi, Oa, model = self._ends[k], self._psi[k], self._omega_adj, self.system.model

        def u(s):
            return Oa @ evolve_adjoint(model, end - s, psi)

        return u

    def __call__(self, s: float) -> np.ndarray:
        """Continuous control at ``s``; impulse times belong to the subinterval they end."""
        bp = self.system.breakpoints
        if not bp[0] <= s <= bp[-1]:
            raise ValueError(f"s={s} outside [0, {bp[-1]}]")
        k = int(np.clip(np.searchsorted(bp, s, side="left") - 1, 0, len(bp) - 2))
        return self.segment(k)(s)

    def energy(self, grid: QuadratureGrid) -> float:
        """``int |u|^2 ds + sum |v_k|^2`` with the grid's quadrature."""
        total = sum(float(v @ v) for v in self.v)
        for k in range(grid.n_intervals):
            uk = self.segment(k)
            for t, w in zip(grid.nodes(k).ravel(), grid.weights(k).ravel()):
                uv = uk(t)
                total += w * float(uv @ uv)
        return total


def synthesize(system: ImpulsiveSystem, gramians: GramianSet, alpha: float, p,
               paper_literal: bool = False) -> ControlLaw:
    """Control law with ``phi = (alpha I + W)^-1 p``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    phi = gramians.solve(alpha, np.asarray(p, dtype=float))
    return ControlLaw(system, phi, alpha, paper_literal)


def predicted_deviation(W, alpha: float, p) -> np.ndarray:
    """``-alpha (alpha I + W)^-1 p``; ``W`` is a :class:`GramianSet` or a Euclidean-symmetric matrix."""
    from .gramian import resolvent_solve

    return -alpha * resolvent_solve(W, alpha, np.asarray(p, dtype=float))


class LemmaCheck(NamedTuple):
    residual: float
    relative: float
    measured: np.ndarray
    predicted: np.ndarray
    law: ControlLaw
    trajectory: Trajectory


def verify_lemma31(system: ImpulsiveSystem, gramians: GramianSet, kappa_forcing, h, alpha: float,
                   grid: QuadratureGrid | None = None, paper_literal: bool = False) -> LemmaCheck:
    """Check ``xi(b) - h = -alpha (alpha I + W)^-1 p`` for the synthesized controls.

    The forcing is treated as known (see :func:`forcing_on_nodes`).  The
    relative residual is scaled by ``max(|p|, |h|, 1e-300)``.
    """
    grid = _check_grid(system, grid)
    kap = forcing_on_nodes(system, grid, kappa_forcing)
    p = moment_vector(system, kap, h, grid)
    law = synthesize(system, gramians, alpha, p, paper_literal)
    traj = _solve_with_nodes(system, grid, law, law.v, kap)
    measured = traj.terminal - np.asarray(h, dtype=float)
    predicted = predicted_deviation(gramians, alpha, p)
    res = gramians.norm(measured - predicted)
    scale = max(gramians.norm(p), gramians.norm(h), 1e-300)
    return LemmaCheck(res, res / scale, measured, predicted, law, traj)


class SynthesisResult(NamedTuple):
    law: ControlLaw
    trajectory: Trajectory
    outer_iterations: int
    gap_history: list
    terminal_residual: float
    moment: np.ndarray


def semilinear_synthesize(system: ImpulsiveSystem, gramians: GramianSet, h, alpha: float,
                          grid: QuadratureGrid | None = None, outer_tol: float = 1e-10,
                          max_outer: int = 100, damping: float = 1.0,
                          paper_literal: bool = False, inner_tol: float = 1e-10,
                          inner_max_iter: int = 200) -> SynthesisResult:
    """Fixed point of ``xi -> trajectory under the control synthesized from kappa(xi)``.

    Each outer step freezes ``kappa`` along the current iterate, forms the
    moment vector, synthesizes the control and re-solves the semilinear
    system under it.  ``damping`` blends the new iterate with the old one.
    The returned ``terminal_residual`` is
    ``|xi(b) - h + alpha (alpha I + W)^-1 p(xi)|`` at the returned iterate.

    Raises
    ------
    ConvergenceError
        No convergence within ``max_outer`` steps; carries the gap history.
    """
    if not 0.1 <= damping <= 1:
        raise ValueError("damping must lie in [0.1, 1]")
    grid = _check_grid(system, grid)
    h = np.asarray(h, dtype=float)
    nl = system.nonlinearity
    if not nl.state_dependent:
        kap = forcing_on_nodes(system, grid, None)
        p = moment_vector(system, kap, h, grid)
        law = synthesize(system, gramians, alpha, p, paper_literal)
        traj = _solve_with_nodes(system, grid, law, law.v, kap)
        res = gramians.norm(traj.terminal - h - predicted_deviation(gramians, alpha, p))
        return SynthesisResult(law, traj, 1, [], res, p)

    xi = mild_solve_semilinear(system, grid=grid, tol=inner_tol, max_iter=inner_max_iter)
    history = []
    for it in range(1, max_outer + 1):
        kap = _kappa_on_nodes(nl, xi, grid)
        p = moment_vector(system, kap, h, grid)
        law = synthesize(system, gramians, alpha, p, paper_literal)
        new = mild_solve_semilinear(system, law, law.v, grid, tol=inner_tol,
                                    max_iter=inner_max_iter, initial=xi)
        gap = new.sup_gap(xi)
        history.append(gap)
        if not np.isfinite(gap):
            raise DivergenceError(f"outer iteration produced a non-finite iterate at step {it}")
        xi = xi.blend(new, damping) if damping < 1 else new
        if gap <= outer_tol * (1 + xi.sup_norm()):
            kap = _kappa_on_nodes(nl, xi, grid)
            p = moment_vector(system, kap, h, grid)
            res = gramians.norm(xi.terminal - h - predicted_deviation(gramians, alpha, p))
            log.debug("outer loop converged in %d steps, residual %.3e", it, res)
            return SynthesisResult(law, xi, it, history, res, p)
    raise ConvergenceError(f"outer synthesis loop did not converge in {max_outer} steps", history)


def kernel_component(gramians: GramianSet, p, rel_tol: float = 1e-12) -> float:
    """H-norm of the projection of ``p`` onto the numerical kernel of ``W``."""
    S = gramians.symmetric_form(gramians.total)
    lam, Q = np.linalg.eigh((S + S.T) / 2)
    scale = max(1.0, float(np.max(np.abs(lam))))
    ker = Q[:, lam <= rel_tol * scale]
    if ker.shape[1] == 0:
        return 0.0
    y = np.sqrt(gramians.weights) * np.asarray(p, dtype=float)
    return float(np.linalg.norm(ker.T @ y))


class SweepRow(NamedTuple):
    alpha: float
    measured_error: float
    predicted_error: float
    outer_iters: int
    status: str


def alpha_sweep(system: ImpulsiveSystem, gramians: GramianSet | None, h, alphas=DEFAULT_ALPHAS,
                mode: str = "linear", grid: QuadratureGrid | None = None, jobs: int = 1,
                paper_literal: bool = False, kappa_forcing=None, **outer) -> list:
    """Terminal defect ``|xi_alpha(b) - h|`` along a decreasing ``alpha`` schedule.

    ``mode="linear"`` treats the forcing as known (as in
    :func:`verify_lemma31`); ``mode="semilinear"`` runs
    :func:`semilinear_synthesize` per row.  A failing row is recorded with
    status ``nonconverged`` or ``failed`` and the sweep continues.  When
    ``p`` has a component in the kernel of ``W`` the status reads
    ``plateau=<|P_ker p|>``: the defect cannot drop below that value.
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size == 0 or np.any(alphas <= 0) or np.any(np.diff(alphas) >= 0):
        raise ValueError("alphas must be positive and strictly decreasing")
    if mode not in ("linear", "semilinear"):
        raise ValueError(f"unknown sweep mode {mode!r}")
    grid = _check_grid(system, grid)
    if gramians is None:
        gramians = assemble(system, grid)
    h = np.asarray(h, dtype=float)
    kap = forcing_on_nodes(system, grid, kappa_forcing) if mode == "linear" else None
    p_lin = moment_vector(system, kap, h, grid) if mode == "linear" else None

    def row(alpha):
        try:
            if mode == "linear":
                law = synthesize(system, gramians, alpha, p_lin, paper_literal)
                traj = _solve_with_nodes(system, grid, law, law.v, kap)
                p, iters = p_lin, 1
            else:
                res = semilinear_synthesize(system, gramians, h, alpha, grid,
                                            paper_literal=paper_literal, **outer)
                traj, p, iters = res.trajectory, res.moment, res.outer_iterations
            measured = gramians.norm(traj.terminal - h)
            predicted = gramians.norm(predicted_deviation(gramians, alpha, p))
            plateau = kernel_component(gramians, p)
            status = f"plateau={plateau:.6e}" if plateau > 1e-12 * max(1.0, gramians.norm(p)) else "ok"
            return SweepRow(float(alpha), measured, predicted, iters, status)
        except ConvergenceError as exc:
            log.warning("alpha=%g: %s", alpha, exc)
            return SweepRow(float(alpha), np.nan, np.nan, len(exc.history), "nonconverged")
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("alpha=%g failed: %s", alpha, exc)
            return SweepRow(float(alpha), np.nan, np.nan, 0, "failed")

    for a in alphas:  # factor sequentially so worker threads only read the cache
        gramians.factor(a)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(row, alphas))
    return [row(a) for a in alphas]
