"""Mild solutions of impulsive evolution equations and an RK4 reference solver.

The mild solver marches panel by panel.  Across a panel of width ``h``
the state is advanced exactly through ``S(h)`` and the Duhamel integral is
taken with the panel's Gauss-Legendre rule.  States at the interior nodes
(needed to evaluate a state-dependent forcing) use precomputed matrix
weights ``M[q, l] = int_0^{c_q} S(c_q - r) l_l(r) dr`` where ``l_l`` are
the Lagrange polynomials through the panel nodes.
"""

from __future__ import annotations

import logging

import numpy as np
from numpy.polynomial.legendre import leggauss

from .exceptions import ConvergenceError, DivergenceError
from .operators import ImpulsiveSystem, check_vectors
from .quadrature import QuadratureGrid

__all__ = [
    "Trajectory",
    "mild_solve_linear",
    "mild_solve_semilinear",
    "dense_oracle",
    "interval_control",
    "picard",
]

log = logging.getLogger(__name__)

_SUBRULE = 24
_WINDOW = 8


def _barycentric_weights(x):
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def lagrange_matrix(nodes, x):
    """``L[i, l] = l_l(x[i])`` for the Lagrange basis through ``nodes``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    bw = _barycentric_weights(nodes)
    diff = x[:, None] - nodes[None, :]
    exact = diff == 0
    diff[exact] = 1.0
    terms = bw[None, :] / diff
    L = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    L[rows] = exact[rows].astype(float)
    return L


def _panel_operators(model, h, order):
    key = ("panel", float(h), int(order))
    ops = model._cache.get(key)
    if ops is not None:
        return ops
    y, wy = leggauss(order)
    c = h * (y + 1) / 2
    w = h * wy / 2
    sub_y, sub_w = leggauss(_SUBRULE)
    sub_y, sub_w = (sub_y + 1) / 2, sub_w / 2
    Sh = model.matrix(h)
    S_node = np.stack([model.matrix(cq) for cq in c])
    S_end = np.stack([wq * model.matrix(h - cq) for cq, wq in zip(c, w)])
    d = model.dim
    M = np.zeros((order, order, d, d))
    for q, cq in enumerate(c):
        r = cq * sub_y
        L = lagrange_matrix(c, r)  # (sub, order)
        S_r = np.stack([model.matrix(cq - rj) for rj in r])  # (sub, d, d)
        M[q] = cq * np.einsum("j,jl,jab->lab", sub_w, L, S_r)
    ops = (Sh, S_node, S_end, M)
    with model._lock:
        model._cache[key] = ops
    return ops


def interval_control(u, k):
    """Callable ``t -> control`` valid on subinterval ``k``.

    ``u`` may be ``None``, a constant vector, a plain callable, or an object
    exposing ``segment(k)`` (synthesized control laws, which are only
    piecewise continuous across impulse times).
    """
    if u is None:
        return None
    seg = getattr(u, "segment", None)
    if seg is not None:
        return seg(k)
    if callable(u):
        return u
    const = np.atleast_1d(np.asarray(u, dtype=float))
    return lambda t: const


class Trajectory:
    """Piecewise state record on ``[0, b]``.

    ``segments[k]`` holds ``(times, states)`` on ``[t_k, t_{k+1}]``; the
    first sample is the right limit at ``t_k`` (or the initial state) and the
    last one the left limit at ``t_{k+1}``.  Queries at an impulse time
    return the left limit unless ``side="right"``.
    """

    def __init__(self, breakpoints, segments, right_limits, node_states=None,
                 node_times=None, iterations=0, gap_history=(), smooth=None):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.segments = [(np.asarray(t, float), np.asarray(x, float)) for t, x in segments]
        self.right_limits = [np.asarray(r, float) for r in right_limits]
        self.node_states = node_states
        self.node_times = node_times
        self.iterations = iterations
        self.gap_history = list(gap_history)
        self.smooth = smooth

    @property
    def dim(self) -> int:
        return self.segments[0][1].shape[1]

    @property
    def terminal(self) -> np.ndarray:
        return self.segments[-1][1][-1].copy()

    @property
    def left_limits(self) -> list:
        return [seg[1][-1].copy() for seg in self.segments[:-1]]

    @property
    def initial(self) -> np.ndarray:
        return self.segments[0][1][0].copy()

    def _segment_index(self, t, side):
        bp = self.breakpoints
        if t < bp[0] - 1e-14 or t > bp[-1] + 1e-14:
            raise ValueError(f"t={t} outside [{bp[0]}, {bp[-1]}]")
        k = int(np.searchsorted(bp, t, side="left")) - 1
        k = min(max(k, 0), len(self.segments) - 1)
        on_break = np.isclose(t, bp[k + 1], rtol=0, atol=1e-14)
        if side == "right" and on_break and k + 1 < len(self.segments):
            return k + 1
        return k

    def evaluate(self, t, side="left") -> np.ndarray:
        """State at ``t`` by local interpolation within the owning segment."""
        t = float(t)
        k = self._segment_index(t, side)
        times, states = self.segments[k]
        i = int(np.searchsorted(times, t))
        if i < len(times) and times[i] == t:
            return states[i].copy()
        if i > 0 and times[i - 1] == t:
            return states[i - 1].copy()
        n = min(_WINDOW, len(times))
        lo = min(max(i - n // 2, 0), len(times) - n)
        L = lagrange_matrix(times[lo : lo + n], [t])[0]
        return L @ states[lo : lo + n]

    def evaluate_many(self, ts, side="left") -> np.ndarray:
        """Vectorized :meth:`evaluate`; returns shape ``(len(ts), d)``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.empty((ts.size, self.dim))
        seg = np.array([self._segment_index(t, side) for t in ts], dtype=int)
        for k in np.unique(seg):
            sel = np.flatnonzero(seg == k)
            times, states = self.segments[k]
            t = ts[sel]
            n = min(_WINDOW, len(times))
            i = np.searchsorted(times, t)
            lo = np.clip(i - n // 2, 0, len(times) - n)
            idx = lo[:, None] + np.arange(n)[None, :]
            x = times[idx]
            diff = x[:, :, None] - x[:, None, :]
            diff[:, np.arange(n), np.arange(n)] = 1.0
            bw = 1.0 / np.prod(diff, axis=2)
            dt = t[:, None] - x
            exact = dt == 0
            dt[exact] = 1.0
            terms = bw / dt
            L = terms / terms.sum(axis=1, keepdims=True)
            hit = exact.any(axis=1)
            L[hit] = exact[hit].astype(float)
            out[sel] = np.einsum("il,ila->ia", L, states[idx])
        return out

    def rows(self):
        """Yield ``(t, side, state)`` in time order with both limits at impulses."""
        nseg = len(self.segments)
        for k, (times, states) in enumerate(self.segments):
            for j, (t, x) in enumerate(zip(times, states)):
                if j == 0 and k > 0:
                    side = "right"
                elif j == len(times) - 1 and k < nseg - 1:
                    side = "left"
                else:
                    side = "cont"
                yield float(t), side, x

    def all_states(self) -> np.ndarray:
        return np.concatenate([x for _, x in self.segments])

    def sup_norm(self, weights=None) -> float:
        X = self.all_states()
        if weights is not None:
            return float(np.max(np.sqrt(np.sum(weights * X * X, axis=1))))
        return float(np.max(np.abs(X)))

    def sup_gap(self, other: "Trajectory") -> float:
        """Sup-norm distance between two trajectories sampled at the same times."""
        return float(np.max(np.abs(self.all_states() - other.all_states())))

    def sup_distance(self, other: "Trajectory") -> float:
        """Sup-norm distance at this trajectory's sample times, evaluating ``other`` there."""
        worst = 0.0
        for t, side, x in self.rows():
            worst = max(worst, float(np.max(np.abs(x - other.evaluate(t, side)))))
        return worst

    def blend(self, new: "Trajectory", theta: float) -> "Trajectory":
        """``(1 - theta) * self + theta * new`` sample by sample."""
        if theta == 1.0:
            return new
        segs = [(t, (1 - theta) * x0 + theta * x1)
                for (t, x0), (_, x1) in zip(self.segments, new.segments)]
        rights = [(1 - theta) * a + theta * b for a, b in zip(self.right_limits, new.right_limits)]
        nodes = None
        if self.node_states is not None and new.node_states is not None:
            nodes = [(1 - theta) * a + theta * b for a, b in zip(self.node_states, new.node_states)]
        smooth = None
        if self.smooth is not None and new.smooth is not None:
            smooth = self.smooth.blend(new.smooth, theta)
        return Trajectory(self.breakpoints, segs, rights, nodes, self.node_times, smooth=smooth)

    def shifted(self, offset) -> "Trajectory":
        """Subtract ``offset(t, side)`` from every sample (and node state)."""
        segs = []
        nseg = len(self.segments)
        for k, (times, states) in enumerate(self.segments):
            new = states.copy()
            for j, t in enumerate(times):
                side = "right" if (j == 0 and k > 0) else "left"
                new[j] -= offset(t, side)
            segs.append((times, new))
        rights = [segs[k + 1][1][0].copy() for k in range(nseg - 1)]
        nodes = None
        if self.node_states is not None:
            nodes = []
            for k, arr in enumerate(self.node_states):
                adj = arr.copy()
                for idx in np.ndindex(arr.shape[:2]):
                    adj[idx] -= offset(self.node_times[k][idx], "left")
                nodes.append(adj)
        return Trajectory(self.breakpoints, segs, rights, nodes, self.node_times,
                          self.iterations, self.gap_history)


def _forcing_arrays(system, grid, u, forcing):
    """``Omega u + forcing`` on every node; one array per subinterval."""
    d = system.dim
    Omega = system.input_map
    out = []
    for k in range(grid.n_intervals):
        ts = grid.nodes(k)
        F = np.zeros(ts.shape + (d,))
        uk = interval_control(u, k)
        fk = None if forcing is None else interval_control(forcing, k)
        for idx in np.ndindex(ts.shape):
            t = ts[idx]
            if uk is not None:
                uv = np.atleast_1d(np.asarray(uk(t), dtype=float))
                if uv.shape != (system.n_inputs,) or not np.all(np.isfinite(uv)):
                    raise ValueError(f"control at t={t} is not a finite {system.n_inputs}-vector")
                F[idx] += Omega @ uv
            if fk is not None:
                fv = np.asarray(fk(t), dtype=float)
                if fv.shape != (d,) or not np.all(np.isfinite(fv)):
                    raise ValueError(f"forcing at t={t} is not a finite {d}-vector")
                F[idx] += fv
        out.append(F)
    return out


def _check_grid(system, grid):
    if grid is None:
        return QuadratureGrid.for_system(system)
    if not grid.matches(system.breakpoints):
        raise ValueError("quadrature grid inconsistent with impulse schedule")
    return grid


def _propagate(system, x0, F, grid, v, jump_offsets=None):
    """March the linear mild solution with node forcing ``F``."""
    model = system.model
    d = system.dim
    p = system.n_impulses
    n = grid.order
    x = np.array(x0, dtype=float)
    segments, rights, nodes_all, node_times = [], [], [], []
    for k in range(grid.n_intervals):
        h = grid.panel_width(k)
        Sh, S_node, S_end, M = _panel_operators(model, h, n)
        starts = grid.panel_starts(k)
        ts_nodes = grid.nodes(k)
        P = grid.panels[k]
        times = np.empty(P * (n + 1) + 1)
        states = np.empty((P * (n + 1) + 1, d))
        node_states = np.empty((P, n, d))
        times[0], states[0] = grid.breakpoints[k], x
        for j in range(P):
            f = F[k][j]
            xn = S_node @ x + np.einsum("qlab,lb->qa", M, f)
            x = Sh @ x + np.einsum("qab,qb->a", S_end, f)
            node_states[j] = xn
            base = 1 + j * (n + 1)
            times[base : base + n] = ts_nodes[j]
            states[base : base + n] = xn
            times[base + n] = starts[j] + h if j < P - 1 else grid.breakpoints[k + 1]
            states[base + n] = x
        if not np.all(np.isfinite(states)):
            raise DivergenceError(f"non-finite state on subinterval {k}")
        segments.append((times, states))
        nodes_all.append(node_states)
        node_times.append(ts_nodes)
        if k < p:
            x = x + system.jumps[k] @ x + system.impulse_inputs[k] @ v[k]
            if jump_offsets is not None:
                x = x + jump_offsets[k]
            rights.append(x.copy())
    return Trajectory(grid.breakpoints, segments, rights, nodes_all, node_times)


def _impulse_controls(system, v):
    if v is None:
        return system.zero_impulse_controls()
    return check_vectors(v, [D.shape[1] for D in system.impulse_inputs], "v")


def _known_forcing(system, forcing):
    if forcing is not None:
        return forcing
    nl = system.nonlinearity
    if nl.state_dependent:
        raise ValueError(
            f"nonlinearity {nl.kind!r} depends on the state; use mild_solve_semilinear"
        )
    if nl.kind == "tabulated":
        return nl.table
    return None


def mild_solve_linear(system: ImpulsiveSystem, u=None, v=None, grid=None, forcing=None) -> Trajectory:
    """Mild solution with a known forcing.

    Parameters
    ----------
    system : ImpulsiveSystem
        Its nonlinearity must be ``none`` or ``tabulated`` unless ``forcing``
        is given, in which case ``forcing`` replaces it.
    u : callable, array or None
        Continuous control ``t -> R^m``; ``None`` means zero.
    v : sequence of arrays or None
        Impulse controls ``v_1 .. v_p``; ``None`` means zero.
    grid : QuadratureGrid, optional
    forcing : callable, optional
        Known forcing ``t -> R^d``.
    """
    grid = _check_grid(system, grid)
    v = _impulse_controls(system, v)
    F = _forcing_arrays(system, grid, u, _known_forcing(system, forcing))
    return _propagate(system, system.x0, F, grid, v)


def _kappa_on_nodes(kappa, traj, grid):
    out = []
    for k, states in enumerate(traj.node_states):
        ts = grid.nodes(k)
        vals = np.empty_like(states)
        for idx in np.ndindex(ts.shape):
            vals[idx] = kappa(ts[idx], states[idx])
        out.append(vals)
    return out


def picard(step, initial, tol, max_iter, damping, what="Picard iteration"):
    """Iterate ``x <- (1 - damping) x + damping step(x)`` to a sup-norm fixed point."""
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    xi = initial
    history = []
    for it in range(1, max_iter + 1):
        new = step(xi)
        gap = new.sup_gap(xi)
        history.append(gap)
        if not np.isfinite(gap):
            raise DivergenceError(f"{what} produced a non-finite iterate at step {it}")
        xi = xi.blend(new, damping)
        if gap <= tol * (1 + xi.sup_norm()):
            xi.iterations = it
            xi.gap_history = history
            log.debug("%s converged in %d steps (gap %.3e)", what, it, gap)
            return xi
    raise ConvergenceError(f"{what} did not converge in {max_iter} steps", history)


def mild_solve_semilinear(system: ImpulsiveSystem, u=None, v=None, grid=None, tol=1e-10,
                          max_iter=200, damping=1.0, initial=None) -> Trajectory:
    """Mild solution with a state-dependent forcing by Picard iteration.

    Each sweep solves the linear problem with ``kappa`` frozen along the
    previous iterate.  Stops once the sup-norm change is at most
    ``tol * (1 + sup|x|)``.

    Raises
    ------
    ConvergenceError
        ``max_iter`` sweeps without meeting the tolerance.
    DivergenceError
        An iterate became non-finite.
    """
    if not system.nonlinearity.state_dependent:
        return mild_solve_linear(system, u, v, grid)
    grid = _check_grid(system, grid)
    v = _impulse_controls(system, v)
    base = _forcing_arrays(system, grid, u, None)
    kappa = system.nonlinearity

    def step(xi):
        kap = _kappa_on_nodes(kappa, xi, grid)
        return _propagate(system, system.x0, [b + c for b, c in zip(base, kap)], grid, v)

    if initial is None:
        initial = _propagate(system, system.x0, base, grid, v)
    return picard(step, initial, tol, max_iter, damping)


def dense_oracle(system: ImpulsiveSystem, u=None, v=None, step=1e-3, forcing=None) -> Trajectory:
    """Classical fixed-step RK4 on ``x' = A x + Omega u + kappa(t, x)`` between impulses.

    Each subinterval of length ``L`` uses ``ceil(L / step)`` equal steps, so
    the effective step never exceeds ``step``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    v = _impulse_controls(system, v)
    A = system.model.generator()
    Omega = system.input_map
    kappa = forcing
    if kappa is None and system.nonlinearity.active:
        nl = system.nonlinearity
        kappa = (lambda t, x: nl(t, x)) if nl.state_dependent else (lambda t, x: nl.table(t))
    elif kappa is not None:
        fk = kappa
        kappa = lambda t, x: np.asarray(fk(t), dtype=float)
    bp = system.breakpoints
    x = system.x0.copy()
    segments, rights = [], []
    for k in range(len(bp) - 1):
        uk = interval_control(u, k)

        def rhs(t, y):
            out = A @ y
            if uk is not None:
                out = out + Omega @ np.atleast_1d(np.asarray(uk(t), dtype=float))
            if kappa is not None:
                out = out + kappa(t, y)
            return out

        n = max(1, int(np.ceil((bp[k + 1] - bp[k]) / step - 1e-9)))
        h = (bp[k + 1] - bp[k]) / n
        times = bp[k] + h * np.arange(n + 1)
        times[-1] = bp[k + 1]
        states = np.empty((n + 1, x.size))
        states[0] = x
        for i in range(n):
            t = times[i]
            k1 = rhs(t, x)
            k2 = rhs(t + h / 2, x + h / 2 * k1)
            k3 = rhs(t + h / 2, x + h / 2 * k2)
            k4 = rhs(t + h, x + h * k3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            states[i + 1] = x
        if not np.all(np.isfinite(states)):
            raise DivergenceError(f"RK4 blow-up on subinterval {k}")
        segments.append((times, states))
        if k < system.n_impulses:
            x = x + system.jumps[k] @ x + system.impulse_inputs[k] @ v[k]
            rights.append(x.copy())
    return Trajectory(bp, segments, rights)
