"""Neutral impulsive systems ``d/dt [x + sigma(t, x_t)] = A [x + sigma] + Omega u + kappa``.

Both solvers work with ``z = x + offset`` which obeys an ordinary impulsive
mild equation started from ``phi(0) + sigma(0, phi)``.  Two conventions for
the offset are supported:

``paper``
    ``offset = sigma(b, x_b)``, one constant vector on all of ``[0, b]``.
    Jumps act on ``z``.  This keeps the terminal identity
    ``x(b) - h = -alpha (alpha I + W)^-1 p_sigma`` exact.
``standard``
    ``offset(t) = sigma(t, x_t)``.  A jump ``x+ = (I + B) x + D v`` then
    reads ``z+ = (I + B) z + D v - B sigma(t_k, x_{t_k})`` for ``z``.

``sigma`` is evaluated along the previous Picard iterate, so every inner
solve is linear in the unknown.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .exceptions import ConvergenceError, DivergenceError
from .gramian import GramianSet, assemble
from .operators import ImpulsiveSystem
from .propagator import (
    Trajectory,
    _check_grid,
    _forcing_arrays,
    _impulse_controls,
    _kappa_on_nodes,
    _propagate,
    dense_oracle,
    interval_control,
    mild_solve_semilinear,
    picard,
)
from .quadrature import QuadratureGrid
from .synthesis import (
    DEFAULT_ALPHAS,
    SweepRow,
    SynthesisResult,
    _plain,
    alpha_sweep,
    forcing_on_nodes,
    kernel_component,
    moment_vector,
    predicted_deviation,
    semilinear_synthesize,
    synthesize,
)

__all__ = [
    "CONVENTIONS",
    "HistorySegment",
    "NeutralTerm",
    "NeutralSystem",
    "neutral_mild_solve",
    "neutral_dense_oracle",
    "neutral_synthesize",
    "neutral_alpha_sweep",
]

CONVENTIONS = ("paper", "standard")


class HistorySegment:
    """Initial function ``phi`` on ``[-span, 0]`` from uniform samples, cubic-spline interpolated."""

    def __init__(self, span: float, values):
        values = np.asarray(values, dtype=float)
        if not span > 0:
            raise ValueError("history span must be positive")
        if values.ndim != 2 or values.shape[0] < 2:
            raise ValueError("history needs a (samples, d) array with at least two samples")
        if not np.all(np.isfinite(values)):
            raise ValueError("history samples must be finite")
        self.span = float(span)
        self.values = values
        self.grid = np.linspace(-self.span, 0.0, values.shape[0])
        self._spline = CubicSpline(self.grid, values, axis=0)

    @classmethod
    def from_function(cls, func, span: float, samples_per_tau: int = 64):
        grid = np.linspace(-span, 0.0, samples_per_tau + 1)
        return cls(span, np.array([np.asarray(func(t), dtype=float) for t in grid]))

    @classmethod
    def constant(cls, x0, span: float, samples_per_tau: int = 64):
        x0 = np.asarray(x0, dtype=float)
        return cls(span, np.tile(x0, (samples_per_tau + 1, 1)))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def present(self) -> np.ndarray:
        return self.values[-1].copy()

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < -self.span - 1e-12) or np.any(theta > 1e-12):
            raise ValueError(f"history queried outside [{-self.span}, 0]")
        return self._spline(np.clip(theta, -self.span, 0.0))


class NeutralTerm:
    """``sigma(t, x_t)``.

    Kinds: ``zero``; ``bounded-demo`` with ``c * tanh(x(t - tau))``
    componentwise; ``tabulated`` with a callable ``t -> R^d``.
    """

    KINDS = ("zero", "bounded-demo", "tabulated")

    def __init__(self, kind="zero", coefficient=0.0, delay=1.0, table=None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown neutral term kind {kind!r}")
        if not np.isfinite(coefficient):
            raise ValueError("neutral coefficient must be finite")
        if not delay > 0:
            raise ValueError("delay must be positive")
        if kind == "tabulated" and table is None:
            raise ValueError("tabulated neutral term needs a table")
        self.kind = kind
        self.coefficient = float(coefficient)
        self.delay = float(delay)
        self.table = table

    def __repr__(self):
        return f"NeutralTerm({self.kind!r}, coefficient={self.coefficient}, delay={self.delay})"

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def value(self, t, delayed):
        """``sigma`` at time(s) ``t`` given the delayed state(s) ``x(t - tau)``."""
        delayed = np.asarray(delayed, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(delayed)
        if self.kind == "bounded-demo":
            return self.coefficient * np.tanh(delayed)
        t = np.atleast_1d(t)
        out = np.array([np.asarray(self.table(s), dtype=float) for s in t]).reshape(delayed.shape)
        if not np.all(np.isfinite(out)):
            raise ValueError("tabulated neutral term is not finite")
        return out


@dataclass(frozen=True, eq=False)
class NeutralSystem:
    base: ImpulsiveSystem
    sigma: NeutralTerm
    history: HistorySegment
    convention: str = "paper"

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")
        if self.history.dim != self.base.dim:
            raise ValueError("history dimension does not match the system")
        if not self.sigma.is_zero and self.history.span < self.sigma.delay - 1e-12:
            raise ValueError("history shorter than the delay")
        if np.max(np.abs(self.history.present - self.base.x0)) > 1e-12 * max(1.0, np.max(np.abs(self.base.x0))):
            raise ValueError("history value at 0 must equal the initial state")

    @property
    def dim(self) -> int:
        return self.base.dim

    def with_convention(self, convention):
        if convention is None or convention == self.convention:
            return self
        return NeutralSystem(self.base, self.sigma, self.history, convention)

    def delayed(self, traj: Trajectory | None, ts) -> np.ndarray:
        """``x(t - tau)`` for each ``t``: history for negative arguments, else ``traj``.

        When ``traj.smooth`` holds the ``z`` part (standard convention) the
        state is rebuilt as ``z(s) - sigma(s, x(s - tau))``, which avoids
        interpolating across the jumps that ``sigma`` inherits from impulses.
        """
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        s = ts - self.sigma.delay
        out = np.empty((ts.size, self.dim))
        past = s <= 0
        if past.any():
            out[past] = self.history(s[past])
        if (~past).any():
            if traj is None:
                raise ValueError("need a trajectory for delayed arguments past t = 0")
            sp = s[~past]
            if traj.smooth is not None:
                out[~past] = traj.smooth.evaluate_many(sp) - self.sigma.value(sp, self.delayed(traj, sp))
            else:
                out[~past] = traj.evaluate_many(sp, side="left")
        return out

    def sigma_at(self, traj, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return self.sigma.value(ts, self.delayed(traj, ts))

    def start(self) -> np.ndarray:
        """``phi(0) + sigma(0, phi)``."""
        return self.history.present + self.sigma_at(None, [0.0])[0]


def _subtract_offsets(z: Trajectory, seg_off, node_off, keep_smooth) -> Trajectory:
    segs = [(t, x - o) for (t, x), o in zip(z.segments, seg_off)]
    rights = [segs[k + 1][1][0].copy() for k in range(len(segs) - 1)]
    nodes = [x - o for x, o in zip(z.node_states, node_off)]
    return Trajectory(z.breakpoints, segs, rights, nodes, z.node_times,
                      smooth=z if keep_smooth else None)


def _offsets(nsys: NeutralSystem, prev: Trajectory, template: Trajectory):
    """Offsets on the template's sample and node times plus the ``z`` jump offsets."""
    b = nsys.base.horizon
    if nsys.convention == "paper":
        sb = nsys.sigma_at(prev, [b])[0]
        seg_off = [np.broadcast_to(sb, x.shape) for _, x in template.segments]
        node_off = [np.broadcast_to(sb, x.shape) for x in template.node_states]
        return seg_off, node_off, None
    seg_off = [nsys.sigma_at(prev, t) for t, _ in template.segments]
    node_off = [nsys.sigma_at(prev, t.ravel()).reshape(x.shape)
                for t, x in zip(template.node_times, template.node_states)]
    times = nsys.base.times
    sk = nsys.sigma_at(prev, times) if times else np.zeros((0, nsys.dim))
    jumps = [-B @ s for B, s in zip(nsys.base.jumps, sk)]
    return seg_off, node_off, jumps


def _terminal_offset(nsys, traj):
    return nsys.sigma_at(traj, [nsys.base.horizon])[0]


def _kappa_nodes(nsys, grid, prev, known):
    nl = nsys.base.nonlinearity
    if nl.state_dependent:
        return _kappa_on_nodes(nl, prev, grid)
    return known


def neutral_mild_solve(nsys: NeutralSystem, u=None, v=None, grid: QuadratureGrid | None = None,
                       tol: float = 1e-10, max_iter: int = 200, damping: float = 1.0,
                       initial: Trajectory | None = None, convention: str | None = None) -> Trajectory:
    """Mild solution of the neutral impulsive system by Picard iteration.

    With ``sigma = zero`` this is :func:`mild_solve_semilinear` on the base
    system, output for output.
    """
    nsys = nsys.with_convention(convention)
    base = nsys.base
    if nsys.sigma.is_zero:
        return mild_solve_semilinear(base, u, v, grid, tol, max_iter, damping, initial)
    grid = _check_grid(base, grid)
    v = _impulse_controls(base, v)
    plain = _plain(base)
    F = _forcing_arrays(plain, grid, u, None)
    known = forcing_on_nodes(base, grid, None) if not base.nonlinearity.state_dependent else None
    z0 = nsys.start()

    def step(prev):
        kap = _kappa_nodes(nsys, grid, prev, known)
        forcing = [a + c for a, c in zip(F, kap)]
        seg_off, node_off, jumps = _offsets(nsys, prev, prev)
        z = _propagate(base, z0, forcing, grid, v, jumps)
        return _subtract_offsets(z, seg_off, node_off, nsys.convention == "standard")

    if initial is None:
        kap0 = known if known is not None else [np.zeros_like(a) for a in F]
        initial = _propagate(base, base.x0, [a + c for a, c in zip(F, kap0)], grid, v)
    return picard(step, initial, tol, max_iter, damping, "neutral Picard iteration")


class _Recorder:
    """Samples of ``x`` produced so far by the delay oracle, for delayed lookups."""

    def __init__(self, nsys):
        self.nsys = nsys
        self.times, self.states = [], []  # per segment

    def new_segment(self):
        self.times.append([])
        self.states.append([])

    def add(self, t, x):
        self.times[-1].append(t)
        self.states[-1].append(x)

    def __call__(self, s):
        if s <= 0:
            return self.nsys.history(np.array([s]))[0]
        for times, states in zip(self.times, self.states):
            if times and times[0] <= s <= times[-1] + 1e-14:
                i = bisect.bisect_left(times, s)
                if i < len(times) and times[i] == s:
                    return states[i]
                n = min(4, len(times))
                lo = min(max(i - n // 2, 0), len(times) - n)
                ts = np.array(times[lo : lo + n])
                xs = np.array(states[lo : lo + n])
                wts = np.array([np.prod([(s - ts[j]) / (ts[i2] - ts[j]) for j in range(n) if j != i2])
                                for i2 in range(n)])
                return wts @ xs
        raise ValueError(f"delayed state at {s} not yet available; use a step smaller than the delay")


def _oracle_pass(nsys, u, v, step, sigma_b):
    base = nsys.base
    A = base.model.generator()
    Omega = base.input_map
    nl = base.nonlinearity
    bp = base.breakpoints
    rec = _Recorder(nsys)
    sig = nsys.sigma

    def offset(t):
        if sigma_b is not None:
            return sigma_b
        return sig.value(np.array([t]), rec(t - sig.delay)[None, :])[0]

    y = nsys.start()
    segments, rights = [], []
    for k in range(len(bp) - 1):
        uk = interval_control(u, k)

        def rhs(t, yy):
            out = A @ yy
            if uk is not None:
                out = out + Omega @ np.atleast_1d(np.asarray(uk(t), dtype=float))
            if nl.active:
                out = out + nl(t, yy - offset(t))
            return out

        n = max(1, int(np.ceil((bp[k + 1] - bp[k]) / step - 1e-9)))
        h = (bp[k + 1] - bp[k]) / n
        times = bp[k] + h * np.arange(n + 1)
        times[-1] = bp[k + 1]
        xs = np.empty((n + 1, y.size))
        rec.new_segment()
        xs[0] = y - offset(times[0])
        rec.add(times[0], xs[0])
        for i in range(n):
            t = times[i]
            k1 = rhs(t, y)
            k2 = rhs(t + h / 2, y + h / 2 * k1)
            k3 = rhs(t + h / 2, y + h / 2 * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            xs[i + 1] = y - offset(times[i + 1])
            rec.add(times[i + 1], xs[i + 1])
        if not np.all(np.isfinite(xs)):
            raise DivergenceError(f"RK4 blow-up on subinterval {k}")
        segments.append((times, xs))
        if k < base.n_impulses:
            B = base.jumps[k]
            y = y + B @ y + base.impulse_inputs[k] @ v[k]
            if sigma_b is None:
                y = y - B @ offset(bp[k + 1])
            rights.append(y - offset(bp[k + 1]))
    return Trajectory(bp, segments, rights)


def neutral_dense_oracle(nsys: NeutralSystem, u=None, v=None, step: float = 1e-3,
                         convention: str | None = None, tol: float = 1e-13,
                         max_iter: int = 100) -> Trajectory:
    """Method-of-steps RK4 reference for the neutral system.

    The ``paper`` convention iterates the constant ``sigma(b, x_b)`` to a
    fixed point, re-integrating each time.
    """
    nsys = nsys.with_convention(convention)
    base = nsys.base
    if nsys.sigma.is_zero:
        return dense_oracle(base, u, v, step)
    if step >= nsys.sigma.delay:
        raise ValueError("oracle step must be smaller than the delay")
    v = _impulse_controls(base, v)
    if nsys.convention == "standard":
        return _oracle_pass(nsys, u, v, step, None)
    sb = np.zeros(nsys.dim)
    history = []
    for it in range(1, max_iter + 1):
        traj = _oracle_pass(nsys, u, v, step, sb)
        new = _terminal_offset(nsys, traj)
        gap = float(np.max(np.abs(new - sb)))
        history.append(gap)
        sb = new
        if gap <= tol * (1 + float(np.max(np.abs(sb)))):
            traj = _oracle_pass(nsys, u, v, step, sb)
            traj.iterations = it
            traj.gap_history = history
            return traj
    raise ConvergenceError("neutral oracle did not converge", history)


def _neutral_moment(nsys, grid, h, xi, known):
    base = nsys.base
    kap = _kappa_nodes(nsys, grid, xi, known)
    _, _, jumps = _offsets(nsys, xi, xi) if nsys.convention == "standard" else (None, None, None)
    p = moment_vector(base, kap, h, grid, x0=nsys.start(), jump_offsets=jumps)
    return p + _terminal_offset(nsys, xi)


def neutral_synthesize(nsys: NeutralSystem, gramians: GramianSet, h, alpha: float,
                       grid: QuadratureGrid | None = None, outer_tol: float = 1e-10,
                       max_outer: int = 100, damping: float = 1.0, paper_literal: bool = False,
                       inner_tol: float = 1e-10, inner_max_iter: int = 200,
                       convention: str | None = None) -> SynthesisResult:
    """Outer fixed-point synthesis for the neutral system.

    The moment vector is ``p_sigma = h - z_free(b) + sigma(b, x_b)`` with
    ``z_free`` the uncontrolled ``z`` flow under the frozen forcing.  With
    ``sigma = zero`` this is :func:`semilinear_synthesize` on the base system.
    """
    nsys = nsys.with_convention(convention)
    base = nsys.base
    if nsys.sigma.is_zero:
        return semilinear_synthesize(base, gramians, h, alpha, grid, outer_tol, max_outer,
                                     damping, paper_literal, inner_tol, inner_max_iter)
    if not 0.1 <= damping <= 1:
        raise ValueError("damping must lie in [0.1, 1]")
    grid = _check_grid(base, grid)
    h = np.asarray(h, dtype=float)
    known = forcing_on_nodes(base, grid, None) if not base.nonlinearity.state_dependent else None
    xi = neutral_mild_solve(nsys, grid=grid, tol=inner_tol, max_iter=inner_max_iter)
    history = []
    for it in range(1, max_outer + 1):
        p = _neutral_moment(nsys, grid, h, xi, known)
        law = synthesize(base, gramians, alpha, p, paper_literal)
        new = neutral_mild_solve(nsys, law, law.v, grid, inner_tol, inner_max_iter, initial=xi)
        gap = new.sup_gap(xi)
        history.append(gap)
        if not np.isfinite(gap):
            raise DivergenceError(f"neutral outer iteration produced a non-finite iterate at step {it}")
        xi = xi.blend(new, damping) if damping < 1 else new
        if gap <= outer_tol * (1 + xi.sup_norm()):
            p = _neutral_moment(nsys, grid, h, xi, known)
            res = gramians.norm(xi.terminal - h - predicted_deviation(gramians, alpha, p))
            return SynthesisResult(law, xi, it, history, res, p)
    raise ConvergenceError(f"neutral synthesis loop did not converge in {max_outer} steps", history)


def neutral_alpha_sweep(nsys: NeutralSystem, gramians: GramianSet | None, h, alphas=DEFAULT_ALPHAS,
                        grid: QuadratureGrid | None = None, jobs: int = 1,
                        paper_literal: bool = False, convention: str | None = None,
                        **outer) -> list:
    """Neutral counterpart of :func:`alpha_sweep` (semilinear mode)."""
    nsys = nsys.with_convention(convention)
    base = nsys.base
    if nsys.sigma.is_zero:
        return alpha_sweep(base, gramians, h, alphas, "semilinear", grid, jobs, paper_literal, **outer)
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size == 0 or np.any(alphas <= 0) or np.any(np.diff(alphas) >= 0):
        raise ValueError("alphas must be positive and strictly decreasing")
    grid = _check_grid(base, grid)
    if gramians is None:
        gramians = assemble(base, grid)
    h = np.asarray(h, dtype=float)

    def row(alpha):
        try:
            res = neutral_synthesize(nsys, gramians, h, alpha, grid, paper_literal=paper_literal, **outer)
            measured = gramians.norm(res.trajectory.terminal - h)
            predicted = gramians.norm(predicted_deviation(gramians, alpha, res.moment))
            plateau = kernel_component(gramians, res.moment)
            status = (f"plateau={plateau:.6e}"
                      if plateau > 1e-12 * max(1.0, gramians.norm(res.moment)) else "ok")
            return SweepRow(float(alpha), measured, predicted, res.outer_iterations, status)
        except ConvergenceError as exc:
            return SweepRow(float(alpha), np.nan, np.nan, len(exc.history), "nonconverged")
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            return SweepRow(float(alpha), np.nan, np.nan, 0, "failed")

    for a in alphas:
        gramians.factor(a)
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(row, alphas))
    return [row(a) for a in alphas]
