"""Composite Gauss-Legendre grid aligned with the impulse schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

__all__ = ["QuadratureGrid"]


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Gauss-Legendre panels on each subinterval ``[t_k, t_{k+1}]``.

    Panels never straddle a breakpoint, so every integrand that is smooth
    between impulses is integrated at full order.

    Attributes
    ----------
    breakpoints : ndarray
        ``0, t_1, ..., t_p, b``.
    panels : tuple of int
        Panel count for each subinterval.
    order : int
        Nodes per panel.
    """

    breakpoints: np.ndarray
    panels: tuple
    order: int = 8

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 1 or bp.size < 2 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        panels = tuple(int(n) for n in self.panels)
        if len(panels) != bp.size - 1 or min(panels) < 1:
            raise ValueError("need a positive panel count for every subinterval")
        if self.order < 1:
            raise ValueError("quadrature order must be positive")
        bp.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "panels", panels)

    @classmethod
    def for_system(cls, system, order=8, panels=16, max_step_stiffness=1.0):
        """Grid for ``system`` with at least ``panels`` panels per subinterval.

        Subintervals are refined further until ``rho * h <= max_step_stiffness``
        where ``rho`` is the generator's spectral radius and ``h`` the panel
        width; this keeps the within-panel interpolation of fast modes accurate.
        """
        bp = system.breakpoints
        rho = system.model.spectral_radius()
        counts = []
        for a, b in zip(bp[:-1], bp[1:]):
            need = math.ceil((b - a) * rho / max_step_stiffness) if rho > 0 else 1
            counts.append(max(int(panels), need))
        return cls(bp, tuple(counts), order)

    @property
    def n_intervals(self) -> int:
        return len(self.panels)

    def reference_rule(self):
        """Nodes and weights of the ``order``-point rule on ``[0, 1]``."""
        x, w = leggauss(self.order)
        return (x + 1) / 2, w / 2

    def panel_width(self, k: int) -> float:
        return (self.breakpoints[k + 1] - self.breakpoints[k]) / self.panels[k]

    def panel_starts(self, k: int) -> np.ndarray:
        a = self.breakpoints[k]
        return a + self.panel_width(k) * np.arange(self.panels[k])

    def nodes(self, k: int) -> np.ndarray:
        """Node times on subinterval ``k`` with shape ``(panels, order)``."""
        c, _ = self.reference_rule()
        h = self.panel_width(k)
        return self.panel_starts(k)[:, None] + h * c[None, :]

    def weights(self, k: int) -> np.ndarray:
        _, w = self.reference_rule()
        return np.broadcast_to(self.panel_width(k) * w, (self.panels[k], self.order)).copy()

    def matches(self, breakpoints, atol=1e-12) -> bool:
        bp = np.asarray(breakpoints, dtype=float)
        return bp.shape == self.breakpoints.shape and np.allclose(bp, self.breakpoints, rtol=0, atol=atol)

    def refined(self, factor=2) -> "QuadratureGrid":
        return QuadratureGrid(self.breakpoints, tuple(factor * n for n in self.panels), self.order)

    def sample(self, func, dim: int) -> list:
        """Evaluate ``func(k, t)`` on every node; one ``(panels, order, dim)`` array per subinterval."""
        out = []
        for k in range(self.n_intervals):
            ts = self.nodes(k)
            vals = np.empty(ts.shape + (dim,))
            for idx in np.ndindex(ts.shape):
                vals[idx] = func(k, ts[idx])
            out.append(vals)
        return out
