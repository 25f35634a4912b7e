"""Semigroups, jump maps and the transfer operators built from them.

The state space is ``R^d`` with a diagonal inner product
``<x, y> = sum(w * x * y)``.  The weights are all ones except for the wave
model, where the displacement coefficients carry the ``m**2`` energy weight.
Control spaces always use the Euclidean inner product, so the adjoint of an
input map ``M : R^m -> H`` is ``M.T @ diag(w)``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la

from .exceptions import DimensionError

__all__ = [
    "SemigroupModel",
    "Nonlinearity",
    "ImpulsiveSystem",
    "evolve",
    "evolve_adjoint",
    "jump_apply",
    "downstream_map",
    "downstream_maps",
]

DENSE = "dense-generator"
SPECTRAL = "spectral-diagonal"
WAVE = "wave-block"


def _as_vector(x, dim, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != dim:
        raise DimensionError(f"{name} must have shape ({dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def _as_matrix(M, rows, name, cols=None):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1 and cols is None:
        M = M.reshape(-1, 1)
    if M.ndim != 2 or M.shape[0] != rows or (cols is not None and M.shape[1] != cols):
        want = f"({rows}, {cols if cols is not None else 'm'})"
        raise DimensionError(f"{name} must have shape {want}, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


@dataclass(frozen=True, eq=False)
class SemigroupModel:
    """Evaluator for ``S(t)`` and its Hilbert adjoint.

    Build instances with :meth:`dense`, :meth:`spectral` or :meth:`wave`.

    Parameters
    ----------
    kind : str
        ``"dense-generator"``, ``"spectral-diagonal"`` or ``"wave-block"``.
    data : ndarray
        Generator matrix, eigenvalue list, or per-mode frequency list.
    """

    kind: str
    data: np.ndarray
    _cache: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if not np.all(np.isfinite(data)):
            raise ValueError("generator data must be finite")
        if self.kind == DENSE:
            if data.ndim != 2 or data.shape[0] != data.shape[1]:
                raise DimensionError("dense generator must be a square matrix")
        elif self.kind == SPECTRAL:
            if data.ndim != 1 or data.size == 0:
                raise DimensionError("eigenvalue list must be a non-empty vector")
        elif self.kind == WAVE:
            if data.ndim != 1 or data.size == 0 or np.any(data <= 0):
                raise ValueError("wave frequencies must be a non-empty list of positive numbers")
        else:
            raise ValueError(f"unknown semigroup kind {self.kind!r}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def dense(cls, A):
        return cls(DENSE, A)

    @classmethod
    def spectral(cls, eigenvalues):
        return cls(SPECTRAL, eigenvalues)

    @classmethod
    def wave(cls, frequencies):
        return cls(WAVE, frequencies)

    @property
    def dim(self) -> int:
        if self.kind == DENSE:
            return self.data.shape[0]
        if self.kind == SPECTRAL:
            return self.data.size
        return 2 * self.data.size

    @property
    def weights(self) -> np.ndarray:
        """Diagonal of the inner-product matrix."""
        if self.kind == WAVE:
            w = np.ones(self.dim)
            w[0::2] = self.data**2
            return w
        return np.ones(self.dim)

    def inner(self, x, y) -> float:
        return float(np.sum(self.weights * np.asarray(x) * np.asarray(y)))

    def norm(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.sqrt(np.sum(self.weights * x * x)))

    def generator(self) -> np.ndarray:
        if self.kind == DENSE:
            return self.data.copy()
        if self.kind == SPECTRAL:
            return np.diag(self.data)
        G = np.zeros((self.dim, self.dim))
        for j, m in enumerate(self.data):
            G[2 * j, 2 * j + 1] = 1.0
            G[2 * j + 1, 2 * j] = -(m**2)
        return G

    def spectral_radius(self) -> float:
        """Largest generator eigenvalue magnitude, used to size quadrature panels."""
        if self.kind == SPECTRAL:
            return float(np.max(np.abs(self.data)))
        if self.kind == WAVE:
            return float(np.max(self.data))
        return float(np.max(np.abs(np.linalg.eigvals(self.data))))

    def matrix(self, t: float) -> np.ndarray:
        """Dense matrix of ``S(t)``; ``t`` must be nonnegative."""
        t = float(t)
        if not np.isfinite(t) or t < 0:
            raise ValueError(f"semigroup time must be finite and nonnegative, got {t}")
        if self.kind == SPECTRAL:
            return np.diag(np.exp(self.data * t))
        if self.kind == WAVE:
            S = np.zeros((self.dim, self.dim))
            for j, m in enumerate(self.data):
                c, s = np.cos(m * t), np.sin(m * t)
                S[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] = [[c, s / m], [-m * s, c]]
            return S
        cached = self._cache.get(t)
        if cached is None:
            cached = la.expm(self.data * t)
            cached.setflags(write=False)
            with self._lock:
                self._cache[t] = cached
        return cached.copy()

    def adjoint(self, M) -> np.ndarray:
        """Hilbert adjoint of a state-space operator ``M : H -> H``."""
        w = self.weights
        return (np.asarray(M).T * w) / w[:, None]

    def input_adjoint(self, M) -> np.ndarray:
        """Hilbert adjoint of an input map ``M : R^m -> H``."""
        return np.asarray(M).T * self.weights

    def adjoint_matrix(self, t: float) -> np.ndarray:
        return self.adjoint(self.matrix(t))


def evolve(model: SemigroupModel, dt: float, x) -> np.ndarray:
    """Apply ``S(dt)`` to ``x``."""
    x = _as_vector(x, model.dim)
    if model.kind == SPECTRAL:
        if dt < 0:
            raise ValueError("dt must be nonnegative")
        return np.exp(model.data * dt) * x
    return model.matrix(dt) @ x


def evolve_adjoint(model: SemigroupModel, dt: float, x) -> np.ndarray:
    """Apply the Hilbert adjoint ``S*(dt)`` to ``x``."""
    x = _as_vector(x, model.dim)
    if model.kind == SPECTRAL:
        if dt < 0:
            raise ValueError("dt must be nonnegative")
        return np.exp(model.data * dt) * x
    return model.adjoint_matrix(dt) @ x


def jump_apply(B, D, x, v) -> np.ndarray:
    """Right limit ``(I + B) x + D v`` after an impulse."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    B = _as_matrix(B, d, "B", cols=d)
    D = _as_matrix(D, d, "D")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (D.shape[1],):
        raise DimensionError(f"v must have shape ({D.shape[1]},), got {v.shape}")
    return x + B @ x + D @ v


class Nonlinearity:
    """Forcing term ``kappa(t, x)``.

    Kinds
    -----
    ``none``
        Identically zero.
    ``example53-quadratic``
        ``(0, c * x[0]**2, 0, ...)``.
    ``bounded-sin``
        ``c * sin(x)`` componentwise.
    ``tabulated``
        A known function of time only, given as a callable ``t -> vector``.
    """

    KINDS = ("none", "example53-quadratic", "bounded-sin", "tabulated")

    def __init__(self, kind="none", coefficient=0.0, table: Callable | None = None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown nonlinearity kind {kind!r}")
        coefficient = float(coefficient)
        if not np.isfinite(coefficient):
            raise ValueError("nonlinearity coefficient must be finite")
        if kind == "tabulated" and table is None:
            raise ValueError("tabulated nonlinearity needs a table")
        self.kind = kind
        self.coefficient = coefficient
        self.table = table

    def __repr__(self):
        return f"Nonlinearity({self.kind!r}, coefficient={self.coefficient})"

    @classmethod
    def tabulated(cls, func):
        return cls("tabulated", table=func)

    @property
    def state_dependent(self) -> bool:
        return self.kind in ("example53-quadratic", "bounded-sin")

    @property
    def active(self) -> bool:
        return self.kind != "none"

    def __call__(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "none":
            return np.zeros_like(x)
        if self.kind == "example53-quadratic":
            out = np.zeros_like(x)
            out[..., 1] = self.coefficient * x[..., 0] ** 2
            return out
        if self.kind == "bounded-sin":
            return self.coefficient * np.sin(x)
        out = np.asarray(self.table(t), dtype=float)
        if out.shape != x.shape or not np.all(np.isfinite(out)):
            raise ValueError(f"tabulated forcing at t={t} is not a finite vector of shape {x.shape}")
        return out


@dataclass(frozen=True, eq=False)
class ImpulsiveSystem:
    """Linear or semilinear evolution equation with impulses at fixed times.

    ``jumps[k]`` and ``impulse_inputs[k]`` are the matrices applied at
    ``times[k]``: ``x(t_k+) = (I + B_k) x(t_k) + D_k v_k``.
    """

    model: SemigroupModel
    horizon: float
    input_map: np.ndarray
    x0: np.ndarray
    times: tuple = ()
    jumps: tuple = ()
    impulse_inputs: tuple = ()
    nonlinearity: Nonlinearity = field(default_factory=Nonlinearity)

    def __post_init__(self):
        d = self.model.dim
        b = float(self.horizon)
        if not np.isfinite(b) or b <= 0:
            raise ValueError("horizon must be positive")
        times = tuple(float(t) for t in self.times)
        if len(self.jumps) != len(times) or len(self.impulse_inputs) != len(times):
            raise DimensionError("one jump matrix and one impulse input map per impulse time")
        if any(t <= 0 or t >= b for t in times):
            raise ValueError("impulse times must lie strictly inside (0, horizon)")
        if any(t1 >= t2 for t1, t2 in zip(times, times[1:])):
            raise ValueError("impulse times must be strictly increasing")
        jumps = tuple(_as_matrix(B, d, f"B_{k + 1}", cols=d) for k, B in enumerate(self.jumps))
        inputs = tuple(_as_matrix(D, d, f"D_{k + 1}") for k, D in enumerate(self.impulse_inputs))
        Omega = _as_matrix(self.input_map, d, "input map")
        x0 = _as_vector(self.x0, d, "x0")
        for arr in (*jumps, *inputs, Omega, x0):
            arr.setflags(write=False)
        object.__setattr__(self, "horizon", b)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "impulse_inputs", inputs)
        object.__setattr__(self, "input_map", Omega)
        object.__setattr__(self, "x0", x0)

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def n_impulses(self) -> int:
        return len(self.times)

    @property
    def n_inputs(self) -> int:
        return self.input_map.shape[1]

    @property
    def breakpoints(self) -> np.ndarray:
        """``0 = t_0 < t_1 < ... < t_p < t_{p+1} = b``."""
        return np.array([0.0, *self.times, self.horizon])

    def zero_impulse_controls(self) -> list:
        return [np.zeros(D.shape[1]) for D in self.impulse_inputs]

    def replace(self, **changes) -> "ImpulsiveSystem":
        return replace(self, **changes)

    def without_impulses(self) -> "ImpulsiveSystem":
        return replace(self, times=(), jumps=(), impulse_inputs=())


def downstream_maps(system: ImpulsiveSystem) -> list:
    """All transfer matrices ``E_0, ..., E_p`` from ``t_i+`` to the horizon."""
    model = system.model
    t = system.breakpoints
    p = system.n_impulses
    d = system.dim
    E = [None] * (p + 1)
    E[p] = model.matrix(system.horizon - t[p]) if p else model.matrix(system.horizon)
    for i in range(p - 1, -1, -1):
        step = (np.eye(d) + system.jumps[i]) @ model.matrix(t[i + 1] - t[i])
        E[i] = E[i + 1] @ step
    return E


def downstream_map(system: ImpulsiveSystem, i: int) -> np.ndarray:
    """Transfer matrix ``E_i`` carrying the state at ``t_i+`` to ``t = b``.

    ``E_p = S(b - t_p)`` and ``E_i = E_{i+1} (I + B_{i+1}) S(t_{i+1} - t_i)``.
    With no impulses ``E_0 = S(b)``.
    """
    if not 0 <= i <= system.n_impulses:
        raise IndexError(f"index {i} outside 0..{system.n_impulses}")
    return downstream_maps(system)[i]


def check_vectors(vs: Sequence, sizes: Sequence[int], name: str) -> list:
    if len(vs) != len(sizes):
        raise DimensionError(f"expected {len(sizes)} {name} vectors, got {len(vs)}")
    out = []
    for k, (v, m) in enumerate(zip(vs, sizes)):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.shape != (m,):
            raise DimensionError(f"{name}[{k}] must have shape ({m},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{name}[{k}] contains non-finite entries")
        out.append(v)
    return out
