"""Ready-made systems: truncated heat and wave equations and the 2-D rotation example."""

from __future__ import annotations

import warnings

import numpy as np

from .exceptions import ControllabilityWarning
from .operators import ImpulsiveSystem, Nonlinearity, SemigroupModel

__all__ = [
    "PRESETS",
    "make_heat",
    "make_wave",
    "make_rotation_example",
    "rotation_example_inputs",
    "heat_input_map",
    "make_preset",
    "truncation_change",
]

PRESETS = ("heat-dirichlet", "heat-neumann", "wave", "rotation-example")

ROTATION_A = np.array([[0.0, 1.0], [-1.0, 0.0]])
ROTATION_INPUT = np.array([[1.0, 0.0], [0.0, 0.0]])
ROTATION_B1 = np.array([[0.0, 0.0], [0.0, -0.5]])
ROTATION_D1 = np.array([[1.0], [0.0]])


def heat_eigenvalues(N, variant="dirichlet"):
    if N < 1:
        raise ValueError("need at least one mode")
    if variant == "dirichlet":
        n = np.arange(1, N + 1)
        return -(n.astype(float) ** 2)
    if variant == "neumann":
        n = np.arange(0, N)
        return -(n.astype(float) ** 2) * np.pi**2
    raise ValueError(f"unknown heat variant {variant!r}")


def heat_input_map(N):
    """Truncation of ``u -> 2 u_2 e_1 + sum_{n>=2} u_n e_n``; columns are ``u_2 .. u_N``."""
    if N < 2:
        raise ValueError("the heat input map needs N >= 2 (it starts at u_2)")
    Omega = np.zeros((N, N - 1))
    Omega[0, 0] = 2.0
    Omega[1:, :] = np.eye(N - 1)
    return Omega


def make_heat(N=8, b=1.0, variant="dirichlet", impulses=(0.5,), input_map=None,
              x0=None, nonlinearity=None):
    """Spectral truncation of the 1-D heat equation.

    Dirichlet modes have eigenvalues ``-n**2`` (``n = 1..N``); Neumann modes
    ``-n**2 pi**2`` (``n = 0..N-1``, so the constant mode is included).
    Every impulse uses ``B_k = D_k = -I``.

    ``input_map`` defaults to the two-to-one map above for Dirichlet and to
    the identity (distributed control) for Neumann.
    """
    eig = heat_eigenvalues(N, variant)
    if input_map is None:
        input_map = heat_input_map(N) if variant == "dirichlet" else np.eye(N)
    elif isinstance(input_map, str):
        input_map = {"example": heat_input_map, "identity": np.eye}[input_map](N)
    if x0 is None:
        x0 = 1.0 / np.arange(1, N + 1)
    times = tuple(impulses)
    return ImpulsiveSystem(
        model=SemigroupModel.spectral(eig),
        horizon=b,
        input_map=input_map,
        x0=x0,
        times=times,
        jumps=tuple(-np.eye(N) for _ in times),
        impulse_inputs=tuple(-np.eye(N) for _ in times),
        nonlinearity=nonlinearity or Nonlinearity(),
    )


def make_wave(N=4, b=2 * np.pi + 1.0, gammas=None, impulses=(1.0,), x0=None, nonlinearity=None):
    """Plucked-string model in Fourier coefficients ``(alpha_1, beta_1, ..., alpha_N, beta_N)``.

    The control enters the velocity equation through a profile with sine
    coefficients ``gammas`` (default ``1/m``).  Impulses add arbitrary
    coefficient vectors (``B_k = 0``, ``D_k = I``).  A warning is issued when
    fewer than ``2 pi`` time units follow the last impulse.
    """
    m = np.arange(1, N + 1, dtype=float)
    gammas = 1.0 / m if gammas is None else np.asarray(gammas, dtype=float)
    if gammas.shape != (N,):
        raise ValueError(f"need {N} profile coefficients, got {gammas.shape}")
    if np.any(gammas == 0):
        raise ValueError("every profile coefficient gamma_m must be nonzero")
    times = tuple(impulses)
    t_last = times[-1] if times else 0.0
    if b - t_last < 2 * np.pi:
        warnings.warn(
            f"only {b - t_last:.3f} time units after the last impulse; approximate "
            "controllability of the wave model is guaranteed from 2*pi onwards",
            ControllabilityWarning,
            stacklevel=2,
        )
    d = 2 * N
    Omega = np.zeros((d, 1))
    Omega[1::2, 0] = gammas
    if x0 is None:
        x0 = np.zeros(d)
        x0[0] = 1.0
    return ImpulsiveSystem(
        model=SemigroupModel.wave(m),
        horizon=b,
        input_map=Omega,
        x0=x0,
        times=times,
        jumps=tuple(np.zeros((d, d)) for _ in times),
        impulse_inputs=tuple(np.eye(d) for _ in times),
        nonlinearity=nonlinearity or Nonlinearity(),
    )


def make_rotation_example(impulsive=True, nonlinear=True):
    """Two-dimensional rotation example with one impulse at ``t = 1`` on ``[0, 2]``.

    ``x0 = (1, 0)``, ``kappa = (0, 0.1 x_1**2)``, input map ``[[1, 0], [0, 0]]``.
    Pair with :func:`rotation_example_inputs` for the nominal controls.
    """
    times = (1.0,) if impulsive else ()
    return ImpulsiveSystem(
        model=SemigroupModel.dense(ROTATION_A),
        horizon=2.0,
        input_map=ROTATION_INPUT,
        x0=np.array([1.0, 0.0]),
        times=times,
        jumps=(ROTATION_B1,) if impulsive else (),
        impulse_inputs=(ROTATION_D1,) if impulsive else (),
        nonlinearity=Nonlinearity("example53-quadratic", 0.1) if nonlinear else Nonlinearity(),
    )


def rotation_example_inputs(system, control=True):
    """Nominal ``(u, v)``: ``u = (1, 0)`` (or zero) and ``v_1 = 1``."""
    u = np.array([1.0, 0.0]) if control else np.zeros(2)
    v = [np.array([1.0]) for _ in system.times]
    return u, v


def make_preset(name, N=None, horizon=None, impulses=None, nonlinearity=None, gammas=None, x0=None):
    """Build a preset by name, overriding only the arguments that are given."""
    kw = {}
    if horizon is not None:
        kw["b"] = horizon
    if impulses is not None:
        kw["impulses"] = tuple(impulses)
    if x0 is not None:
        kw["x0"] = x0
    if nonlinearity is not None:
        kw["nonlinearity"] = nonlinearity
    if name in ("heat-dirichlet", "heat-neumann"):
        variant = name.split("-")[1]
        if N is None:
            N = 8 if variant == "dirichlet" else 4
        return make_heat(N, variant=variant, **kw)
    if name == "wave":
        return make_wave(4 if N is None else N, gammas=gammas, **kw)
    if name == "rotation-example":
        sys_ = make_rotation_example(impulsive=impulses is None or len(impulses) > 0)
        if nonlinearity is not None:
            sys_ = sys_.replace(nonlinearity=nonlinearity)
        if x0 is not None:
            sys_ = sys_.replace(x0=x0)
        if horizon is not None:
            sys_ = sys_.replace(horizon=horizon)
        if impulses:
            sys_ = sys_.replace(times=tuple(impulses), jumps=(ROTATION_B1,) * len(impulses),
                                impulse_inputs=(ROTATION_D1,) * len(impulses))
        return sys_
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def truncation_change(variant="dirichlet", N=8, b=1.0, impulses=(0.5,), alpha=1e-3):
    """Change in the closed-loop terminal error when going from ``N`` to ``2N`` modes.

    Both truncations are steered to the first-mode unit target with the
    regularized control at ``alpha``; the return value is
    ``| |x_2N(b) - h_2N| - |x_N(b) - h_N| |``, measured rather than assumed
    to be small.
    """
    from .gramian import assemble
    from .synthesis import alpha_sweep

    errs = []
    for n in (N, 2 * N):
        system = make_heat(n, b, variant, impulses)
        h = np.zeros(n)
        h[0] = 1.0
        row = alpha_sweep(system, assemble(system), h, [alpha])[0]
        errs.append(row.measured_error)
    return float(abs(errs[1] - errs[0]))
