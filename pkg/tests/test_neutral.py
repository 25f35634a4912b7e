import numpy as np
import pytest

from impulsive_control import (
    HistorySegment,
    ImpulsiveSystem,
    NeutralSystem,
    NeutralTerm,
    Nonlinearity,
    SemigroupModel,
    alpha_sweep,
    assemble,
    make_heat,
    make_rotation_example,
    mild_solve_semilinear,
    neutral_alpha_sweep,
    neutral_dense_oracle,
    neutral_mild_solve,
    neutral_synthesize,
    rotation_example_inputs,
    semilinear_synthesize,
)


def neumann_base():
    return make_heat(4, variant="neumann", nonlinearity=Nonlinearity("bounded-sin", 0.05))


def neutral(base, sigma, convention="paper", span=None):
    span = sigma.delay if span is None else span
    return NeutralSystem(base, sigma, HistorySegment.constant(base.x0, span), convention)


def demo(c=0.05, tau=0.25):
    return NeutralTerm("bounded-demo", c, tau)


# --- zero neutral term reduces to the plain system ---------------------------

def test_zero_sigma_mild_solve_bitwise():
    base = make_rotation_example()
    u, v = rotation_example_inputs(base)
    n = NeutralSystem(base, NeutralTerm(), HistorySegment.constant(base.x0, 1.0))
    a = neutral_mild_solve(n, u, v)
    b = mild_solve_semilinear(base, u, v)
    np.testing.assert_array_equal(a.all_states(), b.all_states())


def test_zero_sigma_synthesis_and_sweep_bitwise():
    base = neumann_base()
    g = assemble(base)
    h = np.array([1.0, 0.5, 0.0, 0.0])
    n = neutral(base, NeutralTerm(delay=0.25))
    a = neutral_synthesize(n, g, h, 1e-3)
    b = semilinear_synthesize(base, g, h, 1e-3)
    np.testing.assert_array_equal(a.trajectory.all_states(), b.trajectory.all_states())
    np.testing.assert_array_equal(a.law.phi, b.law.phi)
    alphas = [1e-1, 1e-2, 1e-3]
    assert neutral_alpha_sweep(n, g, h, alphas) == alpha_sweep(base, g, h, alphas, mode="semilinear")


def test_zero_sigma_oracle_bitwise():
    base = make_rotation_example()
    u, v = rotation_example_inputs(base)
    from impulsive_control import dense_oracle

    n = NeutralSystem(base, NeutralTerm(), HistorySegment.constant(base.x0, 1.0))
    a = neutral_dense_oracle(n, u, v, step=1e-2)
    b = dense_oracle(base, u, v, step=1e-2)
    np.testing.assert_array_equal(a.all_states(), b.all_states())


def test_zero_coefficient_demo_is_pure_flow():
    base = neumann_base()
    n = neutral(base, demo(c=0.0))
    a = neutral_mild_solve(n, u=np.ones(4))
    b = mild_solve_semilinear(base, u=np.ones(4))
    assert a.sup_gap(b) < 1e-13


# --- closed forms with a constant neutral term ------------------------------

def constant_sigma_system(convention):
    base = ImpulsiveSystem(SemigroupModel.dense([[0.0]]), 1.0, np.eye(1), np.array([0.2]),
                           times=(0.5,), jumps=(np.array([[-0.5]]),), impulse_inputs=(np.zeros((1, 1)),))
    sigma = NeutralTerm("tabulated", delay=0.25, table=lambda t: np.array([0.3]))
    return neutral(base, sigma, convention)


def test_constant_sigma_paper_convention():
    # z = x + 0.3 starts at 0.5 and the jump halves z
    traj = neutral_mild_solve(constant_sigma_system("paper"), u=[1.0])
    assert abs(traj.left_limits[0][0] - 0.7) < 1e-13
    assert abs(traj.right_limits[0][0] - (0.5 * 1.0 - 0.3)) < 1e-13
    assert abs(traj.terminal[0] - (0.5 * 1.0 - 0.3 + 0.5)) < 1e-13


def test_constant_sigma_standard_convention():
    # the jump acts on x itself
    traj = neutral_mild_solve(constant_sigma_system("standard"), u=[1.0])
    assert abs(traj.left_limits[0][0] - 0.7) < 1e-13
    assert abs(traj.right_limits[0][0] - 0.35) < 1e-13
    assert abs(traj.terminal[0] - 0.85) < 1e-13


# --- oracle agreement ---------------------------------------------------------

def test_paper_convention_matches_oracle():
    n = neutral(neumann_base(), demo())
    u = lambda t: np.cos(2 * t) * np.ones(4)
    v = [np.full(4, 0.2)]
    traj = neutral_mild_solve(n, u, v)
    ref = neutral_dense_oracle(n, u, v, step=1e-3)
    assert traj.sup_distance(ref) < 1e-5


def test_standard_convention_matches_oracle_away_from_kinks():
    n = neutral(neumann_base(), demo(c=0.2), "standard")
    u = lambda t: np.cos(2 * t) * np.ones(4)
    v = [np.full(4, 0.2)]
    traj = neutral_mild_solve(n, u, v)
    ref = neutral_dense_oracle(n, u, v, step=1e-3)
    # sigma is only Lipschitz at multiples of the delay, so compare between them
    ts = np.array([0.1, 0.37, 0.45, 0.62, 0.9, 0.98])
    got = traj.evaluate_many(ts)
    want = ref.evaluate_many(ts)
    assert np.max(np.abs(got - want)) < 1e-5
    assert np.max(np.abs(traj.right_limits[0] - ref.right_limits[0])) < 1e-5
    assert np.max(np.abs(traj.terminal - ref.terminal)) < 1e-5


def test_conventions_differ_with_jumps():
    base = neumann_base().replace(jumps=(-0.5 * np.eye(4),))
    a = neutral_mild_solve(neutral(base, demo(c=0.2)), u=np.ones(4))
    b = neutral_mild_solve(neutral(base, demo(c=0.2), "standard"), u=np.ones(4))
    assert a.sup_gap(b) > 1e-4


# --- synthesis ---------------------------------------------------------------

def test_neutral_synthesis_terminal_identity():
    n = neutral(neumann_base(), demo())
    g = assemble(n.base)
    res = neutral_synthesize(n, g, np.array([1.0, 0.5, 0.0, 0.0]), 1e-3)
    assert res.terminal_residual < 1e-8


def test_neutral_sweep_decays():
    n = neutral(neumann_base(), demo())
    h = np.array([1.0, 0.5, 0.0, 0.0])
    rows = neutral_alpha_sweep(n, None, h)
    errs = [r.measured_error for r in rows]
    assert all(r.status == "ok" for r in rows)
    assert errs[-1] < 1e-2 * np.linalg.norm(h)
    assert errs[-1] < errs[0]


def test_neutral_standard_sweep_runs():
    n = neutral(neumann_base(), demo(), "standard")
    h = np.array([1.0, 0.5, 0.0, 0.0])
    rows = neutral_alpha_sweep(n, None, h, [1e-1, 1e-3])
    assert rows[-1].measured_error < rows[0].measured_error


# --- validation --------------------------------------------------------------

def test_history_validation():
    base = neumann_base()
    with pytest.raises(ValueError, match="shorter"):
        NeutralSystem(base, demo(tau=0.5), HistorySegment.constant(base.x0, 0.25))
    with pytest.raises(ValueError, match="initial state"):
        NeutralSystem(base, demo(), HistorySegment.constant(base.x0 + 1, 0.25))
    with pytest.raises(ValueError):
        NeutralSystem(base, demo(), HistorySegment.constant(base.x0, 0.25), convention="other")
    hist = HistorySegment.constant(base.x0, 0.25)
    with pytest.raises(ValueError):
        hist(np.array([-0.5]))


def test_history_from_function_interpolates():
    hist = HistorySegment.from_function(lambda t: np.array([np.sin(t), t]), 1.0)
    np.testing.assert_allclose(hist(np.array([-0.37])), [[np.sin(-0.37), -0.37]], atol=1e-7)


def test_neutral_term_validation():
    with pytest.raises(ValueError):
        NeutralTerm("cubic")
    with pytest.raises(ValueError):
        NeutralTerm("bounded-demo", 0.1, delay=0.0)
    with pytest.raises(ValueError):
        NeutralTerm("tabulated")


def test_oracle_step_must_resolve_delay():
    n = neutral(neumann_base(), demo())
    with pytest.raises(ValueError):
        neutral_dense_oracle(n, step=0.5)
