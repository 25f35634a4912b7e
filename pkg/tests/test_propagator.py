import numpy as np
import pytest

from impulsive_control import (
    ImpulsiveSystem,
    Nonlinearity,
    QuadratureGrid,
    SemigroupModel,
    dense_oracle,
    evolve,
    jump_apply,
    make_heat,
    make_rotation_example,
    make_wave,
    mild_solve_linear,
    mild_solve_semilinear,
    rotation_example_inputs,
)
from impulsive_control.exceptions import ConvergenceError, DivergenceError
from impulsive_control.models import ROTATION_B1, ROTATION_D1


def scalar(nonlinearity=None, x0=0.0, b=1.0, A=0.0):
    return ImpulsiveSystem(SemigroupModel.dense([[A]]), b, np.eye(1), np.array([x0]),
                           nonlinearity=nonlinearity or Nonlinearity())


def assert_jump_invariant(system, traj, v):
    for k in range(system.n_impulses):
        expect = jump_apply(system.jumps[k], system.impulse_inputs[k], traj.left_limits[k], v[k])
        np.testing.assert_allclose(traj.right_limits[k], expect, atol=1e-10)


# --- quadrature grid ---------------------------------------------------------

def test_grid_weights_sum_to_lengths():
    g = QuadratureGrid.for_system(make_heat(4, impulses=(0.3, 0.55)))
    for k in range(g.n_intervals):
        L = g.breakpoints[k + 1] - g.breakpoints[k]
        assert abs(g.weights(k).sum() - L) < 1e-12
        assert np.all(g.weights(k) > 0)


def test_grid_nodes_stay_inside_subintervals():
    g = QuadratureGrid.for_system(make_rotation_example())
    for k in range(g.n_intervals):
        n = g.nodes(k)
        assert n.min() > g.breakpoints[k] and n.max() < g.breakpoints[k + 1]


def test_grid_refines_stiff_models():
    g = QuadratureGrid.for_system(make_heat(8, impulses=()))
    assert g.panels[0] >= 64
    assert QuadratureGrid.for_system(make_rotation_example()).panels == (16, 16)


def test_grid_validation():
    with pytest.raises(ValueError):
        QuadratureGrid([0.0, 1.0, 0.5], (1, 1))
    with pytest.raises(ValueError):
        QuadratureGrid([0.0, 1.0], (0,))


def test_grid_exact_for_polynomials():
    g = QuadratureGrid([0.0, 0.4, 1.0], (3, 2), order=8)
    total = sum(float(np.sum(g.weights(k) * g.nodes(k) ** 15)) for k in range(2))
    assert abs(total - 1 / 16) < 1e-14


# --- linear mild solution ----------------------------------------------------

def test_pure_semigroup_flow():
    sys_ = make_rotation_example(impulsive=False, nonlinear=False)
    traj = mild_solve_linear(sys_)
    for t, _, x in traj.rows():
        np.testing.assert_allclose(x, evolve(sys_.model, t, sys_.x0), atol=1e-13)


def test_scalar_integral_closed_form():
    traj = mild_solve_linear(scalar(x0=0.25), u=[1.0])
    assert abs(traj.terminal[0] - 1.25) < 1e-14


def test_rotation_first_jump_decomposition():
    sys_ = make_rotation_example(nonlinear=False)
    u, v = rotation_example_inputs(sys_)
    traj = mild_solve_linear(sys_, u, v)
    S = sys_.model.matrix
    # int_0^1 S(1 - s) (1, 0) ds for the rotation = (sin 1, cos 1 - 1)
    integral = np.array([np.sin(1.0), np.cos(1.0) - 1.0])
    expect = (np.eye(2) + ROTATION_B1) @ (S(1.0) @ sys_.x0 + integral) + ROTATION_D1 @ v[0]
    np.testing.assert_allclose(traj.right_limits[0], expect, atol=1e-13)
    assert_jump_invariant(sys_, traj, v)


def test_left_limit_default_and_right_accessor():
    sys_ = make_rotation_example(nonlinear=False)
    u, v = rotation_example_inputs(sys_)
    traj = mild_solve_linear(sys_, u, v)
    np.testing.assert_array_equal(traj.evaluate(1.0), traj.left_limits[0])
    np.testing.assert_array_equal(traj.evaluate(1.0, side="right"), traj.right_limits[0])
    assert not np.allclose(traj.left_limits[0], traj.right_limits[0])


def test_evaluate_between_samples_is_accurate():
    sys_ = make_rotation_example(impulsive=False, nonlinear=False)
    traj = mild_solve_linear(sys_)
    ts = np.linspace(0.0, 2.0, 37)
    got = traj.evaluate_many(ts)
    for t, x in zip(ts, got):
        np.testing.assert_allclose(x, evolve(sys_.model, t, sys_.x0), atol=1e-12)
        np.testing.assert_allclose(traj.evaluate(t), x, atol=1e-14)


def test_linear_rejects_state_dependent_kappa():
    with pytest.raises(ValueError):
        mild_solve_linear(make_rotation_example())


def test_linear_rejects_bad_controls():
    sys_ = make_rotation_example(nonlinear=False)
    with pytest.raises(ValueError):
        mild_solve_linear(sys_, u=lambda t: np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        mild_solve_linear(sys_, v=[np.ones(1), np.ones(1)])


def test_grid_inconsistent_with_schedule():
    sys_ = make_rotation_example(nonlinear=False)
    wrong = QuadratureGrid([0.0, 0.5, 2.0], (4, 4))
    with pytest.raises(ValueError, match="inconsistent"):
        mild_solve_linear(sys_, grid=wrong)


@pytest.mark.parametrize("make", [
    lambda: make_rotation_example(nonlinear=False),
    lambda: make_heat(6, impulses=(0.3, 0.6)),
    lambda: make_heat(4, variant="neumann"),
    lambda: make_wave(3, b=7.5, impulses=(1.0,)),
])
def test_quadrature_convergence(make):
    sys_ = make()
    u = lambda t: np.cos(3 * t) * np.ones(sys_.n_inputs)
    v = [np.ones(D.shape[1]) for D in sys_.impulse_inputs]
    g = QuadratureGrid.for_system(sys_)
    a = mild_solve_linear(sys_, u, v, g).terminal
    b = mild_solve_linear(sys_, u, v, g.refined(2)).terminal
    assert np.max(np.abs(a - b)) < 1e-10


@pytest.mark.parametrize("control", [True, False])
def test_linear_matches_oracle(control):
    sys_ = make_rotation_example(nonlinear=False)
    u, v = rotation_example_inputs(sys_, control)
    traj = mild_solve_linear(sys_, u, v)
    assert traj.sup_distance(dense_oracle(sys_, u, v, step=1e-3)) < 1e-6


# --- semilinear --------------------------------------------------------------

def test_semilinear_without_kappa_is_linear_bitwise():
    sys_ = make_rotation_example(nonlinear=False)
    u, v = rotation_example_inputs(sys_)
    a = mild_solve_semilinear(sys_, u, v)
    b = mild_solve_linear(sys_, u, v)
    np.testing.assert_array_equal(a.all_states(), b.all_states())


def test_semilinear_rotation_converges_with_jump_invariant():
    sys_ = make_rotation_example()
    u, v = rotation_example_inputs(sys_)
    traj = mild_solve_semilinear(sys_, u, v)
    assert traj.iterations > 1
    assert traj.gap_history[-1] <= 1e-10 * (1 + traj.sup_norm())
    assert_jump_invariant(sys_, traj, v)


def test_semilinear_scalar_sin_matches_oracle():
    sys_ = scalar(Nonlinearity("bounded-sin", 0.1), x0=0.5)
    traj = mild_solve_semilinear(sys_, u=[1.0])
    assert traj.sup_distance(dense_oracle(sys_, u=[1.0], step=1e-3)) < 1e-6


def test_picard_geometric_decrease():
    sys_ = make_heat(4, variant="neumann", nonlinearity=Nonlinearity("bounded-sin", 0.3))
    traj = mild_solve_semilinear(sys_, u=np.ones(4))
    gaps = np.array(traj.gap_history)
    ratios = gaps[1:] / gaps[:-1]
    assert len(ratios) >= 3 and np.all(ratios[:3] < 1)


def test_picard_nonconvergence_reported():
    sys_ = make_rotation_example()
    u, v = rotation_example_inputs(sys_)
    with pytest.raises(ConvergenceError) as err:
        mild_solve_semilinear(sys_, u, v, max_iter=2)
    assert len(err.value.history) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_picard_divergence_reported():
    # x0' = x1, x1' = c x0^2 blows up in finite time well before the horizon
    sys_ = ImpulsiveSystem(SemigroupModel.dense([[0.0, 1.0], [0.0, 0.0]]), 2.0, np.eye(2),
                           np.array([3.0, 0.0]), nonlinearity=Nonlinearity("example53-quadratic", 1e3))
    with pytest.raises((DivergenceError, ConvergenceError)):
        mild_solve_semilinear(sys_, max_iter=50)


def test_damping_still_converges():
    sys_ = make_rotation_example()
    u, v = rotation_example_inputs(sys_)
    a = mild_solve_semilinear(sys_, u, v)
    b = mild_solve_semilinear(sys_, u, v, damping=0.5)
    assert b.iterations > a.iterations
    assert a.sup_gap(b) < 1e-8


# --- oracle ------------------------------------------------------------------

def test_oracle_pure_flow():
    sys_ = make_rotation_example(impulsive=False, nonlinear=False)
    traj = dense_oracle(sys_, step=1e-2)
    np.testing.assert_allclose(traj.terminal, evolve(sys_.model, 2.0, sys_.x0), atol=1e-8)


def test_oracle_fourth_order():
    sys_ = make_rotation_example()
    u, v = rotation_example_inputs(sys_)
    ref = dense_oracle(sys_, u, v, step=1e-3).terminal
    e1 = np.linalg.norm(dense_oracle(sys_, u, v, step=0.04).terminal - ref)
    e2 = np.linalg.norm(dense_oracle(sys_, u, v, step=0.02).terminal - ref)
    assert 12 < e1 / e2 < 20


def test_oracle_rejects_bad_step():
    with pytest.raises(ValueError):
        dense_oracle(make_rotation_example(), step=0.0)
