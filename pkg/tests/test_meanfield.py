import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epinet.graph import Graph, generate, lambda_max, random_strongly_connected
from epinet.meanfield import (DISEASE_FREE, Feedback, InvariantError, MetaPopulation, RateModel,
                              closed_form_population_sis, endemic_equilibrium, integrate, rhs_bivirus,
                              rhs_bivirus_rates, rhs_network_sir, rhs_network_sis, rhs_network_sis_matrix_form,
                              rhs_network_spis, rhs_population_sir, rhs_population_sis, rhs_population_sis_full,
                              rhs_sir_patching, rhs_spis_population, time_grid)

probability = st.floats(0.0, 1.0)


# --- integrator ------------------------------------------------------------


def test_zero_rhs_constant_trajectory():
    traj = integrate(lambda t, x: np.zeros_like(x), [0.2, 0.7], 3.0, 0.1)
    assert np.all(traj.states == np.array([0.2, 0.7]))
    assert traj.times[-1] == 3.0


def test_population_sis_matches_closed_form():
    traj = integrate(lambda t, x: rhs_population_sis(x, 2.0, 1.0), [0.3], 10.0, 1e-3)
    assert abs(traj.final[0] - closed_form_population_sis(2.0, 1.0, 0.3, 10.0)) <= 1e-6


def test_rk4_fourth_order_convergence():
    def err(dt):
        traj = integrate(lambda t, x: rhs_population_sis(x, 2.0, 1.0), [0.05], 4.0, dt)
        return np.abs(traj.states[:, 0] - closed_form_population_sis(2.0, 1.0, 0.05, traj.times)).max()

    ratio = err(0.1) / err(0.05)
    assert 13.0 <= ratio <= 19.0


def test_time_grid_hits_breakpoints():
    grid = time_grid(1.0, 0.3, [0.45])
    assert 0.45 in grid and grid[0] == 0.0 and grid[-1] == 1.0
    assert np.diff(grid).max() <= 0.3 + 1e-12
    with pytest.raises(ValueError):
        time_grid(1.0, 0.1, [1.5])


def test_large_overshoot_aborts_with_time():
    with pytest.raises(InvariantError, match="t="):
        integrate(lambda t, x: np.ones_like(x), [0.9], 1.0, 0.1)


def test_small_overshoot_is_clamped():
    traj = integrate(lambda t, x: np.full_like(x, 1e-13), [1.0], 1.0, 1.0)
    assert traj.final[0] == 1.0


def test_trajectory_csv_format():
    traj = integrate(lambda t, x: -x, [1.0 / 3.0], 0.2, 0.1, columns=("p",), box=False)
    lines = traj.to_csv().splitlines()
    assert lines[0] == "t,p"
    assert lines[1] == "0,0.333333333333"


# --- closed form -----------------------------------------------------------


def test_closed_form_endemic_limit():
    assert closed_form_population_sis(2.0, 1.0, 0.5, 50.0) == pytest.approx(0.5, abs=1e-9)


def test_closed_form_equal_rates_branch():
    assert closed_form_population_sis(1.0, 1.0, 1.0, 1.0) == pytest.approx(0.5, abs=1e-15)


def test_closed_form_zero_initial():
    assert np.all(closed_form_population_sis(2.0, 1.0, 0.0, np.linspace(0, 5, 7)) == 0.0)


def test_closed_form_branch_continuity():
    near = closed_form_population_sis(1.0 + 1e-9, 1.0, 0.4, 3.0)
    assert near == pytest.approx(closed_form_population_sis(1.0, 1.0, 0.4, 3.0), rel=1e-7)


# --- population right-hand sides -------------------------------------------


def test_population_disease_free_equilibrium():
    assert rhs_population_sis([0.0], 2.0, 1.0)[0] == 0.0
    assert np.all(rhs_population_sir([1.0, 0.0], 2.0, 1.0) == 0.0)


def test_population_sis_endemic_point():
    assert rhs_population_sis([1 - 1.0 / 3.0], 3.0, 1.0)[0] == pytest.approx(0.0, abs=1e-15)


def test_population_sir_hand_evaluation():
    assert np.allclose(rhs_population_sir([0.6, 0.3], 1.0, 0.5), [-0.18, 0.03], atol=1e-15)


@given(probability, st.floats(0.0, 5.0), st.floats(0.01, 5.0))
def test_population_sis_full_conserves(i, beta, delta):
    assert abs(rhs_population_sis_full([1 - i, i], beta, delta).sum()) <= 1e-14


# --- network SIS -----------------------------------------------------------


def test_network_sis_zero_state():
    g = generate("complete", 4)
    assert np.all(rhs_network_sis(np.zeros(4), g, RateModel.homogeneous(g, 1.0, 1.0)) == 0.0)


def test_network_sis_pair_hand_evaluation():
    g = generate("complete", 2)
    assert np.allclose(rhs_network_sis([1.0, 0.0], g, RateModel.homogeneous(g, 1.0, 1.0)), [-1.0, 1.0])


def test_network_sis_dimension_mismatch():
    g = generate("complete", 3)
    with pytest.raises(ValueError):
        rhs_network_sis(np.zeros(4), g, RateModel.homogeneous(g, 1.0, 1.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_matrix_form_agrees(seed, n):
    rng = np.random.default_rng(seed)
    g = random_strongly_connected(n, 0.3, seed, weighted=True)
    rates = RateModel.node_rates(g, rng.uniform(0, 2, n), rng.uniform(0.1, 2, n))
    p = rng.random(n)
    assert np.abs(rhs_network_sis(p, g, rates) - rhs_network_sis_matrix_form(p, rates)).max() <= 1e-14


def test_rate_model_validation():
    g = generate("complete", 2)
    with pytest.raises(ValueError):
        RateModel.homogeneous(g, 1.0, 0.0)
    with pytest.raises(ValueError):
        RateModel(np.ones(2), -np.ones((2, 2)) + np.eye(2))


# --- endemic equilibrium ---------------------------------------------------


def test_equilibrium_complete_graph_closed_value():
    g = generate("complete", 6)
    beta, delta = 0.5, 1.0
    p = endemic_equilibrium(g, RateModel.homogeneous(g, beta, delta))
    assert np.allclose(p, 1 - delta / (beta * 5), atol=1e-10)


def test_equilibrium_residual():
    g = random_strongly_connected(7, 0.3, 2)
    rates = RateModel.node_rates(g, np.linspace(0.8, 1.5, 7), np.linspace(0.3, 0.6, 7))
    p = endemic_equilibrium(g, rates)
    assert np.all((p > 0) & (p < 1))
    assert np.abs(rhs_network_sis(p, g, rates)).max() <= 1e-8


def test_equilibrium_disease_free():
    g = generate("complete", 5)
    assert endemic_equilibrium(g, RateModel.homogeneous(g, 0.1, 1.0)) == DISEASE_FREE


def test_equilibrium_requires_strong_connectivity():
    with pytest.raises(ValueError):
        endemic_equilibrium(Graph(2, ((0, 1, 1.0),)), RateModel(np.ones(2), np.array([[0, 3.0], [0, 0]])))


def test_long_integration_reaches_equilibrium():
    g = random_strongly_connected(6, 0.4, 9)
    rates = RateModel.homogeneous(g, 0.9, 1.0)
    target = endemic_equilibrium(g, rates)
    p0 = np.random.default_rng(1).random(6)
    traj = integrate(lambda t, x: rhs_network_sis(x, g, rates), p0, 200.0, 0.01)
    assert np.abs(traj.final - target).max() <= 1e-6


def test_threshold_dichotomy_small_sweep():
    for seed in range(4):
        g = random_strongly_connected(6, 0.3, seed)
        lam = lambda_max(g.adjacency).lambda_max
        for tau in (0.7 / lam, 1.5 / lam):
            rates = RateModel.homogeneous(g, tau, 1.0)
            traj = integrate(lambda t, x: rhs_network_sis(x, g, rates), np.full(6, 0.5), 500.0, 0.05)
            if tau * lam <= 1:
                assert np.abs(traj.final).max() <= 1e-5
            else:
                assert np.abs(traj.final - endemic_equilibrium(g, rates)).max() <= 1e-5


# --- SPIS ------------------------------------------------------------------


def test_spis_reduces_to_sis():
    zero = Feedback("constant", 0.0)
    d = rhs_spis_population([0.6, 0.4, 0.0], 2.0, 1.0, zero, zero)
    sis = rhs_population_sis_full([0.6, 0.4], 2.0, 1.0)
    assert np.allclose(d[:2], sis, atol=1e-15) and d[2] == 0.0


def test_spis_strong_protection_grows_protected():
    d = rhs_spis_population([0.5, 0.3, 0.2], 2.0, 1.0, Feedback("constant", 50.0), Feedback("constant", 0.0))
    assert d[2] > 0


def test_spis_hand_evaluation():
    d = rhs_spis_population([0.5, 0.3, 0.2], 2.0, 1.0, lambda s, i, p: i, lambda s, i, p: 0.1)
    assert np.allclose(d, [-0.13, 0.0, 0.13], atol=1e-15)


def test_spis_negative_feedback_named():
    with pytest.raises(ValueError, match="'g'"):
        rhs_spis_population([0.5, 0.3, 0.2], 2.0, 1.0, lambda s, i, p: 0.0, lambda s, i, p: -1.0)


@given(probability, probability, st.floats(0, 3), st.floats(0.01, 3), st.floats(0, 2), st.floats(0, 2))
def test_spis_population_conserves(a, b, beta, delta, fa, ga):
    s, i = a * (1 - b), b * (1 - a)
    state = [s, i, 1 - s - i]
    d = rhs_spis_population(state, beta, delta, Feedback("linear", fa), Feedback("constant", ga))
    assert abs(d.sum()) <= 1e-14


def test_network_spis_hand_evaluation():
    g = generate("path", 3)
    rates = RateModel.homogeneous(g, 1.0, 0.5, beta0=0.2)
    state = np.array([0.5, 0.6, 0.7, 0.3, 0.2, 0.1, 0.2, 0.2, 0.2])
    d = rhs_network_spis(state, g, rates, Feedback("constant", 0.3))
    expected = [-0.1, -0.32, -0.30, -0.042, 0.156, 0.098, 0.142, 0.164, 0.202]
    assert np.allclose(d, expected, atol=1e-14)


def test_network_spis_reduces_to_sis():
    g = random_strongly_connected(5, 0.3, 1)
    rates = RateModel.homogeneous(g, 0.8, 0.5, beta0=0.1)
    i = np.random.default_rng(0).random(5)
    d = rhs_network_spis(np.concatenate([1 - i, i, np.zeros(5)]), g, rates, Feedback("constant", 0.0))
    assert np.allclose(d[5:10], rhs_network_sis(i, g, RateModel.homogeneous(g, 0.8, 0.5)), atol=1e-15)


def test_network_spis_no_protected_infection_without_beta0():
    g = generate("complete", 3)
    rates = RateModel.homogeneous(g, 1.0, 0.5, beta0=0.0)
    state = np.array([0.3, 0.3, 0.3, 0.4, 0.4, 0.4, 0.3, 0.3, 0.3])
    d = rhs_network_spis(state, g, rates, Feedback("constant", 0.0))
    assert np.all(d[6:] == 0.0)


def test_network_spis_rejects_large_beta0():
    g = generate("complete", 3)
    with pytest.raises(ValueError):
        rhs_network_spis(np.full(9, 1 / 3), g, RateModel.homogeneous(g, 1.0, 0.5, beta0=1.5),
                         Feedback("constant", 0.0))


# --- bi-virus --------------------------------------------------------------


def test_bivirus_single_virus_reduction():
    g = random_strongly_connected(4, 0.4, 3)
    beta1 = np.array([0.5, 1.0, 1.5, 0.7])
    i1 = np.array([0.2, 0.1, 0.4, 0.3])
    d = rhs_bivirus(np.concatenate([1 - i1, i1, np.zeros(4)]), g, g, beta1, 0.6, 0.3, 0.9)
    ref = rhs_network_sis(i1, g, RateModel.node_rates(g, beta1, np.full(4, 0.6)))
    assert np.allclose(d[4:8], ref, atol=1e-15) and np.all(d[8:] == 0)


def test_bivirus_no_susceptibles_decay():
    g = generate("complete", 3)
    i1 = np.array([0.5, 0.2, 0.3])
    d = rhs_bivirus(np.concatenate([np.zeros(3), i1, 1 - i1]), g, g, 1.0, 0.7, 1.0, 0.4)
    assert np.allclose(d[3:6], -0.7 * i1) and np.allclose(d[6:], -0.4 * (1 - i1))


def test_bivirus_hand_evaluation():
    state = np.array([0.5, 0.5, 0.6, 0.2, 0.3, 0.1, 0.3, 0.2, 0.3])
    d = rhs_bivirus(state, generate("path", 3), generate("complete", 3), 1.0, 1.0, 0.5, 2.0)
    expected = [0.525, 0.4, 0.37, -0.05, -0.15, 0.08, -0.475, -0.25, -0.45]
    assert np.allclose(d, expected, atol=1e-14)


def test_bivirus_rates_form_matches():
    g = generate("complete", 3)
    rates = RateModel.homogeneous(g, 1.0, 0.7, B2=0.5 * g.adjacency, delta2=np.full(3, 0.4))
    state = np.array([0.5, 0.5, 0.6, 0.2, 0.3, 0.1, 0.3, 0.2, 0.3])
    assert np.allclose(rhs_bivirus_rates(state, rates), rhs_bivirus(state, g, g, 1.0, 0.7, 0.5, 0.4))


# --- SIR patching ----------------------------------------------------------


def test_patching_zero_control_is_plain_sir():
    g = generate("path", 3)
    rates = RateModel.homogeneous(g, 1.0, 1.0, pi=0.5)
    state = np.array([0.5, 0.6, 0.7, 0.3, 0.2, 0.1, 0.2, 0.2, 0.2])
    d = rhs_sir_patching(state, g, rates, np.zeros(3))
    s, i = state[:3], state[3:6]
    assert np.allclose(d[:3], -s * (rates.B @ i)) and np.all(d[6:] == 0)


def test_patching_needs_carriers():
    g = generate("path", 3)
    rates = RateModel.homogeneous(g, 1.0, 1.0, pi=0.5)
    state = np.array([0.5, 0.6, 0.7, 0.5, 0.4, 0.3, 0, 0, 0])
    assert np.allclose(rhs_sir_patching(state, g, rates, np.full(3, 0.9)), rhs_sir_patching(state, g, rates, 0.0))


def test_patching_hand_evaluation():
    g = generate("complete", 2)
    rates = RateModel.homogeneous(g, 1.0, 1.0, pi=0.5)
    d = rhs_sir_patching([0.5, 0.6, 0.3, 0.2, 0.2, 0.2], g, rates, [1.0, 0.5], u_max=[1.0, 1.0])
    assert np.allclose(d, [-0.2, -0.24, 0.07, 0.17, 0.13, 0.07], atol=1e-15)


def test_patching_control_bounds():
    g = generate("complete", 2)
    with pytest.raises(ValueError):
        rhs_sir_patching(np.full(6, 1 / 3), g, RateModel.homogeneous(g, 1.0, 1.0), [2.0, 0.0], u_max=1.0)


# --- conservation and box invariants ---------------------------------------


def _random_simplex(rng, n):
    x = rng.dirichlet(np.ones(3), size=n)
    return np.concatenate([x[:, 0], x[:, 1], x[:, 2]])


@pytest.mark.parametrize("model", ["sir", "spis", "bivirus", "patching"])
def test_conservation_over_long_horizon(model):
    rng = np.random.default_rng(5)
    g = random_strongly_connected(5, 0.3, 5)
    rates = RateModel.homogeneous(g, 0.8, 0.4, beta0=0.2, pi=0.6)
    rhs = {
        "sir": lambda t, x: rhs_network_sir(x, g, rates),
        "spis": lambda t, x: rhs_network_spis(x, g, rates, Feedback("saturating", 0.5, 0.2)),
        "bivirus": lambda t, x: rhs_bivirus(x, g, g, 0.8, 0.4, 0.6, 0.3),
        "patching": lambda t, x: rhs_sir_patching(x, g, rates, np.full(5, 0.7)),
    }[model]
    x0 = _random_simplex(rng, 5)
    traj = integrate(rhs, x0, 50.0, 0.01, groups=3)
    sums = traj.states.reshape(len(traj.times), 3, 5).sum(axis=1)
    assert np.abs(sums - x0.reshape(3, 5).sum(axis=0)).max() <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_box_invariant_network_sis(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    g = random_strongly_connected(n, 0.4, seed, weighted=True)
    rates = RateModel.node_rates(g, rng.uniform(0, 3, n), rng.uniform(0.05, 2, n))
    traj = integrate(lambda t, x: rhs_network_sis(x, g, rates), rng.random(n), 5.0, 0.01)
    assert traj.states.min() >= 0.0 and traj.states.max() <= 1.0


def test_rhs_agrees_with_flow_finite_difference():
    g = random_strongly_connected(5, 0.3, 8)
    rates = RateModel.homogeneous(g, 0.9, 0.5)
    p0 = np.random.default_rng(2).random(5)
    errors = []
    for h in (1e-2, 1e-3):
        traj = integrate(lambda t, x: rhs_network_sis(x, g, rates), p0, h, h)
        errors.append(np.abs((traj.final - p0) / h - rhs_network_sis(p0, g, rates)).max())
    assert errors[1] < errors[0] / 5 and errors[1] <= 1e-2


def test_metapopulation_alias():
    g = random_strongly_connected(4, 0.3, 3)
    rates = RateModel.node_rates(g, [0.5, 1, 1.5, 2], [1, 1, 1, 1])
    meta = MetaPopulation(rates, np.array([100, 200, 300, 400]))
    x = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.array_equal(meta.rhs(0.0, x), rhs_network_sis(x, g, rates))
    assert np.allclose(meta.infected_counts(x), [10, 40, 90, 160])
