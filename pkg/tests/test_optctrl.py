import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epinet.graph import generate
from epinet.meanfield import closed_form_population_sis, integrate, rhs_population_sis
from epinet.optctrl import (DEAD_BAND, NEVER_TREAT, TREAT_THEN_STOP, PolicySchedule, PopulationControlProblem,
                            SIRPatchingProblem, SISNetworkControlProblem, classify_population_policy,
                            evaluate_objective, fbs_population_sis, fbs_sir_network, fbs_sis_network,
                            population_cost, problem_from_dict, simulate_controlled_population,
                            simulate_sir_patching)

from oracles import population_switch_oracle, sis_pair_switch_oracle

TREAT = PopulationControlProblem(0.3, 0.1, 0.6, 10.0, 1.0, 10.0)


def constant(T, value):
    return PolicySchedule.constant(T, value, 0.0, 1.0)


@pytest.fixture(scope="module")
def treat_solution():
    return fbs_population_sis(TREAT, 0.3)


@pytest.fixture(scope="module")
def sir_instance():
    g = generate("path", 3)
    pr = SIRPatchingProblem.on_graph(g, 0.8, pi=0.6, ell=0.5, c=2.0, h1=0.3, h2=0.2, u_max=1.0, T=10.0)
    x0 = np.concatenate([[0.8, 0.9, 0.85], [0.15, 0.05, 0.1], [0.05] * 3])
    return pr, x0, fbs_sir_network(pr, x0)


# --- schedules -------------------------------------------------------------


def test_schedule_validation():
    with pytest.raises(ValueError):
        PolicySchedule(1.0, [0.5, 0.4], [[0], [1], [0]], 0.0, 1.0)
    with pytest.raises(ValueError):
        PolicySchedule(1.0, [1.5], [[0], [1]], 0.0, 1.0)
    with pytest.raises(ValueError):
        PolicySchedule(1.0, [0.5], [[0], [2]], 0.0, 1.0)
    with pytest.raises(ValueError):
        PolicySchedule(1.0, [0.5], [[0]], 0.0, 1.0)


def test_schedule_lookup_is_right_continuous():
    s = PolicySchedule(2.0, [0.5, 1.5], [[1], [0], [1]], 0.0, 1.0)
    assert [s.scalar(t) for t in (0.0, 0.49, 0.5, 1.5, 2.0)] == [1, 1, 0, 1, 1]
    assert s.switch_counts()[0] == 2 and list(s.switch_times()) == [0.5, 1.5]


def test_schedule_from_grid_merges_pieces():
    s = PolicySchedule.from_grid([0, 1, 2, 3, 4], [1, 1, 0, 0], 0.0, 1.0)
    assert list(s.breakpoints) == [2.0] and s.values[:, 0].tolist() == [1.0, 0.0]


def test_single_switch_per_signal():
    s = PolicySchedule.single_switch(4.0, [1.0, 3.0], [2.0, 2.0], 0.0, 0.0, 2.0, ("a", "b"))
    assert s.value(0.5).tolist() == [2, 2] and s.value(2.0).tolist() == [0, 2] and s.value(3.5).tolist() == [0, 0]


def test_schedule_json_and_csv():
    s = PolicySchedule(3.0, [1.25], [[1.0], [0.0]], 0.0, 1.0)
    back = PolicySchedule.from_dict(json.loads(s.to_json()))
    assert back.to_dict() == s.to_dict()
    rows = s.to_csv().splitlines()
    assert rows == ["t,u", "0,1", "1.25,1", "1.25,0", "3,0"]


def test_problem_round_trip():
    for pr in (TREAT, SISNetworkControlProblem.on_graph(generate("complete", 2), 1.0, c=1.0, d=0.5,
                                                       delta_lo=0.2, delta_hi=1.0, T=5.0)):
        back = problem_from_dict(json.loads(json.dumps(pr.to_dict())))
        assert back.to_dict() == pr.to_dict()
    with pytest.raises(ValueError):
        problem_from_dict({"model": "seir"})


def test_problem_validation():
    with pytest.raises(ValueError):
        PopulationControlProblem(1.0, 0.5, 0.5, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        PopulationControlProblem(1.0, 0.5, 1.0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        SISNetworkControlProblem.on_graph(generate("complete", 2), 1.0, c=1.0, d=1.0,
                                          delta_lo=1.0, delta_hi=1.0, T=1.0)


# --- controlled population -------------------------------------------------


def test_uncontrolled_schedule_matches_plain_model():
    T = 8.0
    ctl = simulate_controlled_population(2.0, 1.0, 3.0, constant(T, 0.0), 0.1, T)
    plain = integrate(lambda t, x: rhs_population_sis(x, 2.0, 1.0), [0.1], T, 1e-3)
    assert np.allclose(ctl.states, plain.states, atol=1e-14)
    assert ctl.states[-1, 0] == pytest.approx(closed_form_population_sis(2.0, 1.0, 0.1, T), abs=1e-9)


def test_enough_treatment_drives_infection_out():
    beta, d1, d2 = 2.0, 1.0, 3.0
    u_bar = (beta - d1) / (d2 - d1) + 0.05
    traj = simulate_controlled_population(beta, d1, d2, PolicySchedule.constant(200.0, u_bar, 0.0, 1.0), 0.5, 200.0,
                                          dt=1e-2)
    assert traj.states[-1, 0] <= 1e-5


def test_full_treatment_endemic_limit():
    beta, d1, d2 = 3.0, 0.5, 1.2
    traj = simulate_controlled_population(beta, d1, d2, constant(200.0, 1.0), 0.2, 200.0, dt=1e-2)
    assert traj.states[-1, 0] == pytest.approx(1 - d2 / beta, abs=1e-9)


def test_breakpoints_are_grid_nodes():
    s = PolicySchedule(1.0, [0.3337], [[1.0], [0.0]], 0.0, 1.0)
    traj = simulate_controlled_population(1.0, 0.5, 1.0, s, 0.5, 1.0, dt=0.1)
    assert np.any(np.abs(traj.times - 0.3337) < 1e-12)


def test_horizon_mismatch_rejected():
    with pytest.raises(ValueError):
        simulate_controlled_population(1.0, 0.5, 1.0, constant(2.0, 0.0), 0.5, 1.0)


# --- classification --------------------------------------------------------


def test_classify_treat_then_stop():
    pc = classify_population_policy(TREAT)
    assert pc.verdict == TREAT_THEN_STOP and pc.ratio == pytest.approx(0.6) and pc.cost_ratio == 10


def test_classify_never_treat():
    pc = classify_population_policy(PopulationControlProblem(1.0, 0.5, 1.0, 1.0, 1.0, 5.0))
    assert pc.verdict == NEVER_TREAT and pc.ratio == pytest.approx(2.0) and not pc.degenerate


def test_classify_equality_is_degenerate_never_treat():
    pc = classify_population_policy(PopulationControlProblem(1.0, 0.5, 1.5, 1.0, 1.0, 5.0))
    assert pc.verdict == NEVER_TREAT and pc.degenerate


@given(st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_classify_vanishing_beta_treats(c, d):
    assert classify_population_policy(PopulationControlProblem(0.0, 0.1, 0.6, c, d, 1.0)).verdict == TREAT_THEN_STOP


# --- population sweep ------------------------------------------------------


def test_never_treat_instance():
    pr = PopulationControlProblem(2.0, 0.5, 1.5, 1.0, 1.0, 10.0)
    sol = fbs_population_sis(pr, 0.5)
    assert sol.switches == 0 and sol.schedule.values[0, 0] == 0.0
    assert sol.J == pytest.approx(population_cost(pr, constant(10.0, 0.0), 0.5), rel=1e-12)


def test_treat_then_stop_structure(treat_solution):
    sol = treat_solution
    assert sol.switches == 1
    assert sol.schedule.values[:, 0].tolist() == [1.0, 0.0]
    for u in (0.0, 1.0):
        assert sol.J <= population_cost(TREAT, constant(TREAT.T, u), 0.3) + 1e-9


def test_switch_time_matches_grid_oracle(treat_solution):
    tau, J, _, _ = population_switch_oracle(0.3, 0.1, 0.6, 10.0, 1.0, 10.0, 0.3)
    assert abs(treat_solution.schedule.breakpoints[0] - tau) <= 0.02
    assert treat_solution.J <= J + 1e-6


def test_costate_terminal_condition(treat_solution):
    assert treat_solution.costate.terminal_error <= 1e-10


def test_switching_consistency(treat_solution):
    sol = treat_solution
    times = sol.costate.times[:-1]
    f = sol.costate.switching[:-1, 0]
    u = np.array([sol.schedule.scalar(t) for t in times])
    assert np.all(u[f < -DEAD_BAND] == 1.0)
    assert np.all(u[f > DEAD_BAND] == 0.0)


def test_population_rejects_bad_initial():
    with pytest.raises(ValueError):
        fbs_population_sis(TREAT, 0.0)


# --- SIR patching ----------------------------------------------------------


def test_sir_one_switch_structure(sir_instance):
    pr, x0, sol = sir_instance
    assert sol.snapped
    assert np.all(sol.schedule.switch_counts() <= 1)
    for i in range(pr.n):
        tau = sol.switch_times[i]
        assert sol.schedule.value(0.0)[i] == (pr.u_max[i] if tau > 0 else 0.0)
        assert sol.schedule.value(pr.T)[i] == 0.0
    assert abs(sol.J - sol.raw_J) <= 1e-4 * abs(sol.raw_J)


def test_sir_dominates_constants(sir_instance):
    _, _, sol = sir_instance
    assert sol.J <= min(sol.baselines.values()) + 1e-9


def test_sir_costate_terminal(sir_instance):
    assert sir_instance[2].costate.terminal_error <= 1e-10


def test_sir_without_patched_nodes_never_patches():
    g = generate("path", 3)
    pr = SIRPatchingProblem.on_graph(g, 0.8, pi=0.6, ell=0.0, c=1.0, h1=0.0, h2=0.0, u_max=1.0, T=5.0)
    sol = fbs_sir_network(pr, np.concatenate([np.ones(3), np.zeros(3), np.zeros(3)]))
    assert np.all(sol.schedule.values == 0.0)
    assert sol.J == pytest.approx(0.0, abs=1e-12)


def test_sir_simulation_conserves_nodes(sir_instance):
    pr, x0, sol = sir_instance
    traj = simulate_sir_patching(pr, sol.schedule, x0)
    n = pr.n
    assert np.allclose(traj.states[:, :n] + traj.states[:, n:2 * n] + traj.states[:, 2 * n:], 1.0, atol=1e-12)


# --- SIS network heuristic -------------------------------------------------


def pair_problem(**kw):
    base = dict(c=[1.0, 2.0], d=[0.5, 0.5], delta_lo=0.2, delta_hi=1.5, T=10.0)
    base.update(kw)
    return SISNetworkControlProblem.on_graph(generate("complete", 2), [1.0, 0.7], **base)


def test_sis_free_infection_spends_nothing():
    sol = fbs_sis_network(pair_problem(c=0.0), [0.3, 0.1])
    assert np.all(sol.schedule.values == 0.2)


def test_sis_free_treatment_cures_fully():
    sol = fbs_sis_network(pair_problem(d=0.0), [0.3, 0.1])
    assert np.all(sol.schedule.values == 1.5)


def test_sis_pair_against_switch_oracle():
    pr = pair_problem()
    sol = fbs_sis_network(pr, [0.3, 0.1])
    best, _, _ = sis_pair_switch_oracle(pr.B, pr.c, pr.d, 0.2, 1.5, 10.0, [0.3, 0.1])
    assert sol.J <= best + 1e-2
    assert sol.J <= min(sol.baselines.values()) + 1e-12
    assert sol.heuristic and sol.note.startswith("heuristic: no optimality claim")


# --- objective -------------------------------------------------------------


def test_objective_zero():
    pr = PopulationControlProblem(1.0, 0.5, 1.0, 1.0, 1.0, 2.0)
    traj = simulate_controlled_population(1.0, 0.5, 1.0, constant(2.0, 0.0), 0.0, 2.0)
    assert evaluate_objective(pr, constant(2.0, 0.0), traj) == 0.0


def test_objective_constant_infection():
    # beta = delta1 / (1 - q) keeps p at q without treatment
    q, d1, T, c = 0.4, 0.6, 3.0, 2.5
    beta = d1 / (1 - q)
    pr = PopulationControlProblem(beta, d1, 1.0, c, 1.0, T)
    traj = simulate_controlled_population(beta, d1, 1.0, constant(T, 0.0), q, T)
    assert evaluate_objective(pr, constant(T, 0.0), traj) == pytest.approx(c * q * T, rel=1e-12)


def test_objective_counts_control_exactly():
    pr = PopulationControlProblem(1.0, 0.5, 1.0, 1.0, 3.0, 4.0)
    s = PolicySchedule(4.0, [1.5], [[1.0], [0.0]], 0.0, 1.0)
    traj = simulate_controlled_population(1.0, 0.5, 1.0, s, 0.0, 4.0)
    assert evaluate_objective(pr, s, traj) == pytest.approx(3.0 * 1.5, rel=1e-12)


def test_objective_rejects_mismatched_grid():
    pr = PopulationControlProblem(1.0, 0.5, 1.0, 1.0, 1.0, 1.0)
    traj = simulate_controlled_population(1.0, 0.5, 1.0, constant(1.0, 0.0), 0.3, 1.0, dt=0.1)
    with pytest.raises(ValueError):
        evaluate_objective(pr, PolicySchedule(1.0, [0.33], [[1.0], [0.0]], 0.0, 1.0), traj)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.1, 1.0), st.floats(0.2, 2.0), st.floats(0.05, 0.95),
       st.floats(0.5, 4.5))
def test_objective_refinement(beta, d1, gap, p0, tau):
    T = 5.0
    pr = PopulationControlProblem(beta, d1, d1 + gap, 1.0, 0.5, T)
    s = PolicySchedule(T, [tau], [[1.0], [0.0]], 0.0, 1.0)
    coarse = evaluate_objective(pr, s, simulate_controlled_population(beta, d1, d1 + gap, s, p0, T, dt=1e-3))
    fine = evaluate_objective(pr, s, simulate_controlled_population(beta, d1, d1 + gap, s, p0, T, dt=1e-4))
    assert abs(coarse - fine) <= 1e-6 * abs(fine)
