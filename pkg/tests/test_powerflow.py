import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import opfdiag as od
from opfdiag.netmodel import Bus, BusType, Line, Network, build_ybus
from opfdiag.powerflow import (NonConvergenceError, PFSetpoints, SystemState,
                               newton_pf, pf_jacobian, pf_residual,
                               solve_power_flow, state_from_list,
                               state_to_list)


def finite_difference_jacobian(net, Y, x, step=1e-6):
    flat = x.flat()
    fd = np.zeros((2 * net.n_bus, flat.size))
    for j in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[j] += step
        dn[j] -= step
        fd[:, j] = (
            pf_residual(net, Y, SystemState.from_flat(up, x.free_mask))
            - pf_residual(net, Y, SystemState.from_flat(dn, x.free_mask))
        ) / (2.0 * step)
    return fd


def test_residual_vanishes_at_ex1_operating_point(ex1):
    net = ex1.case.network
    r = pf_residual(net, build_ybus(net), ex1.ground_truth)
    assert np.abs(r).max() <= 1e-12


def test_residual_zero_at_flat_no_load_profile(ex3):
    net = ex3.case.network
    r = pf_residual(net, build_ybus(net), ex3.ground_truth)
    assert np.abs(r).max() == 0.0


def test_residual_single_isolated_bus_cancels():
    net = Network(buses=(Bus(id=0, bus_type=BusType.SLACK,
                             p_load=0.3, q_load=-0.2),), lines=())
    x = SystemState(p_gen=np.array([0.3]), q_gen=np.array([-0.2]),
                    v=np.array([1.0]), theta=np.array([0.0]),
                    free_mask=np.ones(4, dtype=bool))
    r = pf_residual(net, build_ybus(net), x)
    assert np.abs(r).max() == 0.0


def test_jacobian_reduced_columns_match_closed_form(ex1):
    # 4 flow rows over (p1, p2, q1, q2, v2, th2) at the tangent point,
    # where sin = cos = sqrt(2)/2 and v2 = sqrt(2)
    net = ex1.case.network
    jac = pf_jacobian(net, build_ybus(net), ex1.ground_truth)
    reduced = jac[:, ex1.ground_truth.free_mask]
    s = math.sqrt(2.0) / 2.0
    v2 = math.sqrt(2.0)
    expected = np.array([
        [1.0, 0.0, 0.0, 0.0, s, v2 * s],
        [0.0, 1.0, 0.0, 0.0, -s, -v2 * s],
        [0.0, 0.0, 1.0, 0.0, s, -v2 * s],
        [0.0, 0.0, 0.0, 1.0, s - 2.0 * v2, -v2 * s],
    ])
    assert np.abs(reduced - expected).max() <= 1e-12


def test_jacobian_generation_blocks_are_exact_identities(rng):
    net = od.random_network(4, rng)
    x = od.random_state(net, rng)
    jac = pf_jacobian(net, build_ybus(net), x)
    n = net.n_bus
    assert np.array_equal(jac[:n, :n], np.eye(n))
    assert np.array_equal(jac[n:, n:2 * n], np.eye(n))
    assert np.array_equal(jac[:n, n:2 * n], np.zeros((n, n)))
    assert np.array_equal(jac[n:, :n], np.zeros((n, n)))


def test_jacobian_matches_finite_differences_100_trials():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        net = od.random_network(3, rng)
        Y = build_ybus(net)
        x = od.random_state(net, rng)
        jac = pf_jacobian(net, Y, x)
        fd = finite_difference_jacobian(net, Y, x)
        err = np.abs(jac - fd) / np.maximum(1.0, np.abs(jac))
        worst = max(worst, err.max())
    assert worst <= 1e-6


angles = st.floats(min_value=-1.2, max_value=1.2,
                   allow_nan=False, allow_infinity=False)
mags = st.floats(min_value=0.5, max_value=1.5,
                 allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(v1=mags, v2=mags, t1=angles, t2=angles,
       b=st.floats(min_value=-5.0, max_value=-0.1))
def test_lossless_two_bus_injections_antisymmetric(v1, v2, t1, t2, b):
    net = Network(
        buses=(Bus(id=0, bus_type=BusType.SLACK), Bus(id=1, bus_type=BusType.PQ)),
        lines=(Line(0, 1, g_series=0.0, b_series=b),))
    from opfdiag.powerflow import injections

    p_inj, _ = injections(build_ybus(net), np.array([v1, v2]),
                          np.array([t1, t2]))
    assert abs(p_inj[0] + p_inj[1]) <= 1e-12


def test_newton_reaches_high_voltage_branch(ex1):
    net = ex1.case.network
    sol = solve_power_flow(net, build_ybus(net),
                           PFSetpoints(p_gen=ex1.case.gen_p.copy(),
                                       q_gen=ex1.case.gen_q.copy()))
    assert sol.iterations <= 10
    assert abs(sol.state.v[1] - math.sqrt(2.0)) <= 1e-9
    assert abs(sol.state.theta[1] - math.pi / 4.0) <= 1e-9
    # the post-condition re-checked through the residual path
    assert np.abs(pf_residual(net, build_ybus(net), sol.state)).max() <= 1e-10


def test_newton_flat_profile_is_immediate(ex3):
    net = ex3.case.network
    sol = solve_power_flow(net, build_ybus(net),
                           PFSetpoints(p_gen=np.zeros(2), q_gen=np.zeros(2)))
    assert sol.iterations <= 1
    assert np.abs(sol.state.v - 1.0).max() == 0.0


def zero_load_two_bus():
    return Network(
        buses=(Bus(id=0, bus_type=BusType.SLACK), Bus(id=1, bus_type=BusType.PQ)),
        lines=(Line(0, 1, g_series=0.0, b_series=-1.0),))


def test_newton_fails_beyond_transferable_power():
    # under q = p coupling the nose sits at (sqrt(2) - 1) / 2 ~ 0.2071;
    # verified by the parameter sweep below
    net = zero_load_two_bus()
    Y = build_ybus(net)
    with pytest.raises(NonConvergenceError) as info:
        newton_pf(net, Y, PFSetpoints(p_gen=np.array([0.0, -2.0]),
                                      q_gen=np.array([0.0, -2.0])))
    assert info.value.history  # iteration trace carried in the error
    for t, expect_ok in ((0.1, True), (0.2, True), (0.25, False), (0.5, False)):
        setp = PFSetpoints(p_gen=np.array([0.0, -t]), q_gen=np.array([0.0, -t]))
        if expect_ok:
            sol = solve_power_flow(net, Y, setp)
            assert np.abs(pf_residual(net, Y, sol.state)).max() <= 1e-10
        else:
            with pytest.raises(NonConvergenceError):
                newton_pf(net, Y, setp)


def test_newton_result_feasible_over_random_setpoint_sweep():
    net = zero_load_two_bus()
    Y = build_ybus(net)
    rng = np.random.default_rng(11)
    for _ in range(20):
        t = rng.uniform(0.01, 0.15)
        sol = solve_power_flow(
            net, Y, PFSetpoints(p_gen=np.array([0.0, -t]),
                                q_gen=np.array([0.0, -t])))
        assert np.abs(pf_residual(net, Y, sol.state)).max() <= 1e-10


def test_newton_singular_matrix_flagged_as_degenerate():
    # an isolated PQ bus gives a zero row in the reduced system; asking it
    # to absorb power makes the Newton matrix singular at the start
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        net = Network(
            buses=(Bus(id=0, bus_type=BusType.SLACK),
                   Bus(id=1, bus_type=BusType.PQ),
                   Bus(id=2, bus_type=BusType.PQ, p_load=0.5)),
            lines=(Line(0, 1, 0.0, -1.0),))
    from opfdiag.powerflow import SingularNewtonError

    with pytest.raises(SingularNewtonError, match="degeneracy"):
        newton_pf(net, build_ybus(net),
                  PFSetpoints(p_gen=np.zeros(3), q_gen=np.zeros(3)))


def test_newton_pv_bus_holds_voltage_and_recovers_reactive():
    net = Network(
        buses=(Bus(id=0, bus_type=BusType.SLACK, v_setpoint=1.0),
               Bus(id=1, bus_type=BusType.PV, v_setpoint=1.02),
               Bus(id=2, bus_type=BusType.PQ, p_load=0.4, q_load=0.1)),
        lines=(Line(0, 1, 0.2, -4.0), Line(1, 2, 0.1, -3.0),
               Line(0, 2, 0.15, -2.5)))
    Y = build_ybus(net)
    setp = PFSetpoints(p_gen=np.array([0.0, 0.3, 0.0]),
                       q_gen=np.zeros(3))
    sol = solve_power_flow(net, Y, setp)
    assert sol.state.v[1] == 1.02
    assert np.abs(pf_residual(net, Y, sol.state)).max() <= 1e-10
    # PV real setpoint held, reactive output recovered
    assert sol.state.p_gen[1] == 0.3
    assert sol.state.q_gen[1] != 0.0
    mask = sol.state.free_mask
    assert not mask[2 * 3 + 1]  # PV voltage eliminated


def test_state_round_trip_through_flat_json(ex1):
    net = ex1.case.network
    text = json.dumps(state_to_list(ex1.ground_truth))
    back = state_from_list(json.loads(text), net)
    assert np.array_equal(back.flat(), ex1.ground_truth.flat())
    assert np.array_equal(back.free_mask, ex1.ground_truth.free_mask)


def test_free_mask_from_bus_types(ex1):
    mask = od.free_mask_from_bus_types(ex1.case.network)
    # slack v and theta eliminated; all generation entries free
    assert mask.tolist() == [True, True, True, True, False, True, False, True]


def test_state_arrays_are_read_only(ex1):
    with pytest.raises(ValueError):
        ex1.ground_truth.v[0] = 2.0
