import numpy as np
import pytest

from saltfim.exceptions import NoCrossingError, ValidationError, ZenoError
from saltfim.hybrid import (
    AlgebraicLayer,
    HybridSystemSpec,
    IntegratorConfig,
    ModeSpec,
    TransitionSpec,
    apply_reset,
    check_transversality,
    evaluate_dynamics,
    locate_event,
    simulate,
    solve_algebraic,
)
from saltfim.systems import BuckParams, buck_dcm_spec, scalar_rate_spec, wtg_equilibrium, wtg_spec
from saltfim.systems.wtg import WtgParams


def test_buck_fields_by_substitution():
    spec = buck_dcm_spec(BuckParams(R=10.0))
    th = np.array([1e-3, 1.0, 0.1])
    np.testing.assert_allclose(evaluate_dynamics(spec, "q3", [0.0, 2.0], th, 0.0), [0.0, -0.2])
    np.testing.assert_allclose(evaluate_dynamics(spec, "q2", [0.0, 0.0], th, 0.0), [0.0, 0.0])
    th = np.array([2.0, 1e-4, 0.1])
    np.testing.assert_allclose(evaluate_dynamics(spec, "q1", [0.0, 0.0], th, 0.0), [6.0, 0.0])


def test_solve_algebraic_explicit_and_newton():
    layer = AlgebraicLayer(1, lambda x, y, th, t: y - x ** 2, np.zeros(1))
    np.testing.assert_allclose(solve_algebraic(layer, np.array([3.0]), None, 0.0), [9.0])
    layer = AlgebraicLayer(1, lambda x, y, th, t: y ** 2 - x, np.ones(1))
    np.testing.assert_allclose(solve_algebraic(layer, np.array([4.0]), None, 0.0, np.ones(1)), [2.0], rtol=1e-12)


def test_wtg_layer_at_equilibrium():
    params = WtgParams()
    eq = wtg_equilibrium(params)
    spec = wtg_spec(params)
    layer = spec.mode("q1").algebraic
    r = layer.residual(eq.state, eq.algebraic, params.theta, 0.0)
    assert np.linalg.norm(r) <= IntegratorConfig().newton_tol


def _guard(fn, direction="either"):
    return TransitionSpec("a", "b", fn, direction)


def test_locate_event_linear_root():
    tr = _guard(lambda x, th, t: x[0])
    tau = locate_event(lambda t: np.array([1.0 - t]), tr, None, (0.0, 2.0))
    assert abs(tau - 1.0) <= 1e-10


def test_locate_event_quadratic_falling():
    tr = _guard(lambda x, th, t: x[0], "falling")
    tau = locate_event(lambda t: np.array([(t - 1.0) * (t - 3.0)]), tr, None, (0.0, 2.0))
    assert abs(tau - 1.0) <= 1e-10


def test_locate_event_no_crossing():
    tr = _guard(lambda x, th, t: x[0])
    with pytest.raises(NoCrossingError):
        locate_event(lambda t: np.array([1.0 + t]), tr, None, (0.0, 2.0))


def test_transversality_rate():
    tr = _guard(lambda x, th, t: x[0])
    assert check_transversality(tr, np.zeros(2), np.zeros(1), 0.0, np.array([1.0, -1.0])) == pytest.approx(1.0)
    assert check_transversality(tr, np.zeros(2), np.zeros(1), 0.0, np.array([0.0, 5.0])) == pytest.approx(0.0, abs=1e-12)


def test_reset_maps():
    tr = _guard(lambda x, th, t: x[0])
    np.testing.assert_array_equal(apply_reset(tr, [0.3, 5.0], None, 0.0), [0.3, 5.0])
    spec = buck_dcm_spec(BuckParams(reset="printed"))
    q23 = next(t for t in spec.transitions if (t.source, t.target) == ("q2", "q3"))
    th = np.array([1e-3, 1e-4, 0.1])
    np.testing.assert_allclose(apply_reset(q23, [0.0, 5.0], th, 0.0), [0.0, 5e-3])


def test_single_mode_no_events():
    spec = HybridSystemSpec(1, 1, [ModeSpec("m", lambda x, th, t: np.zeros(1))], [], "m", np.array([2.0]))
    arc = simulate(spec, [1.0], T=1.0)
    assert len(arc.segments) == 1 and not arc.events
    np.testing.assert_array_equal(arc.state(0.7), [2.0])


def test_closed_form_event_time():
    arc = simulate(scalar_rate_spec(1.0), [2.0], T=1.0)
    assert len(arc.events) == 1
    assert arc.events[0].time == pytest.approx(0.5, abs=1e-10)


def test_buck_cycle_sequence():
    arc = simulate(buck_dcm_spec(), BuckParams().theta, T=0.01)
    seq = [(e.source, e.target) for e in arc.events]
    assert len(seq) >= 9
    cycle = [("q1", "q2"), ("q2", "q3"), ("q3", "q1")]
    start = seq.index(("q1", "q2"))
    for k, pair in enumerate(seq[start:]):
        assert pair == cycle[k % 3]


def test_arc_tiling_and_guard_residual():
    config = IntegratorConfig()
    spec = buck_dcm_spec()
    arc = simulate(spec, BuckParams().theta, T=0.005, config=config)
    assert arc.segments[0].t_start == 0.0 and arc.segments[-1].t_end == 0.005
    for a, b in zip(arc.segments[:-1], arc.segments[1:]):
        assert a.t_end == b.t_start
    for ev in arc.events:
        tr = spec.transitions[ev.transition_index]
        assert abs(tr.guard(ev.pre_state, arc.theta, ev.time)) <= config.event_tol_guard
        assert ev.guard_rate > 0 if tr.guard_direction.value == "rising" else ev.guard_rate < 0


def test_buck_event_times_converge_with_tolerance():
    theta = BuckParams().theta
    loose = simulate(buck_dcm_spec(), theta, T=0.005, config=IntegratorConfig(rel_tol=1e-8, abs_tol=1e-10))
    tight = simulate(buck_dcm_spec(), theta, T=0.005, config=IntegratorConfig(rel_tol=5e-9, abs_tol=5e-11))
    assert len(loose.events) == len(tight.events)
    # event times drift with integration error, which is far above event_tol_time
    assert np.max(np.abs(loose.event_times - tight.event_times)) < 1e-7


def test_simulation_is_deterministic():
    a = simulate(buck_dcm_spec(), BuckParams().theta, T=0.004)
    b = simulate(buck_dcm_spec(), BuckParams().theta, T=0.004)
    np.testing.assert_array_equal(a.event_times, b.event_times)
    for sa, sb in zip(a.segments, b.segments):
        np.testing.assert_array_equal(sa.states, sb.states)


def test_dae_residual_along_segments():
    params = WtgParams()
    spec = wtg_spec(params)
    arc = simulate(spec, params.theta, T=0.05)
    config = IntegratorConfig()
    from saltfim.hybrid import AlgebraicCache

    cache = AlgebraicCache(config)
    for seg in arc.segments:
        mode = spec.mode(seg.mode)
        for t, x in zip(seg.grid, seg.states):
            y = cache.solve(mode, x, params.theta, t)
            assert np.linalg.norm(mode.algebraic.residual(x, y, params.theta, t)) <= config.newton_tol


def test_zeno_cap():
    # ramp and reset to zero every 1 ms: 1000 events on [0, 1] exceed a cap of 20
    fast = HybridSystemSpec(
        1, 1,
        [ModeSpec("ramp", lambda x, th, t: np.array([th[0]]))],
        [TransitionSpec("ramp", "ramp", lambda x, th, t: x[0] - 1.0, "rising",
                        reset=lambda x, th, t: np.zeros(1))],
        "ramp", np.zeros(1),
    )
    with pytest.raises(ZenoError):
        simulate(fast, [1e3], T=1.0, config=IntegratorConfig(max_events=20))


def test_validation_errors():
    spec = scalar_rate_spec(1.0)
    with pytest.raises(ValidationError):
        simulate(spec, [1.0, 2.0], T=1.0)
    with pytest.raises(ValidationError):
        simulate(spec, [1.0], T=0.0)
    with pytest.raises(ValidationError):
        IntegratorConfig(rel_tol=-1.0)
