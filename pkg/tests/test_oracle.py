"""Centralized certificate and trajectory checks on assembled closed loops."""

import numpy as np
import pytest

from cascadepass.model import Subsystem
from cascadepass.oracle import (
    Certificate,
    ClosedLoopSystem,
    IncompleteState,
    NonFiniteTrajectory,
    SineDisturbance,
    assemble_closed_loop,
    centralized_sp_check,
    dissipation_margin,
    export_trajectory_csv,
    simulate,
    sp_matrix,
)
from cascadepass.protocol import (
    ROUTE_SYNTHESIZED,
    ROUTE_VERIFIED,
    DesignRecord,
    NetworkDesignState,
)
from cascadepass.sample_cascades import two_stage_scalar_cascade


def record(index, q=1.0, eps=0.5, route=ROUTE_VERIFIED, **gains):
    return DesignRecord(
        index=index, Q=[[q]], epsilon=eps,
        K_self=gains.get("K_self"), K_to_prev=gains.get("K_to_prev"),
        K_prev_to_self=gains.get("K_prev_to_self"),
        M_cl=[[1.0]], route=route,
    )


def two_scalar_state(**record2_gains):
    net = two_stage_scalar_cascade()
    route2 = ROUTE_SYNTHESIZED if record2_gains else ROUTE_VERIFIED
    return NetworkDesignState(
        net=net,
        records=(record(1), record(2, route=route2, **record2_gains)),
    )


def unit_loop(a=-1.0, eps=1.0):
    return ClosedLoopSystem(Acl=[[a]], B2=[[1.0]], C=[[1.0]], Q=[[1.0]], epsilon=eps)


def test_assemble_closed_loop_folds_couplings():
    cl = assemble_closed_loop(two_scalar_state())
    assert np.array_equal(cl.Acl, [[-1.0, 0.0], [1.0, -1.0]])
    assert np.array_equal(cl.Q, np.eye(2))
    assert cl.epsilon == 0.5
    assert cl.n == 2
    assert cl.m == 2


def test_assemble_closed_loop_places_gains():
    cl = assemble_closed_loop(
        two_scalar_state(K_self=[[-3.0]], K_to_prev=[[0.2]], K_prev_to_self=[[0.4]])
    )
    assert np.array_equal(cl.Acl, [[-1.0, 0.4], [1.2, -4.0]])


def test_assemble_closed_loop_rejects_storage_shape_mismatch():
    net = two_stage_scalar_cascade()
    wide = DesignRecord(
        index=2, Q=np.eye(2), epsilon=0.5, K_self=None, K_to_prev=None,
        K_prev_to_self=None, M_cl=np.eye(2), route=ROUTE_VERIFIED,
    )
    state = NetworkDesignState(net=net, records=(record(1), wide))
    with pytest.raises(IncompleteState):
        assemble_closed_loop(state)


def test_sp_matrix_known_values():
    W = sp_matrix(assemble_closed_loop(two_scalar_state()))
    assert np.allclose(W, [[1.5, -1.0], [-1.0, 1.5]], atol=1e-15)
    assert np.allclose(np.linalg.eigvalsh(W), [0.5, 2.5], atol=1e-12)


def test_centralized_check_passes_designed_example():
    cert = centralized_sp_check(assemble_closed_loop(two_scalar_state()))
    assert cert.verdict
    assert cert.reasons == ()
    assert abs(cert.w_min_eig - 0.5) <= 1e-12
    assert cert.eq_residual == 0.0


def test_centralized_check_flags_equality_residual():
    net = two_stage_scalar_cascade()
    state = NetworkDesignState(net=net, records=(record(1, q=2.0), record(2)))
    cert = centralized_sp_check(assemble_closed_loop(state))
    assert not cert.verdict
    assert "EqualityResidual" in cert.reasons
    assert cert.eq_residual == 1.0


def test_centralized_check_flags_indefinite_certificate():
    cl = unit_loop(a=1.0, eps=0.5)
    cert = centralized_sp_check(cl)
    assert not cert.verdict
    assert "MatrixNotPositive" in cert.reasons


def test_certificate_string_format():
    good = Certificate(w_min_eig=0.5, eq_residual=0.0, verdict=True)
    assert str(good) == "pass: w_min_eig=5.000000e-01 eq_residual=0.000000e+00"
    bad = Certificate(w_min_eig=-1.0, eq_residual=0.0, verdict=False,
                      reasons=("MatrixNotPositive",))
    assert str(bad).startswith("fail:")
    assert "[MatrixNotPositive]" in str(bad)


def test_simulate_matches_exponential_decay():
    traj = simulate(unit_loop(), lambda t: np.zeros(1), x0=[1.0], T=1.0, dt=1e-3)
    assert traj.t.shape == (1001,)
    assert abs(traj.x[-1, 0] - np.exp(-1.0)) <= 1e-12
    assert abs(traj.V[-1] - 0.5 * np.exp(-2.0)) <= 1e-12
    assert np.array_equal(traj.y, traj.x)


def test_simulate_input_validation():
    cl = unit_loop()
    with pytest.raises(ValueError):
        simulate(cl, lambda t: np.zeros(1), T=0.0)
    with pytest.raises(ValueError):
        simulate(cl, lambda t: np.zeros(1), x0=[1.0, 2.0])
    with pytest.raises(ValueError):
        simulate(cl, lambda t: np.zeros(2))


def test_simulate_raises_on_divergence():
    cl = unit_loop(a=5.0)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NonFiniteTrajectory):
            simulate(cl, lambda t: np.zeros(1), x0=[1.0], T=200.0, dt=0.1)


def test_dissipation_margin_balanced_rate():
    # With epsilon equal to the true decay rate the inequality is tight;
    # only quadrature error separates the margin from zero.
    traj = simulate(unit_loop(eps=1.0), lambda t: np.zeros(1), x0=[1.0], T=1.0, dt=1e-3)
    margin = dissipation_margin(traj, 1.0)
    assert -1e-6 <= margin <= 0.0


def test_dissipation_margin_slack_rate_is_zero():
    traj = simulate(unit_loop(eps=0.5), lambda t: np.zeros(1), x0=[1.0], T=1.0, dt=1e-3)
    assert dissipation_margin(traj, 0.5) == 0.0


def test_dissipation_margin_detects_overclaimed_rate():
    traj = simulate(unit_loop(eps=1.0), lambda t: np.zeros(1), x0=[1.0], T=1.0, dt=1e-3)
    margin = dissipation_margin(traj, 2.0)
    expected = -0.5 * (1.0 - np.exp(-2.0))
    assert abs(margin - expected) <= 1e-6


def test_dissipation_margin_under_disturbance():
    state = two_scalar_state()
    cl = assemble_closed_loop(state)
    disturbance = SineDisturbance.from_seed(cl.m, seed=4)
    traj = simulate(cl, disturbance, T=5.0, dt=1e-3)
    margin = dissipation_margin(traj, cl.epsilon)
    assert -1e-6 <= margin <= 0.0


def test_sine_disturbance_shapes_and_determinism():
    d1 = SineDisturbance.from_seed(3, seed=12)
    d2 = SineDisturbance.from_seed(3, seed=12)
    d3 = SineDisturbance.from_seed(3, seed=13)
    assert d1.freqs.shape == (3, 5)
    assert np.array_equal(d1.freqs, d2.freqs)
    assert np.array_equal(d1.phases, d2.phases)
    assert not np.array_equal(d1.freqs, d3.freqs)
    w = d1(0.7)
    assert w.shape == (3,)
    assert np.all(np.abs(w) <= 5.0)
    assert np.all(d1.freqs >= 0.1) and np.all(d1.freqs <= 10.0)


def test_sine_disturbance_shape_mismatch():
    with pytest.raises(ValueError):
        SineDisturbance(freqs=np.zeros((2, 5)), phases=np.zeros((2, 4)))


def test_export_trajectory_csv_round_trip(tmp_path):
    cl = assemble_closed_loop(two_scalar_state())
    traj = simulate(cl, SineDisturbance.from_seed(cl.m, seed=1), T=0.01, dt=1e-3)
    path = tmp_path / "trace.csv"
    export_trajectory_csv(traj, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,x2,y1,y2,w1,w2,V"
    assert len(lines) == 1 + traj.t.shape[0]
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 0], traj.t)
    assert np.array_equal(data[:, 1:3], traj.x)
    assert np.array_equal(data[:, 3:5], traj.y)
    assert np.array_equal(data[:, 5:7], traj.w)
    assert np.array_equal(data[:, 7], traj.V)
