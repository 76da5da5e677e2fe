import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdslab import diffusion as F
from rdslab import geometry as G
from rdslab.noise import PathEnsemble
from rdslab.seeding import replica_seeds

CFG = F.FlowConfig()
ENS = PathEnsemble(tuple(int(s) for s in replica_seeds(42, 8)), 1)


def test_config_validation():
    with pytest.raises(Exception):
        F.FlowConfig(dt=1e-3)
    with pytest.raises(F.FlowError):
        F.FlowConfig(boundary_eps=0.6)
    with pytest.raises(F.FlowError):
        F.FlowConfig(integrator="rk4")
    assert CFG.horizon_cap == 200.0


def test_boundary_points_fixed_under_forward_flow():
    tr = F.forward_flow([[0.0], [1.0]], ENS, CFG, times=[10.0])
    assert np.all(tr.final()[:, 0, 0] == 0.0) and np.all(tr.final()[:, 1, 0] == 1.0)


def test_boundary_points_fixed_under_direct_inverse_flow():
    tr = F.inverse_flow([[0.0], [1.0]], F.inverse_view(ENS), CFG, times=[10.0])
    assert np.all(tr.final()[:, 0, 0] == 0.0) and np.all(tr.final()[:, 1, 0] == 1.0)


def test_forward_flow_preserves_order():
    x0 = np.linspace(0.0, 1.0, 41)[:, None]
    tr = F.forward_flow(x0, ENS, CFG, times=[1, 5, 20])
    assert np.all(np.diff(tr.states[..., 0], axis=2) >= 0)


def test_forward_flow_is_a_cocycle():
    x = F._broadcast_points([[0.3], [0.7]], ENS.size, 1)
    once = x.copy()
    F.integrate(once, ENS, 0.0, 3.0, CFG.dt, "forward")
    twice = x.copy()
    F.integrate(twice, ENS, 0.0, 1.25, CFG.dt, "forward")
    F.integrate(twice, ENS, 1.25, 3.0, CFG.dt, "forward")
    assert np.array_equal(once, twice)


def test_face_grid_stays_in_face():
    d2 = F.FlowConfig(d=2)
    ens = PathEnsemble((1, 2), 2)
    pts = G.face_points((1, 0), 9)
    tr = F.forward_flow(pts, ens, d2, times=[5.0])
    assert np.all(tr.final()[..., 0] == 1.0)


def test_inverse_flow_undoes_forward_flow():
    x0 = np.array([[0.3], [0.5], [0.7]])
    t = 1.0
    fwd = F.forward_flow(x0, ENS, CFG, times=[t]).final()
    back = np.stack([F.inverse_flow(fwd[s], F.pullback_view(ENS.subset([s]), t), CFG, times=[t]).final()[0]
                     for s in range(ENS.size)])
    assert np.max(np.abs(back - x0[None])) < 0.02


def test_logit_and_direct_integrators_agree():
    y0 = np.array([[0.2], [0.5], [0.8]])
    view = F.inverse_view(ENS)
    times = np.arange(0.0, 10.25, 0.25)
    a = F.inverse_flow(y0, view, CFG, times=times).states
    b = F.inverse_flow(y0, view, F.FlowConfig(integrator="logit_em"), times=times).states
    assert np.max(np.abs(a - b)) <= 10 * math.sqrt(CFG.dt)


@given(st.floats(-30, 30))
def test_logit_drift_is_odd_and_bounded(z):
    assert F.logit_drift(-z) == -F.logit_drift(z)
    assert abs(F.logit_drift(z)) <= 0.5


def test_logit_drift_zero_at_centre():
    assert F.logit_drift(0.0) == 0.0
    assert F.to_logit(0.5) == 0.0


def test_scale_function_values():
    assert F.scale_function(0.5) == 0.0
    # independent evaluation of (1/16)(2 ln 3 + 0.5/0.1875)
    assert F.scale_function(0.75) == pytest.approx(0.3039932027501804, rel=1e-14)
    assert F.scale_function(0.75) == pytest.approx((2 * math.log(3) + 0.5 / 0.1875) / 16, rel=1e-14)


@given(st.floats(1e-6, 1 - 1e-6))
def test_scale_function_antisymmetric(y):
    assert F.scale_function(y) + F.scale_function(1 - y) == pytest.approx(0.0, abs=1e-6 * (1 + abs(F.scale_function(y))))


def test_scale_function_domain():
    with pytest.raises(F.FlowError):
        F.scale_function(0.0)


# b

def test_bracket_invariant_and_nesting():
    ens = ENS.subset([0, 1, 2])
    coarse = F.estimate_b_ensemble(ens, CFG, 0.1)
    fine = F.estimate_b_ensemble(ens, CFG, 0.01)
    assert np.all(coarse["upper"] - coarse["lower"] <= 0.1)
    assert np.all(fine["lower"] >= coarse["lower"] - 1e-12) and np.all(fine["upper"] <= coarse["upper"] + 1e-12)
    labels, _ = F.classify(np.stack([fine["lower"], fine["upper"]], axis=1), ens, CFG)
    inner = (fine["lower"] > 0)[:, 0]
    assert np.all(labels[inner, 0, 0] == 0) and np.all(labels[:, 1, 0] == 1)


def test_bisection_and_multisection_agree():
    ens = ENS.subset([3])
    a = F.estimate_b(ens, CFG, 1e-3, points_per_round=1)
    b = F.estimate_b(ens, CFG, 1e-3, points_per_round=31)
    assert abs(a.b[0] - b.b[0]) <= 1e-3


def test_undecided_basin_is_reported():
    short = F.FlowConfig(horizon=0.25, cap_factor=1.0)
    with pytest.raises(F.UndecidedBasinError) as exc:
        F.estimate_b_ensemble(ENS.subset([0]), short, 1e-3)
    assert exc.value.interval[0] < exc.value.interval[1]


# pullback and experiments

def test_pullback_at_time_zero_is_input_distance():
    d = F.pullback_distance([[0.2]], [[0.5]], [0.0], ENS, CFG)
    assert np.allclose(d, 0.3)


def test_pullback_to_full_grid_is_zero():
    grid = np.linspace(0, 1, 1001)[:, None]
    d = F.pullback_distance(grid[::100], grid, [0.0, 2.0], ENS, CFG, flow="forward")
    assert np.all(d[0] == 0.0) and np.all(d[1] <= 5e-4)


def test_pullback_reuses_increments_across_times():
    # the window [0, t] consumed at t is a prefix of the one consumed at t' > t
    a = F.pullback_view(ENS, 2.0).increments(0.0, 2.0, CFG.dt)
    b = F.pullback_view(ENS, 5.0).increments(0.0, 5.0, CFG.dt)
    assert np.array_equal(a, b[3 * 1024:])


def test_set_inside_faces_stays_at_distance_zero():
    d2 = F.FlowConfig(d=2, horizon=5.0)
    C = G.product_cloud(G.make_point_cloud([0.0]), G.make_interval_cloud(9))
    rep = F.experiment_face_attraction(C, 1, [1, 2, 3], d2, times=[0, 2, 5])
    assert np.all(rep["distances"] == 0.0)


def test_face_attraction_rejects_large_sets():
    d2 = F.FlowConfig(d=2)
    C = G.product_cloud(G.make_interval_cloud(5), G.make_interval_cloud(5))
    with pytest.raises(F.FlowError):
        F.experiment_face_attraction(C, 0, [1], d2)


def test_cc_gap_at_time_zero_is_initial_mesh():
    rep = F.experiment_cc_density([5, 6], F.FlowConfig(horizon=1.0, integrator="logit_em"), times=[0.0, 1.0])
    y = np.sort(F.from_logit(F.cc_grid()))
    assert np.allclose(rep["grid_gap"][0], np.diff(y).max())


def test_write_trajectory_csv(tmp_path):
    tr = F.forward_flow([[0.5]], ENS.subset([0]), CFG, times=[1.0])
    F.write_trajectory_csv(tr, tmp_path / "t.csv")
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 3
