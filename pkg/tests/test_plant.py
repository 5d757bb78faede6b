import math

import numpy as np
import pytest

from ctreach.controller import AnalyticLaw
from ctreach.geom import Box, Interval
from ctreach.plant import (
    PhiOutOfRange, PlantParams, State, dynamics, dynamics_interval, simulate, substeps_for,
)

P = PlantParams()


def test_dynamics_examples():
    assert dynamics(State(0, 0), 0.0, P) == (0.0, 0.0)
    dp, _ = dynamics(State(0, math.pi / 6), 0.0, P)
    assert dp == pytest.approx(2.5)
    _, dth = dynamics(State(0, 0), math.pi / 4, P)
    assert dth == pytest.approx(1.0)


def test_dynamics_rejects_saturated_command():
    with pytest.raises(PhiOutOfRange):
        dynamics(State(0, 0), math.radians(81), P)


def test_params_validation():
    with pytest.raises(ValueError):
        PlantParams(v=0)
    with pytest.raises(ValueError):
        PlantParams(L=-1)
    with pytest.raises(ValueError):
        PlantParams(phi_limit=math.radians(89))


def test_dynamics_interval_point_matches():
    s = State(0.3, 0.2)
    d = dynamics_interval(Box.point(tuple(s)), Interval.point(0.1), P)
    dp, dth = dynamics(s, 0.1, P)
    assert d[0].contains(dp) and d[1].contains(dth)
    assert d[0].width < 1e-10 * abs(dp) and d[1].width < 1e-10 * abs(dth)


def test_dynamics_interval_heading_range():
    t = math.radians(10)
    d = dynamics_interval(Box.from_bounds([(0, 0), (-t, t)]), Interval.point(0.0), P)
    assert d[0].contains(Interval(-0.868, 0.868))
    assert d[1].lo == pytest.approx(0.0, abs=1e-200) and d[1].hi == pytest.approx(0.0, abs=1e-200)


def test_dynamics_interval_encloses_samples(rng):
    box = Box.from_bounds([(-1, 1), (-0.4, 0.3)])
    phi = Interval(-0.5, 0.2)
    d = dynamics_interval(box, phi, P)
    for p, th, f in zip(rng.uniform(-1, 1, 500), rng.uniform(-0.4, 0.3, 500), rng.uniform(-0.5, 0.2, 500)):
        dp, dth = dynamics(State(p, th), f, P)
        assert d[0].contains(dp) and d[1].contains(dth)


def test_substeps_for():
    assert substeps_for(1.0, 1 / 256) == (256, 1 / 256)
    n, h = substeps_for(1.0, 0.3)
    assert n == 4 and h == 0.25


def test_simulate_equilibrium(analytic):
    tr = simulate(State(0, 0), analytic, 5.0)
    assert np.all(tr.states == 0.0)
    assert tr.times[0] == 0.0 and tr.times[-1] == pytest.approx(5.0)


def test_simulate_substep_convergence(analytic):
    a = simulate(State(1, 0.1), analytic, 1.0, 1 / 128).final
    b = simulate(State(1, 0.1), analytic, 1.0, 1 / 256).final
    assert abs(a.p - b.p) < 1e-6 and abs(a.theta - b.theta) < 1e-6


def test_simulate_converges_to_centerline(analytic):
    tr = simulate(State(1, 0), analytic, 20.0)
    assert abs(tr.final.p) < 0.05


def test_simulate_saturation_flag():
    stiff = AnalyticLaw(kp=-20.0, ktheta=0.0)  # -190 deg at p = 9.5
    tr = simulate(State(9.5, 0.0), stiff, 0.5)
    assert tr.saturated
    assert np.all(np.abs(tr.phi) <= P.phi_limit)
    with pytest.raises(PhiOutOfRange):
        simulate(State(9.5, 0.0), stiff, 0.5, strict=True)


def test_simulate_hold_is_piecewise_constant(analytic):
    tr = simulate(State(1, 0), analytic, 1.0, 1 / 256, hold=0.25)
    phis = tr.phi.reshape(4, -1)
    assert np.all(phis == phis[:, :1])
    assert len(np.unique(phis[:, 0])) == 4


def test_simulate_bad_arguments(analytic):
    with pytest.raises(ValueError):
        simulate(State(0, 0), analytic, 1.0, 0.0)
    with pytest.raises(ValueError):
        simulate(State(0, 0), analytic, 0.001, 0.01)


def test_simulate_left_domain_flag(analytic):
    dom = Box.from_bounds([(-1, 1), (-1, 1)])
    tr = simulate(State(0.99, 0.5), analytic, 1.0, domain=dom)
    assert tr.left_domain
