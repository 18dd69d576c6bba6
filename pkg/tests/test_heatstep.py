import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from stefan_gt.core import BoundaryPath, ConfigError, DomainError, TemperatureProfile, gibbs_thomson
from stefan_gt.heatstep import FrozenStepRequest, backward_fk_estimate, step_frozen, step_frozen_mc
from stefan_gt.rng import stream
from stefan_gt.specfun import hit_laplace

GAMMA = 0.5


def zero(mesh=0.01, x_max=4.0):
    return TemperatureProfile(mesh, np.zeros(int(round(x_max / mesh)) + 1))


def test_constant_h_is_fixed_point():
    lam = 1.0
    u = TemperatureProfile.from_function(lambda x: np.where(x <= lam, gibbs_thomson(lam, GAMMA), 0.0), 0.01, 4.0)
    out = step_frozen(FrozenStepRequest(u, lam, 0.01, 3, GAMMA, backend="images"))
    inside = u.grid < lam - 0.05
    assert np.allclose(out.node_values()[inside], 0.5, atol=1e-12)


@pytest.mark.parametrize("d", [1, 3])
def test_exponential_images_from_zero_is_hit_laplace(d):
    u = zero()
    out = step_frozen(FrozenStepRequest(u, 1.0, 0.05, d, GAMMA, backend="images", horizon_kind="exponential"))
    x = u.grid[:-1]
    assert np.allclose(out(x), GAMMA * hit_laplace(x, 1.0, d, 20.0), atol=1e-12)


def test_d3_outside_closed_form():
    lam, t = 1.0, 0.05
    u = zero(0.01, 5.0)
    x = u.grid[(u.grid > lam) & (u.grid < 3.0)]
    exact = GAMMA * (lam / x) * special.erfc((x - lam) / math.sqrt(2 * t))
    img = step_frozen(FrozenStepRequest(u, lam, t, 3, GAMMA, backend="images"))
    assert np.max(np.abs(img(x) - exact)) < 1e-12
    fd = step_frozen(FrozenStepRequest(u, lam, t, 3, GAMMA, fd_substeps=16))
    assert np.max(np.abs(fd(x) - exact)) < 2e-2


@pytest.mark.parametrize(
    "d, shape",
    [(1, lambda x: 0.8 * np.exp(-((x - 0.5) / 0.3) ** 2)), (3, lambda x: np.zeros_like(x))],
)
def test_images_vs_monte_carlo_coarse_grid(d, shape):
    # for d = 3 the images backend interpolates x*u linearly, so the input is chosen where
    # that agrees with the P1 interpolant of u read by the Monte Carlo paths
    u = TemperatureProfile.from_function(shape, 0.25, 3.0)
    img = step_frozen(FrozenStepRequest(u, 1.0, 0.1, d, GAMMA, backend="images"))
    mc, se = step_frozen_mc(FrozenStepRequest(u, 1.0, 0.1, d, GAMMA, backend="monte-carlo", mc_paths=100000, seed=7))
    nodes = slice(1, -1)
    diff = np.abs(img.node_values()[nodes] - mc.node_values()[nodes])
    assert np.all(diff <= 3 * se[nodes] + 2e-3)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.2, 2.0), st.sampled_from([1, 2, 3]))
def test_fd_comparison_principle_and_bounds(a, b, lam, d):
    lo, hi = sorted((a, b))
    mesh = 0.02
    u1 = TemperatureProfile.from_function(lambda x: lo * np.exp(-x), mesh, 4.0)
    u2 = TemperatureProfile.from_function(lambda x: hi * np.exp(-x) + 0.0 * x, mesh, 4.0)
    o1 = step_frozen(FrozenStepRequest(u1, lam, 0.01, d, GAMMA))
    o2 = step_frozen(FrozenStepRequest(u2, lam, 0.01, d, GAMMA))
    assert np.all(o1.node_values() <= o2.node_values() + 1e-12)
    bound = max(hi, gibbs_thomson(lam, GAMMA))
    assert np.all(o2.node_values() <= bound + 1e-12)
    assert np.all(o1.node_values() >= -1e-12)


def test_mass_inequality_with_cold_data():
    # with u <= H everywhere the boundary can only feed heat in
    lam = 1.0
    u = TemperatureProfile.from_function(lambda x: 0.2 * np.exp(-x), 0.01, 4.0)
    out = step_frozen(FrozenStepRequest(u, lam, 0.02, 3, GAMMA, backend="images"))
    assert out.mass(3) >= u.mass(3) - 1e-9


def test_request_validation():
    u = zero()
    with pytest.raises(ValueError):
        FrozenStepRequest(u, 1.0, 0.0, 3, GAMMA)
    with pytest.raises(DomainError):
        FrozenStepRequest(u, 5.0, 0.1, 3, GAMMA)
    with pytest.raises(ConfigError):
        step_frozen(FrozenStepRequest(u, 1.0, 0.1, 3, GAMMA, horizon_kind="exponential"))
    with pytest.raises(ConfigError):
        step_frozen(FrozenStepRequest(u, 1.0, 0.1, 3, GAMMA, backend="spectral"))
    with pytest.raises(ConfigError, match="positivity"):
        step_frozen(FrozenStepRequest(u, 1.0, 0.1, 3, GAMMA, fd_theta=0.5, fd_substeps=1))


def test_backward_fk_examples():
    rng = stream(11, "fk")
    u0 = TemperatureProfile.from_function(lambda x: np.full_like(x, 0.3), 0.01, 4.0)
    # at t = 0 the estimate is the initial datum
    est, se = backward_fk_estimate(BoundaryPath([0.0], [1.0]), 0.0, 0.5, u0, 200, rng, 3, GAMMA)
    assert est == pytest.approx(0.3) and se == pytest.approx(0.0, abs=1e-12)
    # a point swept by a downward jump sits on the hot side: value H(x)
    jump = BoundaryPath([0.0, 0.01], [1.0, 0.6])
    est, _ = backward_fk_estimate(jump, 0.01, 0.8, u0, 400, rng, 3, GAMMA)
    assert est == pytest.approx(gibbs_thomson(0.8, GAMMA), rel=0.05)
    # constant barrier against the frozen-step images solution
    path = BoundaryPath([0.0, 0.05, 0.1], [1.0, 1.0, 1.0])
    est, se = backward_fk_estimate(path, 0.1, 1.3, u0, 20000, rng, 3, GAMMA)
    ref = step_frozen(FrozenStepRequest(u0, 1.0, 0.1, 3, GAMMA, backend="images"))(1.3)
    assert abs(est - ref) < 3 * se + 3e-3
