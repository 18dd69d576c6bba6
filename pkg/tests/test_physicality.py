import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stefan_gt import euler
from stefan_gt.core import BoundaryPath, PiecewiseConstantProfile, SimConfig, TemperatureProfile
from stefan_gt.physicality import classify, jump_lower_bound, jump_upper_bound, verify_trajectory, z_n


def scan_lower_bound_d1(breaks, values, lam, step=1e-5):
    """Independent oracle: Phi on a dense y-grid in closed form (d = 1, gamma = 1)."""
    ys = np.arange(step, lam, step)
    a = lam - ys
    cum = np.zeros_like(ys)
    for lo, hi, v in zip(breaks[:-1], breaks[1:], values):
        cum += v * np.clip(np.minimum(hi, lam) - np.maximum(lo, a), 0.0, None)
    phi = cum - np.log(lam / a) + ys
    idx = np.nonzero(phi > 0)[0]
    return math.inf if idx.size == 0 else float(ys[idx[0]])


def test_closed_form_d1_example():
    u = PiecewiseConstantProfile((0.0, 0.3), (10.0,))
    y = jump_lower_bound(u, 0.5, 1.0, 1)
    lo, hi = 0.2, 0.49
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        f = 10 * (mid - 0.2) + mid - math.log(0.5 / (0.5 - mid))
        lo, hi = (mid, hi) if f <= 0 else (lo, mid)
    assert y == pytest.approx(0.2420, abs=1e-3)
    assert y == pytest.approx(hi, abs=1e-9)


def test_zero_profile_examples():
    z = TemperatureProfile(0.01, np.zeros(401))
    assert jump_lower_bound(z, 2.0, 1.0, 3) == 0.0
    assert math.isinf(jump_lower_bound(z, 0.5, 1.0, 3))
    assert jump_upper_bound(z, 2.0, 1.0, 3) == 0.0


def random_case(rng):
    lam = rng.uniform(0.3, 2.0)
    k = rng.integers(1, 5)
    breaks = np.sort(rng.uniform(0, lam, k + 1))
    breaks[0] = rng.uniform(0, breaks[0])
    values = rng.uniform(0, 12, k)
    return tuple(breaks), tuple(values), lam


def test_randomised_against_dense_scan():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        breaks, values, lam = random_case(rng)
        got = jump_lower_bound(PiecewiseConstantProfile(breaks, values), lam, 1.0, 1)
        want = scan_lower_bound_d1(breaks, values, lam)
        if math.isinf(want):
            assert math.isinf(got)
            continue
        worst = max(worst, abs(got - want))
    assert worst <= 1e-4


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0.0, 5.0), min_size=4, max_size=4),
    st.lists(st.floats(0.0, 3.0), min_size=4, max_size=4),
    st.sampled_from([1, 3]),
)
def test_lower_bound_monotone_in_profile(values, bumps, d):
    breaks = (0.0, 0.25, 0.5, 0.75, 1.0)
    small = PiecewiseConstantProfile(breaks, tuple(values))
    large = PiecewiseConstantProfile(breaks, tuple(v + b for v, b in zip(values, bumps)))
    assert jump_lower_bound(large, 1.0, 0.5, d) <= jump_lower_bound(small, 1.0, 0.5, d) + 1e-9


def test_upper_bound_width():
    gamma, lam, width, c, mesh = 1.0, 1.0, 0.2, 0.01, 1e-3

    def f(x):
        return np.where((x >= lam) & (x <= lam + width), gamma / np.maximum(x, 1e-9) + 1 + c, 0.0)

    u = TemperatureProfile.from_function(f, mesh, 3.0)
    got = jump_upper_bound(u, lam, gamma, 1)
    # past the plateau Psi falls at rate (H + 1), so it turns negative within c*width of the edge
    assert width <= got <= width + c * width + 2 * mesh


def test_z_n_decreases_to_the_bound():
    u = PiecewiseConstantProfile((0.0, 0.3), (10.0,))
    y = jump_lower_bound(u, 0.5, 1.0, 1)
    zs = [z_n(u, 0.5, 1.0, 1, n) for n in (10, 100, 1000, 10**6)]
    assert all(a >= b - 1e-12 for a, b in zip(zs, zs[1:]))
    assert zs[-1] >= y - 1e-9
    assert zs[-1] == pytest.approx(y, abs=1e-4)


def test_classify_cases():
    assert classify(0.1, 0.1, 0.0, 0.01, False) == "physical"
    assert classify(0.2, 0.1, 0.0, 0.01, False) == "super-physical"
    assert classify(0.05, 0.1, 0.0, 0.01, False) == "sub-physical"
    assert classify(-0.3, 0.0, 0.1, 0.01, False) == "super-physical"
    assert classify(0.5, 0.1, 0.0, 0.01, True) == "melt-exempt"


def _stub(u, lam, drop, mesh=1e-3):
    cfg = SimpleNamespace(delta_t=1e-3, mesh=mesh, gamma=1.0, d=1)
    path = BoundaryPath([0.0, 1e-3], [lam, lam - drop], [(1e-3, lam, lam - drop)])
    return SimpleNamespace(cfg=cfg, path=path, melt_step=None, snapshot=lambda step, kind: u)


def test_synthetic_doubled_jump_is_flagged():
    u = PiecewiseConstantProfile((0.0, 0.3), (10.0,))
    y = jump_lower_bound(u, 0.5, 1.0, 1)
    assert verify_trajectory(_stub(u, 0.5, y))[0].verdict == "physical"
    assert verify_trajectory(_stub(u, 0.5, min(2 * y, 0.49)))[0].verdict == "super-physical"
    assert verify_trajectory(_stub(u, 0.5, y / 2))[0].verdict == "sub-physical"


def test_missing_snapshot_is_reported():
    stub = _stub(None, 0.5, 0.1)
    assert verify_trajectory(stub)[0].verdict == "missing-snapshot"


def test_no_jumps_gives_empty_report():
    cfg = SimConfig(d=1, gamma=0.2, delta_t=4e-3, mesh=5e-3, horizon=0.1, lambda_init=1.0, u_init="indicator 0 0.8")
    assert verify_trajectory(euler.run(cfg)) == []


def test_realised_jumps_at_least_the_lower_bound():
    cfg = SimConfig(d=3, gamma=1, delta_t=2e-3, mesh=5e-3, horizon=0.1, lambda_init=0.9, u_init="indicator 0 0.81")
    res = euler.run(cfg)
    for rep in verify_trajectory(res):
        if rep.verdict != "super-physical" or rep.lower_bound == 0.0:
            continue
        assert rep.drop >= rep.lower_bound - 2 * cfg.mesh
    first = verify_trajectory(res)[0]
    assert first.drop >= first.lower_bound
    assert first.lower_bound_open == pytest.approx(first.lower_bound)
