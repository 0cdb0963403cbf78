import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbrpower.channel import ChannelState
from vbrpower.rate_model import sinr
from vbrpower.step1 import (
    SinrSystem,
    Step1Status,
    allocate_step1,
    build_system,
    solve_step1,
    spectral_radius,
)


def _unit_channels(n, L=2.0):
    return ChannelState(gain=np.ones(n), noise=np.ones(n), proc_gain=L)


def test_build_system_two_users():
    sys_ = build_system([1.0, 1.0], _unit_channels(2))
    assert np.array_equal(sys_.F, [[0, 0.5], [0.5, 0]])
    assert np.array_equal(sys_.u, [0.5, 0.5])


def test_build_system_single_user():
    sys_ = build_system([3.0], _unit_channels(1))
    assert np.array_equal(sys_.F, [[0.0]])
    out = solve_step1(sys_, budget=10.0)
    assert out.powers == pytest.approx([1.5])


@pytest.mark.parametrize("F, rho", [([[0, 0.5], [0.5, 0]], 0.5), ([[0, 1], [1, 0]], 1.0), ([[0, 0], [0, 0]], 0.0)])
def test_spectral_radius_examples(F, rho):
    r, ok = spectral_radius(np.array(F, dtype=float))
    assert ok and r == pytest.approx(rho, abs=1e-10)


def test_spectral_radius_rejects_negative():
    with pytest.raises(ValueError):
        spectral_radius(np.array([[0, -1.0], [1, 0]]))


@given(st.integers(2, 12), st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_spectral_radius_matches_eigvals(n, seed):
    rng = np.random.default_rng(seed)
    F = rng.random((n, n)) * rng.uniform(0.01, 5)
    np.fill_diagonal(F, 0)
    r, ok = spectral_radius(F)
    assert ok
    assert r == pytest.approx(max(abs(np.linalg.eigvals(F))), rel=1e-8)


def test_spectral_radius_threshold_gives_valid_bound():
    F = np.array([[0, 1e150], [1e-3, 0]])
    true = np.sqrt(1e147)
    r, ok = spectral_radius(F, threshold=1.0)
    assert ok and 1.0 <= r <= true * (1 + 1e-9)


def test_hand_solve():
    out = solve_step1(SinrSystem(np.array([[0, 0.5], [0.5, 0]]), np.array([0.5, 0.5])), budget=10.0)
    assert out.status is Step1Status.OPTIMAL
    assert np.array_equal(out.powers, [1.0, 1.0])
    assert sinr(out.powers, _unit_channels(2)) == pytest.approx([1.0, 1.0])


def test_radius_one_is_infeasible():
    out = solve_step1(SinrSystem(np.array([[0, 1.0], [1.0, 0]]), np.array([1.0, 1.0])), budget=10.0)
    assert out.status is Step1Status.INFEASIBLE_SPECTRAL and out.powers is None


def test_exceeds_budget():
    out = solve_step1(SinrSystem(np.array([[0, 0.5], [0.5, 0]]), np.array([0.5, 0.5])), budget=1.0)
    assert out.status is Step1Status.EXCEEDS_BUDGET
    assert out.powers == pytest.approx([1.0, 1.0])


def test_zero_demand():
    out = allocate_step1(np.zeros(3), _unit_channels(3), budget=1.0)
    assert out.optimal and np.array_equal(out.powers, np.zeros(3))


def test_zero_demand_users_excluded():
    out = allocate_step1(np.array([1.0, 0.0, 1.0]), _unit_channels(3), budget=10.0)
    assert out.optimal
    assert out.powers[1] == 0
    assert sinr(out.powers, _unit_channels(3))[[0, 2]] == pytest.approx([1.0, 1.0])


def test_infinite_target_is_infeasible():
    out = allocate_step1(np.array([np.inf, 1.0]), _unit_channels(2), budget=10.0)
    assert out.status is Step1Status.INFEASIBLE_SPECTRAL
