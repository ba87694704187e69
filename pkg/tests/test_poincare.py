import numpy as np
import pytest

from ringlab.kinematics import stream_hamiltonian
from ringlab.numerics import DomainError, IntegratorSpec
from ringlab.oscillation import OscillationSpec
from ringlab.poincare import (
    EscapeError,
    bubble_height,
    default_box,
    default_seeds,
    iterate_map,
    map_fixed_points,
    map_jacobian,
    map_period,
    poincare_map,
    section,
)
from ringlab.ring_dynamics import ModelParams

FINE = IntegratorSpec(2.5e-5)


def H0(p, config, params):
    return stream_hamiltonian(tuple(p), params=params, variant="H0", config=config)


def test_period_defaults_to_nu(config, params):
    assert map_period(config, params) == pytest.approx(2 * np.pi / config.nu)
    assert map_period(config, params.with_(Omega=2.0)) == pytest.approx(np.pi)


def test_unperturbed_map_preserves_level(config, params):
    for p in ((0.4, 0.0), (0.15, 0.2), (1.2, -0.1)):
        q = poincare_map(p, config, params, OscillationSpec(0.0), FINE)
        assert abs(H0((q.s, q.x), config, params) - H0(p, config, params)) < 1e-7


@pytest.mark.parametrize("mu", [0.0, 0.01])
@pytest.mark.parametrize("p", [(0.4, 0.05), (1.0, 0.1)])
def test_map_is_area_preserving(config, params, mu, p):
    D = map_jacobian(p, config, params, OscillationSpec(mu), FINE)
    assert abs(abs(np.linalg.det(D)) - 1) < 1e-4


def test_axis_maps_to_axis(config, params):
    q = poincare_map((0.0, 0.1), config, params, OscillationSpec(0.01))
    assert q.s == 0.0


def test_negative_s_rejected(config, params):
    with pytest.raises(DomainError):
        poincare_map((-0.1, 0.0), config, params, OscillationSpec(0.0))


def test_amplitude_bound_enforced(config, params):
    with pytest.raises(DomainError):
        iterate_map([(0.4, 0.0)], 1, config, params, OscillationSpec(1.0))


def test_escape_is_reported(config, params):
    # far above the bubble the particle is swept downstream at speed ~alpha
    p = (4 * bubble_height(config, params), 0.0)
    it, status, stop = iterate_map([p], 3, config, params, OscillationSpec(0.0), box=default_box(config))
    assert status[0] != 0 and stop[0] <= 3


def test_core_hit_raises_from_single_map(config, params):
    with pytest.raises(EscapeError):
        poincare_map((config.s2_hat, config.xi_hat), config, params, OscillationSpec(0.0))


def test_section_masks_escapes(config, params):
    top = bubble_height(config, params)
    cloud = section([(0.4, 0.0), (3 * top, 0.0)], 5, config, params, OscillationSpec(0.0))
    assert not cloud.escaped[0] and cloud.escaped[1]
    assert np.all(np.isfinite(cloud.iterates[:, 0]))
    assert len(cloud.valid(1)) < 6
    rows = list(cloud.rows())
    assert rows[0][:2] == (0, 0) and all(len(r) == 5 for r in rows)


def test_default_seeds_avoid_cores(config, params):
    seeds = default_seeds(config, params, n=30)
    r = np.sqrt(seeds[:, 0])
    excl = min(64.0 / params.chi, 0.25 * config.r1_hat)
    for rk in (config.r1_hat, config.r2_hat):
        assert np.all(np.abs(r - rk) >= excl - 1e-12)
    assert np.all(seeds[:, 1] == config.xi_hat)
    assert np.all(np.diff(seeds[:, 0]) > 0)


def test_bubble_height_is_zero_level(config, params):
    top = bubble_height(config, params)
    assert top > config.s2_hat
    assert abs(H0((top, config.xi_hat), config, params)) < 1e-10


def test_unperturbed_fixed_points(config, params):
    fp = map_fixed_points(config, params, OscillationSpec(0.0))
    assert fp["p_plus"]["x"] == pytest.approx(config.x_plus, abs=1e-7)
    assert fp["p_minus"]["x"] == pytest.approx(config.x_minus, abs=1e-7)
    assert fp["q"]["s"] == pytest.approx(config.s_hat, abs=1e-6)
    assert fp["q"]["x"] == pytest.approx(config.xi_hat, abs=1e-6)


def test_axis_fixed_points_move_linearly(config, params):
    gaps = [abs(map_fixed_points(config, params, OscillationSpec(mu))["p_plus"]["x"] - config.x_plus)
            for mu in (0.004, 0.002, 0.001)]
    orders = np.log2(np.array(gaps[:-1]) / np.array(gaps[1:]))
    assert np.all(orders > 0.8)


def test_short_unperturbed_section_is_regular(config, params):
    seeds = default_seeds(config, params, n=6)
    cloud = section(seeds, 10, config, params, OscillationSpec(0.0), FINE)
    spread = cloud.level_spread(config, params)
    inside = ~cloud.escaped
    assert inside.sum() >= 3
    assert np.all(spread[inside] < 1e-6)


def test_snapshot_records_omega(config, params):
    cloud = section([(0.4, 0.0)], 1, config, params.with_(Omega=5.0), OscillationSpec(0.0))
    assert cloud.params_snapshot["omega"] == 5.0
    assert isinstance(cloud.params_snapshot["params"], ModelParams)
