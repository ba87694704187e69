import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from ringlab.equilibria import (
    EquilibriumConfig,
    axis_saddle_data,
    axis_speed,
    center_coefficients,
    classify_fixed_points,
    interior_saddle,
    interior_saddle_data,
    radii_residual,
    ring_jacobian,
    solve_equilibrium,
    solve_radii,
    solve_reduced_radii,
    stagnation_offset,
)
from ringlab.kinematics import equilibrium_rings, particle_velocity
from ringlab.numerics import ConvergenceError, DomainError
from ringlab.ring_dynamics import ModelParams, ring_velocity


def _reduced(r, p, k):
    return 2 * p.alpha * r - k * (np.log(p.chi * r) - p.gamma_const)


def test_reduced_roots_residuals(params):
    red = solve_reduced_radii(params)
    for r, k in ((red.r1a, 1), (red.r1b, 1), (red.r2a, params.kappa), (red.r2b, params.kappa)):
        assert abs(_reduced(r, params, k)) < 1e-12


def test_reduced_roots_bisection_oracle(params):
    red = solve_reduced_radii(params)
    for (a, b), k in (((red.r1a, red.r1b), 1.0), ((red.r2a, red.r2b), params.kappa)):
        # the extremum of the reduced function sits at k / (2 alpha)
        m = k / (2 * params.alpha)
        small = optimize.brentq(_reduced, 1e-6, m, args=(params, k), xtol=1e-16, rtol=1e-15)
        large = optimize.brentq(_reduced, m, 10.0, args=(params, k), xtol=1e-16, rtol=1e-15)
        assert abs(a - small) < 1e-10 and abs(b - large) < 1e-10


def test_reduced_roots_ordering(params):
    red = solve_reduced_radii(params)
    assert red.r0 < red.r2a < red.r1a < red.rho < red.r1b < red.r2b


def test_alpha_outside_band():
    with pytest.raises(DomainError):
        solve_reduced_radii(ModelParams(alpha=200.0))


def test_type_one_regression(config):
    assert config.s1_hat == pytest.approx(0.05973, rel=1e-3)
    assert config.s2_hat == pytest.approx(0.93953, rel=1e-3)
    assert config.s_hat == pytest.approx(0.24057, rel=1e-3)
    assert config.eta == pytest.approx(0.4522, rel=1e-3)
    assert config.residual < 1e-10


def test_radii_residual(config, params):
    assert radii_residual(config.r1_hat, config.r2_hat, params) < 1e-10
    assert np.max(np.abs(ring_velocity([config.s1_hat, config.s2_hat, 0, 0], params))) < 1e-10


@pytest.mark.parametrize("tag,s1,s2", [("II", 0.33, 3e-6), ("III", 3.2e-6, 0.89)])
def test_other_types(params, tag, s1, s2):
    c = solve_equilibrium(params, tag)
    assert c.s1_hat == pytest.approx(s1, rel=0.1)
    assert c.s2_hat == pytest.approx(s2, rel=0.1)


def test_type_four_hamiltonian_convention(hamiltonian_params):
    c = solve_equilibrium(hamiltonian_params, "IV")
    assert c.s1_hat == pytest.approx(5.9e-6, rel=0.05)
    assert c.s2_hat == pytest.approx(3.5e-7, rel=0.05)


def test_type_four_absent_in_default_convention(params):
    with pytest.raises(ConvergenceError):
        solve_radii(params, "IV")


def test_unknown_type(params):
    with pytest.raises(DomainError):
        solve_equilibrium(params, "V")


def test_stagnation_symmetry(config, params):
    eta, xp, xm = stagnation_offset(config, params, xi=0.7)
    assert xp - 0.7 == pytest.approx(0.7 - xm, abs=1e-15)
    assert xp - 0.7 == pytest.approx(eta, abs=1e-15)
    assert abs(axis_speed(eta, config.r1_hat, config.r2_hat, params)) < 1e-12


def test_stagnation_points_are_fixed(config, params):
    ring = equilibrium_rings(config)
    for x in (config.x_plus, config.x_minus):
        assert np.max(np.abs(particle_velocity((0.0, x), ring, params))) < 1e-11


def test_interior_saddle_is_fixed(config, params):
    ring = equilibrium_rings(config)
    v = particle_velocity((config.s_hat, config.xi_hat), ring, params)
    assert np.max(np.abs(v)) < 1e-9
    assert config.s1_hat < interior_saddle(config, params) < config.s2_hat


def _fd_jacobian(y, p, h=1e-6):
    J = np.empty((4, 4))
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        J[:, j] = (ring_velocity(y + e, p) - ring_velocity(y - e, p)) / (2 * h)
    return J


def test_jacobian_matches_finite_differences(config, params):
    J = ring_jacobian(config, params).matrix
    Jfd = _fd_jacobian(np.array([config.s1_hat, config.s2_hat, 0.0, 0.0]), params)
    assert np.max(np.abs(J - Jfd)) < 1e-5 * np.max(np.abs(J))


def test_center_frequency(config, params):
    cc = center_coefficients(config, params)
    assert cc.nu**2 == pytest.approx(cc.nu_squared, rel=1e-14)
    assert cc.nu_eigen == pytest.approx(cc.nu, rel=1e-9)
    assert cc.ratio_eigen == pytest.approx(config.A / config.B, rel=1e-9)
    ev = ring_jacobian(config, params).eigenvalues
    assert np.max(np.abs(ev.real)) < 1e-6
    assert np.max(np.abs(ev.imag)) == pytest.approx(config.nu, rel=1e-9)


def test_axis_saddle_limits(config, params):
    ring = equilibrium_rings(config)
    d = axis_saddle_data(config, params)["plus"]
    eps = 1e-7
    ds, dx = particle_velocity((eps, config.x_plus), ring, params)
    assert ds / eps == pytest.approx(d["dPhi_ds"], rel=1e-5)
    assert (dx - particle_velocity((0.0, config.x_plus), ring, params)[1]) / eps == pytest.approx(d["dPsi_ds"], rel=1e-4)
    h = 1e-7
    dpx = (particle_velocity((0, config.x_plus + h), ring, params)[1]
           - particle_velocity((0, config.x_plus - h), ring, params)[1]) / (2 * h)
    assert dpx == pytest.approx(d["dPsi_dx"], rel=1e-6)
    assert d["slope"] == pytest.approx(2 * d["dPhi_ds"] / d["dPsi_ds"], rel=1e-12)


def test_fixed_point_classification(config, params):
    fps = classify_fixed_points(config, params)
    assert {k: v.kind for k, v in fps.items()} == {
        "p_plus": "saddle", "p_minus": "saddle", "q": "saddle",
        "c1": "singular center", "c2": "singular center"}
    q = interior_saddle_data(config, params)
    assert q["rate"] == pytest.approx(np.sqrt(q["dPhi_dx"] * q["dPsi_ds"]), rel=1e-12)


def test_config_roundtrip(config):
    again = EquilibriumConfig(**config.to_dict())
    assert again == config


@settings(max_examples=8, deadline=None)
@given(st.floats(3.0, 25.0))
def test_type_one_family(alpha):
    p = ModelParams(alpha=alpha)
    c = solve_equilibrium(p, "I")
    assert c.residual < 1e-10
    assert 0 < c.s1_hat < c.s_hat < c.s2_hat
    assert c.x_minus < c.xi_hat < c.x_plus
