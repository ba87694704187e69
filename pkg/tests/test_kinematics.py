import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ringlab.equilibria import axis_saddle_data
from ringlab.kinematics import (
    _crossing_period,
    advect_many,
    advect_particle,
    equilibrium_rings,
    particle_velocity,
    stream_hamiltonian,
    streamline_portrait,
    symmetry_residual,
    trace_homoclinic,
    trace_upper_branch,
)
from ringlab.numerics import DomainError, IntegratorSpec, SingularityError
from ringlab.ring_dynamics import integrate_rings


@pytest.fixture(scope="module")
def upper(config, params):
    return trace_upper_branch(config, params)


def test_axis_is_invariant(config, params):
    ring = equilibrium_rings(config)
    for x in np.linspace(-2, 2, 9):
        assert particle_velocity((0.0, x), ring, params)[0] == 0.0
    tr = advect_particle((0.0, 0.1), params, (0, 1), rings=ring)
    assert np.all(tr.s == 0.0)


points = st.tuples(st.floats(0.0, 2.0), st.floats(-1.5, 1.5))


@settings(max_examples=60, deadline=None)
@given(points)
def test_reflection_parity(config, params, p):
    s, x = p
    ring = equilibrium_rings(config)
    try:
        a = particle_velocity((s, x), ring, params)
        b = particle_velocity((s, 2 * config.xi_hat - x), ring, params)
    except SingularityError:
        return
    assert b[0] == pytest.approx(-a[0], rel=1e-12, abs=1e-12)
    assert b[1] == pytest.approx(a[1], rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(points)
def test_velocity_is_hamiltonian_gradient(config, params, p):
    s, x = p
    if s < 0.01:
        return
    ring = equilibrium_rings(config)
    try:
        v = particle_velocity((s, x), ring, params)
        h = 1e-6
        H = lambda a, b: stream_hamiltonian((a, b), ring, params)
        dHds = (H(s + h, x) - H(s - h, x)) / (2 * h)
        dHdx = (H(s, x + h) - H(s, x - h)) / (2 * h)
    except SingularityError:
        return
    scale = max(1.0, np.max(np.abs(v)))
    assert abs(v[0] - dHdx) < 1e-5 * scale
    assert abs(v[1] + dHds) < 1e-5 * scale


def test_full_equals_h0_for_equilibrium_rings(config, params):
    ring = equilibrium_rings(config)
    for p in ((0.3, 0.1), (1.2, -0.4)):
        assert stream_hamiltonian(p, ring, params) == stream_hamiltonian(p, params=params, variant="H0", config=config)


def test_unknown_variant(config, params):
    with pytest.raises(DomainError):
        stream_hamiltonian((0.3, 0.1), equilibrium_rings(config), params, variant="bogus")


def test_h0_conserved_along_streamline(config, params):
    ring = equilibrium_rings(config)
    tr = advect_particle((0.5, 0.2), params, (0, 5), rings=ring, sample_every=500)
    H = [stream_hamiltonian(p, ring, params) for p in tr.states]
    assert np.max(np.abs(np.array(H) - H[0])) < 1e-7


def test_direct_and_coupled_agree(config, params):
    rings = np.array([config.s1_hat * 1.05, config.s2_hat, 0.0, 0.02])
    traj = integrate_rings(rings, params, (0, 1))
    a = advect_particle((0.5, -0.2), params, (0, 1), "coupled", rings, sample_every=100)
    b = advect_particle((0.5, -0.2), params, (0, 1), "direct", traj, sample_every=100)
    assert np.max(np.abs(a.states - b.states)) < 1e-6
    assert np.allclose(a.rings[-1], traj.states[-1], atol=1e-12)


def test_direct_needs_rings(params):
    with pytest.raises(DomainError):
        advect_particle((0.5, 0.0), params, (0, 1))


def test_closed_orbit_returns(config, params):
    ring = equilibrium_rings(config)
    p0 = (0.5, config.xi_hat + 1e-12)
    tr = advect_particle(p0, params, (0, 5), rings=ring, spec=IntegratorSpec(1e-4))
    T, _ = _crossing_period(tr.t, tr.s, tr.x, config.xi_hat)
    assert T is not None
    back = advect_particle(p0, params, (0, T), rings=ring, spec=IntegratorSpec(1e-4))
    assert np.hypot(*(back.states[-1] - np.array(p0))) < 1e-4


def test_advect_many_matches_single(config, params):
    seeds = np.array([[0.5, 0.2], [0.1, -0.3]])
    t, samples, status, _ = advect_many(seeds, params, 0.0, 0.5, config=config, sample_every=1000)
    for i, p in enumerate(seeds):
        one = advect_particle(p, params, (0, 0.5), rings=equilibrium_rings(config), sample_every=1000)
        assert np.allclose(samples[-1, i], one.states[-1], atol=1e-10)


def test_upper_branch_properties(upper, config, params):
    assert upper.level_spread < 1e-6
    assert upper.miss_distance < 1e-5
    assert symmetry_residual(upper, config.xi_hat) < 1e-5
    assert upper.decay_r2 > 0.99
    rate = axis_saddle_data(config, params)["plus"]["rate"]
    assert upper.decay_rate == pytest.approx(rate, rel=2e-3)


def test_upper_branch_offset_robustness(upper, config, params):
    for off in (5e-8, 2e-7):
        other = trace_upper_branch(config, params, offset=off)
        assert abs(other.miss_distance - upper.miss_distance) < 1e-5
        assert abs(other.s.max() - upper.s.max()) < 1e-5


def test_homoclinic_loops(config, params):
    loops = trace_homoclinic(config, params)
    assert sorted(l.branch for l in loops) == ["homoclinic_minus", "homoclinic_plus"]
    for loop in loops:
        assert loop.level_spread < 1e-6
        assert _mirror_invariant(loop, config)


def _mirror_invariant(loop, config):
    # loops straddle the axis plane: reflection maps the loop onto itself
    pts = np.column_stack([loop.s, 2 * config.xi_hat - loop.x])
    d = np.min(np.hypot(pts[:, None, 0] - loop.s[None, ::20], pts[:, None, 1] - loop.x[None, ::20]), axis=0)
    return np.max(d) < 1e-3


def test_portrait_bundle(config, params):
    bundle = streamline_portrait(config, params, n_grid=4)
    assert bundle.curves and not bundle.failures
    assert {"upper", "lower", "homoclinic_plus", "homoclinic_minus"} <= set(bundle.separatrices)
    for c in bundle.curves:
        assert len(c["t"]) == len(c["s"]) == len(c["x"])
        if c["closed"]:
            assert c["period"] > 0
