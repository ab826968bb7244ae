import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from selfassembly.core import Geometry, energy, force
from selfassembly.equilibrium import (
    certify_stability,
    force_scale,
    initial_state,
    is_certified,
    solve_fixed_point,
    solve_gradient_flow,
)
from selfassembly.roa import Composition, contains_many, enumerate_roas

from conftest import random_instance, random_state


def test_scalar_equilibria(unit_geometry):
    g = unit_geometry
    r = solve_fixed_point(Composition((1,), (0, 1)), [1.0, 4.0], g)
    assert r.x_ss[0] == pytest.approx(1 / 3, abs=1e-10)
    r = solve_fixed_point(Composition((1,), (0, 1)), [1.0, 1.0], g)
    assert r.x_ss[0] == pytest.approx(0.5, abs=1e-12)
    assert certify_stability(r.x_ss, [1.0, 1.0], g).min_eig == pytest.approx(32.0)


def test_symmetric_pair_against_bisection():
    g = Geometry.from_gaps([4], 0.25, 2)
    root = brentq(lambda x: 1 / x**2 - 1 / (1 - 2 * x) ** 2 - 1 / (1 - x) ** 2, 1e-6, 0.5 - 1e-9, xtol=1e-15)
    r = solve_fixed_point(Composition((2,), (0, 1)), [1.0, 1.0], g)
    assert np.allclose(r.x_ss, [root, 1 - root], atol=1e-12)


def test_gradient_flow_scalar(unit_geometry):
    r = solve_gradient_flow([0.9], [1.0, 1.0], unit_geometry)
    assert r.x_ss[0] == pytest.approx(0.5, abs=1e-8)


def test_methods_agree_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        g, u, comp = random_instance(rng)
        fp = solve_fixed_point(comp, u, g)
        gf = solve_gradient_flow(initial_state(comp, g), u, g, comp=comp)
        assert np.max(np.abs(fp.x_ss - gf.x_ss)) < 1e-6
        ratios = fp.steps[1:] / fp.steps[:-1]
        big = fp.steps[:-1] > 1e-11
        assert np.all(ratios[big] < 1)


def test_reference_static_configuration(reference):
    g, _, _ = reference
    u = np.array([7.579, 2.0326, 0.0216, 0.4524, 0.2843])
    comp = Composition((3, 2, 1, 2), (0, 1, 2, 3, 4))
    fp = solve_fixed_point(comp, u, g)
    gf = solve_gradient_flow(initial_state(comp, g), u, g, comp=comp)
    assert np.max(np.abs(fp.x_ss - gf.x_ss)) < 1e-6
    assert is_certified(fp, u, g)


def test_gradient_flow_energy_decreases_and_stays_in_region(reference):
    g, _, _ = reference
    u = np.array([1.0, 0.0, 3.0, 0.0, 1.0])
    comp = Composition((5, 3), (0, 2, 4))
    x0 = initial_state(comp, g)
    r = solve_gradient_flow(x0, u, g, comp=comp)
    assert np.all(np.diff(r.energies) <= 1e-12 * np.abs(r.energies[:-1]))
    assert contains_many(comp, r.x_ss[None, :], g)[0]


def test_uniqueness_from_random_starts():
    rng = np.random.default_rng(7)
    g = Geometry.from_gaps([4, 4], 0.25, 3)
    u = np.array([1.5, 0.7, 2.0])
    comp = Composition((2, 1), (0, 1, 2))
    lo, hi = comp.bounds(g)
    ref = solve_fixed_point(comp, u, g).x_ss
    for _ in range(10):
        x0 = np.concatenate([np.sort(rng.uniform(0.01, 0.99, 2)), rng.uniform(1.01, 1.99, 1)])
        assert np.max(np.abs(solve_fixed_point(comp, u, g, x0=x0).x_ss - ref)) < 1e-6
        assert np.max(np.abs(solve_gradient_flow(x0, u, g, comp=comp).x_ss - ref)) < 1e-6


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_equilibrium_certificate(seed):
    g, u, comp = random_instance(np.random.default_rng(seed))
    r = solve_fixed_point(comp, u, g)
    assert contains_many(comp, r.x_ss[None, :], g)[0]
    assert r.residual <= 1e-8 * force_scale(r.x_ss, u, g)
    rep = certify_stability(r.x_ss, u, g)
    assert rep.is_stable
    assert rep.gershgorin_bound <= rep.min_eig + 1e-9 * abs(rep.min_eig)


def test_rejects_mismatched_control(reference):
    g, _, _ = reference
    with pytest.raises(ValueError):
        solve_fixed_point(Composition((5, 3), (0, 2, 4)), [1.0, 1.0, 1.0, 1.0, 1.0], g)
    with pytest.raises(ValueError):
        solve_fixed_point(Composition((8,), (0, 4)), [1.0, 0.0, -1.0, 0.0, 1.0], g)


def test_energy_at_equilibrium_is_minimal_nearby():
    g = Geometry.from_gaps([4, 4], 0.25, 3)
    u = np.array([1.0, 2.0, 1.0])
    comp = Composition((1, 2), (0, 1, 2))
    x = solve_fixed_point(comp, u, g).x_ss
    rng = np.random.default_rng(0)
    e0 = energy(x, u, g)
    for _ in range(20):
        assert energy(x + 1e-3 * rng.standard_normal(3), u, g) > e0
    assert np.max(np.abs(force(x, u, g))) < 1e-10
