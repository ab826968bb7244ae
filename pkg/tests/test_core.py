import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfassembly.core import (
    Geometry,
    SingularConfigurationError,
    active_set,
    energy,
    energy_many,
    force,
    force_many,
    gershgorin_lower_bound,
    hessian,
    in_stage_set,
    in_static_set,
    reference_geometry,
)

from conftest import fd_gradient, fd_jacobian, random_state


def naive_energy(x, u, q):
    v = 0.0
    for i in range(len(x)):
        for j in range(i + 1, len(x)):
            v += 1.0 / abs(x[i] - x[j])
        for k in range(len(q)):
            if u[k] != 0:
                v += u[k] / abs(x[i] - q[k])
    return v


def test_geometry_from_gaps():
    g = reference_geometry()
    assert np.allclose(g.q, [0, 1, 2, 3, 4])
    assert g.c == 4 and g.n_cells == 16 and g.d0 == 0.25
    assert g.gaps == (4, 4, 4, 4)
    assert [g.electrode_cell_index(k) for k in range(5)] == [0, 4, 8, 12, 16]
    assert np.allclose(g.cell_midpoints[:2], [0.125, 0.375])


@pytest.mark.parametrize(
    "q, N, n",
    [
        ([0.0, 1.0, 1.0], 4, 2),  # not increasing
        ([0.5, 1.0], 2, 1),  # does not start at zero
        ([0.0, 0.3, 1.0], 4, 1),  # gap not a cell multiple
        ([0.0, 1.0], 2, 2),  # too many particles
    ],
)
def test_geometry_rejects(q, N, n):
    with pytest.raises(ValueError):
        Geometry(np.array(q), N, n)


def test_energy_unit_examples(unit_geometry):
    g = unit_geometry
    assert energy([0.5], [1.0, 1.0], g) == pytest.approx(4.0)
    g2 = Geometry.from_gaps([4], 0.25, 2)
    assert energy([0.25, 0.75], [1.0, 1.0], g2) == pytest.approx(12.666666666666666, rel=1e-14)


def test_energy_reference_regression(reference):
    g, _, _ = reference
    u = np.array([7.5, 2.0, 0.02, 0.45, 0.28])
    x = g.cell_midpoints[[1, 2, 3, 6, 7, 10, 13, 15]]
    # frozen from the naive double loop
    assert energy(x, u, g) == pytest.approx(naive_energy(x, u, g.q), rel=1e-13)
    assert energy(x, u, g) == pytest.approx(128.6985273437132, rel=1e-12)


def test_force_zero_at_balance(unit_geometry):
    g = unit_geometry
    assert force([0.5], [1.0, 1.0], g)[0] == pytest.approx(0.0, abs=1e-12)
    assert force([1 / 3], [1.0, 4.0], g)[0] == pytest.approx(0.0, abs=1e-12)


def test_hessian_scalar(unit_geometry):
    assert hessian([0.5], [1.0, 1.0], unit_geometry)[0, 0] == pytest.approx(32.0)


def test_singular_configurations(unit_geometry):
    g = Geometry.from_gaps([4], 0.25, 2)
    with pytest.raises(SingularConfigurationError):
        energy([0.5, 0.5], [1.0, 1.0], g)
    with pytest.raises(SingularConfigurationError):
        force([0.0], [1.0, 1.0], unit_geometry)
    with pytest.raises(ValueError):
        energy([0.75, 0.25], [1.0, 1.0], g)
    # an uncharged electrode is not a singularity
    g3 = Geometry.from_gaps([2, 2], 0.5, 1)
    assert np.isfinite(energy([1.0], [1.0, 0.0, 1.0], g3))


def test_force_matches_finite_differences():
    rng = np.random.default_rng(11)
    g = Geometry.from_gaps([4, 4, 4], 0.25, 3)
    for _ in range(100):
        u = rng.uniform(0.1, 3.0, 4) * (rng.random(4) > 0.3)
        u[[0, -1]] = rng.uniform(0.1, 3.0, 2)
        x = random_state(rng, g, margin=0.05)
        fd = -fd_gradient(x, u, g)
        f = force(x, u, g)
        assert np.max(np.abs(f - fd)) <= 1e-6 * max(1.0, np.max(np.abs(f)))


def test_hessian_matches_finite_differences():
    rng = np.random.default_rng(12)
    g = Geometry.from_gaps([4, 4, 4], 0.25, 3)
    for _ in range(100):
        u = rng.uniform(0.1, 3.0, 4)
        x = random_state(rng, g, margin=0.05)
        h = hessian(x, u, g)
        fd = -fd_jacobian(x, u, g)
        assert np.array_equal(h, h.T)
        assert np.max(np.abs(h - fd)) <= 1e-5 * np.max(np.abs(h))


def test_energy_many_and_force_many_agree_with_scalar_versions(reference):
    g, _, _ = reference
    rng = np.random.default_rng(5)
    u = np.array([1.0, 0.0, 2.0, 0.5, 1.0])
    xs = np.array([random_state(rng, g, margin=0.01) for _ in range(20)])
    assert np.allclose(energy_many(xs, u, g), [energy(x, u, g) for x in xs], rtol=1e-13)
    assert np.allclose(force_many(xs, u, g), [force(x, u, g) for x in xs], rtol=1e-12, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    charges=st.lists(st.floats(0.05, 20.0), min_size=4, max_size=4),
)
def test_hessian_strictly_diagonally_dominant_for_positive_charges(seed, charges):
    # with every electrode charged, each row's diagonal exceeds its off-diagonal sum
    g = Geometry.from_gaps([3, 3, 3], 1 / 3, 4)
    x = random_state(np.random.default_rng(seed), g, margin=1e-3)
    h = hessian(x, np.array(charges), g)
    assert gershgorin_lower_bound(h) > 0
    assert gershgorin_lower_bound(h) <= np.linalg.eigvalsh(h)[0] + 1e-9 * np.abs(h).max()


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_energy_invariant_under_relabeling(seed):
    rng = np.random.default_rng(seed)
    g = Geometry.from_gaps([4, 4], 0.25, 3)
    x = random_state(rng, g, margin=1e-3)
    u = rng.uniform(0.1, 5, 3)
    shuffled = rng.permutation(x)
    assert energy(np.sort(shuffled), u, g) == energy(x, u, g)


def test_control_sets():
    assert active_set([1.0, 0.0, 2.0]) == (0, 2)
    assert in_static_set([1.0, 0.0, 2.0])
    assert not in_static_set([0.0, 1.0, 2.0])
    assert in_stage_set([1.0, 0.0, 2.0], (0, 2))
    assert not in_stage_set([1.0, 0.5, 2.0], (0, 2))
