from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfassembly.core import Geometry
from selfassembly.roa import (
    BoundaryAmbiguityError,
    Composition,
    InvalidActiveSetError,
    Pattern,
    bounded_compositions,
    composition_of_state,
    contains,
    contains_many,
    count_weak_compositions,
    enumerate_roas,
    pattern_box,
    roa_of_pattern,
    weak_compositions,
)

from conftest import random_state


def brute_force_compositions(n, parts):
    # independent oracle: filter the full product grid
    grids = np.meshgrid(*[np.arange(n + 1)] * parts, indexing="ij")
    flat = np.stack([gr.ravel() for gr in grids], axis=1)
    return {tuple(int(v) for v in row) for row in flat[flat.sum(axis=1) == n]}


def test_reference_roa_count():
    roas = enumerate_roas(8, range(5))
    assert len(roas) == 165 == comb(11, 3)
    assert {r.nu for r in roas} == brute_force_compositions(8, 4)


def test_small_roa_examples():
    assert [r.nu for r in enumerate_roas(8, (0, 4), n_electrodes=5)] == [(8,)]
    assert sorted(r.nu for r in enumerate_roas(2, (0, 1, 2))) == [(0, 2), (1, 1), (2, 0)]


@settings(max_examples=60, deadline=None)
@given(n=st.integers(0, 10), parts=st.integers(1, 6))
def test_count_matches_closed_form(n, parts):
    comps = list(weak_compositions(n, parts))
    assert len(comps) == len(set(comps)) == count_weak_compositions(n, parts) == comb(n + parts - 1, parts - 1)
    assert all(sum(c) == n and min(c) >= 0 for c in comps)


def test_active_set_requires_endpoints():
    with pytest.raises(InvalidActiveSetError):
        enumerate_roas(3, (1, 4), n_electrodes=5)
    with pytest.raises(InvalidActiveSetError):
        enumerate_roas(3, (0, 2), n_electrodes=5)


def test_bounded_compositions():
    assert bounded_compositions(16, 4, 4) == [(4, 4, 4, 4)]
    assert len(bounded_compositions(16, 4, 3)) == 35 == comb(4 + 3, 3)
    assert bounded_compositions(16, 4, 5) == []


def test_reference_pattern_regions(reference):
    g, p, _ = reference
    assert roa_of_pattern(p, g, range(5)).nu == (3, 2, 1, 2)
    assert roa_of_pattern(p, g, (0, 2, 4)).nu == (5, 3)
    assert roa_of_pattern(p, g, (0, 4)).nu == (8,)
    left = Pattern.from_string("1" * 8 + "0" * 8)
    assert roa_of_pattern(left, g, (0, 4)).nu == (8,)


def test_pattern_parsing():
    p = Pattern.from_string("0110")
    assert str(p) == "0110" and p.n_ones == 2
    assert list(p.indices) == [1, 2]
    for bad in ["", "0120", "01 a"]:
        with pytest.raises(ValueError):
            Pattern.from_string(bad)


def test_contains_examples():
    g = Geometry.from_gaps([2, 2], 0.5, 2)
    x = np.array([0.5, 1.5])
    assert contains(Composition((1, 1), (0, 1, 2)), x, g)
    assert not contains(Composition((2, 0), (0, 1, 2)), x, g)
    with pytest.raises(BoundaryAmbiguityError):
        contains(Composition((1, 1), (0, 1, 2)), np.array([0.5, 1.0]), g)


def test_pattern_box_examples(reference):
    box = pattern_box(Pattern((1, 0)), Geometry.from_gaps([2], 0.5, 1))
    assert box.lo[0] == 0.0 and box.hi[0] == 0.5
    g, p, _ = reference
    box = pattern_box(p, g)
    assert box.lo.size == 8
    assert (box.lo[0], box.hi[0]) == (0.25, 0.5)


def test_regions_partition_the_state_space(reference):
    g, _, _ = reference
    rng = np.random.default_rng(3)
    roas = enumerate_roas(g.n_particles, range(5))
    xs = np.sort(rng.uniform(0, g.length, (10_000, g.n_particles)), axis=1)
    hits = np.zeros(len(xs), dtype=int)
    for r in roas:
        hits += contains_many(r, xs, g)
    assert np.all(hits == 1)
    for x in xs[:200]:
        comp = composition_of_state(x, g, range(5))
        assert contains(comp, x, g)


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_pattern_box_center_in_its_region(data):
    gaps = data.draw(st.lists(st.integers(1, 4), min_size=1, max_size=4))
    N = sum(gaps)
    n = data.draw(st.integers(1, N - 1)) if N > 1 else None
    if n is None:
        return
    cells = data.draw(st.lists(st.integers(0, N - 1), min_size=n, max_size=n, unique=True))
    bits = [1 if k in cells else 0 for k in range(N)]
    g = Geometry.from_gaps(gaps, 0.5, n)
    p = Pattern(tuple(bits))
    interior = data.draw(st.sets(st.integers(1, len(gaps) - 1))) if len(gaps) > 1 else set()
    active = sorted({0, len(gaps)} | interior)
    comp = roa_of_pattern(p, g, active)
    assert contains_many(comp, pattern_box(p, g).center[None, :], g)[0]


def test_refinement():
    coarse = Composition((5, 3), (0, 2, 4))
    assert Composition((3, 2, 1, 2), (0, 1, 2, 3, 4)).refines(coarse)
    assert not Composition((3, 1, 2, 2), (0, 1, 2, 3, 4)).refines(coarse)
    assert coarse.refines(Composition((8,), (0, 4)))


def test_region_of_state_random(reference):
    g, _, _ = reference
    rng = np.random.default_rng(9)
    for _ in range(50):
        x = random_state(rng, g, margin=1e-6)
        comp = composition_of_state(x, g, (0, 2, 4))
        assert sum(comp.nu) == 8
        assert contains(comp, x, g)
