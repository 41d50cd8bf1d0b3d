import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from tvtomo.simulate import (CalibrationError, Scenario, generate_infections, make_profile,
                             move_probabilities, simulate_population, simulate_scenario,
                             subsample_dataset)


def literal_disk_count(n0, radius_frac):
    c = 0
    for r in range(n0):
        for k in range(n0):
            if (r + 0.5 - n0 / 2) ** 2 + (k + 0.5 - n0 / 2) ** 2 <= (radius_frac * n0) ** 2:
                c += 1
    return c


def test_lake_golden_count():
    prof = make_profile("lake", 50)
    assert literal_disk_count(50, 0.22) == 384
    assert int(prof.feature.sum()) == 384
    # a raster disk of radius 11 covers close to pi r^2 cells
    assert abs(384 - np.pi * 11**2) < 10


@pytest.mark.parametrize("name,count", [("river", 430), ("lake_corner", 484)])
def test_other_golden_counts(name, count):
    assert int(make_profile(name, 50).feature.sum()) == count


def test_lake_corner_contains_lake_and_block():
    lake = make_profile("lake", 50).feature
    lc = make_profile("lake_corner", 50).feature
    assert np.all(lc[lake])
    assert lc[:10, 40:].all() and not lake[:10, 40:].any()


def test_two_levels_and_symmetry():
    prof = make_profile("lake", 50, low=-0.3, high=0.7)
    assert set(np.unique(prof.grid)) == {-0.3, 0.7}
    np.testing.assert_array_equal(np.rot90(prof.grid), prof.grid)
    river = make_profile("river", 20).grid
    np.testing.assert_array_equal(river, river.T)


def test_constant_profile_needs_flag():
    with pytest.raises(ValueError):
        make_profile("lake", 20, 0.5, 0.5)
    flat = make_profile("lake", 20, 0.5, 0.5, allow_constant=True)
    assert np.all(flat.grid == 0.5) and not flat.feature.any()
    with pytest.raises(ValueError):
        make_profile("lake", 9)
    with pytest.raises(ValueError):
        make_profile("ocean", 20)


def test_move_probabilities():
    flat = np.zeros((5, 5))
    np.testing.assert_allclose(move_probabilities(flat, 2, 2, False), 0.2)
    np.testing.assert_allclose(move_probabilities(flat, 2, 2, True), 0.2)
    corner = move_probabilities(flat, 0, 0, False)
    np.testing.assert_allclose(corner, [1 / 3, 0, 1 / 3, 0, 1 / 3])
    g = np.zeros((5, 5))
    g[1, 2] = 1.0                                        # north of (2, 2) is higher
    np.testing.assert_allclose(move_probabilities(g, 2, 2, True), [1, 2, 1, 1, 1] / np.float64(6))
    np.testing.assert_allclose(move_probabilities(g, 2, 2, False), 0.2)


def test_walk_validity_and_determinism():
    prof = make_profile("lake", 12)
    a = simulate_population(prof, 40, 300, seed=4)
    b = simulate_population(prof, 40, 300, seed=4)
    np.testing.assert_array_equal(a.L0, b.L0)
    r, c = a.L0 // 12, a.L0 % 12
    step = np.abs(np.diff(r, axis=1)) + np.abs(np.diff(c, axis=1))
    assert step.max() <= 1
    assert np.all(a.L0 >= 0) and np.all(a.L0 < 144)
    np.testing.assert_array_equal(a.dwell_matrix().sum(axis=1).A1, 300)
    np.testing.assert_array_equal(a.herd, [0] * 20 + [1] * 20)
    c_ = simulate_population(prof, 40, 300, seed=5)
    assert not np.array_equal(a.L0, c_.L0)


def test_population_argument_checks():
    prof = make_profile("lake", 12)
    with pytest.raises(ValueError):
        simulate_population(prof, 5, 10)
    with pytest.raises(ValueError):
        simulate_population(prof, 4, 0)


def test_biased_walkers_favour_feature():
    prof = make_profile("lake", 12)
    pop = simulate_population(prof, 200, 500, seed=1)
    feat = prof.feature.ravel()
    biased = pop.L0[pop.herd == 1]
    inside = int(feat[biased].sum())
    total = biased.size
    area = feat.mean()
    # chi-square goodness of fit against occupancy proportional to area
    chi2, pval = stats.chisquare([inside, total - inside], [area * total, (1 - area) * total])
    assert inside / total > area and pval < 1e-6


def test_calibration_hits_target():
    prof = make_profile("lake", 20)
    pop = simulate_population(prof, 400, 200, seed=2)
    y, (low, high) = generate_infections(pop, prof, 0.6, seed=2)
    feat = prof.feature.ravel()
    d = feat[pop.L0].sum(axis=1)
    eta = high * d + low * (200 - d)
    assert abs(expit(eta).mean() - 0.6) <= 0.01
    assert low == 0.0 and high > 0
    y2, amp2 = generate_infections(pop, prof, 0.6, seed=2)
    np.testing.assert_array_equal(y, y2)
    assert amp2 == (low, high)


def test_zero_amplitude_gives_half():
    prof = make_profile("lake", 20)
    pop = simulate_population(prof, 100, 50, seed=0)
    _, amp = generate_infections(pop, prof, 0.5, seed=0)
    assert amp == (0.0, 0.0)
    _, (lo, hi) = generate_infections(pop, prof, 0.3, seed=0, baseline="symmetric")
    assert lo == -hi


def test_unreachable_prevalence():
    prof = make_profile("lake", 20)
    pop = simulate_population(prof, 20, 4, seed=0)
    # nobody can spend long enough in the lake to push prevalence to 0.94
    pop.L0[:] = 0
    with pytest.raises(CalibrationError, match="unreachable"):
        generate_infections(pop, prof, 0.94, seed=0)
    with pytest.raises(ValueError):
        generate_infections(pop, prof, 0.99)


def test_identity_subsample():
    prof = make_profile("lake", 12)
    pop = simulate_population(prof, 30, 40, seed=3)
    generate_infections(pop, prof, 0.6, seed=3)
    ds = subsample_dataset(pop, 30, 12, 1, seed=3)
    np.testing.assert_array_equal(ds.X.toarray(), pop.dwell_matrix().toarray())
    np.testing.assert_array_equal(ds.y, pop.y0)


def test_thinned_subsample():
    prof = make_profile("lake", 12)
    pop = simulate_population(prof, 40, 2880, seed=6)
    generate_infections(pop, prof, 0.6, seed=6)
    ds = subsample_dataset(pop, 20, 6, 96, seed=6)
    assert ds.X.shape == (20, 36)
    np.testing.assert_array_equal((ds.X > 0).multiply(1).sum(axis=1).A1 <= 30, True)
    np.testing.assert_array_equal(ds.X.sum(axis=1).A1, 30 * 96)
    ids = np.array(ds.animal_ids, dtype=int)
    assert (pop.herd[ids] == 0).sum() == (pop.herd[ids] == 1).sum() == 10
    ds7 = subsample_dataset(pop, 20, 6, 7, seed=6)
    sums = ds7.X.sum(axis=1).A1
    assert np.all((sums >= 2880 - 7 + 1) & (sums <= 2880))


def test_subsample_argument_checks():
    prof = make_profile("lake", 12)
    pop = simulate_population(prof, 10, 20, seed=0)
    with pytest.raises(ValueError):
        subsample_dataset(pop, 5, 6, 1)            # infections not generated yet
    generate_infections(pop, prof, 0.6, seed=0)
    for bad in [(11, 6, 1), (5, 13, 1), (5, 6, 21)]:
        with pytest.raises(ValueError):
            subsample_dataset(pop, *bad)


def test_scenario_round_trip():
    sc = Scenario(profile="river", n0=40, T=96, n=20, N=10, t=4, N0=20, seed=9)
    a, prof, _ = simulate_scenario(sc, run=1)
    b, _, _ = simulate_scenario(sc, run=1)
    np.testing.assert_array_equal(a.X.toarray(), b.X.toarray())
    np.testing.assert_array_equal(a.y, b.y)
    assert prof.name == "river" and a.X.shape == (20, 100)
