import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempering_lab import (
    AssignmentSpace,
    BudgetExceededError,
    FiniteTarget,
    ProductAssignment,
    TemperatureLadder,
    TemperedFamily,
    bottleneck_B,
    overlap_phi,
    pi_bar,
    random_family,
    swap_acceptance_marginal,
    temper,
)
from tempering_lab.measure import load_family, target_from_json, target_to_json


def uniform_family(n_atoms, labels, betas):
    target = FiniteTarget.from_weights(np.ones(n_atoms), labels)
    return temper(target, TemperatureLadder(np.asarray(betas, dtype=float)))


class TestTargetValidation:
    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            FiniteTarget(np.array([1.0, 0.0]), np.array([1, 2]), 2)

    def test_rejects_missing_mode(self):
        with pytest.raises(ValueError, match="missing"):
            FiniteTarget(np.array([1.0, 2.0]), np.array([1, 1]), 2)

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            FiniteTarget(np.array([1.0, 2.0]), np.array([1]), 1)

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(ValueError):
            FiniteTarget(np.array([1.0, 2.0]), np.array([1, 3]), 2)


class TestLadderValidation:
    def test_rejects_decreasing(self):
        with pytest.raises(ValueError):
            TemperatureLadder(np.array([0.5, 0.4, 1.0]))

    def test_rejects_last_not_one(self):
        with pytest.raises(ValueError):
            TemperatureLadder(np.array([0.5, 0.9]))

    def test_single_level(self):
        assert TemperatureLadder(np.array([1.0])).L == 0


class TestTemper:
    def test_uniform_target_gives_uniform_levels(self):
        fam = uniform_family(4, [1, 1, 2, 2], [0.3, 0.7, 1.0])
        np.testing.assert_allclose(fam.levels, 0.25, atol=1e-15)

    def test_single_level_is_normalized_target(self):
        target = FiniteTarget.from_weights([2.0, 6.0], [1, 2])
        fam = temper(target, TemperatureLadder(np.array([1.0])))
        np.testing.assert_allclose(fam.levels[0], [0.25, 0.75], atol=1e-15)

    def test_two_atoms_half_beta(self):
        # weights (1, 4) at beta = 1/2 give sqrt weights (1, 2) -> (1/3, 2/3)
        target = FiniteTarget.from_weights([1.0, 4.0], [1, 2])
        fam = temper(target, TemperatureLadder(np.array([0.5, 1.0])))
        np.testing.assert_allclose(fam.levels[0], [1 / 3, 2 / 3], atol=1e-15)

    def test_extreme_weights_stay_finite(self):
        target = FiniteTarget.from_weights([1e-280, 1e280], [1, 2])
        fam = temper(target, TemperatureLadder(np.array([0.01, 1.0])))
        assert np.all(np.isfinite(fam.levels))
        np.testing.assert_allclose(fam.levels.sum(axis=1), 1.0, atol=1e-12)

    @given(
        a=st.floats(0.1, 10.0),
        b=st.floats(11.0, 100.0),
        beta1=st.floats(0.05, 0.5),
        beta2=st.floats(0.55, 0.999),
    )
    @settings(max_examples=60, deadline=None)
    def test_heavier_atom_gains_mass_with_beta(self, a, b, beta1, beta2):
        target = FiniteTarget.from_weights([a, b], [1, 2])
        fam = temper(target, TemperatureLadder(np.array([beta1, beta2, 1.0])))
        heavy = fam.levels[:, 1]
        assert heavy[0] <= heavy[1] + 1e-12 <= heavy[2] + 2e-12


class TestOverlapPhi:
    def test_uniform_two_modes(self):
        # the per-block overlap sum equals the block mass, so phi = 1
        fam = uniform_family(4, [1, 1, 2, 2], [0.5, 1.0])
        assert overlap_phi(fam) == pytest.approx(1.0, abs=1e-14)

    def test_uniform_single_mode(self):
        fam = uniform_family(3, [1, 1, 1], [0.5, 1.0])
        assert overlap_phi(fam) == pytest.approx(1.0, abs=1e-14)

    def test_single_level_rejected(self):
        fam = uniform_family(2, [1, 2], [1.0])
        with pytest.raises(ValueError):
            overlap_phi(fam)

    def test_matches_direct_summation_oracle(self):
        target = FiniteTarget.from_weights([1.0, 9.0], [1, 2])
        fam = temper(target, TemperatureLadder(np.array([0.5, 1.0])))

        best = np.inf
        for i, j in [(0, 1), (1, 0)]:
            for k in (1, 2):
                atoms = fam.target.atoms_in_mode(k)
                num = sum(
                    min(fam.levels[i][x], fam.levels[j][x]) for x in atoms
                )
                best = min(best, num / fam.levels[i][atoms].sum())
        assert overlap_phi(fam) == pytest.approx(best, abs=1e-14)

    def test_oracle_on_random_families(self):
        for seed in range(10):
            fam = random_family(3, 2, n_atoms=6, seed=seed)
            best = np.inf
            for i in range(1, fam.L + 1):
                for a, b in [(i - 1, i), (i, i - 1)]:
                    for k in range(1, fam.m + 1):
                        atoms = fam.target.atoms_in_mode(k)
                        num = np.minimum(fam.levels[a], fam.levels[b])[atoms].sum()
                        best = min(best, num / fam.levels[a][atoms].sum())
            assert overlap_phi(fam) == pytest.approx(best, rel=1e-12)


class TestBottleneck:
    def test_uniform_is_one(self):
        fam = uniform_family(4, [1, 1, 2, 2], [0.3, 1.0])
        assert bottleneck_B(fam) == 1.0

    def test_single_level_empty_product(self):
        fam = uniform_family(2, [1, 2], [1.0])
        assert bottleneck_B(fam) == 1.0

    def test_identical_block_masses_give_one(self):
        # two modes with mirrored weights: both blocks carry mass 1/2 at all levels
        target = FiniteTarget.from_weights([1.0, 3.0, 3.0, 1.0], [1, 1, 2, 2])
        fam = temper(target, TemperatureLadder(np.array([0.4, 0.8, 1.0])))
        np.testing.assert_allclose(fam.block_mass, 0.5, atol=1e-14)
        assert bottleneck_B(fam) == pytest.approx(1.0, abs=1e-13)

    def test_in_unit_interval_and_matches_oracle(self):
        for seed in range(10):
            fam = random_family(2, 3, seed=seed)
            value = bottleneck_B(fam)
            assert 0 < value <= 1
            oracle = min(
                np.prod(
                    [
                        min(1.0, fam.mode_mass(i - 1, k) / fam.mode_mass(i, k))
                        for i in range(1, fam.L + 1)
                    ]
                )
                for k in range(1, fam.m + 1)
            )
            assert value == pytest.approx(oracle, rel=1e-12)


class TestPiBar:
    def test_single_level_is_block_mass(self):
        fam = random_family(3, 0, seed=1)
        np.testing.assert_allclose(pi_bar(fam), fam.block_mass[0], atol=1e-15)

    def test_uniform_two_modes_quarter_each(self):
        fam = uniform_family(4, [1, 1, 2, 2], [0.5, 1.0])
        np.testing.assert_allclose(pi_bar(fam), 0.25, atol=1e-14)

    def test_matches_per_level_block_sum_oracle(self):
        fam = random_family(2, 2, seed=3)
        space = AssignmentSpace(2, 3)
        vec = pi_bar(fam)
        for idx, modes in enumerate(space):
            oracle = np.prod([fam.mode_mass(i, k) for i, k in enumerate(modes)])
            assert vec[idx] == pytest.approx(oracle, rel=1e-12)

    def test_sums_to_one_and_product_law_random_assignments(self, rng):
        fam = random_family(3, 3, seed=9)
        vec = pi_bar(fam)
        assert abs(vec.sum() - 1.0) < 1e-10
        space = AssignmentSpace(fam.m, fam.L + 1)
        for _ in range(1000):
            modes = tuple(rng.integers(1, fam.m + 1, size=fam.L + 1))
            expected = np.prod([fam.mode_mass(i, k) for i, k in enumerate(modes)])
            assert vec[space.index_of(modes)] == pytest.approx(expected, rel=1e-10)

    def test_budget_error(self):
        fam = random_family(3, 3, seed=0)
        with pytest.raises(BudgetExceededError):
            pi_bar(fam, budget=10)


class TestSwapAcceptanceMarginal:
    def test_uniform_family_accepts_everything(self):
        fam = uniform_family(4, [1, 1, 2, 2], [0.5, 1.0])
        for k1 in (1, 2):
            for k2 in (1, 2):
                assert swap_acceptance_marginal(fam, 1, k1, k2) == pytest.approx(1.0)

    def test_single_atom_modes_closed_form(self):
        target = FiniteTarget.from_weights([1.0, 5.0], [1, 2])
        fam = temper(target, TemperatureLadder(np.array([0.5, 1.0])))
        w1, w2 = fam.levels[0]
        v1, v2 = fam.levels[1]
        expected = min(w1 * v2, w2 * v1) / (w1 * v2)
        assert swap_acceptance_marginal(fam, 1, 1, 2) == pytest.approx(expected, rel=1e-12)

    def test_dominates_phi_squared(self):
        for seed in range(25):
            fam = random_family(2 + seed % 2, 1 + seed % 3, seed=seed)
            phi2 = overlap_phi(fam) ** 2
            for i in range(1, fam.L + 1):
                for k1 in range(1, fam.m + 1):
                    for k2 in range(1, fam.m + 1):
                        assert swap_acceptance_marginal(fam, i, k1, k2) >= phi2 - 1e-12

    def test_rejects_bad_indices(self):
        fam = random_family(2, 1, seed=0)
        with pytest.raises(ValueError):
            swap_acceptance_marginal(fam, 0, 1, 1)
        with pytest.raises(ValueError):
            swap_acceptance_marginal(fam, 1, 3, 1)


class TestAssignmentSpace:
    def test_roundtrip(self):
        space = AssignmentSpace(3, 4)
        for idx in range(space.size):
            assert space.index_of(space.assignment_at(idx)) == idx

    def test_level0_most_significant(self):
        space = AssignmentSpace(3, 2)
        assert space.index_of((2, 1)) == 3

    def test_product_assignment_helpers(self):
        lam = ProductAssignment((1, 2, 3), 3)
        assert lam.with_level(1, 3).modes == (1, 3, 3)
        assert lam.transposed(0, 2).modes == (3, 2, 1)
        assert lam.hamming(ProductAssignment((1, 3, 3), 3)) == 1
        with pytest.raises(ValueError):
            ProductAssignment((0, 1), 2)


class TestJsonInterchange:
    def test_decimal_string_weights(self):
        data = {
            "atoms": [
                {"weight": "0.1", "mode": 1},
                {"weight": 2, "mode": 2},
                {"weight": "3e-1", "mode": 2},
            ],
            "betas": [0.5, 1.0],
        }
        target, ladder = target_from_json(data)
        assert target.atom_weights[0] == pytest.approx(0.1)
        assert target.atom_weights[2] == pytest.approx(0.3)
        assert ladder.L == 1

    def test_roundtrip(self, tmp_path):
        fam = random_family(2, 1, seed=5)
        data = target_to_json(fam.target, fam.ladder)
        path = tmp_path / "target.json"
        path.write_text(json.dumps(data))
        fam2 = load_family(path)
        np.testing.assert_array_equal(fam.levels, fam2.levels)

    def test_missing_keys_rejected(self):
        with pytest.raises(ValueError):
            target_from_json({"betas": [1.0]})


class TestTemperedFamilyInvariants:
    def test_rejects_unnormalized_rows(self):
        target = FiniteTarget.from_weights([1.0, 1.0], [1, 2])
        ladder = TemperatureLadder(np.array([1.0]))
        with pytest.raises(ValueError):
            TemperedFamily(np.array([[0.6, 0.6]]), target, ladder)

    def test_rejects_empty_block_at_some_level(self):
        target = FiniteTarget.from_weights([1.0, 1.0], [1, 2])
        ladder = TemperatureLadder(np.array([1.0]))
        with pytest.raises(ValueError):
            TemperedFamily(np.array([[1.0, 0.0]]), target, ladder)
