import itertools
import math

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase, override_settings, tag
from hypothesis import given
from hypothesis import settings as hypothesis_settings
from hypothesis import strategies as st

from ot_convection.errors import AssignmentSizeError, AuctionError
from ot_convection.factories import LagrangianCloudFactory
from ot_convection.presets import box_atoms
from ot_convection.rearrange import (
    LagrangianCloud, assign_auction, assign_exact, auction_schedule, check_permutation, convex_rearrange,
    cost_matrix, cyclical_monotonicity_check, invert_permutation, polar_factorize, rearrangement, sort_rearrange_1d
)

dyadic = st.integers(-1000, 1000).map(lambda k: k / 8.0)


class PermutationTests(SimpleTestCase):

    def test_check_permutation(self) -> None:
        np.testing.assert_array_equal(check_permutation([2, 0, 1]), [2, 0, 1])
        for bad in ([0, 0, 1], [1, 2, 3], [0.0, 1.0]):
            with self.assertRaises(ValueError):
                check_permutation(bad)

    def test_inverse(self) -> None:
        sigma = np.array([3, 0, 2, 1])
        np.testing.assert_array_equal(sigma[invert_permutation(sigma)], np.arange(4))

    def test_cloud_is_read_only(self) -> None:
        # given
        cloud = LagrangianCloudFactory(n=2)

        # then
        with self.assertRaises(ValueError):
            cloud.values[0, 0] = 1.0
        with self.assertRaises(ValueError):
            LagrangianCloud(np.zeros((3, 2)), np.zeros((2, 2)))


class ExactAssignmentTests(SimpleTestCase):

    def _brute_force(self, atoms: np.ndarray, values: np.ndarray) -> np.ndarray:
        costs = cost_matrix(atoms, values)
        permutations = np.array(list(itertools.permutations(range(len(atoms)))))
        totals = costs[np.arange(len(atoms)), permutations].sum(axis=1)
        return permutations[int(np.argmin(totals))]

    def _instances(self, count: int, max_size: int, seed: int):
        rng = np.random.default_rng(seed)
        for _ in range(count):
            size = int(rng.integers(2, max_size + 1))
            yield rng.uniform(size=(size, 2)), rng.normal(size=(size, 2))

    def test_small_instances_match_brute_force(self) -> None:
        for atoms, values in self._instances(40, 6, seed=7):
            # when
            assignment = assign_exact(atoms, values)

            # then
            np.testing.assert_array_equal(assignment.sigma, self._brute_force(atoms, values))

    @tag("slow")
    def test_instances_up_to_eight_atoms_match_brute_force(self) -> None:
        for atoms, values in self._instances(200, 8, seed=8):
            cloud = LagrangianCloud(atoms, values)
            expected = self._brute_force(atoms, values)

            # when
            rearranged = convex_rearrange(cloud, "exact")
            _, X = polar_factorize(cloud, "exact")

            # then
            np.testing.assert_array_equal(rearranged.values, values[expected])
            np.testing.assert_array_equal(X, invert_permutation(expected))

    def test_duals_certify_optimality(self) -> None:
        # given
        atoms, values = box_atoms(5, 2), np.random.default_rng(9).normal(size=(25, 2))

        # when
        assignment = assign_exact(atoms, values)

        # then
        self.assertLess(assignment.slackness_gap(cost_matrix(atoms, values)), 1e-9)
        self.assertEqual(assignment.method, "exact")

    def test_size_cap(self) -> None:
        # given
        capped = dict(settings.OT_CONVECTION, HUNGARIAN_MAX_ATOMS=4)

        # when
        with override_settings(OT_CONVECTION=capped):
            with self.assertRaises(AssignmentSizeError) as raised:
                assign_exact(box_atoms(3, 2), box_atoms(3, 2))

        # then
        self.assertEqual(raised.exception.size, 9)
        self.assertEqual(raised.exception.limit, 4)

    def test_auto_switches_to_auction_above_the_cap(self) -> None:
        # given
        capped = dict(settings.OT_CONVECTION, HUNGARIAN_MAX_ATOMS=4)
        cloud = LagrangianCloudFactory(n=3)

        # when
        with override_settings(OT_CONVECTION=capped):
            assignment = rearrangement(cloud)

        # then
        self.assertEqual(assignment.method, "auction")


class AuctionTests(SimpleTestCase):

    def _check_against_exact(self, size: int, seed: int):
        rng = np.random.default_rng(seed)
        atoms, values = rng.uniform(size=(size, 2)), rng.normal(size=(size, 2))

        exact = assign_exact(atoms, values)
        auction = assign_auction(atoms, values)

        self.assertLessEqual(auction.cost, exact.cost + size * auction.epsilon + 1e-12)
        np.testing.assert_array_equal(auction.sigma, exact.sigma)

    def test_auction_matches_exact(self) -> None:
        for seed, size in enumerate((16, 24, 32, 48, 64)):
            self._check_against_exact(size, seed)

    @tag("slow")
    def test_auction_matches_exact_up_to_256_atoms(self) -> None:
        rng = np.random.default_rng(10)
        for seed in range(50):
            self._check_against_exact(int(rng.integers(2, 257)), 100 + seed)

    def test_schedule_is_geometric_and_ends_at_final(self) -> None:
        # when
        schedule = auction_schedule(8.0, 10, final=1e-6)

        # then
        self.assertEqual(schedule[0], 1.0)
        self.assertEqual(schedule[-1], 1e-6)
        self.assertTrue(all(a > b for a, b in zip(schedule, schedule[1:])))

    def test_round_cap_reports_epsilon_and_gap(self) -> None:
        # given
        atoms = box_atoms(4, 2)
        values = np.array([[0.5 + 1e-3 * k, 0.5] for k in range(16)])

        # when
        with self.assertRaises(AuctionError) as raised:
            assign_auction(atoms, values, max_rounds=1)

        # then
        self.assertGreater(raised.exception.epsilon, 0.0)
        self.assertGreater(raised.exception.gap, 0.0)

    def test_auction_is_deterministic(self) -> None:
        cloud = LagrangianCloudFactory(n=5, seed=3)
        first = assign_auction(cloud.atoms, cloud.values)
        second = assign_auction(cloud.atoms, cloud.values)
        np.testing.assert_array_equal(first.sigma, second.sigma)
        self.assertEqual(first.rounds, second.rounds)


class RearrangementTests(SimpleTestCase):

    def test_one_dimensional_rearrangement_sorts(self) -> None:
        # given
        atoms = box_atoms(8, 1)
        values = np.array([0.3, -1.0, 2.0, 0.1, 0.7, 0.7, -0.2, 5.0])

        # when
        rearranged = convex_rearrange(LagrangianCloud(atoms, values))

        # then
        np.testing.assert_array_equal(rearranged.values[:, 0], sort_rearrange_1d(values))

    def test_polar_factorization_reproduces_y(self) -> None:
        # given
        cloud = LagrangianCloudFactory(n=5, preset="scrambled_stretch")

        # when
        rearranged, X = polar_factorize(cloud)

        # then
        np.testing.assert_array_equal(rearranged.values[X], cloud.values)
        np.testing.assert_array_equal(np.sort(X), np.arange(cloud.size))

    def test_relabeling_does_not_change_the_rearrangement(self) -> None:
        # given
        cloud = LagrangianCloudFactory(n=4, preset="uniform_random", seed=11)
        shuffle = np.random.default_rng(0).permutation(cloud.size)

        # when
        first = convex_rearrange(cloud)
        second = convex_rearrange(cloud.with_values(cloud.values[shuffle]))

        # then
        np.testing.assert_array_equal(first.values, second.values)

    def test_rearranged_cloud_is_cyclically_monotone(self) -> None:
        # given
        cloud = LagrangianCloudFactory(n=6, preset="scrambled_stretch", seed=2)

        # when
        report = cyclical_monotonicity_check(convex_rearrange(cloud), trials=2000, cycle_len=5)

        # then
        self.assertTrue(report.passed, report.serialize())

    def test_reversed_cloud_is_not_monotone(self) -> None:
        # given
        atoms = box_atoms(6, 1)
        cloud = LagrangianCloud(atoms, atoms[::-1])

        # when
        report = cyclical_monotonicity_check(cloud)

        # then
        self.assertFalse(report.passed)
        self.assertGreater(report.worst, 0.1)

    def test_sort_path_needs_one_dimension(self) -> None:
        with self.assertRaises(ValueError):
            rearrangement(LagrangianCloudFactory(n=2), "sort")

    @given(st.lists(st.tuples(dyadic, dyadic), min_size=1, max_size=30))
    @hypothesis_settings(deadline=None, max_examples=200)
    def test_one_dimensional_rearrangement_is_non_expansive(self, pairs) -> None:
        # given
        y = np.array([pair[0] for pair in pairs])
        z = np.array([pair[1] for pair in pairs])

        # when
        y_star, z_star = sort_rearrange_1d(y), sort_rearrange_1d(z)

        # then
        after = math.fsum((y_star - z_star) ** 2)
        before = math.fsum((y - z) ** 2)
        self.assertLessEqual(after, before)


class OptimalityTests(SimpleTestCase):

    def test_two_atoms_cross_over(self) -> None:
        # when
        assignment = assign_exact([0.25, 0.75], [0.9, 0.1])

        # then
        np.testing.assert_array_equal(assignment.sigma, [1, 0])
        self.assertAlmostEqual(assignment.cost, 0.045, places=12)

    def test_exact_beats_random_permutations(self) -> None:
        # given
        cloud = LagrangianCloudFactory(n=4, preset="two_clusters", seed=5)
        costs = cost_matrix(cloud.atoms, cloud.values)
        rng = np.random.default_rng(12)
        shuffles = np.array([rng.permutation(cloud.size) for _ in range(1000)])

        # when
        assignment = assign_exact(cloud.atoms, cloud.values)

        # then
        totals = costs[np.arange(cloud.size), shuffles].sum(axis=1)
        self.assertLessEqual(assignment.cost, totals.min() + 1e-12)
        self.assertAlmostEqual(assignment.cost, costs[np.arange(cloud.size), assignment.sigma].sum(), places=12)

    def test_rearranging_twice_changes_nothing(self) -> None:
        for cloud, method in (
            (LagrangianCloudFactory(n=5, preset="uniform_random", seed=4), "exact"),
            (LagrangianCloudFactory(n=4, preset="scrambled_stretch", seed=6), "auction"),
            (LagrangianCloudFactory(n=16, d=1, preset="uniform_random", seed=1), "sort"),
        ):
            # when
            once = convex_rearrange(cloud, method)
            twice = convex_rearrange(once, method)

            # then
            np.testing.assert_array_equal(twice.values, once.values)
            np.testing.assert_array_equal(rearrangement(once, method).sigma, np.arange(cloud.size))

    def test_one_dimensional_polar_factorization(self) -> None:
        # given
        cloud = LagrangianCloud(box_atoms(3, 1), np.array([0.9, 0.1, 0.5]))

        # when
        rearranged, X = polar_factorize(cloud)

        # then
        np.testing.assert_array_equal(rearranged.values[:, 0], [0.1, 0.5, 0.9])
        np.testing.assert_array_equal(X, [2, 0, 1])
        np.testing.assert_array_equal(rearranged.values[X, 0], [0.9, 0.1, 0.5])
