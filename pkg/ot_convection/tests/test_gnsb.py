import math

import numpy as np
from django.test import SimpleTestCase, tag

from ot_convection.forcing import ForcingSpec
from ot_convection.gnsb import (
    GNSBState, ParcelTrajectories, energy_inequality_check, equilibrium_velocity, gnsb_run, gnsb_step,
    lagrangian_trajectories, linear_ode_rate, loglog_slope, sqrt_eps_experiment, zero_inertia_step
)
from ot_convection.grid import BoxGrid, DissipationKind, TorusGrid, VectorField, divergence, project
from ot_convection.presets import gnsb_initial


class MomentumTests(SimpleTestCase):

    def setUp(self) -> None:
        self.grid = TorusGrid(d=2, n=16)
        self.spec = ForcingSpec("boussinesq", d=2)
        self.y0 = gnsb_initial("random_smooth", self.grid, m=2, seed=3, amplitude=0.2)

    def test_balance_velocity_is_the_projected_forcing(self) -> None:
        # when
        u, _ = equilibrium_velocity(self.y0, self.spec, "identity")

        # then
        expected, _ = project(self.y0, DissipationKind.IDENTITY)
        np.testing.assert_allclose(u.values, expected.values, atol=1e-14)
        self.assertLess(np.max(np.abs(divergence(u).values)), 1e-10)

    def test_balance_needs_dissipation(self) -> None:
        with self.assertRaises(ValueError):
            equilibrium_velocity(self.y0, self.spec, "none")
        with self.assertRaises(ValueError):
            zero_inertia_step(GNSBState.start(self.y0, "none", 0.0), self.spec, 0.01)

    def test_first_step_relaxes_exactly_from_rest(self) -> None:
        # given
        eps, dt = 0.05, 0.01
        state = GNSBState.start(self.y0, "identity", eps)
        u, _ = equilibrium_velocity(self.y0, self.spec, "identity")

        # when
        state = gnsb_step(state, self.spec, dt)

        # then
        np.testing.assert_allclose(state.v.values, -math.expm1(-dt / eps) * u.values, atol=1e-14)
        self.assertAlmostEqual(state.t, dt)

    def test_small_inertia_tracks_the_balance(self) -> None:
        # given
        state = GNSBState.start(self.y0, "neg_laplacian", 1e-9)
        u, _ = equilibrium_velocity(self.y0, self.spec, "neg_laplacian")

        # when
        with self.assertLogs("ot_convection.gnsb", level="WARNING"):
            state = gnsb_step(state, self.spec, 0.01)

        # then
        np.testing.assert_allclose(state.v.values, u.values, atol=1e-12)

    def test_step_arguments(self) -> None:
        with self.assertRaises(ValueError):
            gnsb_step(GNSBState.start(self.y0, "identity", 0.0), self.spec, 0.01)
        with self.assertRaises(ValueError):
            gnsb_step(GNSBState.start(self.y0, "identity", 0.1), self.spec, 0.01, splitting="yoshida")
        with self.assertRaises(ValueError):
            GNSBState.start(VectorField.zeros(BoxGrid(n=8), 2), "neg_laplacian", 0.1)

    def test_inviscid_momentum_accumulates_forcing(self) -> None:
        # given
        state = GNSBState.start(self.y0, "none", 1.0)
        F, _ = project(self.y0, DissipationKind.IDENTITY)

        # when
        state = gnsb_step(state, self.spec, 0.01)

        # then
        np.testing.assert_allclose(state.v.values, 0.01 * F.values, atol=1e-14)


class EnergyTests(SimpleTestCase):

    def setUp(self) -> None:
        self.grid = TorusGrid(d=2, n=16)
        self.spec = ForcingSpec("hookean", d=2)
        self.y0 = gnsb_initial("anchored", self.grid, m=2, seed=1, amplitude=0.1)

    def test_gnsb_run_satisfies_the_energy_inequality(self) -> None:
        for splitting in ("lie", "strang"):
            # when
            run = gnsb_run(self.y0, self.spec, "identity", eps=0.1, T=0.1, dt=0.01, splitting=splitting)

            # then
            self.assertTrue(run.passed, run.checks["energy_inequality"].serialize())
            self.assertEqual(len(run.series), 11)
            self.assertEqual(run.series.column("excess")[0], 0.0)

    def test_zero_inertia_run_satisfies_the_energy_inequality(self) -> None:
        # when
        run = gnsb_run(self.y0, self.spec, "neg_laplacian", eps=0.0, T=0.1, dt=0.01)

        # then
        self.assertTrue(run.passed, run.checks["energy_inequality"].serialize())
        self.assertEqual(run.final.eps, 0.0)

    def test_report_counts_only_excess(self) -> None:
        # given
        run = gnsb_run(self.y0, self.spec, "identity", eps=0.1, T=0.05, dt=0.01)

        # when
        report = energy_inequality_check(run)

        # then
        self.assertEqual(len(report.residuals), 5)
        self.assertGreaterEqual(report.max_excess, 0.0)
        self.assertEqual(report.max_excess, max(0.0, float(np.max(report.residuals))))

    def test_forcing_and_data_must_agree(self) -> None:
        with self.assertRaises(ValueError):
            gnsb_run(self.y0, ForcingSpec("model2", d=2), "identity", eps=0.1, T=0.1, dt=0.01)

    def test_snapshots_follow_the_stride(self) -> None:
        # given
        steps = []

        # when
        gnsb_run(self.y0, self.spec, "identity", eps=0.1, T=0.05, dt=0.01, stride=2,
                 on_snapshot=lambda step, _: steps.append(step))

        # then
        self.assertEqual(steps, [0, 2, 4, 5])


class ZeroInertiaRateTests(SimpleTestCase):

    def test_scalar_oracle_converges_like_sqrt_eps(self) -> None:
        # when
        errors, slope = linear_ode_rate(
            np.eye(1), np.zeros(1), -np.eye(1), np.zeros(1), y0=np.ones(1), v0=np.zeros(1),
            eps_list=[1e-2, 1e-3, 1e-4], T=1.0
        )

        # then
        self.assertAlmostEqual(slope, 0.5, delta=0.05)
        self.assertAlmostEqual(errors[0], math.sqrt(0.5e-2), delta=0.1 * math.sqrt(0.5e-2))

    def test_loglog_slope(self) -> None:
        self.assertAlmostEqual(loglog_slope([1.0, 0.01], [1.0, 0.1]), 0.5)
        self.assertTrue(math.isnan(loglog_slope([1.0, 0.1], [1.0, 0.0])))

    def test_errors_shrink_with_eps(self) -> None:
        # given
        grid = TorusGrid(d=2, n=8)
        y0 = gnsb_initial("anchored", grid, m=2, seed=2, amplitude=0.1)

        # when
        report = sqrt_eps_experiment(y0, ForcingSpec("hookean", d=2), "identity", [1e-1, 1e-2], T=0.04, dt=0.01)

        # then
        self.assertEqual(report.eps, [0.1, 0.01])
        self.assertLess(report.v_errors[1], report.v_errors[0])
        self.assertLess(report.y_errors[1], report.y_errors[0])
        self.assertGreater(report.v_slope, 0.0)
        self.assertEqual(sorted(report.series), [0.01, 0.1])

    def test_eps_must_be_positive(self) -> None:
        y0 = gnsb_initial("anchored", TorusGrid(d=2, n=8), m=2, seed=2, amplitude=0.1)
        with self.assertRaises(ValueError):
            sqrt_eps_experiment(y0, ForcingSpec("hookean", d=2), "identity", [0.1, 0.0], T=0.02, dt=0.01)

    @tag("slow")
    def test_rate_on_a_fine_torus(self) -> None:
        # given
        grid = TorusGrid(d=2, n=64)
        y0 = gnsb_initial("anchored", grid, m=2, seed=7, amplitude=0.1)

        # when
        report = sqrt_eps_experiment(
            y0, ForcingSpec("hookean", d=2), "neg_laplacian", [1e-1, 1e-2, 1e-3, 1e-4], T=0.5, dt=1e-3
        )

        # then
        self.assertGreaterEqual(report.v_slope, 0.4)
        self.assertLessEqual(report.v_slope, 0.6)


class LagrangianTests(SimpleTestCase):

    def test_uniformity_of_grid_atoms(self) -> None:
        # given
        atoms = TorusGrid(d=2, n=8).coordinates.reshape(2, -1).T

        # then
        self.assertEqual(ParcelTrajectories(atoms, atoms, atoms, 0.0).uniformity(), 0.0)
        self.assertEqual(ParcelTrajectories(atoms, np.zeros_like(atoms), atoms, 0.0).uniformity(), 15.0)

    def test_parcels_have_no_net_drift(self) -> None:
        # given
        grid = TorusGrid(d=2, n=32)
        y0 = gnsb_initial("anchored", grid, m=2, seed=4, amplitude=0.05)

        # when
        parcels = lagrangian_trajectories(y0, ForcingSpec("hookean", d=2), "identity", eps=0.0, T=0.05, dt=0.01)

        # then
        displacement = parcels.positions - parcels.atoms
        self.assertAlmostEqual(parcels.t, 0.05)
        self.assertEqual(parcels.positions.shape, (1024, 2))
        self.assertGreater(np.max(np.abs(displacement)), 0.0)
        self.assertLess(np.max(np.abs(displacement.mean(axis=0))), 0.1 * np.max(np.abs(displacement)))

    def test_parcels_stay_in_the_box(self) -> None:
        grid = BoxGrid(n=16)
        y0 = gnsb_initial("buoyant", grid, m=2, seed=5, amplitude=0.5)
        parcels = lagrangian_trajectories(y0, ForcingSpec("boussinesq", d=2), "identity", eps=0.1, T=0.05, dt=0.01)
        self.assertTrue(np.all((parcels.positions >= 0.0) & (parcels.positions <= 1.0)))
