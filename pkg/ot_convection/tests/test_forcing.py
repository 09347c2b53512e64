import numpy as np
from django.test import SimpleTestCase

from ot_convection.forcing import ForcingSpec, clip_elongation, evaluate_forcing, rotate_quarter
from ot_convection.grid import TorusGrid
from ot_convection.presets import gnsb_initial


class ForcingSpecTests(SimpleTestCase):

    def test_dimensions(self) -> None:
        self.assertEqual(ForcingSpec("hookean", d=2).m, 2)
        self.assertEqual(ForcingSpec("model2", d=2).m, 4)
        self.assertEqual(ForcingSpec("custom", d=2, g_matrix=np.eye(3)).m, 3)
        self.assertEqual(ForcingSpec("model1", d=2).lifted_axes, (0, 1, 0, 1))
        self.assertEqual(ForcingSpec("boussinesq", d=2).lifted_axes, (None, None))

    def test_rejects_bad_parameters(self) -> None:
        bad = [
            dict(kind="gravity", d=2),
            dict(kind="hookean", d=2, kappa=0.0),
            dict(kind="model3", d=1),
            dict(kind="hookean", d=2, clip_radius=-1.0),
            dict(kind="custom", d=2),
            dict(kind="custom", d=2, g_matrix=np.eye(2), f_matrix=np.eye(3)),
            dict(kind="model1", d=2, density="gaussian"),
            dict(kind="model1", d=2, density="cosine", density_delta=1.5),
        ]
        for kwargs in bad:
            with self.assertRaises(ValueError, msg=str(kwargs)):
                ForcingSpec(**kwargs)

    def test_default_radius_and_lipschitz_bound(self) -> None:
        spec = ForcingSpec("model2", d=2, kappa=2.0, friction="cosine", friction_delta=0.25)
        self.assertAlmostEqual(spec.radius, 10.0 * np.sqrt(2.0))
        self.assertAlmostEqual(spec.lipschitz_bound(), 2.0 * 2.25)


class EvaluateForcingTests(SimpleTestCase):

    def setUp(self) -> None:
        self.grid = TorusGrid(d=2, n=8)
        self.x = self.grid.coordinates

    def test_hookean_pulls_towards_the_anchor(self) -> None:
        # given
        spec = ForcingSpec("hookean", d=2, kappa=3.0)
        y = self.x + 0.1

        # when
        F, G = evaluate_forcing(spec, self.x, y)

        # then
        np.testing.assert_allclose(F, 0.3 * np.ones_like(self.x))
        self.assertFalse(np.any(G))

    def test_boussinesq_is_the_identity(self) -> None:
        y = np.random.default_rng(0).normal(size=self.x.shape)
        F, G = evaluate_forcing(ForcingSpec("boussinesq", d=2), self.x, y)
        np.testing.assert_array_equal(F, y)
        self.assertFalse(np.any(G))

    def test_spring_models(self) -> None:
        # given
        y = gnsb_initial("anchored", self.grid, m=4, seed=1, amplitude=0.1).values
        elongation = self.x - y[:2]

        for kind in ("model1", "model2", "model3"):
            # when
            F, G = evaluate_forcing(ForcingSpec(kind, d=2, kappa=2.0), self.x, y)

            # then
            np.testing.assert_allclose(F, -2.0 * elongation)
            self.assertFalse(np.any(G[2:]), "labels are transported unchanged")
            if kind == "model1":
                self.assertFalse(np.any(G[:2]))
            elif kind == "model2":
                np.testing.assert_allclose(G[:2], -2.0 * (y[:2] - self.x))
            else:
                np.testing.assert_allclose(G[:2], rotate_quarter(2.0 * (y[:2] - self.x)))

    def test_custom_is_affine(self) -> None:
        # given
        spec = ForcingSpec(
            "custom", d=2, f_matrix=[[1.0, 0.0], [0.0, 2.0]], f_offset=[0.5, 0.0], g_matrix=[[0.0, -1.0], [1.0, 0.0]]
        )
        y = np.ones((2, 8, 8))

        # when
        F, G = evaluate_forcing(spec, self.x, y)

        # then
        np.testing.assert_allclose(F[:, 0, 0], [1.5, 2.0])
        np.testing.assert_allclose(G[:, 0, 0], [-1.0, 1.0])

    def test_shape_mismatch(self) -> None:
        with self.assertRaises(ValueError):
            evaluate_forcing(ForcingSpec("model1", d=2), self.x, self.x)

    def test_clipping_keeps_direction(self) -> None:
        # given
        xi = np.array([[3.0, 0.1], [4.0, 0.0]])

        # when
        clipped = clip_elongation(xi, 1.0)

        # then
        np.testing.assert_allclose(clipped[:, 0], [0.6, 0.8])
        np.testing.assert_allclose(clipped[:, 1], [0.1, 0.0])
