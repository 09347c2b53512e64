import json
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from ot_convection.docs import configdocs
from ot_convection.errors import ConfigError
from ot_convection.factories import (
    AHTConfigFactory, CrossBurgersConfigFactory, GHBConfigFactory, GNSBConfigFactory, HFConfigFactory,
    JKOConfigFactory, RearrangeConfigFactory, SweepConfigFactory
)
from ot_convection.forms import FORMS, SUBCOMMANDS, read_config_file, validate_config

FACTORIES = {
    "rearrange": RearrangeConfigFactory,
    "aht": AHTConfigFactory,
    "jko": JKOConfigFactory,
    "gnsb": GNSBConfigFactory,
    "hf": HFConfigFactory,
    "ghb": GHBConfigFactory,
    "crossburgers": CrossBurgersConfigFactory,
    "sweep": SweepConfigFactory,
}


class ValidateConfigTests(SimpleTestCase):

    def _errors(self, subcommand: str, raw: dict) -> dict:
        with self.assertRaises(ConfigError) as raised:
            validate_config(subcommand, raw)
        return raised.exception.errors

    def test_every_subcommand_has_a_form(self) -> None:
        self.assertEqual(set(FORMS), set(SUBCOMMANDS))
        for subcommand, factory_class in FACTORIES.items():
            config = validate_config(subcommand, factory_class())
            self.assertEqual(config.subcommand, subcommand)

    def test_defaults_are_filled_in(self) -> None:
        # when
        config = validate_config("aht", AHTConfigFactory())

        # then
        self.assertEqual(config["n"], 16)
        self.assertEqual(config["d"], 2)
        self.assertEqual(config["seed"], 0)
        self.assertEqual(config["scheme"], "euler")
        self.assertEqual(config["balance_constant"], 10.0)
        self.assertIsNone(config["monotone_rtol"])
        with self.assertRaises(KeyError):
            config["eps"]

    def test_empty_config_lists_every_required_key(self) -> None:
        # when
        errors = self._errors("aht", {})

        # then
        self.assertEqual(sorted(errors), ["T", "dt", "n"])

    def test_missing_n(self) -> None:
        raw = AHTConfigFactory()
        del raw["n"]
        self.assertIn("n", self._errors("aht", raw))

    def test_unknown_keys_are_rejected(self) -> None:
        errors = self._errors("aht", AHTConfigFactory(colour="blue", eps="0.1"))
        self.assertEqual(errors["colour"], ["unknown key"])
        self.assertEqual(errors["eps"], ["unknown key"])

    def test_unknown_subcommand(self) -> None:
        self.assertIn("subcommand", self._errors("navier_stokes", {}))

    def test_grid_rules(self) -> None:
        self.assertIn("n", self._errors("aht", AHTConfigFactory(n="12")))
        self.assertIn("n", self._errors("aht", AHTConfigFactory(n="4")))
        self.assertIn("dt", self._errors("aht", AHTConfigFactory(dt="0")))
        self.assertIn("K", self._errors("aht", AHTConfigFactory(domain="box", K="neg_laplacian")))
        self.assertIn("preset", self._errors("aht", AHTConfigFactory(domain="box", n="12", preset="gradient")))
        self.assertIn("preset", self._errors("aht", AHTConfigFactory(d="1", preset="darcy")))
        self.assertEqual(validate_config("aht", AHTConfigFactory(domain="box", n="12"))["n"], 12)

    def test_forcing_rules(self) -> None:
        self.assertIn("forcing", self._errors("hf", HFConfigFactory(forcing="model3", d="1")))
        self.assertIn("kappa", self._errors("hf", HFConfigFactory(kappa="0")))
        self.assertIn("g_matrix", self._errors("hf", HFConfigFactory(forcing="custom")))
        self.assertIn("preset", self._errors("hf", HFConfigFactory(forcing="model1", preset="buoyant")))
        self.assertIn("eps", self._errors("gnsb", GNSBConfigFactory(eps="0")))
        self.assertIn("K", self._errors("hf", HFConfigFactory(K="none")))
        self.assertIn("density_delta", self._errors("hf", HFConfigFactory(forcing="model2", density_delta="1.5")))
        self.assertIn("friction_delta", self._errors("hf", HFConfigFactory(friction_delta="-0.1")))

    def test_custom_matrices(self) -> None:
        # when
        config = validate_config(
            "gnsb", GNSBConfigFactory(forcing="custom", preset="random_smooth", g_matrix="0,-1;1,0", f_offset="0.5,0")
        )

        # then
        self.assertEqual(config["g_matrix"], ((0.0, -1.0), (1.0, 0.0)))
        self.assertEqual(config["f_offset"], (0.5, 0.0))
        self.assertIn("g_matrix", self._errors("gnsb", GNSBConfigFactory(forcing="custom", g_matrix="1,0;1")))

    def test_switches(self) -> None:
        self.assertFalse(validate_config("crossburgers", CrossBurgersConfigFactory(cross="off"))["cross"])
        self.assertTrue(validate_config("crossburgers", CrossBurgersConfigFactory())["cross"])
        self.assertIn("cross", self._errors("crossburgers", CrossBurgersConfigFactory(cross="maybe")))

    def test_crossburgers_rules(self) -> None:
        self.assertIn("n_s", self._errors("crossburgers", CrossBurgersConfigFactory(n_s="6")))
        self.assertIn("alpha", self._errors("crossburgers", CrossBurgersConfigFactory(alpha="0", lambda_T="1")))

    def test_sweep_rules(self) -> None:
        self.assertEqual(validate_config("sweep", SweepConfigFactory())["eps_list"], [0.1, 0.01])
        self.assertIn("eps_list", self._errors("sweep", SweepConfigFactory(eps_list="0.1")))
        self.assertIn("eps_list", self._errors("sweep", SweepConfigFactory(eps_list="0.1,0")))
        self.assertIn("eps_list", self._errors("sweep", SweepConfigFactory(eps_list="0.1,abc")))

    def test_sweep_slope_window(self) -> None:
        # when
        default = validate_config("sweep", SweepConfigFactory())
        cleared = validate_config("sweep", SweepConfigFactory(slope_min="", slope_max=""))

        # then
        self.assertEqual((default["slope_min"], default["slope_max"]), (0.35, 0.65))
        self.assertEqual((cleared["slope_min"], cleared["slope_max"]), (None, None))
        self.assertIsNone(validate_config("sweep", cleared.as_raw())["slope_min"])

    def test_cloud_rules(self) -> None:
        self.assertIn("forcing", self._errors("ghb", GHBConfigFactory(d="1")))
        self.assertIn("h", self._errors("ghb", GHBConfigFactory(h="-0.1")))
        self.assertIn("h", self._errors("jko", JKOConfigFactory(h="0")))

    def test_error_message_lists_every_key(self) -> None:
        with self.assertRaises(ConfigError) as raised:
            validate_config("aht", {"colour": "blue"})
        message = str(raised.exception)
        for key in ("colour", "n", "T", "dt"):
            self.assertIn(f"{key}:", message)

    def test_raw_echo_validates_back(self) -> None:
        for subcommand, factory_class in FACTORIES.items():
            config = validate_config(subcommand, factory_class())
            again = validate_config(subcommand, config.as_raw())
            self.assertEqual(again.values, config.values, subcommand)
        custom = validate_config("hf", HFConfigFactory(forcing="custom", preset="random_smooth", g_matrix="0,-1;1,0"))
        self.assertEqual(validate_config("hf", custom.as_raw()).values, custom.values)

    def test_serialized_config_is_json(self) -> None:
        config = validate_config("sweep", SweepConfigFactory())
        echoed = json.loads(json.dumps(config.serialize()))
        self.assertEqual(echoed["values"]["eps_list"], [0.1, 0.01])
        self.assertEqual(echoed["subcommand"], "sweep")


class ConfigFileTests(SimpleTestCase):

    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name)

    def tearDown(self) -> None:
        self.directory.cleanup()

    def test_reads_the_section(self) -> None:
        # given
        path = self.root / "experiments.ini"
        path.write_text("[aht]\nn = 16\nT = 0.05\ndt = 0.01\n\n[ghb]\nn = 4\n")

        # when
        raw = read_config_file(path, "aht")

        # then
        self.assertEqual(raw, {"n": "16", "T": "0.05", "dt": "0.01"})
        with self.assertRaises(ConfigError):
            read_config_file(path, "jko")

    def test_missing_file(self) -> None:
        with self.assertRaises(ConfigError) as raised:
            read_config_file(self.root / "nowhere.ini", "aht")
        self.assertIn("config", raised.exception.errors)

    def test_reads_a_manifest_echo(self) -> None:
        # given
        config = validate_config("aht", AHTConfigFactory(seed="3"))
        path = self.root / "manifest.json"
        path.write_text(json.dumps({"config": config.serialize()}))

        # when
        raw = read_config_file(path, "aht")

        # then
        self.assertEqual(validate_config("aht", raw).values, config.values)
        with self.assertRaises(ConfigError):
            read_config_file(path, "ghb")


class ConfigDocsTests(SimpleTestCase):

    def test_every_key_is_documented(self) -> None:
        # when
        blocks = configdocs()

        # then
        self.assertEqual(len(blocks), len(FORMS))
        for block, (subcommand, form) in zip(blocks, FORMS.items()):
            self.assertTrue(block.startswith(f"[{subcommand}]"))
            for name, field in form.base_fields.items():
                self.assertTrue(field.help_text, f"{subcommand}.{name}")
                self.assertIn(f"  {name} ", block)
