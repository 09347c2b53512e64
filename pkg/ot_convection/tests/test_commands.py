import json
import math
import tempfile
import unittest.mock
from datetime import datetime
from io import StringIO
from pathlib import Path
from unittest.mock import Mock

from django.conf import settings
from django.core.management import CommandError, call_command
from django.db import OperationalError
from django.test import SimpleTestCase, TestCase, override_settings

from ot_convection.errors import ConfigError, InvariantCheck, SolverError
from ot_convection.experiments import (
    MANIFEST_NAME, PIPELINES, RunManifest, compare_runs, execute, register_run, resolve_run
)
from ot_convection.factories import (
    AHTConfigFactory, CrossBurgersConfigFactory, GHBConfigFactory, GNSBConfigFactory, HFConfigFactory,
    JKOConfigFactory, RearrangeConfigFactory, RunRecordFactory, SweepConfigFactory
)
from ot_convection.forms import validate_config
from ot_convection.management.commands.run import parse_overrides
from ot_convection.models import RunRecord


def _write_ini(path: Path, subcommand: str, raw: dict) -> Path:
    lines = [f"[{subcommand}]"] + [f"{key} = {value}" for key, value in raw.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


class _TempDirMixin:

    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name)

    def tearDown(self) -> None:
        self.directory.cleanup()


class RunCommandTests(_TempDirMixin, TestCase):

    def _run_command(self, subcommand: str, raw: dict, output: str = "out", *extra: str) -> str:
        ini = _write_ini(self.root / f"{subcommand}.ini", subcommand, raw)
        stdout = StringIO()
        call_command("run", subcommand, str(ini), "--output", str(self.root / output), *extra,
                     stdout=stdout, stderr=StringIO())
        return stdout.getvalue()

    def _returncode(self, subcommand: str, raw: dict, *extra: str) -> int:
        with self.assertRaises(CommandError) as raised:
            self._run_command(subcommand, raw, "out", *extra)
        return raised.exception.returncode

    def test_successful_run(self) -> None:
        # when
        output = self._run_command("rearrange", RearrangeConfigFactory())

        # then
        manifest = RunManifest.read(self.root / "out")
        self.assertEqual(manifest.status, "ok")
        self.assertEqual(manifest.exit_code, 0)
        self.assertIn("rearrange run ok", output)
        self.assertIn("pass monotonicity", output)
        self.assertEqual(sorted(manifest.artifacts), ["assignment.json", "cloud.dat", "rearranged.dat"])
        self.assertEqual(RunRecord.objects.get().status, "ok")

    def test_config_errors_exit_with_2(self) -> None:
        self.assertEqual(self._returncode("rearrange", RearrangeConfigFactory(n="0")), 2)
        self.assertEqual(self._returncode("rearrange", RearrangeConfigFactory(colour="blue")), 2)
        self.assertEqual(self._returncode("rearrange", RearrangeConfigFactory(), "--set", "no-equals-sign"), 2)
        self.assertFalse(RunRecord.objects.exists())

    def test_missing_section_exits_with_2(self) -> None:
        ini = _write_ini(self.root / "aht.ini", "aht", AHTConfigFactory())
        with self.assertRaises(CommandError) as raised:
            call_command("run", "ghb", str(ini), stdout=StringIO(), stderr=StringIO())
        self.assertEqual(raised.exception.returncode, 2)

    def test_overrides_win_over_the_file(self) -> None:
        # when
        self._run_command("rearrange", RearrangeConfigFactory(), "out", "--set", "n=3", "--set", "seed = 5")

        # then
        manifest = RunManifest.read(self.root / "out")
        self.assertEqual(manifest.config["values"]["n"], 3)
        self.assertEqual(manifest.seed, 5)

    def test_failed_check_exits_with_1(self) -> None:
        # given
        def failing(config, artifacts):
            check = InvariantCheck("always", 0.0)
            check.record(1.0, 3)
            return {"always": check}

        # when
        with unittest.mock.patch.dict(PIPELINES, {"rearrange": failing}):
            returncode = self._returncode("rearrange", RearrangeConfigFactory())

        # then
        manifest = RunManifest.read(self.root / "out")
        self.assertEqual(returncode, 1)
        self.assertEqual(manifest.status, "invariant_failure")
        self.assertEqual(manifest.failed_checks, ["always"])
        self.assertEqual(manifest.checks["always"]["step"], 3)
        self.assertEqual(RunRecord.objects.get().exit_code, 1)

    def test_solver_error_exits_with_3(self) -> None:
        # when
        returncode = self._returncode("crossburgers", {"n_s": "128", "T": "0.5", "dt": "0.01", "scheme": "rk2"})

        # then
        manifest = RunManifest.read(self.root / "out")
        self.assertEqual(returncode, 3)
        self.assertEqual(manifest.status, "solver_error")
        self.assertTrue(manifest.message.startswith("InstabilityError"))

    def test_mocked_solver_error(self) -> None:
        pipeline = Mock(side_effect=SolverError("no convergence", residual=1.0))
        with unittest.mock.patch.dict(PIPELINES, {"rearrange": pipeline}):
            self.assertEqual(self._returncode("rearrange", RearrangeConfigFactory()), 3)
        pipeline.assert_called_once()

    def test_rejected_input_exits_with_2(self) -> None:
        # given
        def rejecting(config, artifacts):
            artifacts.path("cloud.dat").write_text("partial\n")
            raise ValueError("values and atoms differ")

        # when
        with unittest.mock.patch.dict(PIPELINES, {"rearrange": rejecting}):
            returncode = self._returncode("rearrange", RearrangeConfigFactory())

        # then
        self.assertEqual(returncode, 2)
        self.assertFalse((self.root / "out").exists())
        self.assertFalse(RunRecord.objects.exists())

    def test_rejected_input_keeps_files_it_did_not_write(self) -> None:
        # given
        (self.root / "out").mkdir()
        (self.root / "out" / "notes.txt").write_text("kept\n")

        def rejecting(config, artifacts):
            artifacts.path("cloud.dat").write_text("partial\n")
            raise ValueError("values and atoms differ")

        # when
        with unittest.mock.patch.dict(PIPELINES, {"rearrange": rejecting}):
            returncode = self._returncode("rearrange", RearrangeConfigFactory())

        # then
        self.assertEqual(returncode, 2)
        self.assertEqual(sorted(path.name for path in (self.root / "out").iterdir()), ["notes.txt"])

    def test_run_replays_its_manifest(self) -> None:
        # given
        self._run_command("rearrange", RearrangeConfigFactory(seed="4"), "first")
        first = RunManifest.read(self.root / "first")

        # when
        call_command("run", "rearrange", str(self.root / "first" / MANIFEST_NAME), "--output",
                     str(self.root / "second"), stdout=StringIO(), stderr=StringIO())

        # then
        self.assertEqual(RunManifest.read(self.root / "second").artifacts, first.artifacts)

    def test_unreachable_registry_does_not_fail_the_run(self) -> None:
        broken = Mock(side_effect=OperationalError)

        with unittest.mock.patch.object(RunRecord.objects, "create", broken):
            with self.assertLogs("ot_convection.experiments", level="WARNING"):
                self._run_command("rearrange", RearrangeConfigFactory())

        broken.assert_called_once()
        self.assertEqual(RunManifest.read(self.root / "out").exit_code, 0)

    def test_parse_overrides(self) -> None:
        self.assertEqual(parse_overrides(["n = 8", "preset=stretch", "output="]),
                         {"n": "8", "preset": "stretch", "output": ""})
        with self.assertRaises(ConfigError) as raised:
            parse_overrides(["n", "=3"])
        self.assertEqual(len(raised.exception.errors["--set"]), 2)


class ValidateCommandTests(_TempDirMixin, SimpleTestCase):

    def test_prints_the_resolved_config(self) -> None:
        # given
        ini = _write_ini(self.root / "aht.ini", "aht", AHTConfigFactory())
        stdout = StringIO()

        # when
        call_command("validate", "aht", str(ini), stdout=stdout)

        # then
        lines = stdout.getvalue().splitlines()
        self.assertEqual(lines[0], "[aht]")
        self.assertIn("n = 16", lines)
        self.assertIn("scheme = euler", lines)
        self.assertIn("# monotone_rtol is unset", lines)

    def test_invalid_config(self) -> None:
        ini = _write_ini(self.root / "aht.ini", "aht", AHTConfigFactory(dt="-1"))
        stderr = StringIO()
        with self.assertRaises(CommandError) as raised:
            call_command("validate", "aht", str(ini), stdout=StringIO(), stderr=stderr)
        self.assertEqual(raised.exception.returncode, 2)
        self.assertIn("dt:", stderr.getvalue())

    def test_configdocs(self) -> None:
        stdout = StringIO()
        call_command("configdocs", stdout=stdout)
        for subcommand in ("[rearrange]", "[aht]", "[gnsb]", "[ghb]", "[crossburgers]", "[sweep]"):
            self.assertIn(subcommand, stdout.getvalue())


class ExecuteTests(_TempDirMixin, SimpleTestCase):

    def _execute(self, subcommand: str, raw: dict, name: str) -> RunManifest:
        return execute(validate_config(subcommand, raw), self.root / name)

    def test_pipelines_only_read_declared_keys(self) -> None:
        factories = {
            "jko": JKOConfigFactory, "gnsb": GNSBConfigFactory, "hf": HFConfigFactory,
            "crossburgers": CrossBurgersConfigFactory,
        }
        for subcommand, factory_class in factories.items():
            manifest = self._execute(subcommand, factory_class(stride="2"), subcommand)
            self.assertNotEqual(manifest.status, "solver_error", manifest.message)
            self.assertTrue((self.root / subcommand / MANIFEST_NAME).exists())

    def test_crossburgers_checks_the_lambda_energy(self) -> None:
        # when
        manifest = self._execute(
            "crossburgers", CrossBurgersConfigFactory(beta="0.5", lambda_T="1", lambda_dt="0.001"), "cb"
        )

        # then
        drift = json.loads((self.root / "cb" / "lambda_drift.json").read_text())
        self.assertEqual(drift["steps"], 1000)
        self.assertLess(drift["shadow"], drift["raw"])
        self.assertIn("lambda_drift.json", manifest.artifacts)
        self.assertTrue(manifest.checks["lambda_energy"]["passed"])
        self.assertEqual(manifest.checks["lambda_energy"]["tolerance"], 1e-8)

    def test_runs_are_deterministic(self) -> None:
        raw = AHTConfigFactory(preset="windowed_smooth", K="neg_laplacian", scheme="midpoint", stride="2")
        first = self._execute("aht", raw, "first")
        second = self._execute("aht", raw, "second")
        self.assertEqual(first.artifacts, second.artifacts)
        self.assertIn("y_00002.dat", first.artifacts)

    def test_manifest_is_written_whole(self) -> None:
        # given
        manifest = self._execute("rearrange", RearrangeConfigFactory(), "run")

        # then
        self.assertEqual(sorted(path.name for path in (self.root / "run").iterdir() if path.name.startswith(".")), [])
        echoed = json.loads((self.root / "run" / MANIFEST_NAME).read_text())
        self.assertEqual(echoed["config"]["subcommand"], "rearrange")
        self.assertEqual(RunManifest.read(self.root / "run" / MANIFEST_NAME), manifest)

    @override_settings(OT_CONVECTION={**settings.OT_CONVECTION, "SWEEP_MAX_WORKERS": 1})
    def test_sweep_writes_one_run_per_eps(self) -> None:
        # when
        manifest = self._execute("sweep", SweepConfigFactory(), "sweep")

        # then
        for index, eps in enumerate((0.1, 0.01)):
            member = RunManifest.read(self.root / "sweep" / f"eps_{index}")
            self.assertEqual(member.subcommand, "gnsb")
            self.assertEqual(member.config["values"]["eps"], eps)
            self.assertIn(f"eps_{index}/{MANIFEST_NAME}", manifest.artifacts)
            self.assertIn(f"energy_inequality[eps={eps:g}]", manifest.checks)
        rates = json.loads((self.root / "sweep" / "rate.json").read_text())
        self.assertEqual(rates["eps"], [0.1, 0.01])
        self.assertIn("rate.csv", manifest.artifacts)
        v_slope, y_slope = rates["v_slope"], rates["y_slope"]
        self.assertEqual(manifest.checks["v_slope"]["passed"], math.isfinite(v_slope) and 0.35 <= v_slope <= 0.65)
        self.assertEqual(manifest.checks["y_slope"]["passed"], math.isfinite(y_slope) and y_slope >= 0.35)


class CompareTests(_TempDirMixin, SimpleTestCase):

    def _ghb(self, name: str, **kwargs) -> Path:
        execute(validate_config("ghb", GHBConfigFactory(stride="1", **kwargs)), self.root / name)
        return self.root / name

    def test_identical_runs(self) -> None:
        # given
        run_a, run_b = self._ghb("a"), self._ghb("b")
        stdout = StringIO()

        # when
        call_command("compare", str(run_a), str(run_b), stdout=stdout)

        # then
        report = json.loads(stdout.getvalue())
        self.assertEqual(report["trajectories"], {"cloud": 0.0})
        final = report["snapshots"]["cloud_final.dat"]
        self.assertEqual((final["l2"], final["max"]), (0.0, 0.0))

    def test_different_seeds_differ(self) -> None:
        report = compare_runs(self._ghb("a"), self._ghb("b", seed="1"))
        self.assertGreater(report.trajectories["cloud"], 0.0)
        self.assertGreater(report.max_difference, 0.0)

    def test_incomparable_runs(self) -> None:
        # given
        execute(validate_config("rearrange", RearrangeConfigFactory(n="4")), self.root / "small")
        execute(validate_config("rearrange", RearrangeConfigFactory(n="6")), self.root / "large")
        stderr = StringIO()

        # when
        with self.assertRaises(CommandError) as raised:
            call_command("compare", str(self.root / "small"), str(self.root / "large"), stdout=StringIO(),
                         stderr=stderr)

        # then
        self.assertEqual(raised.exception.returncode, 2)
        self.assertIn("COMPARE ERROR", stderr.getvalue())

    def test_missing_run(self) -> None:
        with self.assertRaises(CommandError) as raised:
            call_command("compare", str(self.root / "nowhere"), "also-nowhere", stdout=StringIO(), stderr=StringIO())
        self.assertEqual(raised.exception.returncode, 2)


class RegistryTests(_TempDirMixin, TestCase):

    def test_register_and_resolve(self) -> None:
        # given
        manifest = execute(validate_config("rearrange", RearrangeConfigFactory()), self.root / "run")

        # when
        record = register_run(manifest, self.root / "run")

        # then
        self.assertEqual(record.exit_code, 0)
        self.assertEqual(resolve_run(str(record.id)), (self.root / "run").resolve())
        self.assertEqual(resolve_run(str(self.root / "run")), self.root / "run")

    def test_unknown_id(self) -> None:
        with self.assertRaises(FileNotFoundError):
            resolve_run("424242")

    def test_compare_by_id(self) -> None:
        # given
        for name in ("a", "b"):
            execute(validate_config("rearrange", RearrangeConfigFactory()), self.root / name)
        first = RunRecordFactory.make("rearrange", str(self.root / "a"))
        second = RunRecordFactory.make("rearrange", str(self.root / "b"))
        stdout = StringIO()

        # when
        call_command("compare", str(first.id), str(second.id), stdout=stdout)

        # then
        output = json.loads(stdout.getvalue())
        self.assertEqual(output["snapshots"]["rearranged.dat"]["max"], 0.0)
        self.assertEqual([run["id"] for run in output["registered"]], [first.id, second.id])
        self.assertEqual(output["registered"][0]["output_dir"], str(self.root / "a"))

    def test_compare_by_directory_has_no_registry_entry(self) -> None:
        # given
        for name in ("a", "b"):
            execute(validate_config("rearrange", RearrangeConfigFactory()), self.root / name)
        stdout = StringIO()

        # when
        call_command("compare", str(self.root / "a"), str(self.root / "b"), stdout=stdout)

        # then
        self.assertEqual(json.loads(stdout.getvalue())["registered"], [None, None])

    def test_serialize(self) -> None:
        # given
        record = RunRecordFactory.make("ghb", "/tmp/ghb-0", status="invariant_failure")

        # when
        data = record.serialize()

        # then
        self.assertEqual(sorted(data), [
            "config", "created", "exit_code", "id", "output_dir", "seed", "status", "subcommand", "version",
            "wall_time",
        ])
        self.assertEqual(data["id"], record.id)
        self.assertEqual(data["exit_code"], 1)
        self.assertEqual(data["config"], {"subcommand": "ghb", "values": {}})
        self.assertEqual(datetime.fromisoformat(data["created"]), record.created)
        json.dumps(data)
