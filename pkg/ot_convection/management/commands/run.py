from typing import Dict, List

from django.core.management import BaseCommand, CommandError

from ot_convection.errors import ConfigError
from ot_convection.experiments import default_output_dir, execute, register_run
from ot_convection.forms import SUBCOMMANDS, read_config_file, validate_config


def parse_overrides(assignments: List[str]) -> Dict[str, str]:
    overrides = {}
    bad = []
    for assignment in assignments:
        key, sep, value = assignment.partition("=")
        if not sep or not key.strip():
            bad.append(assignment)
            continue
        overrides[key.strip()] = value.strip()
    if bad:
        raise ConfigError("Malformed --set", errors={"--set": [f"expected KEY=VALUE, got {item!r}" for item in bad]})
    return overrides


class Command(BaseCommand):
    help = "Runs one experiment and writes its diagnostics, snapshots and manifest. Exit 0 ok, 1 invariant " \
           "failure, 2 config error, 3 solver error."

    def add_arguments(self, parser):
        parser.add_argument("subcommand", choices=SUBCOMMANDS)
        parser.add_argument("config", help="INI file with a [<subcommand>] section, or a manifest.json to replay")
        parser.add_argument("--output", help="Output directory (overrides the config)")
        parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override one key")

    def handle(self, *args, **options):
        subcommand = options["subcommand"]
        try:
            raw = read_config_file(options["config"], subcommand)
            raw.update(parse_overrides(options["set"]))
            if options["output"]:
                raw["output"] = options["output"]
            config = validate_config(subcommand, raw)
        except ConfigError as ex:
            self.stderr.write(f"CONFIG ERROR: {ex}\n")
            raise CommandError(f"Invalid {subcommand} configuration", returncode=2)

        output_dir = default_output_dir(config)
        try:
            manifest = execute(config, output_dir)
        except ValueError as ex:
            self.stderr.write(f"CONFIG ERROR: {ex}\n")
            raise CommandError(f"{subcommand} rejected its input", returncode=2)
        register_run(manifest, output_dir)

        self.stdout.write(f"{subcommand} run {manifest.status} in {manifest.wall_time:.2f}s, output in {output_dir}\n")
        for name, check in manifest.checks.items():
            verdict = "pass" if check["passed"] else "FAIL"
            self.stdout.write(f"  {verdict} {name}: worst {check['worst']:.3e}, tolerance {check['tolerance']:.3e}\n")
        if manifest.message:
            self.stderr.write(f"SOLVER ERROR: {manifest.message}\n")
        if manifest.exit_code:
            raise CommandError(f"{subcommand} run finished with status {manifest.status}",
                               returncode=manifest.exit_code)
