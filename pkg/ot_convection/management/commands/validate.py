from django.core.management import BaseCommand, CommandError

from ot_convection.errors import ConfigError
from ot_convection.forms import SUBCOMMANDS, read_config_file, validate_config


class Command(BaseCommand):
    help = "Validates a config without running it and prints the resolved config with defaults filled in."

    def add_arguments(self, parser):
        parser.add_argument("subcommand", choices=SUBCOMMANDS)
        parser.add_argument("config", help="INI file with a [<subcommand>] section")

    def handle(self, *args, **options):
        subcommand = options["subcommand"]
        try:
            config = validate_config(subcommand, read_config_file(options["config"], subcommand))
        except ConfigError as ex:
            self.stderr.write(f"CONFIG ERROR: {ex}\n")
            raise CommandError(f"Invalid {subcommand} configuration", returncode=2)

        raw = config.as_raw()
        self.stdout.write(f"[{subcommand}]\n")
        for key in sorted(config.values):
            if config[key] is None:
                self.stdout.write(f"# {key} is unset\n")
            else:
                self.stdout.write(f"{key} = {raw[key]}\n")
