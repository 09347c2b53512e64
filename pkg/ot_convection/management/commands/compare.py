import json

from django.core.management import BaseCommand, CommandError

from ot_convection.errors import ShapeMismatchError
from ot_convection.experiments import compare_runs, registered_run, resolve_run


class Command(BaseCommand):
    help = "L2 and max-norm differences between the snapshots of two runs (directories or registry ids)."

    def add_arguments(self, parser):
        parser.add_argument("run_a")
        parser.add_argument("run_b")

    def handle(self, *args, **options):
        references = (options["run_a"], options["run_b"])
        try:
            report = compare_runs(*(resolve_run(reference) for reference in references))
            records = [registered_run(reference) for reference in references]
        except (FileNotFoundError, ShapeMismatchError) as ex:
            self.stderr.write(f"COMPARE ERROR: {ex}\n")
            raise CommandError("Runs are not comparable", returncode=2)
        output = report.serialize()
        output["registered"] = [record.serialize() if record else None for record in records]
        self.stdout.write(json.dumps(output, indent=2, sort_keys=True) + "\n")
