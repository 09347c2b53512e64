from django.core.management import BaseCommand

from ot_convection.docs import configdocs


class Command(BaseCommand):

    def handle(self, *args, **options):
        for doc in configdocs():
            self.stdout.write(doc + "\n\n")
