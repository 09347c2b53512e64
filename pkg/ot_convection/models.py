from django.db import models


class RunRecord(models.Model):
    """
    One finished `run`, as written to its manifest. The manifest on disk stays the source of truth; the registry only
    makes runs findable by id (compare accepts either) and keeps a history when output directories are cleaned up.
    """

    STATUS_CHOICES = [
        ("ok", "ok"),
        ("invariant_failure", "invariant failure"),
        ("solver_error", "solver error"),
    ]

    subcommand = models.CharField(blank=False, max_length=31)
    seed = models.IntegerField(default=0)
    config = models.JSONField(help_text="Resolved config echo, as in the manifest")
    output_dir = models.CharField(blank=False, max_length=1023)
    status = models.CharField(choices=STATUS_CHOICES, max_length=31)
    exit_code = models.IntegerField()
    wall_time = models.FloatField(help_text="Seconds")
    version = models.CharField(max_length=31)
    created = models.DateTimeField(auto_now_add=True)

    def serialize(self) -> dict:
        return {
            "id": self.id,
            "subcommand": self.subcommand,
            "seed": self.seed,
            "config": self.config,
            "output_dir": self.output_dir,
            "status": self.status,
            "exit_code": self.exit_code,
            "wall_time": self.wall_time,
            "version": self.version,
            "created": self.created.isoformat() if self.created else None,
        }
