# Generated by Django 4.2.11 on 2026-10-17 09:12

from django.db import migrations, models


class Migration(migrations.Migration):
    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="RunRecord",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("subcommand", models.CharField(max_length=31)),
                ("seed", models.IntegerField(default=0)),
                (
                    "config",
                    models.JSONField(help_text="Resolved config echo, as in the manifest"),
                ),
                ("output_dir", models.CharField(max_length=1023)),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("ok", "ok"),
                            ("invariant_failure", "invariant failure"),
                            ("solver_error", "solver error"),
                        ],
                        max_length=31,
                    ),
                ),
                ("exit_code", models.IntegerField()),
                ("wall_time", models.FloatField(help_text="Seconds")),
                ("version", models.CharField(max_length=31)),
                ("created", models.DateTimeField(auto_now_add=True)),
            ],
        ),
    ]
