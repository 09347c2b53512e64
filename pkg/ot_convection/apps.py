from django.apps import AppConfig


class OtConvectionConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "ot_convection"
    verbose_name = "Optimal-transport convection models"
