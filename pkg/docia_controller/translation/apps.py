"""Translation app configuration."""
from django.apps import AppConfig
from overrides import overrides


class TranslationConfig(AppConfig):
    """Translation pipeline configuration."""

    default_auto_field = "django.db.models.BigAutoField"
    name = "translation"
    verbose_name = "DoCIA translation pipeline"

    @overrides
    def ready(self) -> None:
        super().ready()
        # noinspection PyUnresolvedReferences
        from . import tasks  # noqa: F401
