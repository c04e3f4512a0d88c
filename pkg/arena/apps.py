from django.apps import AppConfig


class ArenaConfig(AppConfig):
    name = 'arena'
    verbose_name = 'Repeated game arena'

    def ready(self):
        # installs the ARENA_* defaults on django.conf.settings
        import arena.conf  # noqa: F401
