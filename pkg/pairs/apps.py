from django.apps import AppConfig


class PairsConfig(AppConfig):
    name = 'pairs'
    verbose_name = 'PAIRS retrieval pipeline'
