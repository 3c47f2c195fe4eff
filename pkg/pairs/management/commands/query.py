import json
from datetime import datetime, timezone

from django.core.management.base import BaseCommand

from pairs.config import load_templates
from pairs.gate import run_query
from pairs.index import load_index

from ._common import add_pipeline_arguments, command_errors, pipeline_config, resolve_providers


class Command(BaseCommand):
    help = "Answer one question and print the query result as JSON."

    def add_arguments(self, parser):
        parser.add_argument("--index", required=True, help="Index directory written by the ingest command.")
        parser.add_argument("--question", required=True)
        add_pipeline_arguments(parser)

    def handle(self, *args, **options):
        with command_errors():
            config = pipeline_config(options)
            templates = load_templates(config)
            index = load_index(options["index"])
            providers = resolve_providers(config, index)
            result = run_query(options["question"], index, providers, config, templates)

        payload = result.model_dump(mode="json")
        if not options["deterministic"]:
            payload["created_at"] = datetime.now(timezone.utc).isoformat()
        self.stdout.write(json.dumps(payload, sort_keys=True))
