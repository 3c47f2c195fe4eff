from django.core.management.base import BaseCommand, CommandError

from pairs.config import build_generator, load_config, load_templates
from pairs.evaluation import analyze_angles, read_dataset, write_angles_csv
from pairs.index import load_index

from ._common import DATA_ERROR, command_errors, resolve_providers


class Command(BaseCommand):
    help = "Measure query / pseudo-context / ground-truth angles and export them as CSV."

    def add_arguments(self, parser):
        parser.add_argument("--index", required=True)
        parser.add_argument("--dataset", required=True, help="QA records carrying gt_chunk_ids.")
        parser.add_argument("--out", required=True, help="CSV path for theta0,theta1,theta2,alpha rows.")
        parser.add_argument("--config", help="JSON pipeline config supplying the providers.")
        parser.add_argument("--templates", help="Directory holding the prompt templates.")

    def handle(self, *args, **options):
        with command_errors():
            config = load_config(options["config"], {"templates": options["templates"]})
            templates = load_templates(config)
            index = load_index(options["index"])
            dataset = read_dataset(options["dataset"])
            providers = resolve_providers(config, index)
            analysis = analyze_angles(dataset, index, providers.generator, providers.embedder, templates)

        for issue in analysis.issues:
            self.stderr.write(f"{issue.query_id}/{issue.chunk_id or '-'}: {issue.reason}")
        if not analysis.samples:
            raise CommandError("no angle samples could be produced", returncode=DATA_ERROR)

        with command_errors():
            write_angles_csv(analysis.samples, options["out"])
        self.stderr.write(f"wrote {len(analysis.samples)} angle samples to {options['out']}")
