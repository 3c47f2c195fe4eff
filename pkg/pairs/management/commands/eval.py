from django.core.management.base import BaseCommand, CommandError

from pairs.config import load_templates
from pairs.evaluation import (
    directly_answered,
    evaluate_run,
    gate_breakdown,
    read_dataset,
    run_dataset,
    write_breakdown,
    write_report,
)
from pairs.gate import Mode
from pairs.index import load_index

from ._common import DATA_ERROR, USAGE_ERROR, add_pipeline_arguments, command_errors, pipeline_config, resolve_providers


class Command(BaseCommand):
    help = "Run a QA dataset through the pipeline and write results.jsonl and summary.json."

    def add_arguments(self, parser):
        parser.add_argument("--index", required=True, help="Index directory written by the ingest command.")
        parser.add_argument("--dataset", required=True, help='JSON-lines file of {"id", "question", "answers"} records.')
        parser.add_argument("--out", required=True, help="Directory for the run report.")
        parser.add_argument(
            "--dq-breakdown",
            action="store_true",
            help="pairs mode only: rerun the directly answered queries with retrieval and write dq_breakdown.json.",
        )
        add_pipeline_arguments(parser)

    def handle(self, *args, **options):
        breakdown = None
        with command_errors():
            config = pipeline_config(options)
            if options["dq_breakdown"] and config.mode is not Mode.PAIRS:
                raise CommandError(
                    f"--dq-breakdown needs mode pairs, not {config.mode.value}", returncode=USAGE_ERROR
                )
            templates = load_templates(config)
            index = load_index(options["index"])
            dataset = read_dataset(options["dataset"])
            if not dataset:
                raise CommandError(f"{options['dataset']} holds no QA records", returncode=DATA_ERROR)
            providers = resolve_providers(config, index)

            results = run_dataset(dataset, index, providers, config, templates, config.parallelism)
            report = evaluate_run(dataset, results)
            write_report(report, options["out"], mode=config.mode.value, deterministic=options["deterministic"])

            if options["dq_breakdown"]:
                answered = set(directly_answered(results))
                forced = run_dataset(
                    [record for record in dataset if record.id in answered],
                    index,
                    providers,
                    config.model_copy(update={"mode": Mode.DPR_AIS}),
                    templates,
                    config.parallelism,
                )
                breakdown = gate_breakdown(dataset, results, forced)
                write_breakdown(breakdown, options["out"])

        self.stderr.write(report.summary_line())
        if breakdown is not None:
            self.stderr.write(breakdown.summary_line())
