from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from pairs.config import ProviderSpec, build_embedder, load_config
from pairs.exceptions import InvalidInputError
from pairs.index import ChunkingPolicy, ingest, read_corpus

from ._common import USAGE_ERROR, command_errors, embedder_spec


class Command(BaseCommand):
    help = "Embed a JSON-lines corpus and persist it as a flat inner-product index."

    def add_arguments(self, parser):
        parser.add_argument("--corpus", required=True, help='JSON-lines file of {"id", "text", "title"?} records.')
        parser.add_argument("--index", required=True, help="Directory to write the index into.")
        parser.add_argument(
            "--embedder",
            help="mock:DIM[:SEED], gemini:MODEL, http:MODEL or an HTTP model name. Defaults to the config file.",
        )
        parser.add_argument("--chunking", default="passthrough", help="passthrough or window[:WORDS[:OVERLAP]].")
        parser.add_argument("--config", help="JSON pipeline config supplying the embedder.")

    def handle(self, *args, **options):
        try:
            chunking = ChunkingPolicy.parse(options["chunking"])
        except InvalidInputError as exc:
            raise CommandError(str(exc), returncode=USAGE_ERROR) from exc

        with command_errors():
            if options["embedder"]:
                spec = embedder_spec(options["embedder"])
            else:
                spec = load_config(options["config"]).embedder or ProviderSpec(
                    kind="http", model=settings.PAIRS_EMBEDDING_MODEL
                )
            embedder = build_embedder(spec)
            index = ingest(
                read_corpus(options["corpus"]),
                embedder,
                chunking,
                batch_size=settings.PAIRS_EMBED_BATCH_SIZE,
            )
            index.save(options["index"])

        self.stderr.write(
            f"ingested {len(index)} chunks (dimension {index.dimension}, embedder {index.embedder_id}) into {options['index']}"
        )
