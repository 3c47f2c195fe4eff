import json
from pathlib import Path

from django.core.management.base import BaseCommand

from pairs.evaluation import read_angles_csv
from pairs.geometry import fit_alpha_model

from ._common import command_errors


class Command(BaseCommand):
    help = "Fit alpha = slope * theta0 + intercept by least squares over an angle CSV."

    def add_arguments(self, parser):
        parser.add_argument("--angles", required=True, help="CSV written by analyze_angles.")
        parser.add_argument("--out", required=True, help="JSON file for the fitted model.")

    def handle(self, *args, **options):
        with command_errors():
            model = fit_alpha_model(read_angles_csv(options["angles"]))
            document = {"slope": model.slope, "intercept": model.intercept, "r2": model.r2, "n": model.n}
            Path(options["out"]).write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")

        self.stderr.write(f"alpha = {model.slope:.6f} * theta0 + {model.intercept:.6f} (r2={model.r2}, n={model.n})")
