"""Batch evaluation (EM / F1 / retriever activation) and angle analysis for alpha fitting."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from statistics import fmean
from typing import TYPE_CHECKING, Sequence

import numpy as np
from pydantic import BaseModel, Field, ValidationError
from tqdm import tqdm

from .exceptions import DatasetFormatError, DegenerateInputError, InvalidInputError, ProviderError
from .gate import Mode, QueryConfig, QueryResult, generate_pseudo_context, run_query
from .geometry import DEGENERATE_ANGLE_TOL, AngleSample, alpha_from_angles, angle, normalize
from .index import STORAGE_DTYPE, VectorIndex, read_jsonl_lines
from .metrics import exact_match, f1_score

if TYPE_CHECKING:
    from .prompts import PromptTemplates
    from .providers import Embedder, Generator, Providers

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.jsonl"
SUMMARY_FILE = "summary.json"
BREAKDOWN_FILE = "dq_breakdown.json"
ANGLE_COLUMNS = ("theta0", "theta1", "theta2", "alpha")


class QARecord(BaseModel):
    id: str = Field(min_length=1)
    question: str = Field(min_length=1)
    answers: list[str] = Field(min_length=1)
    gt_chunk_ids: list[str] | None = None


class QueryScore(BaseModel):
    id: str
    em: int
    f1: float
    retrieval_activated: bool
    prediction: str = ""
    selected_chunk_ids: list[str] = Field(default_factory=list)


class RunSummary(BaseModel):
    count: int
    activated: int
    em_mean: float
    f1_mean: float
    ra_ratio: float


class RunReport(BaseModel):
    per_query: list[QueryScore]
    aggregate: RunSummary

    def summary_line(self) -> str:
        return f"EM={self.aggregate.em_mean:.3f} F1={self.aggregate.f1_mean:.3f} RA={self.aggregate.ra_ratio:.3f}"


def read_dataset(path: str | Path) -> list[QARecord]:
    records: list[QARecord] = []
    seen: set[str] = set()
    for number, line in read_jsonl_lines(path):
        if not line.strip():
            continue
        try:
            record = QARecord.model_validate_json(line)
        except ValidationError as exc:
            raise DatasetFormatError(f"invalid QA record: {exc.errors()[0]['msg']}", line=number) from exc
        if record.id in seen:
            raise DatasetFormatError(f"duplicate id {record.id!r}", line=number)
        seen.add(record.id)
        records.append(record)
    return records


def evaluate_run(dataset: Sequence[QARecord], results: Sequence[QueryResult]) -> RunReport:
    if not dataset or not results:
        raise InvalidInputError("cannot evaluate an empty run")
    if len(dataset) != len(results):
        raise InvalidInputError(f"{len(dataset)} dataset records but {len(results)} results")

    by_id: dict[str, QueryResult] = {}
    for result in results:
        if result.query_id in by_id:
            raise InvalidInputError(f"duplicate result for query id {result.query_id!r}")
        by_id[result.query_id] = result

    rows = []
    for record in dataset:
        result = by_id.get(record.id)
        if result is None:
            raise InvalidInputError(f"no result for query id {record.id!r}")
        rows.append(
            QueryScore(
                id=record.id,
                em=exact_match(result.answer, record.answers),
                f1=f1_score(result.answer, record.answers),
                retrieval_activated=result.retrieval_activated,
                prediction=result.answer,
                selected_chunk_ids=result.selected_chunk_ids,
            )
        )
    rows.sort(key=lambda row: row.id)

    activated = sum(row.retrieval_activated for row in rows)
    return RunReport(
        per_query=rows,
        aggregate=RunSummary(
            count=len(rows),
            activated=activated,
            em_mean=fmean(row.em for row in rows),
            f1_mean=fmean(row.f1 for row in rows),
            ra_ratio=activated / len(rows),
        ),
    )


def run_dataset(
    dataset: Sequence[QARecord],
    index: "VectorIndex",
    providers: "Providers",
    config: QueryConfig,
    templates: "PromptTemplates | None" = None,
    parallelism: int = 8,
) -> list[QueryResult]:
    """Answer every record with bounded parallelism; results come back in dataset order."""

    def answer(record: QARecord) -> QueryResult:
        return run_query(record.question, index, providers, config, templates, query_id=record.id)

    with ThreadPoolExecutor(max_workers=max(parallelism, 1)) as executor:
        return list(tqdm(executor.map(answer, dataset), total=len(dataset), desc="queries", disable=None))


def write_report(
    report: RunReport,
    out_dir: str | Path,
    mode: str | None = None,
    deterministic: bool = False,
) -> tuple[Path, Path]:
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    results_path = directory / RESULTS_FILE
    summary_path = directory / SUMMARY_FILE

    with results_path.open("w", encoding="utf-8") as handle:
        for row in sorted(report.per_query, key=lambda row: row.id):
            handle.write(row.model_dump_json() + "\n")

    summary = report.aggregate.model_dump()
    if mode is not None:
        summary["mode"] = mode
    if not deterministic:
        summary["created_at"] = datetime.now(timezone.utc).isoformat()
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return results_path, summary_path


class PartitionScore(BaseModel):
    count: int
    em_mean: float | None = None
    f1_mean: float | None = None


class GateBreakdown(BaseModel):
    """Scores split by what the gate did.

    ``dq`` holds the directly answered queries scored on the gate's answer,
    ``dq_retrieval`` the same queries answered with retrieval forced, and
    ``non_dq_retrieval`` the queries the gate sent to the retriever.
    """

    dq: PartitionScore
    dq_retrieval: PartitionScore
    non_dq_retrieval: PartitionScore

    def summary_line(self) -> str:
        def part(name: str, score: PartitionScore) -> str:
            if score.count == 0:
                return f"{name} n=0"
            return f"{name} n={score.count} EM={score.em_mean:.3f} F1={score.f1_mean:.3f}"

        return " | ".join(
            [part("DQ", self.dq), part("DQ-retrieval", self.dq_retrieval), part("Non-DQ-retrieval", self.non_dq_retrieval)]
        )


def _partition(pairs: Sequence[tuple[QARecord, QueryResult]]) -> PartitionScore:
    if not pairs:
        return PartitionScore(count=0)
    return PartitionScore(
        count=len(pairs),
        em_mean=fmean(exact_match(result.answer, record.answers) for record, result in pairs),
        f1_mean=fmean(f1_score(result.answer, record.answers) for record, result in pairs),
    )


def directly_answered(results: Sequence[QueryResult]) -> list[str]:
    """Ids of the queries a gated run answered without touching the retriever."""
    return sorted(result.query_id for result in results if not result.retrieval_activated)


def gate_breakdown(
    dataset: Sequence[QARecord],
    gated_results: Sequence[QueryResult],
    forced_results: Sequence[QueryResult],
) -> GateBreakdown:
    """Partition a pairs-mode run; ``forced_results`` must cover every directly answered query."""
    gated = {result.query_id: result for result in gated_results}
    forced = {result.query_id: result for result in forced_results}
    for result in gated_results:
        if result.mode is not Mode.PAIRS:
            raise InvalidInputError(f"the gate breakdown needs a pairs run, got mode {result.mode.value}")
    for result in forced_results:
        if not result.retrieval_activated:
            raise InvalidInputError(f"forced result {result.query_id!r} did not retrieve")

    dq, dq_retrieval, non_dq = [], [], []
    for record in dataset:
        result = gated.get(record.id)
        if result is None:
            raise InvalidInputError(f"no result for query id {record.id!r}")
        if result.retrieval_activated:
            non_dq.append((record, result))
            continue
        if record.id not in forced:
            raise InvalidInputError(f"no forced-retrieval result for directly answered query {record.id!r}")
        dq.append((record, result))
        dq_retrieval.append((record, forced[record.id]))

    logger.info("Gate breakdown: %d directly answered, %d retrieved", len(dq), len(non_dq))
    return GateBreakdown(dq=_partition(dq), dq_retrieval=_partition(dq_retrieval), non_dq_retrieval=_partition(non_dq))


def write_breakdown(breakdown: GateBreakdown, out_dir: str | Path) -> Path:
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / BREAKDOWN_FILE
    path.write_text(breakdown.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


@dataclass(frozen=True)
class AngleIssue:
    query_id: str
    chunk_id: str | None
    reason: str


@dataclass
class AngleAnalysis:
    samples: list[AngleSample] = field(default_factory=list)
    issues: list[AngleIssue] = field(default_factory=list)


def _at_storage_precision(vector: np.ndarray) -> np.ndarray:
    """Round to the index's float32 rows and renormalize, so equal texts give equal vectors."""
    return normalize(np.asarray(vector, dtype=STORAGE_DTYPE))


def _settled_angle(a: np.ndarray, b: np.ndarray) -> float:
    theta = angle(a, b)
    return 0.0 if theta < DEGENERATE_ANGLE_TOL else theta


def analyze_angles(
    dataset: Sequence[QARecord],
    index: "VectorIndex",
    generator: "Generator",
    embedder: "Embedder",
    templates: "PromptTemplates | None" = None,
) -> AngleAnalysis:
    """One sample per (query, ground-truth chunk); unusable pairs are reported, not dropped."""
    analysis = AngleAnalysis()

    def flag(record: QARecord, chunk_id: str | None, reason: str) -> None:
        logger.warning("Skipping angle sample for %s/%s: %s", record.id, chunk_id, reason)
        analysis.issues.append(AngleIssue(record.id, chunk_id, reason))

    for record in tqdm(dataset, desc="angles", disable=None):
        if not record.gt_chunk_ids:
            flag(record, None, "record has no ground-truth chunk ids")
            continue
        try:
            pseudo_context = generate_pseudo_context(record.question, generator, templates)
            q_emb, p_emb = embedder.embed([record.question, pseudo_context])
        except (ProviderError, InvalidInputError) as exc:
            flag(record, None, str(exc))
            continue

        q_emb, p_emb = _at_storage_precision(q_emb), _at_storage_precision(p_emb)
        theta0 = _settled_angle(q_emb, p_emb)
        for chunk_id in record.gt_chunk_ids:
            if chunk_id not in index:
                flag(record, chunk_id, "ground-truth chunk is not in the index")
                continue
            d_emb = _at_storage_precision(index.embedding(chunk_id))
            theta1 = _settled_angle(q_emb, d_emb)
            theta2 = _settled_angle(p_emb, d_emb)
            try:
                alpha = alpha_from_angles(theta1, theta2)
            except DegenerateInputError as exc:
                flag(record, chunk_id, str(exc))
                continue
            analysis.samples.append(AngleSample(theta0, theta1, theta2, alpha))

    logger.info("Collected %d angle samples, %d issues", len(analysis.samples), len(analysis.issues))
    return analysis


def write_angles_csv(samples: Sequence[AngleSample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=ANGLE_COLUMNS)
        writer.writeheader()
        for sample in samples:
            writer.writerow({name: repr(float(value)) for name, value in asdict(sample).items()})


def read_angles_csv(path: str | Path) -> list[AngleSample]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetFormatError(f"{path} is not valid UTF-8 ({exc.reason})") from exc
    reader = csv.DictReader(io.StringIO(text, newline=""))
    if tuple(reader.fieldnames or ()) != ANGLE_COLUMNS:
        raise DatasetFormatError(f"expected header {','.join(ANGLE_COLUMNS)}", line=1)
    samples = []
    for number, row in enumerate(reader, start=2):
        try:
            samples.append(AngleSample(*(float(row[name]) for name in ANGLE_COLUMNS)))
        except (TypeError, ValueError) as exc:
            raise DatasetFormatError(f"invalid angle row: {exc}", line=number) from exc
    return samples
