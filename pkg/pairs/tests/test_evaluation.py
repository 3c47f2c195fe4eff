import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from pairs.evaluation import (
    PartitionScore,
    QARecord,
    analyze_angles,
    directly_answered,
    evaluate_run,
    gate_breakdown,
    read_angles_csv,
    read_dataset,
    run_dataset,
    write_angles_csv,
    write_breakdown,
    write_report,
)
from pairs.exceptions import DatasetFormatError, InvalidInputError
from pairs.gate import Mode, QueryConfig, QueryResult
from pairs.geometry import AngleSample, fit_alpha_model
from pairs.index import Chunk, VectorIndex, ingest
from pairs.metrics import exact_match, f1_score, normalize_answer, token_f1
from pairs.providers import Embedder, HashEmbedder, Providers, TableGenerator

from .factories import TEST_TEMPLATES, gate_workload, write_jsonl


def result(query_id, answer, activated=True, mode=Mode.PAIRS):
    return QueryResult(query_id=query_id, question=query_id, answer=answer, retrieval_activated=activated, mode=mode)


class MetricTests(SimpleTestCase):
    def test_normalize_answer(self):
        self.assertEqual(normalize_answer("The Eiffel Tower!"), "eiffel tower")
        self.assertEqual(normalize_answer("a  b"), "b")
        self.assertEqual(normalize_answer(""), "")

    def test_exact_match(self):
        self.assertEqual(exact_match("Am Rong", ["am rong"]), 1)
        self.assertEqual(exact_match("Paris, France", ["Paris"]), 0)
        self.assertEqual(exact_match("anything at all", ["anything at all"]), 1)
        self.assertEqual(exact_match("Lyon", ["Paris", "lyon"]), 1)

    def test_f1(self):
        self.assertAlmostEqual(f1_score("Barack Obama", ["Obama"]), 2 / 3)
        self.assertEqual(f1_score("same words", ["same words"]), 1.0)
        self.assertEqual(f1_score("north", ["south"]), 0.0)
        self.assertEqual(f1_score("Barack Obama", ["Michelle", "Barack Obama"]), 1.0)

    def test_empty_golds(self):
        with self.assertRaises(InvalidInputError):
            exact_match("x", [])
        with self.assertRaises(InvalidInputError):
            f1_score("x", [])

    def test_normalization_is_idempotent(self):
        for text in ("The Eiffel Tower!", "  A, an; THE  ", "t-h-e end.", "Île-de-France", "1,919", ""):
            with self.subTest(text=text):
                once = normalize_answer(text)
                self.assertEqual(normalize_answer(once), once)

    def test_single_gold_f1_is_symmetric(self):
        texts = ["Barack Obama", "Obama", "the president Barack Obama", "north", "", "a"]
        for left in texts:
            for right in texts:
                with self.subTest(left=left, right=right):
                    self.assertEqual(f1_score(left, [right]), f1_score(right, [left]))

    def test_token_f1_edge_cases(self):
        self.assertEqual(token_f1("", ""), 1.0)
        self.assertEqual(token_f1("the", "word"), 0.0)


class DatasetTests(SimpleTestCase):
    def test_read_dataset(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_jsonl(Path(tmp) / "qa.jsonl", [
                {"id": "1", "question": "Who?", "answers": ["Am Rong"], "gt_chunk_ids": ["c1"]},
                {"id": "2", "question": "Where?", "answers": ["Paris", "paris, france"]},
            ])
            records = read_dataset(path)
        self.assertEqual([record.id for record in records], ["1", "2"])
        self.assertEqual(records[0].gt_chunk_ids, ["c1"])
        self.assertIsNone(records[1].gt_chunk_ids)

    def test_malformed_line_is_numbered(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "qa.jsonl"
            path.write_text('{"id": "1", "question": "Who?", "answers": ["x"]}\n{"id": "2", "question": \n', encoding="utf-8")
            with self.assertRaises(DatasetFormatError) as caught:
                read_dataset(path)
        self.assertEqual(caught.exception.line, 2)

    def test_empty_answers_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_jsonl(Path(tmp) / "qa.jsonl", [{"id": "1", "question": "Who?", "answers": []}])
            with self.assertRaisesMessage(DatasetFormatError, "line 1"):
                read_dataset(path)

    def test_duplicate_ids_rejected(self):
        row = {"id": "1", "question": "Who?", "answers": ["x"]}
        with tempfile.TemporaryDirectory() as tmp:
            path = write_jsonl(Path(tmp) / "qa.jsonl", [row, row])
            with self.assertRaisesMessage(DatasetFormatError, "line 2"):
                read_dataset(path)

    def test_invalid_utf8_is_numbered(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "qa.jsonl"
            path.write_bytes(b'\n{"id": "1", "question": "Who?", "answers": ["caf\xe9"]}\n')
            with self.assertRaises(DatasetFormatError) as caught:
                read_dataset(path)
        self.assertEqual(caught.exception.line, 2)

    def test_angles_csv_that_is_not_utf8(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "angles.csv"
            path.write_bytes(b"theta0,theta1,theta2,alpha\n\xff\n")
            with self.assertRaises(DatasetFormatError):
                read_angles_csv(path)


class EvaluateRunTests(SimpleTestCase):
    def setUp(self):
        self.dataset = [QARecord(id=f"r{n}", question=f"question {n}", answers=[f"gold {n}"]) for n in range(4)]

    def test_ra_ratio(self):
        results = [result(f"r{n}", f"gold {n}", activated=n != 2) for n in range(4)]
        report = evaluate_run(self.dataset, results)
        self.assertEqual(report.aggregate.ra_ratio, 0.75)
        self.assertEqual(report.aggregate.activated, 3)
        self.assertEqual(report.aggregate.em_mean, 1.0)
        self.assertEqual(report.aggregate.f1_mean, 1.0)
        self.assertEqual(report.summary_line(), "EM=1.000 F1=1.000 RA=0.750")

    def test_rows_sorted_by_id(self):
        results = [result(f"r{n}", "wrong") for n in reversed(range(4))]
        report = evaluate_run(list(reversed(self.dataset)), results)
        self.assertEqual([row.id for row in report.per_query], ["r0", "r1", "r2", "r3"])
        self.assertEqual(report.aggregate.em_mean, 0.0)

    def test_mismatches(self):
        with self.assertRaises(InvalidInputError):
            evaluate_run(self.dataset, [])
        with self.assertRaises(InvalidInputError):
            evaluate_run(self.dataset, [result("r0", "x")])
        with self.assertRaisesMessage(InvalidInputError, "'r3'"):
            evaluate_run(self.dataset, [result(f"r{n}", "x") for n in (0, 1, 2, 9)])
        with self.assertRaises(InvalidInputError):
            evaluate_run(self.dataset, [result(f"r{n}", "x") for n in (0, 1, 2, 2)])

    def test_write_report(self):
        report = evaluate_run(self.dataset, [result(f"r{n}", f"gold {n}") for n in range(4)])
        with tempfile.TemporaryDirectory() as tmp:
            results_path, summary_path = write_report(report, tmp, mode="pairs", deterministic=True)
            rows = [json.loads(line) for line in results_path.read_text().splitlines()]
            summary = json.loads(summary_path.read_text())
            _, stamped = write_report(report, Path(tmp) / "again", mode="pairs")
            self.assertIn("created_at", json.loads(stamped.read_text()))

        self.assertEqual([row["id"] for row in rows], ["r0", "r1", "r2", "r3"])
        self.assertEqual(rows[0]["em"], 1)
        self.assertEqual(summary, {"count": 4, "activated": 4, "em_mean": 1.0, "f1_mean": 1.0, "ra_ratio": 1.0, "mode": "pairs"})

    def test_run_dataset_keeps_dataset_order(self):
        workload = gate_workload(total=12, agreeing=4, numeric=0)
        embedder = HashEmbedder(16, 0)
        providers = Providers(embedder, workload.generator())
        results = run_dataset(workload.records, workload.index(embedder), providers, QueryConfig(), TEST_TEMPLATES, parallelism=4)
        self.assertEqual([r.query_id for r in results], [record.id for record in workload.records])
        self.assertEqual(sum(r.retrieval_activated for r in results), 8)


class GateBreakdownTests(SimpleTestCase):
    def setUp(self):
        self.workload = gate_workload(total=30, agreeing=10, numeric=4)
        embedder = HashEmbedder(16, 0)
        self.index = self.workload.index(embedder)
        self.providers = Providers(embedder, self.workload.generator())

    def answer(self, records, mode):
        return run_dataset(records, self.index, self.providers, QueryConfig(mode=mode), TEST_TEMPLATES, parallelism=4)

    def test_partitions(self):
        gated = self.answer(self.workload.records, Mode.PAIRS)
        answered = directly_answered(gated)
        self.assertEqual(answered, [f"q{n:03d}" for n in range(1, 11)])
        forced = self.answer([record for record in self.workload.records if record.id in answered], Mode.DPR_AIS)

        breakdown = gate_breakdown(self.workload.records, gated, forced)
        self.assertEqual(breakdown.dq, PartitionScore(count=10, em_mean=0.6, f1_mean=0.6))
        self.assertEqual(breakdown.dq_retrieval, PartitionScore(count=10, em_mean=1.0, f1_mean=1.0))
        self.assertEqual(breakdown.non_dq_retrieval, PartitionScore(count=20, em_mean=1.0, f1_mean=1.0))
        self.assertEqual(
            breakdown.summary_line(),
            "DQ n=10 EM=0.600 F1=0.600 | DQ-retrieval n=10 EM=1.000 F1=1.000 | Non-DQ-retrieval n=20 EM=1.000 F1=1.000",
        )
        with tempfile.TemporaryDirectory() as tmp:
            written = json.loads(write_breakdown(breakdown, tmp).read_text())
        self.assertEqual(written["dq"], {"count": 10, "em_mean": 0.6, "f1_mean": 0.6})

    def test_every_query_retrieved(self):
        records = [record for record in self.workload.records if record.id > "q010"]
        breakdown = gate_breakdown(records, self.answer(records, Mode.PAIRS), [])
        self.assertEqual(breakdown.dq, PartitionScore(count=0))
        self.assertEqual(breakdown.non_dq_retrieval.count, 20)
        self.assertIn("DQ n=0", breakdown.summary_line())

    def test_missing_or_mismatched_runs(self):
        records = self.workload.records[:12]
        gated = self.answer(records, Mode.PAIRS)
        with self.assertRaisesMessage(InvalidInputError, "'q001'"):
            gate_breakdown(records, gated, self.answer(records[1:10], Mode.DPR_AIS))
        with self.assertRaises(InvalidInputError):
            gate_breakdown(records, self.answer(records, Mode.DPR_AIS), [])
        with self.assertRaises(InvalidInputError):
            gate_breakdown(records, gated, gated)


class FixedEmbedder(Embedder):
    """Looks vectors up by text."""

    id = "fixed"

    def __init__(self, vectors):
        self.vectors = {text: np.asarray(vector, dtype=float) for text, vector in vectors.items()}
        self.dimension = len(next(iter(self.vectors.values())))

    def embed(self, texts):
        return np.vstack([self.vectors[text] for text in texts])


class AngleAnalysisTests(SimpleTestCase):
    def setUp(self):
        s = math.sqrt(0.5)
        self.index = VectorIndex.from_vectors(
            [Chunk(id="d-same", text="same"), Chunk(id="d-q", text="q text"), Chunk(id="d-mid", text="mid")],
            [(1.0, 0.0), (1.0, 0.0), (s, s)],
        )
        self.embedder = FixedEmbedder({
            "same": (1.0, 0.0),
            "pseudo same": (1.0, 0.0),
            "diverging": (1.0, 0.0),
            "pseudo diverging": (0.0, 1.0),
        })
        self.generator = TableGenerator([("PSEUDO|same|", "pseudo same"), ("PSEUDO|diverging|", "pseudo diverging")])

    def analyze(self, records):
        return analyze_angles(records, self.index, self.generator, self.embedder, TEST_TEMPLATES)

    def test_identical_embeddings_are_flagged(self):
        analysis = self.analyze([QARecord(id="1", question="same", answers=["x"], gt_chunk_ids=["d-same"])])
        self.assertEqual(analysis.samples, [])
        self.assertEqual(len(analysis.issues), 1)
        self.assertEqual(analysis.issues[0].chunk_id, "d-same")

    def test_document_equal_to_query(self):
        analysis = self.analyze([QARecord(id="1", question="diverging", answers=["x"], gt_chunk_ids=["d-q", "d-mid"])])
        first, second = analysis.samples
        self.assertAlmostEqual(first.theta0, math.pi / 2)
        self.assertAlmostEqual(first.theta1, 0.0, places=6)
        self.assertAlmostEqual(first.alpha, 1.0, places=6)
        self.assertAlmostEqual(second.alpha, 0.5, places=6)

    def test_missing_ground_truth_continues(self):
        analysis = self.analyze([
            QARecord(id="1", question="diverging", answers=["x"]),
            QARecord(id="2", question="diverging", answers=["x"], gt_chunk_ids=["nowhere", "d-mid"]),
        ])
        self.assertEqual(len(analysis.samples), 1)
        self.assertEqual([(issue.query_id, issue.chunk_id) for issue in analysis.issues], [("1", None), ("2", "nowhere")])

    def test_csv_round_trip_feeds_the_fit(self):
        samples = [AngleSample(t, 0.4, 0.6, 0.058 * t + 0.455) for t in np.linspace(0.2, 2.0, 25)]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "angles.csv"
            write_angles_csv(samples, path)
            self.assertEqual(path.read_text().splitlines()[0], "theta0,theta1,theta2,alpha")
            loaded = read_angles_csv(path)
        self.assertEqual(loaded, samples)
        model = fit_alpha_model(loaded)
        self.assertAlmostEqual(model.slope, 0.058, delta=1e-6)
        self.assertAlmostEqual(model.intercept, 0.455, delta=1e-6)

    def test_bad_csv_header(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "angles.csv"
            path.write_text("a,b\n1,2\n")
            with self.assertRaises(DatasetFormatError):
                read_angles_csv(path)


class StoredPrecisionAngleTests(SimpleTestCase):
    """Angles against float32 index rows for wide embeddings."""

    def setUp(self):
        self.embedder = HashEmbedder(768, 3)
        questions = [f"question number {n}" for n in range(20)]
        self.index = ingest([Chunk(id=f"c{n:02d}", text=q) for n, q in enumerate(questions)], self.embedder)
        self.records = [
            QARecord(id=f"r{n:02d}", question=q, answers=["x"], gt_chunk_ids=[f"c{n:02d}"])
            for n, q in enumerate(questions)
        ]

    def analyze(self, pseudo_context):
        rules = [(f"PSEUDO|{record.question}|", pseudo_context(record.question)) for record in self.records]
        return analyze_angles(self.records, self.index, TableGenerator(rules), self.embedder, TEST_TEMPLATES)

    def test_mutually_identical_vectors_are_all_flagged(self):
        analysis = self.analyze(lambda question: question)
        self.assertEqual(analysis.samples, [])
        self.assertEqual(len(analysis.issues), 20)
        self.assertTrue(all(issue.chunk_id for issue in analysis.issues))

    def test_document_equal_to_query_gives_full_query_weight(self):
        analysis = self.analyze(lambda question: f"background on {question}")
        self.assertEqual(analysis.issues, [])
        self.assertEqual(len(analysis.samples), 20)
        for sample in analysis.samples:
            self.assertEqual(sample.theta1, 0.0)
            self.assertEqual(sample.alpha, 1.0)
            self.assertAlmostEqual(sample.theta0, sample.theta2)
