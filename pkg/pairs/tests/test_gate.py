from unittest.mock import patch

from django.test import SimpleTestCase
from pydantic import ValidationError

from pairs.exceptions import ConfigurationError, InvalidInputError, PipelineStageError, ProviderError
from pairs.gate import (
    AgreementMode,
    AgreementPolicy,
    Mode,
    QueryConfig,
    answer_direct,
    answer_with_context,
    answers_agree,
    assemble_context,
    expanded_query,
    generate_pseudo_context,
    generate_rationale,
    numeric_guard,
    run_gate,
    run_query,
)
from pairs.geometry import AlphaModel
from pairs.prompts import PromptTemplates, default_templates, render
from pairs.providers import HashEmbedder, LexicalReranker, Providers, TableGenerator
from pairs.selection import Scorer, SelectionConfig

from .factories import TEST_TEMPLATES, CountingIndex, gate_workload


class PromptTests(SimpleTestCase):
    def test_pseudo_context(self):
        generator = TableGenerator([("Am Rong", "Am Rong was born in 1919 in Phnom Penh.")])
        passage = generate_pseudo_context("Who is Am Rong?", generator, TEST_TEMPLATES)
        self.assertEqual(passage, "Am Rong was born in 1919 in Phnom Penh.")

    def test_empty_question(self):
        with self.assertRaises(InvalidInputError):
            generate_pseudo_context("  ", TableGenerator([]), TEST_TEMPLATES)

    def test_template_without_question_placeholder(self):
        broken = PromptTemplates(pseudo_context="Write a passage.", answer_direct="{q}", answer_with_context="{context}{q}")
        with self.assertRaises(ConfigurationError):
            generate_pseudo_context("Who?", TableGenerator([]), broken)

    def test_answers(self):
        generator = TableGenerator([("DIRECT|q1|", "am rong"), ("CONTEXT|ctx one|", "one"), ("CONTEXT|ctx two|", "two")])
        self.assertEqual(answer_direct("q1", generator, TEST_TEMPLATES), "am rong")
        self.assertEqual(answer_with_context("q1", "ctx one", generator, TEST_TEMPLATES), "one")
        self.assertEqual(answer_with_context("q1", "ctx two", generator, TEST_TEMPLATES), "two")
        with self.assertRaises(InvalidInputError):
            answer_with_context("q1", "", generator, TEST_TEMPLATES)

    def test_render_is_single_pass(self):
        self.assertEqual(render("{context} / {q}", q="{context}", context="C"), "C / {context}")

    def test_default_templates_carry_placeholders(self):
        templates = default_templates()
        self.assertIn("{q}", templates.pseudo_context)
        self.assertIn("{context}", templates.answer_with_context)

    def test_expanded_query_repeats_the_question(self):
        self.assertEqual(expanded_query("Who?", "A passage.", repeats=2), "Who? Who? A passage.")
        self.assertEqual(expanded_query("Who?", "p").split(), ["Who?"] * 5 + ["p"])
        with self.assertRaises(InvalidInputError):
            expanded_query("Who?", "p", repeats=0)

    def test_rationale_falls_back_to_packaged_template(self):
        generator = TableGenerator([("step by step", "1919, since the record says so")])
        without = PromptTemplates(pseudo_context="{q}", answer_direct="{q}", answer_with_context="{context}{q}")
        self.assertEqual(generate_rationale("When?", generator, without), "1919, since the record says so")
        self.assertIn("{q}", default_templates().rationale)

    def test_assemble_context(self):
        self.assertEqual(assemble_context(["first", "second"]), "first\n\nsecond")


class AgreementTests(SimpleTestCase):
    def test_normalized_exact(self):
        self.assertTrue(answers_agree("The Eiffel Tower", "eiffel tower"))
        self.assertFalse(answers_agree("Paris", "London"))

    def test_token_f1_threshold(self):
        policy = AgreementPolicy(mode=AgreementMode.TOKEN_F1_THRESHOLD, threshold=0.6)
        self.assertTrue(answers_agree("Barack Obama", "Obama", policy))
        self.assertFalse(answers_agree("Barack Obama", "Obama", AgreementPolicy(mode="token_f1_threshold", threshold=0.7)))

    def test_agreement_is_symmetric_and_reflexive(self):
        answers = ["The Eiffel Tower", "eiffel tower", "Barack Obama", "Obama", "1919", "", "  a  "]
        policies = [AgreementPolicy(), AgreementPolicy(mode=AgreementMode.TOKEN_F1_THRESHOLD, threshold=0.5)]
        for policy in policies:
            for left in answers:
                with self.subTest(policy=policy.mode, answer=left):
                    self.assertTrue(answers_agree(left, left, policy))
                    for right in answers:
                        self.assertEqual(answers_agree(left, right, policy), answers_agree(right, left, policy))

    def test_threshold_range(self):
        with self.assertRaises(ValidationError):
            AgreementPolicy(threshold=0.0)

    def test_numeric_guard(self):
        self.assertTrue(numeric_guard("1972"))
        self.assertFalse(numeric_guard("Am Rong"))
        self.assertFalse(numeric_guard("World War II"))
        self.assertFalse(numeric_guard("twenty"))


class RunGateTests(SimpleTestCase):
    def test_outcome_records_every_generation(self):
        generator = TableGenerator(
            [("PSEUDO|q|", "passage"), ("DIRECT|q|", "1919"), ("CONTEXT|passage|q|", "1919")]
        )
        outcome = run_gate("q", generator, exclude_num=True, templates=TEST_TEMPLATES)
        self.assertEqual(outcome.pseudo_context, "passage")
        self.assertTrue(outcome.agreed)
        self.assertTrue(outcome.numeric_guard_tripped)

    def test_provider_failure_names_stage(self):
        generator = TableGenerator([])
        with patch.object(generator, "complete", side_effect=ProviderError("boom", status=503)):
            with self.assertRaises(PipelineStageError) as caught:
                run_gate("q", generator, templates=TEST_TEMPLATES)
        self.assertEqual(caught.exception.stage, "pseudo-context generation")
        self.assertEqual(caught.exception.status, 503)


class RunQueryTests(SimpleTestCase):
    def setUp(self):
        self.workload = gate_workload(total=30, agreeing=10, numeric=4)
        self.embedder = HashEmbedder(16, 0)
        self.index = CountingIndex(self.workload.index(self.embedder))
        self.providers = Providers(self.embedder, self.workload.generator(), LexicalReranker())

    def query(self, question, **config):
        return run_query(question, self.index, self.providers, QueryConfig(**config), TEST_TEMPLATES, query_id=question)

    def test_agreeing_gate_skips_the_retriever(self):
        result = self.query("q007")
        self.assertFalse(result.retrieval_activated)
        self.assertEqual(result.answer, "answer aah")
        self.assertEqual(result.selected_chunk_ids, [])
        self.assertEqual(self.index.searches, 0)
        self.assertTrue(result.gate.agreed)

    def test_divergent_gate_retrieves_k(self):
        result = self.query("q020")
        self.assertTrue(result.retrieval_activated)
        self.assertEqual(len(result.selected_chunk_ids), 3)
        self.assertEqual(result.answer, "answer aca")
        self.assertEqual(self.index.searches, 2)
        self.assertFalse(result.gate.agreed)
        self.assertEqual([c.chunk_id for c in result.candidates], sorted(c.chunk_id for c in result.candidates))

    def test_exclude_num_forces_retrieval(self):
        self.assertFalse(self.query("q002").retrieval_activated)
        result = self.query("q002", exclude_num=True)
        self.assertTrue(result.retrieval_activated)
        self.assertTrue(result.gate.numeric_guard_tripped)
        self.assertEqual(result.answer, "1920")

    def test_no_retrieval(self):
        result = self.query("q020", mode="no-retrieval")
        self.assertFalse(result.retrieval_activated)
        self.assertEqual(result.answer, "wrong one")
        self.assertEqual(self.index.searches, 0)

    def test_standard_searches_once(self):
        result = self.query("q020", mode=Mode.STANDARD)
        self.assertTrue(result.retrieval_activated)
        self.assertEqual(len(result.selected_chunk_ids), 3)
        self.assertEqual(self.index.searches, 1)
        self.assertIsNone(result.gate)

    def test_dpr_modes_always_retrieve(self):
        alpha = AlphaModel(0.058, 0.455)
        for mode in (Mode.DPR_AIS, Mode.DPR_AIS_DYNAMIC, Mode.DPR_AIS_RERANK):
            with self.subTest(mode=mode):
                result = self.query("q007", mode=mode, selection=SelectionConfig(alpha_model=alpha))
                self.assertTrue(result.retrieval_activated)
                self.assertEqual(len(result.selected_chunk_ids), 3)
                self.assertEqual(result.answer, "answer aah")

    def test_hyde_and_rerank_modes(self):
        hyde = self.query("q020", mode="hyde")
        self.assertEqual(self.index.searches, 1)
        self.assertTrue(all(c.s1 is None for c in hyde.candidates))
        rerank = self.query("q020", mode="rerank")
        self.assertEqual(len(rerank.selected_chunk_ids), 3)
        self.assertEqual(len(rerank.candidates), 10)

    def test_rerank_without_reranker(self):
        providers = Providers(self.embedder, self.workload.generator())
        with self.assertRaises(ConfigurationError):
            run_query("q020", self.index, providers, QueryConfig(mode="dpr_ais_rerank"), TEST_TEMPLATES)
        with self.assertRaises(ConfigurationError):
            run_query(
                "q020",
                self.index,
                providers,
                QueryConfig(selection=SelectionConfig(scorer=Scorer.RERANK)),
                TEST_TEMPLATES,
            )

    def test_embedder_dimension_mismatch(self):
        providers = Providers(HashEmbedder(8, 0), self.workload.generator())
        with self.assertRaises(ConfigurationError):
            run_query("q020", self.index, providers, QueryConfig(), TEST_TEMPLATES)

    def test_dynamic_mode_without_alpha_model_fails_before_any_call(self):
        with self.assertRaises(ValidationError):
            QueryConfig(mode=Mode.DPR_AIS_DYNAMIC)
        with self.assertRaises(ValidationError):
            QueryConfig(selection={"scorer": "dynamic"})
        unchecked = QueryConfig().model_copy(update={"mode": Mode.DPR_AIS_DYNAMIC})
        generator = self.providers.generator
        with patch.object(generator, "complete", wraps=generator.complete) as complete:
            with self.assertRaisesMessage(ConfigurationError, "alpha model"):
                run_query("q020", self.index, self.providers, unchecked, TEST_TEMPLATES)
        complete.assert_not_called()
        self.assertEqual(self.index.searches, 0)

    def test_unknown_mode(self):
        with self.assertRaises(ValidationError):
            QueryConfig(mode="telepathy")
        with self.assertRaises(ConfigurationError):
            Mode.parse("telepathy")

    def test_embedding_failure_names_stage(self):
        with patch.object(self.embedder, "embed", side_effect=ProviderError("down", status=500)):
            with self.assertRaisesMessage(PipelineStageError, "embedding failed"):
                self.query("q020", mode="dpr-ais")

    def test_diverging_gate_matches_always_retrieving(self):
        for number in range(11, 31):
            question = f"q{number:03d}"
            with self.subTest(question=question):
                gated = self.query(question)
                forced = self.query(question, mode=Mode.DPR_AIS)
                self.assertTrue(gated.retrieval_activated)
                self.assertEqual(gated.answer, forced.answer)
                self.assertEqual(gated.selected_chunk_ids, forced.selected_chunk_ids)
                self.assertEqual(gated.candidates, forced.candidates)

    def test_expansion_modes_search_once_with_the_expanded_question(self):
        expansions = {Mode.Q2D: "pseudo-q020", Mode.COT: "wrong one because of pseudo-q020"}
        for mode, expansion in expansions.items():
            with self.subTest(mode=mode):
                self.index.searches = 0
                with patch.object(self.embedder, "embed", wraps=self.embedder.embed) as embed:
                    result = self.query("q020", mode=mode)
                embed.assert_called_once_with([expanded_query("q020", expansion)])
                self.assertEqual(self.index.searches, 1)
                self.assertTrue(result.retrieval_activated)
                self.assertIsNone(result.gate)
                self.assertEqual(len(result.selected_chunk_ids), 3)
                self.assertEqual(result.answer, "answer aca")
                self.assertTrue(all(c.s1 is None and c.s2 is None for c in result.candidates))
