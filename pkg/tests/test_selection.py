import math

import numpy as np
import pytest

from ontoplace.candidates import ORIGIN_FORMED, CandidateSlate, ScoredEdge
from ontoplace.embeddings import ContextualMention
from ontoplace.errors import PromptBudgetError, ProviderProtocolError
from ontoplace.ontology import Concept, Edge, Ontology
from ontoplace.providers import LlmEndpoint
from ontoplace.selection import (
    INSTRUCTION,
    CrossInputRow,
    bce_multilabel_loss,
    build_cross_rows,
    build_explanation,
    build_tuning_record,
    build_zero_shot_prompt,
    emit_instruction_tuning_corpus,
    gold_option_indices,
    parse_explained_response,
    parse_option_response,
    rerank_by_option_indices,
    select_llm,
    select_scored,
    zero_shot_prompt_text,
)


def make_slate(mention, entries, k=None):
    edges = tuple(
        ScoredEdge(Edge(p, c), float(s), ORIGIN_FORMED) for p, c, s in entries
    )
    return CandidateSlate(mention=mention, k=k or len(edges), edges=edges)


def labelled_ontology(labels: dict[str, str]):
    return Ontology.from_pairs(
        [Concept(id=i, label=lbl) for i, lbl in labels.items()], set()
    )


@pytest.fixture
def breast_ontology():
    return labelled_ontology(
        {
            "mtb": "malignant tumor of breast",
            "cab": "carcinoma of breast",
            "bneo": "neoplasm of breast",
            "lcb": "lobular carcinoma of breast",
            "mcb": "mucinous carcinoma of breast",
            "mpt": "malignant phyllodes tumor of breast",
            "cec": "cancer en cuirasse",
        }
    )


@pytest.fixture
def tnbc_slate():
    m = ContextualMention(mention="TNBC")
    return make_slate(
        m,
        [
            ("mtb", "lcb", 10),
            ("cab", "lcb", 9),
            ("mtb", "mcb", 8),
            ("cab", "cec", 7),
            ("mtb", "mpt", 6),
            ("mtb", "cec", 5),
            ("bneo", "mpt", 4),
            ("mtb", None, 3),
            ("cab", None, 2),
            ("bneo", None, 1),
        ],
    )


class TestBuildCrossRows:
    def mention(self):
        return ContextualMention(mention="CKD", context_left="had ", context_right=" risk")

    def test_single_row_layout(self, breast_ontology):
        slate = make_slate(self.mention(), [("mtb", "cab", 1.0)])
        rows = build_cross_rows(self.mention(), slate, breast_ontology)
        assert len(rows) == 1
        assert rows[0].text.count("[SEP]") == 2
        assert rows[0].text.startswith("[CLS] had [M_s] CKD [M_e] risk [SEP] ")
        assert rows[0].text.endswith("malignant tumor of breast [P-TAG] carcinoma of breast [C-TAG] [SEP]")

    def test_leaf_row_has_null_token(self, breast_ontology):
        slate = make_slate(self.mention(), [("mtb", None, 1.0)])
        rows = build_cross_rows(self.mention(), slate, breast_ontology)
        assert "[NULL] [C-TAG]" in rows[0].text

    def test_ten_rows_index_aligned(self, breast_ontology, tnbc_slate):
        rows = build_cross_rows(tnbc_slate.mention, tnbc_slate, breast_ontology)
        assert [r.candidate_index for r in rows] == list(range(10))

    def test_empty_slate_rejected(self, breast_ontology):
        slate = CandidateSlate(mention=self.mention(), k=4, edges=())
        with pytest.raises(ValueError):
            build_cross_rows(self.mention(), slate, breast_ontology)


class TestBceLoss:
    def test_zero_score_gold_label(self):
        assert bce_multilabel_loss([0.0], [1]) == pytest.approx(
            0.6931471805599453, abs=1e-12
        )

    def test_large_positive_score_gold_label(self):
        assert bce_multilabel_loss([20.0], [1]) == pytest.approx(
            2.061153618190204e-09, rel=1e-9
        )

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            bce_multilabel_loss([], [])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bce_multilabel_loss([0.0], [1, 0])

    def test_stable_for_extreme_scores(self):
        for s in (-500.0, 500.0):
            for y in (0, 1):
                assert math.isfinite(bce_multilabel_loss([s], [y]))

    def test_matches_naive_formula_where_finite(self):
        # beyond |s| ~ 15 the naive form's own rounding dominates, so the
        # absolute check is confined to where that reference is trustworthy
        rng = np.random.default_rng(61)
        sigmoid = lambda x: 1.0 / (1.0 + math.exp(-x))
        for _ in range(200):
            s = float(rng.uniform(-15, 15))
            y = int(rng.integers(0, 2))
            naive = -(y * math.log(sigmoid(s)) + (1 - y) * math.log(1 - sigmoid(s)))
            assert bce_multilabel_loss([s], [y]) == pytest.approx(naive, abs=1e-9)
        for _ in range(100):
            s = float(rng.uniform(-20, 20))
            y = int(rng.integers(0, 2))
            naive = -(y * math.log(sigmoid(s)) + (1 - y) * math.log(1 - sigmoid(s)))
            assert bce_multilabel_loss([s], [y]) == pytest.approx(naive, rel=1e-7)

    def test_minimized_by_separated_scores(self):
        loss = bce_multilabel_loss([30.0, -30.0, -30.0], [1, 0, 0])
        assert loss < 1e-12

    def test_sums_over_candidates(self):
        single = bce_multilabel_loss([0.0], [1])
        assert bce_multilabel_loss([0.0, 0.0], [1, 1]) == pytest.approx(2 * single)


class FakeScorer:
    def __init__(self, fn):
        self.fn = fn

    def score(self, rows):
        return self.fn(rows)


class TestSelectScored:
    def slate(self):
        m = ContextualMention(mention="x")
        return make_slate(m, [("a", "b", 0.9), ("a", "c", 0.8), ("b", None, 0.7)])

    def rows(self, slate):
        return [CrossInputRow(text=f"row{i}", candidate_index=i) for i in range(len(slate.edges))]

    def test_monotone_scorer_preserves_order(self):
        slate = self.slate()
        client = FakeScorer(lambda rows: [-i for i in range(len(rows))])
        out = select_scored(client, slate, self.rows(slate))
        assert out.plain_edges() == slate.plain_edges()

    def test_reversing_scorer_reverses(self):
        slate = self.slate()
        client = FakeScorer(lambda rows: list(range(len(rows))))
        out = select_scored(client, slate, self.rows(slate))
        assert out.plain_edges() == slate.plain_edges()[::-1]

    def test_short_response_is_protocol_error(self):
        slate = self.slate()
        client = FakeScorer(lambda rows: [0.0] * (len(rows) - 1))
        with pytest.raises(ProviderProtocolError):
            select_scored(client, slate, self.rows(slate))

    def test_gold_oracle_scorer_front_loads_gold(self):
        m = ContextualMention(mention="x")
        slate = make_slate(
            m,
            [("a", "b", 0.9), ("a", "c", 0.8), ("b", None, 0.7), ("c", None, 0.6)],
        )
        gold = {Edge("a", "c"), Edge("c", None)}

        def oracle(rows):
            return [
                1.0 if slate.edges[i].edge in gold else -1.0 for i in range(len(rows))
            ]

        out = select_scored(FakeScorer(oracle), slate, self.rows(slate))
        top = {s.edge for s in out.edges[: len(gold)]}
        assert top == gold


class TestZeroShotPrompt:
    def parathyroid_inputs(self):
        onto = labelled_ontology(
            {
                "pmn": "primary malignant neoplasm",
                "mnd": "malignant neoplastic disease",
                "mtpg": "malignant tumor of parathyroid gland",
                "pmnpg": "primary malignant neoplasm of parathyroid gland",
                "dpg": "disorder of parathyroid gland",
                "npg": "neoplasm of parathyroid gland",
                "nes": "neoplasm of endocrine system",
                "pc": "parathyroid carcinoma",
            }
        )
        m = ContextualMention(
            mention="parathyroid carcinomas",
            context_left=(
                "Our aim was to verify the occurrence of selected mutations of the "
                "EZH2 and ZFX genes in an Italian cohort of 23 sporadic "
            ),
            context_right=", 12 atypical and 45 typical adenomas.",
        )
        slate = make_slate(
            m,
            [
                ("pmn", "pc", 10),
                ("mnd", "mtpg", 9),
                ("mnd", "pmnpg", 8),
                ("dpg", "npg", 7),
                ("nes", "npg", 6),
                ("pmn", "mtpg", 5),
                ("mtpg", None, 4),
                ("npg", None, 3),
                ("pmnpg", None, 2),
                ("mnd", None, 1),
            ],
        )
        return onto, m, slate

    def test_matches_golden_file(self):
        from conftest import GOLDEN_DIR

        onto, m, slate = self.parathyroid_inputs()
        prompt = zero_shot_prompt_text(build_zero_shot_prompt(onto, m, slate))
        golden = (GOLDEN_DIR / "parathyroid_prompt.txt").read_text(encoding="utf-8")
        assert prompt == golden

    def test_known_option_lines(self):
        onto, m, slate = self.parathyroid_inputs()
        bundle = build_zero_shot_prompt(onto, m, slate)
        text = bundle.input_section
        assert "0.primary malignant neoplasm → parathyroid carcinoma" in text
        assert (
            "2.malignant neoplastic disease → primary malignant neoplasm of parathyroid gland"
            in text
        )
        assert (
            "8.primary malignant neoplasm of parathyroid gland → NULL" in text
        )

    def test_instruction_text_is_fixed(self):
        onto, m, slate = self.parathyroid_inputs()
        bundle = build_zero_shot_prompt(onto, m, slate)
        assert INSTRUCTION.startswith(
            "Can you identify the correct ontological edges for the given mention "
            "(marked with *) based on the context?"
        )
        assert INSTRUCTION.endswith("If none of the options is correct, please answer None.")
        assert INSTRUCTION in bundle.input_section

    def test_mention_wrapped_in_asterisks(self):
        onto, m, slate = self.parathyroid_inputs()
        bundle = build_zero_shot_prompt(onto, m, slate)
        assert "23 sporadic *parathyroid carcinomas*, 12 atypical" in bundle.input_section

    def test_empty_contexts(self, breast_ontology):
        m = ContextualMention(mention="CKD")
        slate = make_slate(m, [("mtb", None, 1.0)])
        bundle = build_zero_shot_prompt(breast_ontology, m, slate)
        assert "\n*CKD*\n" in bundle.input_section

    def test_byte_stable(self):
        onto, m, slate = self.parathyroid_inputs()
        a = zero_shot_prompt_text(build_zero_shot_prompt(onto, m, slate))
        b = zero_shot_prompt_text(build_zero_shot_prompt(onto, m, slate))
        assert a == b


class TestParseOptionResponse:
    def test_comma_separated(self):
        assert parse_option_response("2,8", 10).indices == (2, 8)

    def test_none_answer(self):
        parsed = parse_option_response("None", 10)
        assert parsed.indices == ()
        assert not parsed.failed

    def test_out_of_range_dropped_and_counted(self):
        parsed = parse_option_response("12, 3", 10)
        assert parsed.indices == (3,)
        assert parsed.out_of_range == 1

    def test_order_of_first_mention_preserved(self):
        assert parse_option_response("8, 2, 5", 10).indices == (8, 2, 5)

    def test_duplicates_collapse(self):
        assert parse_option_response("2, 2, 8", 10).indices == (2, 8)

    def test_unparseable_flags_failure(self):
        parsed = parse_option_response("no answer here", 10)
        assert parsed.failed
        assert parsed.indices == ()

    def test_skips_blank_lines(self):
        assert parse_option_response("\n\n 2,8\n", 10).indices == (2, 8)

    def test_k_validation(self):
        with pytest.raises(ValueError):
            parse_option_response("1", 0)


CKD_OUTPUT = """### Explanation:
From the parents in the options above, including renal impairment , kidney disease , disorder of the genitourinary system , the correct parents of the mention, CKD, include renal impairment , kidney disease , disorder of the genitourinary system . Thus the options are narrowed down to 0, 1, 2, 3, 7, 9, 4, 5, 6, 8. From the children in the narrowed options, including end stage renal disease , renal failure following molar and/or ectopic pregnancy , renal failure syndrome , chronic kidney disease due to hypertension , chronic renal failure syndrome , impaired renal function disorder , renal function impairment with growth failure , the correct children of the mention, CKD, include chronic kidney disease due to hypertension , chronic renal failure syndrome , impaired renal function disorder , renal function impairment with growth failure . Thus, the final answers are 3, 7, 5, 6, 8.

### Response:
3,7,5,6,8"""


class TestParseExplainedResponse:
    def test_appendix_style_output(self):
        parsed = parse_explained_response(CKD_OUTPUT, 10)
        assert parsed.indices == (3, 7, 5, 6, 8)
        assert not parsed.failed

    def test_response_section_only(self):
        parsed = parse_explained_response("### Response:\n1,4", 10)
        assert parsed.indices == (1, 4)

    def test_falls_back_to_final_answers_clause(self):
        truncated = CKD_OUTPUT.split("\n\n### Response:")[0]
        parsed = parse_explained_response(truncated, 10)
        assert parsed.indices == (3, 7, 5, 6, 8)

    def test_neither_section_fails(self):
        parsed = parse_explained_response("no structure at all", 10)
        assert parsed.failed


class TestBuildExplanation:
    def test_tnbc_example(self, breast_ontology, tnbc_slate):
        gold = {Edge("mtb", None)}
        text = build_explanation(
            breast_ontology, tnbc_slate.mention, tnbc_slate, gold
        )
        assert text == (
            "From the parents in the options above, including "
            "malignant tumor of breast, carcinoma of breast, neoplasm of breast, "
            "the correct parents of the mention, TNBC, include "
            "malignant tumor of breast. "
            "Thus the options are narrowed down to 0, 2, 4, 5, 7. "
            "From the children in the narrowed options, including "
            "lobular carcinoma of breast, mucinous carcinoma of breast, "
            "malignant phyllodes tumor of breast, cancer en cuirasse, NULL, "
            "the correct children of the mention, TNBC, include NULL. "
            "Thus, the final answers are 7."
        )

    def test_gold_absent_from_slate(self, breast_ontology, tnbc_slate):
        gold = {Edge("lcb", "mcb")}  # valid concepts, but no slate option matches
        text = build_explanation(breast_ontology, tnbc_slate.mention, tnbc_slate, gold)
        assert text.endswith("Thus, the final answers are None.")

    def test_no_gold_parent_fills_none(self, breast_ontology, tnbc_slate):
        gold = {Edge("lcb", None)}  # lcb never appears as a parent in the slate
        text = build_explanation(breast_ontology, tnbc_slate.mention, tnbc_slate, gold)
        assert "include None. Thus the options are narrowed down to None." in text
        assert text.endswith("Thus, the final answers are None.")

    def test_two_gold_options_ascending(self, breast_ontology, tnbc_slate):
        gold = {Edge("mtb", None), Edge("cab", None)}
        text = build_explanation(breast_ontology, tnbc_slate.mention, tnbc_slate, gold)
        assert text.endswith("Thus, the final answers are 7, 8.")


class TestExplanationRoundTrip:
    def random_case(self, rng):
        n_concepts = int(rng.integers(3, 10))
        labels = {f"c{i}": f"concept {i}" for i in range(n_concepts)}
        onto = labelled_ontology(labels)
        ids = list(labels)
        edges = []
        seen = set()
        for _ in range(int(rng.integers(1, 12))):
            parent = ids[int(rng.integers(0, n_concepts))]
            child = rng.choice([None, *ids])
            child = None if child is None or child == parent else str(child)
            if (parent, child) not in seen:
                seen.add((parent, child))
                edges.append((parent, child, float(rng.random())))
        m = ContextualMention(mention="mention")
        slate = make_slate(m, edges)
        gold = set()
        for parent, child, _ in edges:
            if rng.random() < 0.3:
                gold.add(Edge(parent, child))
        # gold edges outside the slate are allowed
        if rng.random() < 0.5:
            gold.add(Edge(ids[0], None if ids[0] != ids[-1] else None))
        return onto, m, slate, gold

    def test_round_trip_recovers_gold_options(self):
        rng = np.random.default_rng(67)
        for _ in range(60):
            onto, m, slate, gold = self.random_case(rng)
            record = build_tuning_record(onto, m, slate, gold)
            parsed = parse_explained_response(record["text"], len(slate.edges))
            assert not parsed.failed or record["response"] == "None"
            assert list(parsed.indices) == gold_option_indices(slate, gold)


class TestTuningCorpus:
    def test_record_sections(self, breast_ontology, tnbc_slate):
        m = ContextualMention(
            mention="TNBC", gold_edges=(Edge("mtb", None),)
        )
        records = list(
            emit_instruction_tuning_corpus(breast_ontology, [m], [tnbc_slate])
        )
        assert len(records) == 1
        text = records[0]["text"]
        assert "### Input:" in text
        assert "### Explanation:" in text
        assert "### Response:" in text
        assert text.index("### Input:") < text.index("### Explanation:") < text.index(
            "### Response:"
        )

    def test_tnbc_response_line(self, breast_ontology, tnbc_slate):
        m = ContextualMention(mention="TNBC", gold_edges=(Edge("mtb", None),))
        record = next(
            iter(emit_instruction_tuning_corpus(breast_ontology, [m], [tnbc_slate]))
        )
        assert record["response"] == "7"
        assert record["text"].rstrip().endswith("### Response:\n7")

    def test_stable_order_over_mentions(self, breast_ontology, tnbc_slate):
        mentions = [
            ContextualMention(mention=f"m{i}", gold_edges=(Edge("mtb", None),))
            for i in range(3)
        ]
        records = list(
            emit_instruction_tuning_corpus(
                breast_ontology, mentions, [tnbc_slate] * 3
            )
        )
        assert [r["mention"] for r in records] == ["m0", "m1", "m2"]

    def test_missing_gold_rejected(self, breast_ontology, tnbc_slate):
        m = ContextualMention(mention="TNBC")
        with pytest.raises(ValueError):
            list(emit_instruction_tuning_corpus(breast_ontology, [m], [tnbc_slate]))


class FakeLlm:
    def __init__(self, answer, max_input_tokens=4096):
        self.answer = answer
        self.endpoint = LlmEndpoint(locator="stub://test", max_input_tokens=max_input_tokens)
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        return self.answer


class TestSelectLlm:
    def inputs(self, breast_ontology, tnbc_slate):
        return breast_ontology, tnbc_slate.mention, tnbc_slate

    def test_selected_options_lead(self, breast_ontology, tnbc_slate):
        onto, m, slate = self.inputs(breast_ontology, tnbc_slate)
        out = select_llm(FakeLlm("2,8"), onto, m, slate)
        edges = out.slate.plain_edges()
        assert edges[0] == slate.edges[2].edge
        assert edges[1] == slate.edges[8].edge
        rest = [e for i, e in enumerate(slate.plain_edges()) if i not in (2, 8)]
        assert edges[2:] == rest

    def test_none_answer_keeps_slate(self, breast_ontology, tnbc_slate):
        onto, m, slate = self.inputs(breast_ontology, tnbc_slate)
        out = select_llm(FakeLlm("None"), onto, m, slate)
        assert out.slate == slate
        assert out.parsed.indices == ()
        assert not out.parsed.failed

    def test_echoing_all_indices_keeps_order(self, breast_ontology, tnbc_slate):
        onto, m, slate = self.inputs(breast_ontology, tnbc_slate)
        out = select_llm(FakeLlm("0,1,2,3,4,5,6,7,8,9"), onto, m, slate)
        assert out.slate.plain_edges() == slate.plain_edges()

    def test_parse_failure_recorded(self, breast_ontology, tnbc_slate):
        onto, m, slate = self.inputs(breast_ontology, tnbc_slate)
        out = select_llm(FakeLlm("gibberish with no answer"), onto, m, slate)
        assert out.slate == slate
        assert out.parsed.failed

    def test_budget_rejection_before_sending(self, breast_ontology, tnbc_slate):
        onto, m, slate = self.inputs(breast_ontology, tnbc_slate)
        client = FakeLlm("2", max_input_tokens=10)
        with pytest.raises(PromptBudgetError):
            select_llm(client, onto, m, slate)
        assert client.prompts == []

    def test_explained_parse_mode(self, breast_ontology, tnbc_slate):
        onto, m, slate = self.inputs(breast_ontology, tnbc_slate)
        out = select_llm(FakeLlm(CKD_OUTPUT), onto, m, slate, parse="explained")
        assert out.parsed.indices == (3, 7, 5, 6, 8)


class TestRerankByIndices:
    def test_out_of_range_indices_ignored(self, tnbc_slate):
        out = rerank_by_option_indices(tnbc_slate, [99, 1])
        assert out.plain_edges()[0] == tnbc_slate.edges[1].edge
