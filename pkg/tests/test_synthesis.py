import pytest

from mmrkit.errors import ValidationError
from mmrkit.synthesis import (
    SEG,
    QAPair,
    bind_targets,
    parse_text,
    qa_from_dict,
    qa_to_dict,
    read_records,
    synthesize_record,
    write_records,
)

RESPONSE = """Caption: A laptop sits open on a wooden desk.

Question 1: Which parts would touch if the device were closed?
Answer 1: When closing the laptop, laptop computer's screen would come into contact with laptop computer's base panel.

Question 2: What would you look at while typing?
Answer 2: You would look at laptop computer_1's screen.

Question 3: What holds the keyboard?
Answer 3: The keyboard is set into laptop computer_1's base panel.
"""


class TestParse:
    def test_caption_and_three_blocks(self):
        caption, pairs = parse_text(RESPONSE)
        assert caption == "A laptop sits open on a wooden desk."
        assert len(pairs) == 3
        assert pairs[0][0].startswith("Which parts")

    def test_missing_caption_is_empty(self):
        _, pairs = parse_text("Question 1: q?\nAnswer 1: a.")
        caption, _ = parse_text("Question 1: q?\nAnswer 1: a.")
        assert caption == ""
        assert len(pairs) == 1

    def test_numbering_and_markdown_drift(self):
        text = "**Global Caption:** busy street.\n\nQ1) who?\nA1) nobody.\n**Question 2:** what?\n**Answer 2:** nothing."
        caption, pairs = parse_text(text)
        assert caption == "busy street."
        assert pairs == [("who?", "nobody."), ("what?", "nothing.")]

    def test_multiline_answer_joined(self):
        text = "Question 1: q?\nAnswer 1: first line\ncontinues here."
        _, pairs = parse_text(text)
        assert pairs[0][1] == "first line continues here."

    def test_no_blocks_gives_empty(self):
        caption, pairs = parse_text("just prose, no structure")
        assert pairs == []


class TestBindTargets:
    def test_marker_protocol_example(self, index):
        answer = (
            "When closing the laptop, laptop computer's screen would come "
            "into contact with laptop computer's base panel."
        )
        qa = bind_targets(("q?", answer), index, 1)
        assert qa.answer == (
            "When closing the laptop, laptop computer's screen [SEG] would come "
            "into contact with laptop computer's base panel [SEG]."
        )
        assert qa.targets == (11, 12)
        assert qa.granularity == "part"
        assert qa.unbound_mentions == ()

    def test_canonical_labels_with_ordinals(self, index):
        qa = bind_targets(("q?", "Look at laptop computer_1's screen."), index, 1)
        assert qa.targets == (11,)
        assert qa.answer.count(SEG) == 1

    def test_mixed_granularity(self, index):
        qa = bind_targets(
            ("q?", "The laptop computer_1 and laptop computer_1's screen matter."),
            index,
            1,
        )
        assert qa.granularity == "mixed"
        assert qa.targets == (10, 11)

    def test_object_only(self, index):
        qa = bind_targets(("q?", "Take bus_1 or bus_2."), index, 2)
        assert qa.granularity == "object"
        assert qa.targets == (20, 21)

    def test_unknown_ordinal_flagged(self, index):
        qa = bind_targets(("q?", "zebra_3 leads the herd."), index, 3)
        assert qa.targets == ()
        assert any("zebra_3" in m for m in qa.unbound_mentions)

    def test_ambiguous_bare_category_flagged(self, index):
        # two zebras: a bare mention cannot be resolved
        qa = bind_targets(("q?", "The zebra grazes."), index, 3)
        assert qa.targets == ()
        assert any("zebra" in m for m in qa.unbound_mentions)

    def test_bare_category_binds_when_unique(self, index):
        qa = bind_targets(("q?", "The chair is empty."), index, 3)
        assert qa.targets == (32,)

    def test_unknown_part_phrase_flagged(self, index):
        qa = bind_targets(("q?", "Check laptop computer_1's keyboard."), index, 1)
        assert qa.targets == ()
        assert any("keyboard" in m for m in qa.unbound_mentions)

    def test_duplicate_mentions_get_two_markers(self, index):
        qa = bind_targets(("q?", "bus_1 passes, then bus_1 returns."), index, 2)
        assert qa.targets == (20, 20)
        assert qa.answer.count(SEG) == 2

    def test_idempotent_rebinding(self, index):
        answer = "Take bus_1 or bus_2."
        once = bind_targets(("q?", answer), index, 2)
        twice = bind_targets(("q?", once.answer), index, 2)
        assert twice.answer == once.answer
        assert twice.targets == once.targets

    def test_case_and_space_tolerance(self, index):
        qa = bind_targets(("q?", "BUS_2 blocks Laptop traffic."), index, 2)
        assert qa.targets == (21,)

    def test_targets_ordered_by_first_appearance(self, index):
        qa = bind_targets(("q?", "bus_2 overtakes bus_1."), index, 2)
        assert qa.targets == (21, 20)

    def test_all_targets_belong_to_image(self, index):
        qa = bind_targets(("q?", "Take bus_1 or bus_2."), index, 2)
        for t in qa.targets:
            assert index.instance(t).image_id == 2

    def test_unknown_image(self, index):
        with pytest.raises(ValidationError):
            bind_targets(("q?", "x"), index, 999)


class TestQAPairInvariants:
    def test_marker_count_must_match(self):
        with pytest.raises(ValidationError, match="markers"):
            QAPair(
                qa_id="x", image_id=1, question="q", answer="no markers",
                targets=(1,), granularity="object",
            )

    def test_roundtrip_dict(self, index):
        qa = bind_targets(("q?", "Take bus_1."), index, 2, qa_id="2-1")
        assert qa_from_dict(qa_to_dict(qa)) == qa


class TestSynthesizeRecord:
    def test_ok_record(self, index):
        record = synthesize_record(index, 1, "", RESPONSE)
        assert record.parse_status == "ok"
        assert len(record.qa_pairs) == 3
        assert record.caption == "A laptop sits open on a wooden desk."
        for qa in record.qa_pairs:
            assert qa.answer.count(SEG) == len(qa.targets)

    def test_partial_when_caption_missing(self, index):
        record = synthesize_record(index, 1, "", "Question 1: q?\nAnswer 1: laptop computer_1.")
        assert record.parse_status == "partial"

    def test_partial_when_unbound(self, index):
        record = synthesize_record(
            index, 3, "cap", "Caption: c.\nQuestion 1: q?\nAnswer 1: zebra_3 runs."
        )
        assert record.parse_status == "partial"

    def test_failed_without_blocks(self, index):
        record = synthesize_record(index, 1, "cap", "no structure at all")
        assert record.parse_status == "failed"
        assert record.qa_pairs == ()

    def test_jsonl_roundtrip(self, tmp_path, index):
        records = [synthesize_record(index, 1, "", RESPONSE, provenance="abc")]
        path = tmp_path / "records.jsonl"
        write_records(records, path)
        assert read_records(path) == records
