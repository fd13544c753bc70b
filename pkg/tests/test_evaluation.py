import numpy as np
import pytest

from mmrkit import dataset as ds
from mmrkit import evaluation, masks
from mmrkit.errors import ValidationError
from mmrkit.synthesis import bind_targets


@pytest.fixture
def test_dataset(index):
    qas = [
        bind_targets(
            ("Which parts touch?",
             "laptop computer_1's screen and laptop computer_1's base panel."),
            index, 1, qa_id="1-1",
        ),
        bind_targets(("Which leaves?", "bus_1 leaves."), index, 2, qa_id="2-1"),
        bind_targets(("Who grazes?", "zebra_1 and zebra_2 graze."), index, 3, qa_id="3-1"),
    ]
    samples = ds.assemble_samples(qas, index)
    built = ds.assign_splits(samples, ratios=(0, 0, 1.0), seed=0, index=index)
    return ds.partition_test(built)


def empty_rle(h, w):
    return {"size": [h, w], "counts": [h * w]}


class TestAlignAndScore:
    def test_gt_as_predictions_scores_one(self, test_dataset):
        preds = evaluation.gt_as_predictions(test_dataset)
        report = evaluation.align_and_score(preds, test_dataset)
        assert report.g_iou == 1.0
        assert report.c_iou == 1.0
        assert report.n_samples == 3
        assert report.n_targets == 5

    def test_all_empty_predictions_score_zero(self, test_dataset):
        selected = evaluation.select_qas(test_dataset, "test", None)
        preds = [
            evaluation.EvalPrediction(
                qa_id=qa_id, predicted_masks=tuple(empty_rle(h, w) for _ in qa.targets)
            )
            for qa_id, (qa, (h, w)) in selected.items()
        ]
        report = evaluation.align_and_score(preds, test_dataset)
        assert report.g_iou == 0.0
        assert report.c_iou == 0.0

    def test_partial_prediction_padding(self, test_dataset):
        # 2-target QA with only the first mask (exact): per-target 0.5
        selected = evaluation.select_qas(test_dataset, "test", None)
        qa, _ = selected["1-1"]
        preds = [
            evaluation.EvalPrediction(qa_id="1-1", predicted_masks=(qa.targets[0].segmentation,))
        ]
        pairs = evaluation.score_qa(qa, (80, 100), preds[0].predicted_masks)
        assert [p.iou for p in pairs] == [1.0, 0.0]

    def test_surplus_prediction_penalized(self, test_dataset):
        selected = evaluation.select_qas(test_dataset, "test", None)
        qa, (h, w) = selected["2-1"]
        extra = masks.encode_rle(np.ones((h, w), dtype=bool))
        pairs = evaluation.score_qa(
            qa, (h, w), (qa.targets[0].segmentation, extra)
        )
        assert [p.iou for p in pairs] == [1.0, 0.0]

    def test_missing_record_counts_as_empty(self, test_dataset):
        preds = [p for p in evaluation.gt_as_predictions(test_dataset) if p.qa_id != "2-1"]
        report = evaluation.align_and_score(preds, test_dataset, giou_mode="per_sample")
        assert report.g_iou == pytest.approx(2 / 3)

    def test_unknown_qa_id_rejected(self, test_dataset):
        preds = [evaluation.EvalPrediction(qa_id="nope", predicted_masks=())]
        with pytest.raises(ValidationError, match="unknown qa_id"):
            evaluation.align_and_score(preds, test_dataset)

    def test_dimension_mismatch_rejected(self, test_dataset):
        preds = [evaluation.EvalPrediction(qa_id="2-1", predicted_masks=(empty_rle(3, 3),))]
        with pytest.raises(ValidationError, match="shape"):
            evaluation.align_and_score(preds, test_dataset)

    def test_reordering_invariance(self, test_dataset):
        preds = evaluation.gt_as_predictions(test_dataset)
        report_a = evaluation.align_and_score(preds, test_dataset)
        report_b = evaluation.align_and_score(list(reversed(preds)), test_dataset)
        assert report_a == report_b

    def test_subset_selection(self, test_dataset):
        preds = evaluation.gt_as_predictions(test_dataset, subset="part_only")
        report = evaluation.align_and_score(preds, test_dataset, subset="part_only")
        assert report.split_name == "test/part_only"
        assert report.n_samples == 1

    def test_prediction_file_roundtrip(self, tmp_path, test_dataset):
        preds = evaluation.gt_as_predictions(test_dataset)
        path = tmp_path / "preds.jsonl"
        evaluation.write_predictions(preds, path)
        again = evaluation.read_predictions(path)
        assert [p.qa_id for p in again] == [p.qa_id for p in preds]
        report = evaluation.align_and_score(again, test_dataset)
        assert report.g_iou == 1.0


class TestCurateQueries:
    def _rich_index(self):
        # one image with 5 object categories, another with 3 (skipped)
        from mmrkit.annotations import index_from_dict
        from .conftest import rect_ring

        names = ["car", "dog", "tree", "bench", "sign"]
        categories = [{"id": i + 1, "name": name} for i, name in enumerate(names)]
        doc = {
            "categories": categories,
            "images": [
                {"id": 1, "file_name": "a.jpg", "width": 50, "height": 50},
                {"id": 2, "file_name": "b.jpg", "width": 50, "height": 50},
            ],
            "annotations": [],
        }
        ann_id = 1
        for i in range(5):
            doc["annotations"].append(
                {"id": ann_id, "image_id": 1, "category_id": i + 1,
                 "bbox": [i * 9, 0, 8, 8], "segmentation": [rect_ring(i * 9, 0, 8, 8)]}
            )
            ann_id += 1
        for i in range(3):
            doc["annotations"].append(
                {"id": ann_id, "image_id": 2, "category_id": i + 1,
                 "bbox": [i * 9, 20, 8, 8], "segmentation": [rect_ring(i * 9, 20, 8, 8)]}
            )
            ann_id += 1
        return index_from_dict(doc)

    def test_template_and_bounds(self):
        index = self._rich_index()
        queries = evaluation.curate_multitarget_queries(index, (4, 6), seed=0)
        assert len(queries) == 1  # image 2 skipped (3 categories < 4)
        query = queries[0]
        assert 4 <= len(query.categories) <= 6
        assert query.query_text.startswith("Can you segment the ")
        assert query.query_text.endswith("?")
        assert ", and " in query.query_text

    def test_deterministic_under_seed(self):
        index = self._rich_index()
        a = evaluation.curate_multitarget_queries(index, (4, 6), seed=42)
        b = evaluation.curate_multitarget_queries(index, (4, 6), seed=42)
        assert [q.to_dict() for q in a] == [q.to_dict() for q in b]

    def test_seeds_vary_selection(self):
        index = self._rich_index()
        seen = {
            tuple(evaluation.curate_multitarget_queries(index, (4, 5), seed=s)[0].categories)
            for s in range(12)
        }
        assert len(seen) > 1

    def test_gt_union_masks(self, index):
        # only image 3 holds two distinct object categories (zebra, chair);
        # its zebra ground truth must union both instances
        queries = evaluation.curate_multitarget_queries(index, (2, 2), seed=1)
        by_image = {q.image_id: q for q in queries}
        assert set(by_image) == {3}
        query3 = by_image[3]
        assert set(query3.categories) == {"zebra", "chair"}
        union = masks.decode_rle(query3.gt_masks["zebra"])
        assert masks.mask_area(union) == 2 * 20 * 30

    def test_categories_exist_in_image(self):
        index = self._rich_index()
        for query in evaluation.curate_multitarget_queries(index, (4, 6), seed=5):
            present = {
                index.categories.object_name(index.objects[a].category_id).replace("_", " ")
                for a in index.image_objects[query.image_id]
            }
            assert set(query.categories) <= present


class TestFrequencySubsets:
    def _dataset(self, index):
        qas = [
            bind_targets(("q1", "bus_1 leaves."), index, 2, qa_id="a"),
            bind_targets(("q2", "bus_2 parks."), index, 2, qa_id="b"),
            bind_targets(("q3", "zebra_1 and zebra_2 graze."), index, 3, qa_id="c"),
            bind_targets(("q4", "The chair is empty."), index, 3, qa_id="d"),
            bind_targets(("q5", "Open laptop computer_1."), index, 1, qa_id="e"),
        ]
        samples = ds.assemble_samples(qas, index)
        return ds.assign_splits(samples, ratios=(0, 0, 1.0), seed=0, index=index)

    def test_upper_lower_by_question_frequency(self, index):
        built = self._dataset(index)
        subsets = evaluation.subset_by_frequency(built, top_n=1, bottom_n=1, kind="object")
        assert subsets.upper_categories == ("bus",)  # 2 QAs mention buses
        assert set(subsets.upper_qa_ids) == {"a", "b"}
        assert len(subsets.lower_categories) == 1
        assert set(subsets.upper_categories) & set(subsets.lower_categories) == set()

    def test_ties_break_deterministically(self, index):
        built = self._dataset(index)
        a = evaluation.subset_by_frequency(built, 1, 1, "object")
        b = evaluation.subset_by_frequency(built, 1, 1, "object")
        assert a == b

    def test_upper_lower_disjoint_when_fits(self, index):
        built = self._dataset(index)
        subsets = evaluation.subset_by_frequency(built, 2, 2, "object")
        assert set(subsets.upper_categories).isdisjoint(subsets.lower_categories)

    def test_exceeding_category_count(self, index):
        built = self._dataset(index)
        with pytest.raises(ValidationError, match="exceeds"):
            evaluation.subset_by_frequency(built, 3, 3, "object")

    def test_part_kind(self, index):
        qas = [
            bind_targets(
                ("q", "laptop computer_1's screen and laptop computer_1's base panel."),
                index, 1, qa_id="p1",
            ),
            bind_targets(("q", "Watch laptop computer_1's screen."), index, 1, qa_id="p2"),
        ]
        built = ds.assign_splits(
            ds.assemble_samples(qas, index), ratios=(0, 0, 1.0), seed=0, index=index
        )
        subsets = evaluation.subset_by_frequency(built, 1, 1, "part")
        assert subsets.upper_categories == ("screen",)
        assert subsets.lower_categories == ("base panel",)


def test_zero_target_qa_scores_as_correct_empty(index):
    # an unbound-mention QA retains zero targets; empty prediction is perfect
    qa = bind_targets(("q?", "The fullest vehicle is bus_3."), index, 2, qa_id="z-1")
    assert qa.targets == ()
    samples = ds.assemble_samples([qa], index)
    built = ds.assign_splits(samples, ratios=(0, 0, 1.0), seed=0, index=index)
    built = ds.partition_test(built)
    report = evaluation.align_and_score([], built, split="test")
    assert report.g_iou == 1.0
    assert report.c_iou == 1.0
    # but predicting a region against empty ground truth is penalized
    full = masks.encode_rle(np.ones((90, 120), dtype=bool))
    preds = [evaluation.EvalPrediction(qa_id="z-1", predicted_masks=(full,))]
    report = evaluation.align_and_score(preds, built, split="test")
    assert report.g_iou == 0.0
