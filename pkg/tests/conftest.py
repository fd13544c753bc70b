import json

import numpy as np
import pytest

from mmrkit.annotations import index_from_dict


def rect_ring(x, y, w, h):
    """Flat ring for an axis-aligned rectangle."""
    return [x, y, x + w, y, x + w, y + h, x, y + h]


def make_doc():
    """Three-image object/part annotation document used across tests.

    image 1: one laptop with screen + base panel parts
    image 2: two buses, one wheel part on bus_1
    image 3: two zebras and one chair
    """
    categories = [
        {"id": 1, "name": "laptop_computer"},
        {"id": 2, "name": "bus"},
        {"id": 3, "name": "zebra"},
        {"id": 4, "name": "chair"},
        {"id": 101, "name": "laptop_computer:screen", "parent_category_id": 1},
        {"id": 102, "name": "laptop_computer:base_panel", "parent_category_id": 1},
        {"id": 103, "name": "bus:wheel", "parent_category_id": 2},
    ]
    images = [
        {"id": 1, "file_name": "000001.jpg", "width": 100, "height": 80},
        {"id": 2, "file_name": "000002.jpg", "width": 120, "height": 90},
        {"id": 3, "file_name": "000003.jpg", "width": 60, "height": 60},
    ]
    annotations = [
        {"id": 10, "image_id": 1, "category_id": 1, "bbox": [10, 10, 60, 50],
         "segmentation": [rect_ring(10, 10, 60, 50)]},
        {"id": 11, "image_id": 1, "category_id": 101, "bbox": [12, 12, 56, 20],
         "segmentation": [rect_ring(12, 12, 56, 20)], "obj_ann_id": 10},
        {"id": 12, "image_id": 1, "category_id": 102, "bbox": [12, 36, 56, 22],
         "segmentation": [rect_ring(12, 36, 56, 22)], "obj_ann_id": 10},
        {"id": 20, "image_id": 2, "category_id": 2, "bbox": [5, 5, 50, 40],
         "segmentation": [rect_ring(5, 5, 50, 40)]},
        {"id": 21, "image_id": 2, "category_id": 2, "bbox": [60, 5, 50, 40],
         "segmentation": [rect_ring(60, 5, 50, 40)]},
        {"id": 22, "image_id": 2, "category_id": 103, "bbox": [8, 35, 12, 10],
         "segmentation": [rect_ring(8, 35, 12, 10)], "obj_ann_id": 20},
        {"id": 30, "image_id": 3, "category_id": 3, "bbox": [2, 2, 20, 30],
         "segmentation": [rect_ring(2, 2, 20, 30)]},
        {"id": 31, "image_id": 3, "category_id": 3, "bbox": [30, 2, 20, 30],
         "segmentation": [rect_ring(30, 2, 20, 30)]},
        {"id": 32, "image_id": 3, "category_id": 4, "bbox": [10, 35, 30, 20],
         "segmentation": [rect_ring(10, 35, 30, 20)]},
    ]
    return {"categories": categories, "images": images, "annotations": annotations}


@pytest.fixture
def doc():
    return make_doc()


@pytest.fixture
def index(doc):
    return index_from_dict(doc)


@pytest.fixture
def doc_path(tmp_path, doc):
    path = tmp_path / "annotations.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def random_mask(rng: np.random.Generator, height: int, width: int, p: float = 0.5) -> np.ndarray:
    return rng.random((height, width)) < p


@pytest.fixture(scope="session")
def pipeline_assets(tmp_path_factory):
    from .pipeline_fixtures import build_pipeline_assets

    return build_pipeline_assets(tmp_path_factory.mktemp("pipeline"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL/SKIP line per acceptance criterion."""
    rows = {}
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if status == "passed" and rows.get(name) in ("failed", "error"):
                continue
            rows[name] = status
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name in sorted(rows):
            verdict = {"passed": "PASS", "skipped": "SKIP"}.get(rows[name], "FAIL")
            terminalreporter.write_line(f"{verdict:<5} {name}")
