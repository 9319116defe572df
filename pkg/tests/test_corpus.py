import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import gaussian_filter

from impeval.corpus import (BLUR_SIGMA, DatasetError, DefectSpec, GenConfig, generate_corpus, generate_sample,
                            read_dataset, render_heatmap, score_formula, write_dataset)
from impeval.tiling import resize


def test_same_seed_is_bit_identical():
    a, b = generate_sample(42), generate_sample(42)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.gt_heatmap.tobytes() == b.gt_heatmap.tobytes()
    assert a.gt_score == b.gt_score and a.defects == b.defects


def test_corpus_independent_of_generation_order():
    full = generate_corpus(6, 5)
    again = generate_corpus(6, 5)
    assert [s.image.tobytes() for s in full] == [s.image.tobytes() for s in again]
    assert len({s.image.tobytes() for s in full}) == 6


def test_default_mix_split_balance():
    samples = generate_corpus(300, 77)
    clean = sum(1 for s in samples if not s.defects) / len(samples)
    assert abs(clean - 0.30) <= 0.05


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1))
def test_sample_invariants(seed):
    s = generate_sample(seed)
    assert s.image.min() >= 0 and s.image.max() <= 1
    assert s.gt_heatmap.shape == (64, 64)
    assert s.gt_heatmap.min() >= 0 and s.gt_heatmap.max() <= 1
    assert (not s.gt_heatmap.any()) == (not s.defects)
    assert s.gt_score == score_formula(s.defects)
    if not s.defects:
        assert s.gt_score == 1.0
    h, w = s.image.shape
    for d in s.defects:
        y0, x0, y1, x1 = d.bbox
        assert 0 <= y0 < y1 <= h and 0 <= x0 < x1 <= w
        frac = (y1 - y0) * (x1 - x0) / (h * w)
        assert frac == pytest.approx(d.area_fraction)
        assert frac >= 0.10 if d.kind == "global" else frac <= 0.01
        assert 0 < d.severity <= 1


def test_score_formula_examples():
    assert score_formula([]) == 1.0
    g = DefectSpec("global", (0, 0, 10, 10), 1.0, 0, 0.25)
    assert score_formula([g]) == pytest.approx(0.5)
    assert score_formula([g, g, g]) == 0.0
    loc = DefectSpec("local", (0, 0, 2, 2), 0.5, 0, 0.0025)
    assert score_formula([loc]) == pytest.approx(1 - 0.5 * 0.05 * 3.0)


def test_local_defect_blur_support_within_dilated_bbox():
    h = w = 128
    r = 64
    d = DefectSpec("local", (40, 70, 46, 77), 1.0, 0, 42 / (128 * 128))
    heat = render_heatmap([d], (h, w), r)
    # reference: area-resampled mask at heat scale, then scipy's Gaussian filter
    mask = np.zeros((h, w))
    mask[40:46, 70:77] = 1.0
    ref = np.clip(gaussian_filter(resize(mask, (r, r), "area"), BLUR_SIGMA, mode="constant", truncate=4.0), 0, 1)
    np.testing.assert_allclose(heat, ref, atol=1e-12)
    ys, xs = np.nonzero(heat > 0.01)
    pad = 3 * BLUR_SIGMA
    sy, sx = r / h, r / w
    assert ys.min() >= 40 * sy - pad and ys.max() + 1 <= 46 * sy + pad
    assert xs.min() >= 70 * sx - pad and xs.max() + 1 <= 77 * sx + pad


def test_round_trip_100_samples(tmp_path):
    samples = generate_corpus(100, 3)
    write_dataset(samples, tmp_path)
    back = read_dataset(tmp_path)
    assert [s.id for s in back] == [s.id for s in samples]
    for a, b in zip(samples, back):
        assert a.gt_score == b.gt_score and a.defects == b.defects and a.seed == b.seed
        assert np.abs(a.image - b.image).max() <= 0.5 / 65535 + 1e-15
        assert np.abs(a.gt_heatmap - b.gt_heatmap).max() <= 0.5 / 65535 + 1e-15


def test_manifest_records_have_exact_keys(tmp_path):
    write_dataset(generate_corpus(3, 1), tmp_path)
    with open(tmp_path / "manifest.jsonl") as f:
        recs = [json.loads(line) for line in f]
    assert all(set(r) == {"id", "image", "heatmap", "gt_score", "defects", "seed"} for r in recs)
    assert os.path.isfile(tmp_path / recs[0]["image"])


def test_empty_and_malformed_datasets(tmp_path):
    with pytest.raises(DatasetError):
        read_dataset(tmp_path)
    (tmp_path / "manifest.jsonl").write_text("")
    with pytest.raises(DatasetError):
        read_dataset(tmp_path)
    write_dataset(generate_corpus(2, 1), tmp_path)
    with open(tmp_path / "manifest.jsonl", "a") as f:
        f.write("{not json\n")
    with pytest.raises(DatasetError, match=":3:"):
        read_dataset(tmp_path)


def test_missing_file_names_the_path(tmp_path):
    samples = generate_corpus(2, 1)
    write_dataset(samples, tmp_path)
    os.remove(tmp_path / "heatmaps" / f"{samples[1].id}.pgm")
    with pytest.raises(DatasetError, match=f"{samples[1].id}.pgm"):
        read_dataset(tmp_path)


def test_too_small_for_local_defect_is_dataset_error():
    with pytest.raises(DatasetError, match="too small"):
        generate_sample(1, GenConfig(size_range=(12, 12), mix=(0, 1, 0, 0)))


def test_gen_config_validation():
    with pytest.raises(ValueError):
        GenConfig(mix=(0.5, 0.5, 0.5, 0.0))
    s = generate_sample(9, GenConfig(mix=(0, 0, 1, 0)))
    assert [d.kind for d in s.defects] == ["global"]
    assert math.isclose(s.gt_score, 1 - s.defects[0].severity * math.sqrt(s.defects[0].area_fraction))
