import os

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import gaussian_filter

from impeval.explainer import (MAP_NOTE, NO_REGIONS, Region, compose_report, extract_regions,
                               severity_label)
from impeval.nn import ConfigError

from oracles import flood_fill_regions

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def oracle_regions(heat, tau):
    mask = (heat >= tau).tolist()
    out = []
    for comp in flood_fill_regions(mask):
        if len(comp) < 2:
            continue
        vals = [heat[y, x] for y, x in comp]
        ys = [y for y, _ in comp]
        xs = [x for _, x in comp]
        out.append(((min(ys), min(xs), max(ys) + 1, max(xs) + 1), len(comp), sum(vals) / len(vals), max(vals)))
    out.sort(key=lambda r: (-r[2], -r[1], r[0][0], r[0][1]))
    return out


def test_matches_flood_fill_on_200_random_maps(rng):
    for k in range(200):
        heat = np.clip(gaussian_filter(rng.uniform(size=(32, 32)), rng.uniform(0.5, 2.0)) * 1.8 - 0.4, 0, 1)
        if k % 4 == 0:
            heat = rng.uniform(size=(32, 32)) ** 2
        got = extract_regions(heat, 0.3)
        ref = oracle_regions(heat, 0.3)
        assert [(r.bbox, r.area) for r in got] == [(b, a) for b, a, _, _ in ref]
        for r, (_, _, mean, peak) in zip(got, ref):
            assert r.mean_heat == pytest.approx(mean, abs=1e-12) and r.peak_heat == peak
            assert r.mean_heat <= r.peak_heat


def test_empty_and_plateau_cases():
    assert extract_regions(np.zeros((16, 16))) == []
    heat = np.zeros((16, 16))
    heat[3:7, 5:12] = 0.9
    (r,) = extract_regions(heat)
    assert r.bbox == (3, 5, 7, 12) and r.area == 28
    assert r.mean_heat == pytest.approx(0.9) and r.severity_label == "severe"
    assert r.kind == "global" and r.area_fraction == pytest.approx(28 / 256)


def test_diagonal_touch_gives_two_regions():
    heat = np.zeros((8, 8))
    heat[0:2, 0:2] = 0.8
    heat[2:4, 2:4] = 0.8
    assert len(extract_regions(heat)) == 2


def test_single_pixels_are_noise():
    heat = np.zeros((8, 8))
    heat[1, 1] = heat[5, 5] = 0.9
    assert extract_regions(heat) == []


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.2, 1.5])
def test_tau_outside_open_interval_errors(tau):
    with pytest.raises(ConfigError):
        extract_regions(np.zeros((4, 4)), tau)


def test_severity_cuts():
    assert [severity_label(v) for v in (0.1, 0.25, 0.59, 0.6, 0.99)] == [
        "mild", "moderate", "moderate", "severe", "severe"]


@given(arrays(np.float64, (12, 12), elements=st.floats(0, 1)), st.floats(0.0, 0.5))
def test_raising_heat_never_lowers_surviving_severity(heat, c):
    order = {"mild": 0, "moderate": 1, "severe": 2}
    before = {(r.bbox, r.area): r for r in extract_regions(heat, 0.3)}
    raised = np.clip(heat + c, 0, 1)
    mask_b = heat >= 0.3
    for r in extract_regions(raised, 0.3):
        old = before.get((r.bbox, r.area))
        y0, x0, y1, x1 = r.bbox
        # same component pixel set as before: grown regions are new regions
        if old is None or np.count_nonzero(mask_b[y0:y1, x0:x1]) != np.count_nonzero(raised[y0:y1, x0:x1] >= 0.3):
            continue
        assert order[r.severity_label] >= order[old.severity_label]


STATS = {"height": 96, "width": 128, "mean_intensity": 0.4375, "contrast": 0.125}


def two_region_report():
    heat = np.zeros((16, 16))
    heat[2:5, 2:6] = 0.85
    heat[10:14, 9:15] = 0.4
    return compose_report(extract_regions(heat), 0.62, 0.58, 0.66, STATS, alpha=0.5)


def test_report_has_five_sections_and_region_order():
    rep = two_region_report()
    d = rep.to_dict()
    assert list(d) == ["step1_description", "step2_regions", "step3_map_note", "step4_analysis", "step5_score"]
    assert len(d["step4_analysis"]) == 2
    assert [a["bbox"] for a in d["step4_analysis"]] == [r["bbox"] for r in d["step2_regions"]]
    assert sum(a["contribution"] for a in d["step4_analysis"]) == pytest.approx(1 - 0.62)
    assert d["step3_map_note"] == MAP_NOTE
    assert d["step5_score"] == {"S": 0.62, "S_token": 0.58, "S_map": 0.66, "alpha": 0.5}


def test_empty_report():
    rep = compose_report([], 0.97, 0.96, 0.98, STATS)
    d = rep.to_dict()
    assert d["step2_regions"] == NO_REGIONS and d["step4_analysis"] == NO_REGIONS
    text = rep.render()
    assert text.count(NO_REGIONS) == 2
    assert [line[:2] for line in text.splitlines()] == ["1.", "2.", "3.", "4.", "5."]


def test_report_matches_golden_files():
    rep = two_region_report()
    with open(os.path.join(GOLDEN, "report.json")) as f:
        assert rep.to_json() == f.read()
    with open(os.path.join(GOLDEN, "report.txt")) as f:
        assert rep.render() == f.read()
    assert two_region_report().to_json() == rep.to_json()


def test_region_serializes_bbox_as_list():
    r = Region((1, 2, 3, 4), 4, 0.1, 0.5, 0.7, "local", "moderate")
    assert r.to_dict()["bbox"] == [1, 2, 3, 4]
