"""Rule-based five-step report built from the fused heatmap and the scores."""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import _accel
from .nn import ConfigError

GLOBAL_AREA_CUTOFF = 0.10
SEVERITY_CUTS = (0.25, 0.6)
MIN_REGION_PIXELS = 2
NO_REGIONS = "no implausible regions detected"
MAP_NOTE = ("region evidence is injected into the map tokens internally; "
            "this step has no textual output")


@dataclass
class Region:
    bbox: tuple          # (y0, x0, y1, x1), half-open, heatmap pixels
    area: int
    area_fraction: float
    mean_heat: float
    peak_heat: float
    kind: str
    severity_label: str

    def to_dict(self):
        d = asdict(self)
        d["bbox"] = list(self.bbox)
        return d


def severity_label(mean_heat):
    if mean_heat < SEVERITY_CUTS[0]:
        return "mild"
    if mean_heat < SEVERITY_CUTS[1]:
        return "moderate"
    return "severe"


def extract_regions(heat, tau=0.3):
    """4-connected components of {heat >= tau}, largest mean heat first."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"region threshold must lie in (0, 1), got {tau}")
    heat = np.asarray(heat, dtype=np.float64)
    labels, n = _accel.label4(heat >= tau)
    total = heat.size
    regions = []
    for k in range(1, n + 1):
        ys, xs = np.nonzero(labels == k)
        if ys.size < MIN_REGION_PIXELS:
            continue
        vals = heat[ys, xs]
        frac = ys.size / total
        mean = float(vals.mean())
        regions.append(Region((int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1),
                              int(ys.size), frac, mean, float(vals.max()),
                              "global" if frac >= GLOBAL_AREA_CUTOFF else "local",
                              severity_label(mean)))
    regions.sort(key=lambda r: (-r.mean_heat, -r.area, r.bbox[0], r.bbox[1]))
    return regions


@dataclass
class Report:
    step1_description: dict
    step2_regions: list
    step3_map_note: str
    step4_analysis: list
    step5_score: dict

    def to_dict(self):
        return {
            "step1_description": self.step1_description,
            "step2_regions": [r.to_dict() for r in self.step2_regions] or NO_REGIONS,
            "step3_map_note": self.step3_map_note,
            "step4_analysis": self.step4_analysis or NO_REGIONS,
            "step5_score": self.step5_score,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def render(self):
        d = self.step1_description
        lines = ["1. Image description: "
                 f"{d['height']}x{d['width']} px, mean intensity {d['mean_intensity']:.3f}, "
                 f"contrast {d['contrast']:.3f}"]
        if self.step2_regions:
            lines.append(f"2. Problematic regions: {len(self.step2_regions)}")
            for i, r in enumerate(self.step2_regions, 1):
                lines.append(f"   [{i}] bbox {list(r.bbox)} area {r.area_fraction:.4f} "
                             f"mean {r.mean_heat:.3f} peak {r.peak_heat:.3f}")
        else:
            lines.append(f"2. Problematic regions: {NO_REGIONS}")
        lines.append(f"3. Map tokens: {self.step3_map_note}")
        if self.step4_analysis:
            lines.append("4. Analysis:")
            lines.extend(f"   [{i}] {a['text']}" for i, a in enumerate(self.step4_analysis, 1))
        else:
            lines.append(f"4. Analysis: {NO_REGIONS}")
        s = self.step5_score
        parts = [f"S = {s['S']:.4f}"]
        for key in ("S_token", "S_map", "alpha"):
            if s.get(key) is not None:
                parts.append(f"{key} = {s[key]:.4f}")
        lines.append("5. Score: " + ", ".join(parts))
        return "\n".join(lines) + "\n"


def compose_report(regions, s, s_token, s_map, image_stats, alpha=None):
    """Fill the five report sections. The contribution estimate of a region is
    its share of the total region heat mass times the score deficit (1 - S)."""
    masses = [r.mean_heat * r.area for r in regions]
    total = sum(masses)
    analysis = []
    for r, m in zip(regions, masses):
        contrib = (1.0 - s) * (m / total) if total > 0 else 0.0
        analysis.append({
            "kind": r.kind, "severity": r.severity_label, "bbox": list(r.bbox),
            "contribution": contrib,
            "text": (f"{r.severity_label} {r.kind} anomaly at {list(r.bbox)}, "
                     f"estimated score impact {contrib:.4f}"),
        })
    score = {"S": float(s),
             "S_token": None if s_token is None else float(s_token),
             "S_map": None if s_map is None else float(s_map),
             "alpha": None if alpha is None else float(alpha)}
    return Report(dict(image_stats), list(regions), MAP_NOTE, analysis, score)
