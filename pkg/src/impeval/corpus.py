"""Procedural defect corpus: smooth scenes with planted global/local anomalies.

Each sample is a deterministic function of its seed. Global defects are large
contrast-inverted rectangles (>= 10% of the area); local defects are small
(3-8 px, <= 1% of the area) patches of high-frequency speckle. The heatmap
target is the severity-weighted defect mask, resampled to R x R and blurred,
and the score target is a closed-form function of the defect list.
"""

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .pgm import PGMError, read_pgm, write_pgm
from .tiling import resize, resize_matrix

KAPPA = {"global": 1.0, "local": 3.0}
BLUR_SIGMA = 1.5
MAX_PLACEMENT_ATTEMPTS = 100


class DatasetError(ValueError):
    pass


@dataclass
class DefectSpec:
    kind: str            # "global" or "local"
    bbox: tuple          # (y0, x0, y1, x1), half-open, image pixels
    severity: float      # (0, 1]
    texture_seed: int
    area_fraction: float

    def to_dict(self):
        d = asdict(self)
        d["bbox"] = list(self.bbox)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(int(v) for v in d["bbox"]), float(d["severity"]),
                   int(d["texture_seed"]), float(d["area_fraction"]))


@dataclass
class Sample:
    id: str
    image: np.ndarray       # (H, W) in [0, 1]
    gt_heatmap: np.ndarray  # (R, R) in [0, 1]
    gt_score: float
    defects: list
    seed: int


@dataclass
class GenConfig:
    size_range: tuple = (96, 192)
    heat_resolution: int = 64
    mix: tuple = (0.30, 0.35, 0.20, 0.15)  # clean, local-only, global-only, mixed
    n_blobs: tuple = (4, 8)
    blob_amplitude: float = 0.08
    base_levels: tuple = ((0.2, 0.35), (0.65, 0.8))
    global_area: tuple = (0.12, 0.30)
    global_severity: tuple = (0.5, 1.0)
    local_side: tuple = (3, 8)
    local_severity: tuple = (0.5, 1.0)
    local_count: tuple = (1, 3)

    def __post_init__(self):
        if len(self.mix) != 4 or any(m < 0 for m in self.mix) or abs(sum(self.mix) - 1.0) > 1e-9:
            raise ValueError(f"mix must be four non-negative fractions summing to 1, got {self.mix}")


def score_formula(defects):
    """max(0, 1 - sum(severity * sqrt(area_fraction) * kappa_kind))."""
    total = 0.0
    for d in defects:
        total += d.severity * math.sqrt(d.area_fraction) * KAPPA[d.kind]
    return max(0.0, 1.0 - total)


def child_seed(master_seed, index):
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


def gaussian_kernel(sigma, truncate=4.0):
    rad = int(math.ceil(truncate * sigma))
    x = np.arange(-rad, rad + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def blur_matrix(n, sigma):
    """(n, n) zero-padded Gaussian convolution matrix."""
    k = gaussian_kernel(sigma)
    rad = k.size // 2
    m = np.zeros((n, n))
    for i in range(n):
        lo, hi = max(0, i - rad), min(n, i + rad + 1)
        m[i, lo:hi] = k[lo - i + rad:hi - i + rad]
    return m


def blur(img, sigma=BLUR_SIGMA):
    return blur_matrix(img.shape[0], sigma) @ img @ blur_matrix(img.shape[1], sigma).T


def render_heatmap(defects, shape, resolution, sigma=BLUR_SIGMA):
    h, w = shape
    mask = np.zeros((h, w))
    for d in defects:
        y0, x0, y1, x1 = d.bbox
        np.maximum(mask[y0:y1, x0:x1], d.severity, out=mask[y0:y1, x0:x1])
    if not defects:
        return np.zeros((resolution, resolution))
    small = resize_matrix(h, resolution, "area") @ mask @ resize_matrix(w, resolution, "area").T
    return np.clip(blur(small, sigma), 0.0, 1.0)


def _background(rng, h, w, cfg):
    lo, hi = cfg.base_levels[rng.integers(len(cfg.base_levels))]
    img = np.full((h, w), rng.uniform(lo, hi))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(cfg.n_blobs[0], cfg.n_blobs[1] + 1)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        s = rng.uniform(0.1, 0.3) * max(h, w)
        amp = rng.uniform(-1.0, 1.0) * cfg.blob_amplitude
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return np.clip(img, 0.0, 1.0)


def _inside(bbox, h, w):
    y0, x0, y1, x1 = bbox
    return 0 <= y0 < y1 <= h and 0 <= x0 < x1 <= w


def _overlaps(bbox, others):
    y0, x0, y1, x1 = bbox
    return any(y0 < b[2] and b[0] < y1 and x0 < b[3] and b[1] < x1 for b in others)


def _place(rng, h, w, kind, cfg, taken):
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        if kind == "global":
            frac = rng.uniform(*cfg.global_area)
            aspect = rng.uniform(0.6, 1.6)
            bh = int(round(math.sqrt(frac * h * w * aspect)))
            bw = int(math.ceil(frac * h * w / max(bh, 1)))
        else:
            cap = int(math.floor(math.sqrt(0.01 * h * w)))
            hi = min(cfg.local_side[1], cap)
            if hi < cfg.local_side[0]:
                raise DatasetError(f"a {h}x{w} image is too small for a local defect of side "
                                   f">= {cfg.local_side[0]} within 1% of its area")
            bh = int(rng.integers(cfg.local_side[0], hi + 1))
            bw = int(rng.integers(cfg.local_side[0], hi + 1))
            while bh * bw > 0.01 * h * w:
                bw -= 1
        y0 = int(rng.integers(0, max(h - bh, 0) + 1))
        x0 = int(rng.integers(0, max(w - bw, 0) + 1))
        bbox = (y0, x0, y0 + bh, x0 + bw)
        frac = bh * bw / (h * w)
        if not _inside(bbox, h, w) or _overlaps(bbox, taken):
            continue
        if kind == "global" and frac < 0.10:
            continue
        if kind == "local" and (frac > 0.01 or min(bh, bw) < 1):
            continue
        return bbox, frac
    raise DatasetError(f"could not place a {kind} defect in a {h}x{w} image "
                       f"after {MAX_PLACEMENT_ATTEMPTS} attempts")


def _plant(img, d):
    y0, x0, y1, x1 = d.bbox
    region = img[y0:y1, x0:x1]
    if d.kind == "global":
        img[y0:y1, x0:x1] = region + d.severity * (1.0 - 2.0 * region)
    else:
        trng = np.random.default_rng(d.texture_seed)
        noise = trng.uniform(0.0, 1.0, size=region.shape)
        img[y0:y1, x0:x1] = (1.0 - d.severity) * region + d.severity * noise


def generate_sample(seed, cfg=None, sample_id=None):
    cfg = cfg or GenConfig()
    rng = np.random.default_rng(seed)
    h = int(rng.integers(cfg.size_range[0], cfg.size_range[1] + 1))
    w = int(rng.integers(cfg.size_range[0], cfg.size_range[1] + 1))
    img = _background(rng, h, w, cfg)
    u = rng.random()
    cum = np.cumsum(cfg.mix)
    category = int(np.searchsorted(cum, u, side="right"))
    category = min(category, 3)
    kinds = []
    if category in (2, 3):
        kinds.append("global")
    if category in (1, 3):
        n_local = int(rng.integers(cfg.local_count[0], cfg.local_count[1] + 1))
        if category == 3:
            n_local = min(n_local, 2)
        kinds.extend(["local"] * n_local)
    defects = []
    for kind in kinds:
        bbox, frac = _place(rng, h, w, kind, cfg, [d.bbox for d in defects])
        sev_range = cfg.global_severity if kind == "global" else cfg.local_severity
        sev = float(rng.uniform(*sev_range))
        defects.append(DefectSpec(kind, bbox, sev, int(rng.integers(0, 2 ** 31 - 1)), frac))
    for d in defects:
        _plant(img, d)
    img = np.clip(img, 0.0, 1.0)
    heat = render_heatmap(defects, (h, w), cfg.heat_resolution)
    sid = sample_id if sample_id is not None else f"s{seed:010d}"
    return Sample(sid, img, heat, score_formula(defects), defects, int(seed))


def generate_corpus(n, master_seed, cfg=None):
    cfg = cfg or GenConfig()
    return [generate_sample(child_seed(master_seed, i), cfg, sample_id=f"{i:05d}") for i in range(n)]


# -- on-disk dataset ------------------------------------------------------------

MANIFEST = "manifest.jsonl"


def write_dataset(samples, root):
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "heatmaps"), exist_ok=True)
    lines = []
    for s in samples:
        img_rel = f"images/{s.id}.pgm"
        heat_rel = f"heatmaps/{s.id}.pgm"
        write_pgm(os.path.join(root, img_rel), s.image)
        write_pgm(os.path.join(root, heat_rel), s.gt_heatmap)
        rec = {"id": s.id, "image": img_rel, "heatmap": heat_rel, "gt_score": s.gt_score,
               "defects": [d.to_dict() for d in s.defects], "seed": s.seed}
        lines.append(json.dumps(rec, sort_keys=True))
    with open(os.path.join(root, MANIFEST), "w") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))


def read_manifest(root):
    path = os.path.join(root, MANIFEST)
    if not os.path.isfile(path):
        raise DatasetError(f"no {MANIFEST} in {root}")
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                for key in ("id", "image", "heatmap", "gt_score", "defects", "seed"):
                    rec[key]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DatasetError(f"{path}:{lineno}: malformed manifest record ({e})") from e
            records.append(rec)
    if not records:
        raise DatasetError(f"dataset {root} is empty")
    return records


def read_dataset(root):
    samples = []
    for rec in read_manifest(root):
        paths = [os.path.join(root, rec["image"]), os.path.join(root, rec["heatmap"])]
        for p in paths:
            if not os.path.isfile(p):
                raise DatasetError(f"missing file {p}")
        try:
            img, heat = read_pgm(paths[0]), read_pgm(paths[1])
        except PGMError as e:
            raise DatasetError(str(e)) from e
        defects = [DefectSpec.from_dict(d) for d in rec["defects"]]
        samples.append(Sample(rec["id"], img, heat, float(rec["gt_score"]), defects, int(rec["seed"])))
    return samples


def image_stats(img):
    return {"height": int(img.shape[0]), "width": int(img.shape[1]),
            "mean_intensity": float(img.mean()), "contrast": float(img.std())}


def downsample_for_heat(img, resolution):
    return resize(img, (resolution, resolution), "area")
