"""Evaluation, inference and gradient-check workflows behind the CLI."""

import hashlib
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .config import TrainConfig
from .corpus import DatasetError, image_stats, read_dataset
from .explainer import compose_report, extract_regions
from .fusion import fuse
from .metrics import dataset_report, heatmap_metrics
from .model import ImplausibilityModel, prepare_image
from .pgm import read_pgm, write_pgm
from .tiling import resize
from .train import PreparedSet, batch_loss

HEAT_SOURCES = ("fused", "fixed", "local", "global")
SCORE_SOURCES = ("S", "S_token", "S_map")
EVAL_BATCH = 16


class GateError(RuntimeError):
    pass


@dataclass
class Predictions:
    heat: np.ndarray     # (n, R, R)
    score: np.ndarray    # (n,)
    s_token: np.ndarray  # (n,) or None
    s_map: np.ndarray
    sigma_local: np.ndarray   # per-sample mean sigma, or None
    sigma_global: np.ndarray


def _select_heat(out, source):
    if source == "fused":
        return out.fused.heat.data
    if source == "fixed":
        if out.local is None or out.global_ is None:
            raise GateError("fixed fusion needs both branches")
        return fuse(out.local, out.global_, "fixed").heat.data
    branch = out.local if source == "local" else out.global_
    if branch is None:
        raise GateError(f"model has no {source} branch")
    return branch.heat.data


def predict(model, data, heat_source="fused", score_source="S"):
    """Batched no-grad inference over a PreparedSet, in sample order."""
    if heat_source not in HEAT_SOURCES:
        raise GateError(f"heat source must be one of {HEAT_SOURCES}")
    if score_source not in SCORE_SOURCES:
        raise GateError(f"score source must be one of {SCORE_SOURCES}")
    heats, scores, st, sm, sl, sg = [], [], [], [], [], []
    with ag.no_grad():
        for start in range(0, len(data), EVAL_BATCH):
            idx = np.arange(start, min(start + EVAL_BATCH, len(data)))
            batch, gt_heat, _ = data.batch(idx)
            out = model.forward(batch, gt_heat=gt_heat)
            heats.append(_select_heat(out, heat_source))
            s = {"S": out.s, "S_token": out.s_token, "S_map": out.s_map}[score_source]
            if s is None:
                raise GateError(f"model has no {score_source} output")
            scores.append(s.data)
            st.append(None if out.s_token is None else out.s_token.data)
            sm.append(None if out.s_map is None else out.s_map.data)
            sl.append(None if out.local is None else np.exp(out.local.log_sigma.data).mean(axis=(1, 2)))
            sg.append(None if out.global_ is None else np.exp(out.global_.log_sigma.data).mean(axis=(1, 2)))

    def cat(xs):
        return None if xs[0] is None else np.concatenate(xs)
    return Predictions(np.concatenate(heats), np.concatenate(scores), cat(st), cat(sm), cat(sl), cat(sg))


def file_hash(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def evaluate(model, samples, heat_source="fused", score_source="S", oracle=False):
    """EvalReport for ``samples`` in their given order. ``oracle`` replaces the
    predictions with the ground truth."""
    cfg = model.cfg
    r = cfg.heat_resolution
    for s in samples:
        if s.gt_heatmap.shape != (r, r):
            raise DatasetError(f"dataset heatmap resolution {s.gt_heatmap.shape} does not match "
                               f"checkpoint heat_resolution {(r, r)}")
    gts = np.array([s.gt_score for s in samples])
    if oracle:
        heat = np.stack([s.gt_heatmap for s in samples])
        score = gts.copy()
    else:
        p = predict(model, PreparedSet(samples, cfg), heat_source, score_source)
        heat, score = p.heat, p.score
    per = [heatmap_metrics(h, s.gt_heatmap, cfg.fixation_threshold) for h, s in zip(heat, samples)]
    return dataset_report(per, score, gts)


def report_document(report, cfg, ckpt_hash, heat_source="fused", score_source="S", oracle=False):
    return {"config_hash": cfg.hash(), "checkpoint_hash": ckpt_hash, "heat_source": heat_source,
            "score_source": score_source, "oracle": oracle, "metrics": report.to_dict()}


def dump_json(obj, path):
    with open(path, "w") as f:
        f.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def evaluate_checkpoint(ckpt_path, data_dir, report_path, heat_source="fused", score_source="S",
                        oracle=False):
    from .checkpoint import load_checkpoint
    model = load_checkpoint(ckpt_path)
    samples = read_dataset(data_dir)
    rep = evaluate(model, samples, heat_source, score_source, oracle)
    doc = report_document(rep, model.cfg, file_hash(ckpt_path), heat_source, score_source, oracle)
    dump_json(doc, report_path)
    return doc


# -- inference -------------------------------------------------------------------

def overlay(image, heat, tau):
    """Blend the heatmap (resized to the image) at 50% wherever it is >= tau."""
    up = np.clip(resize(heat, image.shape, "bilinear"), 0.0, 1.0)
    return np.where(up >= tau, 0.5 * image + 0.5 * up, image)


def infer_image(model, image):
    """Heatmap, scores, per-branch sigma and the explainer report for one image."""
    cfg = model.cfg
    if cfg.use_gt_heatmap_for_scorer:
        raise GateError("a scorer trained on ground-truth heatmaps cannot run without them")
    prepared = prepare_image(image, cfg)
    with ag.no_grad():
        out = model.forward([prepared])
    heat = out.fused.heat.data[0]
    s_token = None if out.s_token is None else float(out.s_token.data[0])
    s_map = None if out.s_map is None else float(out.s_map.data[0])
    alpha = float(model.scorer.alpha().data) if cfg.scorer == "both" else None
    regions = extract_regions(heat, cfg.region_threshold)
    report = compose_report(regions, float(out.s.data[0]), s_token, s_map, image_stats(image), alpha)

    def mean_sigma(b):
        return None if b is None else float(np.exp(b.log_sigma.data[0]).mean())
    result = {"S": float(out.s.data[0]), "S_token": s_token, "S_map": s_map, "alpha": alpha,
              "sigma_mean_local": mean_sigma(out.local), "sigma_mean_global": mean_sigma(out.global_),
              "report": report.to_dict(), "report_text": report.render()}
    return heat, result


def infer_file(ckpt_path, image_path, out_dir):
    from .checkpoint import load_checkpoint
    model = load_checkpoint(ckpt_path)
    image = read_pgm(image_path)
    heat, result = infer_image(model, image)
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(image_path))[0]
    heat_path = os.path.join(out_dir, f"{stem}_heatmap.pgm")
    over_path = os.path.join(out_dir, f"{stem}_overlay.pgm")
    write_pgm(heat_path, heat)
    write_pgm(over_path, overlay(image, heat, model.cfg.region_threshold))
    result["heatmap"] = os.path.basename(heat_path)
    result["overlay"] = os.path.basename(over_path)
    result["checkpoint_hash"] = file_hash(ckpt_path)
    dump_json(result, os.path.join(out_dir, f"{stem}_output.json"))
    return result


# -- gradient check --------------------------------------------------------------

GRADCHECK_SIZES = dict(width=8, heads=2, heat_resolution=8, base_tile_size=8, feature_grid=2,
                       tile_resolution=4, max_tiles=4, scorer_hidden=4, mlp_ratio=2,
                       tokens_per_tile=1, laplace_warmup_steps=0)
GRADCHECK_TOL = 1e-4
# gradients that are exactly zero in theory (softmax ignores key biases) show up
# as ~1e-12 finite-difference noise; below this magnitude errors are absolute
GRADCHECK_FLOOR = 1e-6


def gradcheck_case(cfg=None):
    """Tiny model plus one 16x16 sample that tiles 2x2."""
    base = cfg or TrainConfig()
    cfg = base.replace(**GRADCHECK_SIZES)
    rng = np.random.default_rng(cfg.seed)
    model = ImplausibilityModel(cfg)
    # spread parameters away from their init so no term is trivially zero
    for p in model.parameters():
        p.data = np.array(p.data + rng.normal(0.0, 0.05, size=p.data.shape), dtype=np.float64)
    image = rng.uniform(0.0, 1.0, size=(16, 16))
    prepared = prepare_image(image, cfg)
    if prepared.layout.n_tiles != 4:
        raise GateError("gradcheck sample does not tile 2x2")
    heat = np.clip(rng.uniform(-0.5, 1.0, size=(1, 8, 8)), 0.0, 1.0)
    score = np.array([0.6])
    return model, [prepared], heat, score


def gradcheck(cfg=None, h=1e-5):
    """Worst per-tensor relative error between analytic and central-difference
    gradients over every scalar parameter. Returns (worst, per-tensor dict, seconds)."""
    t0 = time.perf_counter()
    model, batch, heat, score = gradcheck_case(cfg)
    model.zero_grad()
    loss, _ = batch_loss(model, batch, heat, score)
    loss.backward()
    errors = {}
    with ag.no_grad():
        def f():
            return float(batch_loss(model, batch, heat, score)[0].data)
        for name, p in model.named_parameters():
            analytic = np.zeros(p.data.shape) if p.grad is None else p.grad
            numeric = np.zeros(p.data.shape)
            for i in np.ndindex(p.data.shape):
                old = p.data[i]
                p.data[i] = old + h
                up = f()
                p.data[i] = old - h
                down = f()
                p.data[i] = old
                numeric[i] = (up - down) / (2 * h)
            scale = max(np.abs(analytic).max(), np.abs(numeric).max(), GRADCHECK_FLOOR)
            errors[name] = float(np.abs(analytic - numeric).max() / scale)
    return max(errors.values()), errors, time.perf_counter() - t0
