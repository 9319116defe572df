"""Adam optimizer and the seeded training loop."""

import dataclasses
import json
import math

import numpy as np

from . import autograd as ag
from .corpus import DatasetError
from .model import ImplausibilityModel, prepare_image
from .objective import loss_terms


class TrainingError(RuntimeError):
    pass


class Adam:
    """Adam over one flat buffer; each parameter's data becomes a view into it."""

    def __init__(self, params, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        sizes = [p.data.size for p in self.params]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.flat = np.concatenate([p.data.ravel() for p in self.params]) if self.params else np.zeros(0)
        for p, a, b in zip(self.params, self.offsets[:-1], self.offsets[1:]):
            p.data = self.flat[a:b].reshape(p.data.shape)
        self.m = np.zeros_like(self.flat)
        self.v = np.zeros_like(self.flat)
        self.t = 0

    def gradient(self):
        # parameters untouched this step count as zero gradient: moments still decay
        return np.concatenate([p.grad.ravel() if p.grad is not None else np.zeros(p.data.size)
                               for p in self.params]) if self.params else np.zeros(0)

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        g = self.gradient()
        self.m *= b1
        self.m += (1.0 - b1) * g
        self.v *= b2
        self.v += (1.0 - b2) * (g * g)
        mhat = self.m / (1.0 - b1 ** self.t)
        vhat = self.v / (1.0 - b2 ** self.t)
        self.flat -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class PreparedSet:
    """Tiling and patchification cached once per sample."""

    def __init__(self, samples, cfg):
        if not samples:
            raise DatasetError("dataset is empty")
        r = cfg.heat_resolution
        for s in samples:
            if s.gt_heatmap.shape != (r, r):
                raise DatasetError(f"sample {s.id}: heatmap resolution {s.gt_heatmap.shape} "
                                   f"does not match model resolution {(r, r)}")
        self.samples = samples
        self.prepared = [prepare_image(s.image, cfg) for s in samples]
        self.heat = np.stack([s.gt_heatmap for s in samples])
        self.score = np.array([s.gt_score for s in samples])

    def __len__(self):
        return len(self.samples)

    def batch(self, idx):
        return [self.prepared[i] for i in idx], self.heat[idx], self.score[idx]


def laplace_ramp(cfg, step):
    """Laplace weight at ``step`` (1-based): linear ramp from 0 over the warm-in steps."""
    k = cfg.laplace_warmup_steps
    frac = 1.0 if k <= 0 else min(1.0, (step - 1) / k)
    return cfg.laplace_weight * frac


def batch_loss(model, batch, heat, score, weights=None):
    out = model.forward(batch, gt_heat=heat)
    weights = weights or model.cfg.loss_weights()
    f, l, s = loss_terms(out.local, out.global_, heat, out.s, out.s_token, out.s_map, score, weights)
    return f + l + s, out


def batch_order(n, batch_size, steps, seed):
    """Index batches for every step: reshuffled epochs drawn from one seeded stream."""
    rng = np.random.default_rng([seed, 1])
    order = []
    need = steps * batch_size
    while len(order) < need:
        order.extend(rng.permutation(n).tolist())
    arr = np.array(order[:need], dtype=np.int64)
    return arr.reshape(steps, batch_size) if steps else arr.reshape(0, batch_size)


def train(cfg, samples, log=None, model=None):
    """Train from scratch (or continue ``model``). ``log`` receives one dict per
    logged step. Returns (model, per-step losses)."""
    data = samples if isinstance(samples, PreparedSet) else PreparedSet(samples, cfg)
    model = model or ImplausibilityModel(cfg)
    params = model.active_parameters()
    opt = Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    base_weights = cfg.loss_weights()
    losses = []
    bs = min(cfg.batch_size, len(data))
    for step, idx in enumerate(batch_order(len(data), bs, cfg.steps, cfg.seed), 1):
        model.zero_grad()
        try:
            weights = dataclasses.replace(base_weights, laplace=laplace_ramp(cfg, step))
            loss, _ = batch_loss(model, *data.batch(idx), weights=weights)
            value = float(loss.data)
            if not math.isfinite(value):
                raise ag.NonFiniteError("loss")
            loss.backward()
        except ag.NonFiniteError as e:
            raise TrainingError(f"non-finite value at step {step}: {e}") from e
        losses.append(value)
        opt.step()
        if log is not None and (step % cfg.log_every == 0 or step == 1 or step == cfg.steps):
            log({"step": step, "loss": value})
    return model, losses


class JsonlLog:
    def __init__(self, path):
        self.f = open(path, "w")

    def __call__(self, rec):
        self.f.write(json.dumps(rec, sort_keys=True) + "\n")
        self.f.flush()

    def close(self):
        self.f.close()
