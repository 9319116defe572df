import io
import json

import numpy as np
import pytest

from impeval.checkpoint import save_checkpoint
from impeval.config import TrainConfig
from impeval.corpus import DatasetError
from impeval.nn import ConfigError, Parameter
from impeval.train import Adam, JsonlLog, TrainingError, batch_order, laplace_ramp, train

from conftest import tiny_cfg, tiny_corpus


def adam_reference(x0, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = list(x0), [0.0] * len(x0), [0.0] * len(x0)
    for t, g in enumerate(grads, 1):
        for i in range(len(x)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            x[i] -= lr * (m[i] / (1 - b1 ** t)) / ((v[i] / (1 - b2 ** t)) ** 0.5 + eps)
    return x


def test_adam_matches_scalar_reference(rng):
    a, b = Parameter(rng.normal(size=(2, 2))), Parameter(rng.normal(size=3))
    x0 = list(a.data.ravel()) + list(b.data.ravel())
    opt = Adam([a, b], lr=0.01)
    grads = []
    for _ in range(5):
        a.grad, b.grad = rng.normal(size=(2, 2)), rng.normal(size=3)
        grads.append(list(a.grad.ravel()) + list(b.grad.ravel()))
        opt.step()
    got = list(a.data.ravel()) + list(b.data.ravel())
    np.testing.assert_allclose(got, adam_reference(x0, grads, 0.01), rtol=1e-12)


def test_adam_treats_missing_grad_as_zero(rng):
    p = Parameter(np.ones(2))
    opt = Adam([p], lr=0.1)
    p.grad = np.ones(2)
    opt.step()
    after_one = p.data.copy()
    p.grad = None
    opt.step()
    # momentum keeps moving the parameter even without a fresh gradient
    assert np.all(p.data < after_one)


def test_training_is_deterministic(tmp_path):
    samples = tiny_corpus(10)
    paths = []
    for k in range(2):
        model, losses = train(tiny_cfg(steps=4), samples)
        paths.append(tmp_path / f"m{k}.ckpt")
        save_checkpoint(paths[-1], model)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_different_seeds_differ():
    samples = tiny_corpus(10)
    _, a = train(tiny_cfg(steps=2, seed=1), samples)
    _, b = train(tiny_cfg(steps=2, seed=2), samples)
    assert a != b


def test_batch_size_zero_is_config_error():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_empty_dataset_errors():
    with pytest.raises(DatasetError):
        train(tiny_cfg(), [])


def test_resolution_mismatch_errors():
    with pytest.raises(DatasetError):
        train(tiny_cfg(heat_resolution=16, base_tile_size=16), tiny_corpus(2))


def test_nan_input_aborts_with_step_index():
    samples = tiny_corpus(8)
    samples[5].image = samples[5].image.copy()
    samples[5].image[0, 0] = np.nan
    cfg = tiny_cfg(steps=8, batch_size=1)
    order = batch_order(8, 1, 8, cfg.seed)
    bad_step = int(np.nonzero(order[:, 0] == 5)[0][0]) + 1
    with pytest.raises(TrainingError, match=f"step {bad_step}"):
        train(cfg, samples)


def test_batch_order_walks_permuted_epochs():
    order = batch_order(10, 3, 7, 11)
    assert order.shape == (7, 3)
    flat = order.ravel()
    assert sorted(flat[:10]) == list(range(10))
    assert sorted(flat[10:20]) == list(range(10))
    assert np.array_equal(order, batch_order(10, 3, 7, 11))


def test_laplace_ramp():
    cfg = tiny_cfg(laplace_weight=0.5, laplace_warmup_steps=4)
    assert [laplace_ramp(cfg, s) for s in (1, 3, 5, 9)] == [0.0, 0.25, 0.5, 0.5]
    assert laplace_ramp(tiny_cfg(laplace_weight=0.5), 1) == 0.5


def test_log_records(tmp_path):
    seen = []
    _, losses = train(tiny_cfg(steps=5, log_every=2), tiny_corpus(6), log=seen.append)
    assert [r["step"] for r in seen] == [1, 2, 4, 5]
    assert seen[-1]["loss"] == losses[-1]
    path = tmp_path / "log.jsonl"
    sink = JsonlLog(path)
    for r in seen:
        sink(r)
    sink.close()
    assert [json.loads(line) for line in io.StringIO(path.read_text())] == seen
