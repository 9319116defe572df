"""Binary checkpoint format.

Layout (all integers little-endian):
    b"IMPV" | u32 version | u32 config_len | config JSON (utf-8) | u32 n_records
    then per record: u32 name_len | name (utf-8) | u32 rank | rank x u32 extents
                     | prod(extents) x f64 values (little-endian, row-major)
"""

import json
import struct

import numpy as np

from .config import TrainConfig
from .nn import ConfigError

MAGIC = b"IMPV"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(cfg, named_arrays):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = cfg.to_json().encode("utf-8")
    parts += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(named_arrays))]
    for name, arr in named_arrays:
        arr = np.asarray(arr, dtype=np.float64)
        nb = name.encode("utf-8")
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim)]
        parts += [struct.pack(f"<{arr.ndim}I", *arr.shape)]
        parts.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf):
    """Return (TrainConfig, [(name, array), ...])."""
    mv = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(mv):
            raise CheckpointError("truncated checkpoint")
        out = mv[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (clen,) = struct.unpack("<I", take(4))
    cfg = TrainConfig.from_dict(json.loads(bytes(take(clen)).decode("utf-8")))
    (n,) = struct.unpack("<I", take(4))
    records = []
    for _ in range(n):
        (nl,) = struct.unpack("<I", take(4))
        name = bytes(take(nl)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        records.append((name, arr))
    if pos != len(mv):
        raise CheckpointError("trailing bytes after last tensor record")
    return cfg, records


def save_checkpoint(path, model):
    data = encode_checkpoint(model.cfg, [(n, p.data) for n, p in model.named_parameters()])
    with open(path, "wb") as f:
        f.write(data)


def load_checkpoint(path, config=None):
    """Rebuild the model stored at ``path``. If ``config`` is given it must
    equal the stored configuration."""
    from .model import ImplausibilityModel

    with open(path, "rb") as f:
        cfg, records = decode_checkpoint(f.read())
    if config is not None and config.to_dict() != cfg.to_dict():
        a, b = config.to_dict(), cfg.to_dict()
        diff = sorted(k for k in a if a[k] != b[k])
        raise ConfigError(f"checkpoint config conflicts with requested config on: {', '.join(diff)}")
    model = ImplausibilityModel(cfg)
    params = dict(model.named_parameters())
    if [n for n, _ in records] != list(params):
        raise CheckpointError("checkpoint tensor names do not match the model registry")
    for name, arr in records:
        if params[name].shape != arr.shape:
            raise CheckpointError(f"{name}: stored shape {arr.shape} != model shape {params[name].shape}")
        params[name].data = arr.copy()
    return model
