"""Full evaluator: stub encoder -> global/local mapper branches -> fusion -> scorer."""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .fusion import BranchOutput, FusedHeatmap, fuse
from .mapper import Mapper
from .nn import MLP, Module, Parameter
from .scorer import Scorer
from .tiling import assemble, plan_tiles, split


@dataclass
class PreparedImage:
    """Tiled, patchified input for one image."""
    layout: object
    patches: np.ndarray  # (1 + N, g*g, patch*patch + 1): thumbnail first, then tiles row-major
    shape: tuple


@dataclass
class EncodedSample:
    F_g: Tensor        # (g*g, d)
    F_i: list          # N x (g*g, d)
    T_g: Tensor        # (d,)
    T_i: list          # N x (d,)
    T_score: Tensor    # (d,)


@dataclass
class ModelOutput:
    local: object      # BranchOutput (B, R, R) or None
    global_: object    # BranchOutput or None
    fused: FusedHeatmap
    s_token: object    # (B,) Tensor or None
    s_map: object
    s: Tensor


def patchify(images, grid):
    """(M, s, s) -> (M, grid*grid, patch*patch), patches row-major."""
    m, s, _ = images.shape
    p = s // grid
    x = images.reshape(m, grid, p, grid, p).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(x.reshape(m, grid * grid, p * p))


def view_patches(views, grid, level):
    """Patches centred on the image-level brightness ``level``, which is also
    appended as a last column: (M, s, s) -> (M, grid*grid, patch*patch + 1)."""
    x = patchify(views - level, grid)
    ctx = np.full(x.shape[:2] + (1,), level)
    return np.concatenate([x, ctx], axis=2)


def prepare_image(image, cfg):
    layout = plan_tiles(image.shape[0], image.shape[1], cfg.tiling_policy())
    thumb, tiles = split(image, layout, "area")
    stack = np.stack([thumb] + tiles)
    return PreparedImage(layout, view_patches(stack, cfg.feature_grid, float(thumb.mean())), image.shape)


class StubEncoder(Module):
    """Shared patch MLP plus learned position/query embeddings.

    Every view (thumbnail or tile) is centred on the whole image's mean
    brightness, standing in for the global context a full backbone provides.
    """

    def __init__(self, tile_size, grid, d, slots, rng):
        patch = tile_size // grid
        self.patch_embed = MLP(patch * patch + 1, d, d, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(grid * grid, d)))
        self.global_query = Parameter(rng.normal(0.0, 0.02, size=d))
        self.score_query = Parameter(rng.normal(0.0, 0.02, size=d))
        self.slot_queries = Parameter(rng.normal(0.0, 0.02, size=(slots, d)))
        self.grid = grid
        self.d = d

    def features(self, patches):
        """(M, g*g, P) constant patches -> (M, g*g, d)."""
        return self.patch_embed(Tensor(patches)) + self.pos


class ImplausibilityModel(Module):
    def __init__(self, cfg):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        mcfg = cfg.mapper_config()
        self.encoder = StubEncoder(cfg.base_tile_size, cfg.feature_grid, cfg.width,
                                   cfg.max_tiles, rng)
        self.local_mapper = Mapper(mcfg, rng, out_resolution=cfg.tile_resolution)
        self.global_mapper = Mapper(mcfg, rng, out_resolution=cfg.heat_resolution)
        for m in (self.local_mapper, self.global_mapper):
            m.head.bias.data[:] = (-2.0, -1.0)
        self.scorer = Scorer(cfg.width, cfg.heat_resolution, rng, hidden=cfg.scorer_hidden)
        self.fusion_logit = Parameter(np.zeros(()))
        self.assign_names()

    def active_parameters(self):
        """Parameters that receive gradient under the configured ablation switches."""
        skip = set()
        c = self.cfg
        if c.branch == "global":
            skip.add("local_mapper.")
            skip.add("encoder.slot_queries")
        if c.branch == "local":
            skip.add("global_mapper.")
            skip.add("encoder.global_query")
        if c.branch != "both" or c.fusion != "learned-scalar":
            skip.add("fusion_logit")
        if c.scorer == "token":
            skip.update(("scorer.conv", "scorer.map_ffn", "scorer.calib_logit"))
        if c.scorer == "heatmap":
            skip.update(("scorer.token_ffn", "scorer.calib_logit", "encoder.score_query"))
        return [p for n, p in self.named_parameters() if not any(n.startswith(s) for s in skip)]

    def encode(self, batch):
        """Return (F_g (B,g²,d), pooled_g (B,d), F_loc (sumN,g²,d) or None, pooled_loc)."""
        b = len(batch)
        use_local = self.cfg.branch != "global"
        if use_local:
            patches = np.concatenate([p.patches[:1] for p in batch] + [p.patches[1:] for p in batch])
        else:
            patches = np.concatenate([p.patches[:1] for p in batch])
        feats = self.encoder.features(patches)
        pooled = ag.mean(feats, axis=1)
        f_g = feats[:b]
        if not use_local:
            return f_g, pooled[:b], None, None
        return f_g, pooled[:b], feats[b:], pooled[b:]

    def forward(self, batch, gt_heat=None):
        cfg = self.cfg
        b = len(batch)
        d = cfg.width
        big = cfg.heat_resolution
        f_g, pooled_g, f_loc, pooled_loc = self.encode(batch)

        glob = loc = None
        if cfg.branch in ("global", "both"):
            t_g = (pooled_g + self.encoder.global_query).reshape(b, 1, d)
            heat, ls = self.global_mapper(t_g, f_g)
            glob = BranchOutput(heat, ls)
        if cfg.branch in ("local", "both"):
            slots = np.concatenate([np.arange(p.layout.n_tiles) % cfg.max_tiles for p in batch])
            t_loc = pooled_loc + self.encoder.slot_queries[slots]
            t_loc = t_loc.reshape(t_loc.shape[0], 1, d)
            heat_t, ls_t = self.local_mapper(t_loc, f_loc)
            heats, sigmas = [], []
            off = 0
            for p in batch:
                n = p.layout.n_tiles
                heats.append(assemble(heat_t[off:off + n], p.layout, (big, big)))
                sigmas.append(assemble(ls_t[off:off + n], p.layout, (big, big)))
                off += n
            loc = BranchOutput(ag.stack(heats), ag.stack(sigmas))

        if loc is not None and glob is not None:
            fused = fuse(loc, glob, cfg.fusion, self.fusion_logit)
        else:
            only = loc if loc is not None else glob
            fused = FusedHeatmap(only.heat, Tensor(np.full(only.heat.shape, 1.0 if loc is not None else 0.0)))

        s_token = s_map = None
        if cfg.scorer in ("token", "both"):
            t_score = pooled_g + self.encoder.score_query
            s_token = self.scorer.score_from_token(t_score)
        if cfg.scorer in ("heatmap", "both"):
            if cfg.use_gt_heatmap_for_scorer:
                if gt_heat is None:
                    raise ShapeError("use_gt_heatmap_for_scorer needs ground-truth heatmaps")
                heat_in = Tensor(gt_heat)
            else:
                heat_in = fused.heat
            s_map = self.scorer.score_from_heatmap(heat_in)
        if s_token is not None and s_map is not None:
            s = self.scorer.calibrate(s_token, s_map)
        else:
            s = s_token if s_token is not None else s_map
        return ModelOutput(loc, glob, fused, s_token, s_map, s)


def stub_encode(image, model, prepared=None):
    """Encode one image into its global/local features and query tokens."""
    cfg = model.cfg
    prepared = prepared or prepare_image(image, cfg)
    if tuple(prepared.shape) != tuple(image.shape):
        raise ShapeError(f"prepared layout is for {prepared.shape}, image is {image.shape}")
    feats = model.encoder.features(prepared.patches)
    pooled = ag.mean(feats, axis=1)
    n = prepared.layout.n_tiles
    enc = model.encoder
    f_i = [feats[1 + i] for i in range(n)]
    t_i = [pooled[1 + i] + enc.slot_queries[i % cfg.max_tiles] for i in range(n)]
    return EncodedSample(feats[0], f_i, pooled[0] + enc.global_query, t_i,
                         pooled[0] + enc.score_query)
