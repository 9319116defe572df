"""Adaptive tiling: grid planning, image splitting and local-heatmap assembly."""

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .nn import ConfigError


@dataclass(frozen=True)
class TilingPolicy:
    base_tile_size: int = 64
    max_tiles: int = 4

    def __post_init__(self):
        if self.base_tile_size < 8:
            raise ConfigError(f"base_tile_size must be >= 8, got {self.base_tile_size}")
        if self.max_tiles < 1:
            raise ConfigError(f"max_tiles must be >= 1, got {self.max_tiles}")


@dataclass(frozen=True)
class TileLayout:
    rows: int
    cols: int
    tile_size: tuple  # (height, width) of each tile after resize
    source_size: tuple  # (h, w) of the source image

    @property
    def n_tiles(self):
        return self.rows * self.cols


def target_tile_count(h, w, policy):
    n = math.floor(h * w / policy.base_tile_size ** 2 + 0.5)
    return min(max(n, 1), policy.max_tiles)


def plan_tiles(h, w, policy):
    """Pick a rows x cols grid for an h x w image.

    The tile count target is area / s^2 (rounded, clamped to [1, max_tiles]);
    grids holding target-1 or target tiles compete on aspect distortion
    |log(tile_w / tile_h)|, ties going to more tiles, then fewer rows.
    """
    h = max(int(h), 1)
    w = max(int(w), 1)
    target = target_tile_count(h, w, policy)
    best = None
    for n in range(max(1, target - 1), target + 1):
        for rows in range(1, n + 1):
            if n % rows:
                continue
            cols = n // rows
            distortion = abs(math.log((w / cols) / (h / rows)))
            key = (distortion, -n, rows)
            if best is None or key < best[0]:
                best = (key, rows, cols)
    s = policy.base_tile_size
    return TileLayout(best[1], best[2], (s, s), (h, w))


@functools.lru_cache(maxsize=None)
def resize_matrix(n_in, n_out, method="bilinear"):
    """(n_out, n_in) linear map resampling a 1-D signal, half-pixel centers."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    if method == "nearest":
        src = np.minimum(np.floor((np.arange(n_out) + 0.5) * scale).astype(int), n_in - 1)
        m[np.arange(n_out), src] = 1.0
    elif method == "bilinear":
        pos = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = pos - lo
        np.add.at(m, (np.arange(n_out), lo), 1.0 - frac)
        np.add.at(m, (np.arange(n_out), hi), frac)
    elif method == "area":
        # box-filter: fraction of each output cell covered by each input cell
        edges_out = np.arange(n_out + 1) * scale
        for i in range(n_out):
            a, b = edges_out[i], edges_out[i + 1]
            for j in range(int(math.floor(a)), min(int(math.ceil(b)), n_in)):
                overlap = min(b, j + 1) - max(a, j)
                if overlap > 0:
                    m[i, j] = overlap / scale
    else:
        raise ConfigError(f"unknown resize method {method!r}")
    m.setflags(write=False)
    return m


def resize(img, size, method="bilinear"):
    """Separable resize of a (..., h, w) array to (..., H, W)."""
    h, w = img.shape[-2:]
    ry = resize_matrix(h, size[0], method)
    rx = resize_matrix(w, size[1], method)
    return ry @ img @ rx.T


def resize_tensor(x, size, method="bilinear"):
    h, w = x.shape[-2:]
    if (h, w) == tuple(size):
        return x
    ry = resize_matrix(h, size[0], method)
    rx = resize_matrix(w, size[1], method)
    return ag.matmul(ag.matmul(Tensor(ry), x), Tensor(np.ascontiguousarray(rx.T)))


def tile_bounds(n, parts):
    """Start/stop offsets of `parts` equal chunks; the remainder goes to the last."""
    step = n // parts
    starts = [i * step for i in range(parts)]
    stops = starts[1:] + [n]
    return list(zip(starts, stops))


def split(image, layout, method="bilinear"):
    """Return (thumbnail, tiles) with every piece resized to the tile size."""
    h, w = image.shape[:2]
    if (h, w) != tuple(layout.source_size):
        raise ShapeError(f"image size {(h, w)} does not match layout source {layout.source_size}")
    if layout.rows > h or layout.cols > w:
        raise ShapeError(f"layout {layout.rows}x{layout.cols} has more cells than pixels {(h, w)}")
    size = layout.tile_size
    thumb = resize(image, size, method)
    tiles = []
    for y0, y1 in tile_bounds(h, layout.rows):
        for x0, x1 in tile_bounds(w, layout.cols):
            tiles.append(resize(image[y0:y1, x0:x1], size, method))
    return thumb, tiles


def unsplit(tiles, layout, method="nearest"):
    """Inverse of split: resize tiles back to their source rectangles."""
    h, w = layout.source_size
    out = np.zeros((h, w))
    k = 0
    for y0, y1 in tile_bounds(h, layout.rows):
        for x0, x1 in tile_bounds(w, layout.cols):
            out[y0:y1, x0:x1] = resize(tiles[k], (y1 - y0, x1 - x0), method)
            k += 1
    return out


def assemble(tiles, layout, out_size):
    """Concatenate N heat tiles row-major and resize to out_size.

    ``tiles`` is a Tensor (N, r, r) (differentiable) or a list of arrays.
    """
    n = layout.n_tiles
    if isinstance(tiles, Tensor):
        if tiles.shape[0] != n:
            raise ShapeError(f"got {tiles.shape[0]} tiles for a {layout.rows}x{layout.cols} layout")
        r = tiles.shape[1]
        grid = ag.transpose(tiles.reshape(layout.rows, layout.cols, r, r), (0, 2, 1, 3))
        grid = grid.reshape(layout.rows * r, layout.cols * r)
        return resize_tensor(grid, out_size)
    if len(tiles) != n:
        raise ShapeError(f"got {len(tiles)} tiles for a {layout.rows}x{layout.cols} layout")
    rows = [np.concatenate(tiles[i * layout.cols:(i + 1) * layout.cols], axis=1)
            for i in range(layout.rows)]
    grid = np.concatenate(rows, axis=0)
    if grid.shape == tuple(out_size):
        return grid
    return resize(grid, out_size)
