"""Synthetic data generators: a two-cluster LLP set and glyph grids.

The glyph grids stand in for handwritten-digit grids: each 24x24 image is a
3x3 arrangement of 8x8 tiles, each tile a digit 0-9 rendered from a fixed
5x7 bitmap font at one of two sizes (large fills the tile, small is a 6x4
downscale placed top-left), with 2% salt-and-pepper pixel flips.  Targets
are the exact (digit, size) group counts, which always sum to 9.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..tensor import Tensor
from ..training import PrivacyParams, laplace_noise

GRID_TILES = 3  # 3x3 tiles per grid
TILE = 8
GRID_SIDE = GRID_TILES * TILE  # 24
NUM_DIGITS = 10
NUM_SIZES = 2  # 0 = large, 1 = small
PIXEL_FLIP_P = 0.02

# 5x7 digit font, one string per row, '#' = ink.
_FONT = {
    0: (" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "),
    1: ("  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "),
    2: (" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"),
    3: ("#####", "    #", "   # ", "  ## ", "    #", "#   #", " ### "),
    4: ("   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "),
    5: ("#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "),
    6: ("  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "),
    7: ("#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "),
    8: (" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "),
    9: (" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "),
}


def _font_bitmap(digit: int) -> np.ndarray:
    rows = _FONT[digit]
    return np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in rows])


def _resize_area(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Box-filter resize: each output pixel averages its covered region."""
    in_h, in_w = img.shape
    out = np.zeros((out_h, out_w))
    for r in range(out_h):
        r0, r1 = r * in_h / out_h, (r + 1) * in_h / out_h
        for c in range(out_w):
            c0, c1 = c * in_w / out_w, (c + 1) * in_w / out_w
            acc = 0.0
            for rr in range(int(np.floor(r0)), int(np.ceil(r1))):
                for cc in range(int(np.floor(c0)), int(np.ceil(c1))):
                    overlap = (min(rr + 1, r1) - max(rr, r0)) * (min(cc + 1, c1) - max(cc, c0))
                    acc += overlap * img[rr, cc]
            out[r, c] = acc / ((r1 - r0) * (c1 - c0))
    return out


_TILE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def glyph_tile(digit: int, size: int) -> np.ndarray:
    """Noise-free 8x8 prototype tile for (digit, size)."""
    key = (digit, size)
    cached = _TILE_CACHE.get(key)
    if cached is not None:
        return cached
    bitmap = _font_bitmap(digit)
    tile = np.zeros((TILE, TILE))
    if size == 0:
        tile = _resize_area(bitmap, TILE, TILE)
    else:
        small = _resize_area(bitmap, 6, 4)
        tile[:6, :4] = small
    _TILE_CACHE[key] = tile
    return tile


@dataclass(frozen=True)
class GlyphGridSample:
    image: Tensor  # [24, 24]
    target: Tensor  # [10, 2] grouped counts, sums to 9
    tile_digits: np.ndarray  # [9], row-major tile order; evaluation only
    tile_sizes: np.ndarray  # [9]


def gen_glyph_grids(n: int, seed: int) -> list[GlyphGridSample]:
    if n < 1:
        raise ValueError(f"need at least one grid, got {n}")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        digits = rng.integers(0, NUM_DIGITS, size=GRID_TILES * GRID_TILES)
        sizes = rng.integers(0, NUM_SIZES, size=GRID_TILES * GRID_TILES)
        image = np.zeros((GRID_SIDE, GRID_SIDE))
        for t in range(GRID_TILES * GRID_TILES):
            r, c = divmod(t, GRID_TILES)
            image[r * TILE : (r + 1) * TILE, c * TILE : (c + 1) * TILE] = glyph_tile(
                int(digits[t]), int(sizes[t])
            )
        flips = rng.random(image.shape) < PIXEL_FLIP_P
        image = np.where(flips, 1.0 - image, image)
        target = np.zeros((NUM_DIGITS, NUM_SIZES))
        np.add.at(target, (digits, sizes), 1.0)
        samples.append(
            GlyphGridSample(
                Tensor(image.astype(np.float32)),
                Tensor(target.astype(np.float32)),
                digits.astype(np.int64),
                sizes.astype(np.int64),
            )
        )
    return samples


def grid_tiles(samples: list[GlyphGridSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten grids into (tiles [n*9, 8, 8], digits [n*9], sizes [n*9])."""
    tiles, digits, sizes = [], [], []
    for s in samples:
        img = s.image.data
        for t in range(GRID_TILES * GRID_TILES):
            r, c = divmod(t, GRID_TILES)
            tiles.append(img[r * TILE : (r + 1) * TILE, c * TILE : (c + 1) * TILE])
        digits.append(s.tile_digits)
        sizes.append(s.tile_sizes)
    return np.stack(tiles), np.concatenate(digits), np.concatenate(sizes)


# ---------------------------------------------------------------------------
# LLP dataset and bagging
# ---------------------------------------------------------------------------


def gen_llp_dataset(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two unit-covariance Gaussian clusters at (-1,-1) and (+1,+1).

    Returns float32 features [n, 2] and int64 labels [n].
    """
    if n < 2:
        raise ValueError(f"need at least two instances, got {n}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n).astype(np.int64)
    means = np.where(labels[:, None] == 0, -1.0, 1.0)
    features = (means + rng.standard_normal((n, 2))).astype(np.float32)
    return features, labels


@dataclass(frozen=True)
class BagSpec:
    bag_size: int
    num_bags: int

    def __post_init__(self):
        if self.bag_size < 1:
            raise ValueError(f"bag size must be >= 1, got {self.bag_size}")
        if self.num_bags < 1:
            raise ValueError(f"need at least one bag, got {self.num_bags}")


def make_bags(features: np.ndarray, labels: np.ndarray, spec: BagSpec,
              privacy: Optional[PrivacyParams], rng: np.random.Generator,
              num_classes: int = 2) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffle and split rows into bags with per-class count targets.

    Individual labels are consumed here and never leave: the output pairs
    each bag's feature block with its (optionally Laplace-noised) counts.
    """
    n = len(features)
    if spec.bag_size * spec.num_bags > n:
        raise ValueError(
            f"{spec.num_bags} bags of {spec.bag_size} exceed dataset size {n}"
        )
    perm = rng.permutation(n)
    bags = []
    for b in range(spec.num_bags):
        idx = perm[b * spec.bag_size : (b + 1) * spec.bag_size]
        counts = np.bincount(labels[idx], minlength=num_classes).astype(np.float32)
        if privacy is not None:
            counts = laplace_noise(Tensor(counts), privacy, rng).data
        bags.append((features[idx], counts))
    return bags
