"""Key-pose crops assembled into a bordered grid image."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import Corrupt, NoOverlap, TileCountMismatch
from .pose_data import BBox, clamp_bbox

TILE_SIZE = 112
BORDER = 3
ROWS, COLS = 2, 4


@dataclass(frozen=True, eq=False)
class Tile:
    image: np.ndarray  # (S, S) uint8
    frame_index: Optional[int] = None
    bbox: Optional[BBox] = None


@dataclass(eq=False)
class ActionGrid:
    image: np.ndarray  # (H, W) uint8
    label: Optional[int] = None
    provenance: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]


def grid_shape(rows: int = ROWS, cols: int = COLS, tile: int = TILE_SIZE, border: int = BORDER) -> Tuple[int, int]:
    """(width, height) in pixels."""
    return cols * tile + (cols + 1) * border, rows * tile + (rows + 1) * border


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centre bilinear resampling with edge clamping; returns float64."""
    src = np.asarray(img, dtype=np.float64)
    in_h, in_w = src.shape

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, wy = axis(in_h, out_h)
    x0, x1, wx = axis(in_w, out_w)
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy)[:, None] + bot * wy[:, None]


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def extract_tile(frame: np.ndarray, bbox: Sequence[float], size: int = TILE_SIZE,
                 frame_index: Optional[int] = None, joints: Optional[np.ndarray] = None) -> Tile:
    """Clamp ``bbox`` to the frame, crop whole pixels, resize to ``size`` x ``size``.

    If ``joints`` (17, 2+) are given, they are drawn as 3x3 white markers.
    """
    frame = np.asarray(frame)
    h, w = frame.shape
    box = clamp_bbox(bbox, w, h)
    if box is None:
        raise NoOverlap(f"bbox {tuple(bbox)} does not overlap a {w}x{h} frame")
    l, t, bw, bh = box
    x0, y0 = int(math.floor(l)), int(math.floor(t))
    x1, y1 = min(w, int(math.ceil(l + bw))), min(h, int(math.ceil(t + bh)))
    crop = frame[y0:y1, x0:x1]
    img = to_uint8(resize_bilinear(crop, size, size))
    if joints is not None:
        sx, sy = size / (x1 - x0), size / (y1 - y0)
        for x, y in np.asarray(joints)[:, :2]:
            u, v = int((x - x0) * sx), int((y - y0) * sy)
            img[max(v - 1, 0):max(v + 2, 0), max(u - 1, 0):max(u + 2, 0)] = 255
    return Tile(img, frame_index, tuple(float(v) for v in bbox))


def pad_tiles(tiles: Sequence[Tile], count: int) -> Tuple[List[Tile], bool]:
    """Repeat the last tile until there are ``count``; reports whether padding happened."""
    tiles = list(tiles)
    if not tiles:
        raise TileCountMismatch("no tiles to pad")
    padded = len(tiles) < count
    while len(tiles) < count:
        tiles.append(tiles[-1])
    return tiles, padded


def tile_origin(index: int, cols: int = COLS, tile: int = TILE_SIZE, border: int = BORDER) -> Tuple[int, int]:
    """(row, col) pixel offset of tile ``index`` in row-major order."""
    r, c = divmod(index, cols)
    return border + r * (tile + border), border + c * (tile + border)


def assemble_grid(tiles: Sequence[Tile], rows: int = ROWS, cols: int = COLS, border: int = BORDER,
                  label: Optional[int] = None, provenance: Optional[dict] = None) -> ActionGrid:
    if len(tiles) != rows * cols:
        raise TileCountMismatch(f"{len(tiles)} tiles for a {cols}x{rows} grid")
    size = tiles[0].image.shape[0]
    width, height = grid_shape(rows, cols, size, border)
    img = np.zeros((height, width), dtype=np.uint8)
    for i, tile in enumerate(tiles):
        if tile.image.shape != (size, size):
            raise TileCountMismatch(f"tile {i} is {tile.image.shape}, expected {(size, size)}")
        r, c = tile_origin(i, cols, size, border)
        img[r:r + size, c:c + size] = tile.image
    prov = dict(provenance or {})
    prov.setdefault("tiles", [{"frame": t.frame_index, "bbox": list(t.bbox) if t.bbox else None} for t in tiles])
    prov.update({"rows": rows, "cols": cols, "tile_size": size, "border": border})
    return ActionGrid(img, label, prov)


def disassemble_grid(grid: ActionGrid, rows: int = ROWS, cols: int = COLS, tile: int = TILE_SIZE,
                     border: int = BORDER) -> List[np.ndarray]:
    out = []
    for i in range(rows * cols):
        r, c = tile_origin(i, cols, tile, border)
        out.append(grid.image[r:r + tile, c:c + tile].copy())
    return out


def border_mask(rows: int = ROWS, cols: int = COLS, tile: int = TILE_SIZE, border: int = BORDER) -> np.ndarray:
    """True on every pixel that belongs to a border band."""
    width, height = grid_shape(rows, cols, tile, border)
    mask = np.ones((height, width), dtype=bool)
    for i in range(rows * cols):
        r, c = tile_origin(i, cols, tile, border)
        mask[r:r + tile, c:c + tile] = False
    return mask


def write_grid(grid: ActionGrid, path) -> None:
    """Write ``<path>`` as binary PGM plus a ``.json`` provenance sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid.image, mode="L").save(path, format="PPM")
    side = dict(grid.provenance)
    side["label"] = grid.label
    path.with_suffix(".json").write_text(json.dumps(side, indent=1))


def read_grid(path) -> ActionGrid:
    path = Path(path)
    try:
        with Image.open(path) as im:
            img = np.asarray(im.convert("L") if im.mode != "L" else im, dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise Corrupt(f"{path}: {exc}") from exc
    side = path.with_suffix(".json")
    prov = json.loads(side.read_text()) if side.exists() else {}
    return ActionGrid(img, prov.pop("label", None), prov)
