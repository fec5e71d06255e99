"""Cluster inspection media: PNG contact sheets and optional animated GIFs.

One sheet per root-cause cluster shows up to a configurable number of
member images in a grid, each tile annotated with the image id and key
generator parameters when a manifest is available.  The optional GIF
cycles through all members at a configurable pace (default 100 images per
minute).  Reports only read pipeline artifacts, never mutate them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from PIL import Image, ImageDraw

from .clustering import RootCauseClusters
from .synth import Manifest, read_pgm

logger = logging.getLogger(__name__)

_TILE_SCALE = 4
_CAPTION_HEIGHT = 22
_MARGIN = 4


@dataclass
class ReportSummary:
    sheets: list[Path]
    gifs: list[Path]
    missing: list[str]


def _load_tile(path: Path) -> Image.Image | None:
    try:
        pixels = read_pgm(path)
    except (OSError, ValueError):
        return None
    img = Image.fromarray(pixels, mode="L")
    return img.resize((img.width * _TILE_SCALE, img.height * _TILE_SCALE), Image.NEAREST)


def _caption(image_id: str, manifest: Manifest | None) -> str:
    if manifest is None:
        return image_id
    try:
        row = manifest.row(image_id)
    except KeyError:
        return image_id
    return f"{image_id} a={row.params.angle:.0f} o={row.params.occlusion:.2f} b={row.params.brightness:.2f}"


def contact_sheet(
    entries: Sequence[tuple[str, Path]],
    out_path: Path,
    columns: int = 5,
    manifest: Manifest | None = None,
) -> list[str]:
    """Render one grid sheet; returns ids whose image files were unreadable."""
    tiles: list[tuple[str, Image.Image]] = []
    missing = []
    for image_id, path in entries:
        tile = _load_tile(path)
        if tile is None:
            missing.append(image_id)
        else:
            tiles.append((image_id, tile))
    if not tiles:
        return missing
    tile_w = max(t.width for _, t in tiles)
    tile_h = max(t.height for _, t in tiles)
    cols = min(columns, len(tiles))
    rows = (len(tiles) + cols - 1) // cols
    cell_h = tile_h + _CAPTION_HEIGHT
    sheet = Image.new(
        "L",
        (cols * (tile_w + _MARGIN) + _MARGIN, rows * (cell_h + _MARGIN) + _MARGIN),
        color=32,
    )
    draw = ImageDraw.Draw(sheet)
    for idx, (image_id, tile) in enumerate(tiles):
        r, c = divmod(idx, cols)
        x = _MARGIN + c * (tile_w + _MARGIN)
        y = _MARGIN + r * (cell_h + _MARGIN)
        sheet.paste(tile, (x, y))
        draw.text((x, y + tile_h + 2), _caption(image_id, manifest), fill=255)
    sheet.save(out_path)
    return missing


def animated_gif(
    entries: Sequence[tuple[str, Path]],
    out_path: Path,
    images_per_minute: float = 100.0,
) -> list[str]:
    """Cycle the cluster members; at the default pace 100 frames last a minute."""
    if images_per_minute <= 0:
        raise ValueError("images_per_minute must be positive")
    frames = []
    missing = []
    for image_id, path in entries:
        tile = _load_tile(path)
        if tile is None:
            missing.append(image_id)
        else:
            frames.append(tile)
    if not frames:
        return missing
    duration_ms = int(round(60_000.0 / images_per_minute))
    frames[0].save(
        out_path,
        save_all=True,
        append_images=frames[1:],
        duration=duration_ms,
        loop=0,
    )
    return missing


def cluster_reports(
    clusters: RootCauseClusters,
    image_paths: Mapping[str, Path],
    out_dir,
    images_per_sheet: int = 25,
    columns: int = 5,
    gif: bool = False,
    images_per_minute: float = 100.0,
    manifest: Manifest | None = None,
) -> ReportSummary:
    """One contact sheet (and optionally one GIF) per cluster.

    Missing image files are reported, not fatal: the sheet is produced for
    whatever members resolve.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sheets, gifs, missing = [], [], []
    for c in range(clusters.k):
        members = clusters.members(c)
        entries = [
            (i, Path(image_paths[i])) for i in members if i in image_paths
        ]
        absent = [i for i in members if i not in image_paths]
        missing.extend(absent)
        sheet_path = out_dir / f"cluster_{c:03d}.png"
        missing.extend(
            contact_sheet(entries[:images_per_sheet], sheet_path, columns, manifest)
        )
        if sheet_path.exists():
            sheets.append(sheet_path)
        if gif:
            gif_path = out_dir / f"cluster_{c:03d}.gif"
            missing.extend(animated_gif(entries, gif_path, images_per_minute))
            if gif_path.exists():
                gifs.append(gif_path)
    if missing:
        logger.warning("%d cluster members had no readable image file", len(missing))
    return ReportSummary(sheets, gifs, sorted(set(missing)))
