"""Render explanation records as annotated images.

Draws one-pixel rectangles at the recorded box coordinates: the test
image gets every feature's box, each matched neighbor gets its own, and a
side-by-side composite stitches them together. Colors are fixed per rank
so repeated renders are comparable.
"""

import os

import numpy as np
from PIL import Image, ImageDraw

from .errors import DataError

RANK_COLORS = (
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (255, 225, 25),
)


def rank_color(rank):
    return RANK_COLORS[(rank - 1) % len(RANK_COLORS)]


def _load_rgb(path, size_hw):
    height, width = size_hw
    try:
        with Image.open(path) as pil:
            pil = pil.convert("RGB")
            if pil.size != (width, height):
                pil = pil.resize((width, height), Image.Resampling.BILINEAR)
            return pil.copy()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def draw_box(image, box_fields, color):
    """Outline the half-open box [top,bottom) x [left,right) with a
    one-pixel border whose outer edge sits exactly on those rows/cols.

    Edges are drawn as four explicit lines: ImageDraw.rectangle paints a
    stray extra pixel on degenerate (1-pixel) boxes.
    """
    top, left, bottom, right = box_fields
    draw = ImageDraw.Draw(image)
    draw.line([(left, top), (right - 1, top)], fill=color)
    draw.line([(left, bottom - 1), (right - 1, bottom - 1)], fill=color)
    draw.line([(left, top), (left, bottom - 1)], fill=color)
    draw.line([(right - 1, top), (right - 1, bottom - 1)], fill=color)
    return image


def render_explanation(record, out_dir, input_size_hw):
    """Write overlay, per-neighbor and composite images; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(record.test_image_path))[0] or "explanation"

    overlay = _load_rgb(record.test_image_path, input_size_hw)
    for feature in record.features:
        if feature.get("test_box"):
            draw_box(overlay, feature["test_box"], rank_color(feature["rank"]))
    overlay_path = os.path.join(out_dir, f"{stem}.overlay.png")
    overlay.save(overlay_path)

    panels = [overlay]
    neighbor_paths = []
    for feature in record.features:
        neighbor = _load_rgb(feature["neighbor_image_path"], input_size_hw)
        if feature.get("neighbor_box"):
            draw_box(neighbor, feature["neighbor_box"], rank_color(feature["rank"]))
        neighbor_path = os.path.join(
            out_dir, f"{stem}.neighbor-{feature['rank']}.png")
        neighbor.save(neighbor_path)
        neighbor_paths.append(neighbor_path)
        panels.append(neighbor)

    gap = 4
    height = input_size_hw[0]
    width = sum(p.size[0] for p in panels) + gap * (len(panels) - 1)
    composite = Image.new("RGB", (width, height), (255, 255, 255))
    x = 0
    for panel in panels:
        composite.paste(panel, (x, 0))
        x += panel.size[0] + gap
    composite_path = os.path.join(out_dir, f"{stem}.composite.png")
    composite.save(composite_path)

    return {
        "overlay": overlay_path,
        "neighbors": neighbor_paths,
        "composite": composite_path,
    }


def probe_box_pixels(image_path, box_fields):
    """Colors along the drawn border (used to verify exact placement)."""
    top, left, bottom, right = box_fields
    with Image.open(image_path) as pil:
        arr = np.asarray(pil.convert("RGB"))
    return {
        "top_row": arr[top, left:right],
        "bottom_row": arr[bottom - 1, left:right],
        "left_col": arr[top:bottom, left],
        "right_col": arr[top:bottom, right - 1],
    }
