"""Deterministic generator of small synthetic document corpora.

Four page layouts stand in for real document classes:

``text``
    dense body text, lines of word-shaped glyph runs filling the page
``form``
    ruled grid of boxes with short labels
``advert``
    large halftoned blobs under a bold headline
``memo``
    a short header and a few lines of text, mostly blank page

Images are written as binary PGM (P5), one subdirectory per class.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

CLASS_NAMES = ("advert", "form", "memo", "text")


def _page(rng, size):
    base = rng.uniform(232, 248)
    return np.full((size, size), base, dtype=np.float64)


def _word(page, rng, y, x, h, w, ink):
    """A word: a run of glyph columns with random gaps and ascenders."""
    H, W = page.shape
    y1, x1 = min(H, y + h), min(W, x + w)
    if y1 <= y or x1 <= x:
        return
    cols = rng.random(x1 - x) < 0.7
    block = page[y:y1, x:x1]
    block[:, cols] = ink
    # ascenders/descenders break up the flat bar
    tall = rng.random(x1 - x) < 0.15
    if y > 1:
        page[y - 2:y, x:x1][:, tall] = ink


def _text_line(page, rng, y, x0, x1, h, ink, fill=1.0):
    x = x0
    end = x0 + int((x1 - x0) * fill)
    while x < end:
        w = int(rng.integers(5, 26))
        _word(page, rng, y, x, h, min(w, end - x), ink)
        x += w + int(rng.integers(3, 7))


def _text(rng, size):
    page = _page(rng, size)
    margin = int(rng.integers(size // 20, size // 10))
    lh = int(rng.integers(7, 11))
    ink = rng.uniform(25, 70)
    y = margin
    while y + lh < size - margin:
        fill = 1.0 if rng.random() > 0.15 else rng.uniform(0.3, 0.9)
        _text_line(page, rng, y, margin, size - margin, max(3, lh * 6 // 10), ink, fill)
        y += lh
    return page


def _form(rng, size):
    page = _page(rng, size)
    margin = int(rng.integers(size // 24, size // 12))
    ink = rng.uniform(20, 60)
    ys = [margin]
    while ys[-1] < size - margin - 20:
        ys.append(ys[-1] + int(rng.integers(size // 14, size // 8)))
    ys[-1] = min(ys[-1], size - margin)
    xs = sorted({margin, size - margin, *rng.integers(size // 4, 3 * size // 4, size=2).tolist()})
    t = int(rng.integers(1, 3))
    for y in ys:
        page[y:y + t, margin:size - margin] = ink
    for x in xs:
        page[ys[0]:ys[-1] + t, x:x + t] = ink
    # short labels in the upper-left corner of each cell
    for y0, y1 in zip(ys[:-1], ys[1:]):
        for x0, x1 in zip(xs[:-1], xs[1:]):
            if rng.random() < 0.8 and y1 - y0 > 10:
                _text_line(page, rng, y0 + 3, x0 + 3, x0 + min(x1 - x0 - 3, 40), 4, ink, 1.0)
    return page


def _advert(rng, size):
    page = _page(rng, size)
    yy, xx = np.mgrid[0:size, 0:size]
    ink = rng.uniform(10, 50)
    # halftone screen: dot radius follows a smooth tone field made of blobs
    tone = np.zeros((size, size))
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0.25, 0.95) * size, rng.uniform(0.1, 0.9) * size
        r = rng.uniform(0.12, 0.3) * size
        tone = np.maximum(tone, np.clip(1.2 - np.hypot(yy - cy, xx - cx) / r, 0, 1))
    pitch = int(rng.integers(4, 7))
    cell_y = (yy % pitch) - pitch / 2 + 0.5
    cell_x = (xx % pitch) - pitch / 2 + 0.5
    dots = np.hypot(cell_y, cell_x) < tone * pitch * 0.7
    page[dots] = ink
    # bold headline
    top = int(rng.integers(size // 20, size // 8))
    hh = int(rng.integers(size // 16, size // 9))
    x0 = int(rng.integers(size // 12, size // 5))
    page[top:top + hh, x0:size - x0] = ink
    return page


def _memo(rng, size):
    page = _page(rng, size)
    margin = int(rng.integers(size // 12, size // 7))
    ink = rng.uniform(25, 70)
    lh = int(rng.integers(8, 12))
    y = margin
    for _ in range(int(rng.integers(3, 6))):  # header fields
        _text_line(page, rng, y, margin, margin + int(rng.integers(size // 5, size // 3)),
                   5, ink, 1.0)
        y += lh
    y += 2
    page[y:y + 1, margin:size - margin] = ink
    y += lh
    for _ in range(int(rng.integers(2, 6))):
        if y + lh > size // 2 + size // 8:
            break
        _text_line(page, rng, y, margin, size - margin, 5, ink, rng.uniform(0.4, 1.0))
        y += lh
    return page


_GENERATORS = {"advert": _advert, "form": _form, "memo": _memo, "text": _text}


def render(name: str, rng: np.random.Generator, size: int = 256) -> np.ndarray:
    """One page of class ``name`` as a ``uint8`` array."""
    page = _GENERATORS[name](rng, size)
    page += rng.normal(0, 4, size=page.shape)
    return np.clip(np.rint(page), 0, 255).astype(np.uint8)


def make_synthetic_corpus(out_dir, classes: int = 4, per_class: int = 50, size: int = 256,
                          seed: int = 0) -> Path:
    """Write ``classes x per_class`` PGM pages under ``out_dir/<class>/``."""
    if per_class < 10:
        raise ValueError(f"per_class must be at least 10, got {per_class}")
    if not 2 <= classes <= len(CLASS_NAMES):
        raise ValueError(f"classes must be in [2, {len(CLASS_NAMES)}], got {classes}")
    out = Path(out_dir)
    ss = np.random.SeedSequence(seed)
    for name, child in zip(CLASS_NAMES[:classes], ss.spawn(classes)):
        rng = np.random.default_rng(child)
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            Image.fromarray(render(name, rng, size)).save(d / f"{name}_{i:03d}.pgm")
    return out


def page_features(img: np.ndarray) -> np.ndarray:
    """Coarse layout statistics: mean tone, ink in the lower half, edge balance."""
    a = img.astype(np.float64) / 255.0
    h = a.shape[0]
    ink = a < 0.5
    dy = np.abs(np.diff(a, axis=0)).mean()
    dx = np.abs(np.diff(a, axis=1)).mean()
    return np.array([a.mean(), ink[h // 2:].mean(), dy / (dx + dy + 1e-9)])


def separability(features_by_class: dict[str, np.ndarray]) -> float:
    """Smallest pairwise distance between class means, in units of pooled spread."""
    names = sorted(features_by_class)
    worst = np.inf
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            fa, fb = features_by_class[a], features_by_class[b]
            spread = np.sqrt(fa.var(axis=0) + fb.var(axis=0)) + 1e-9
            worst = min(worst, float(np.max(np.abs(fa.mean(0) - fb.mean(0)) / spread)))
    return worst
