"""Labeled corpora of compressed documents.

A corpus directory holds one ``.wcc`` file per image under a per-class
subdirectory, plus ``manifest.tsv``::

    # wavecomp manifest v1
    # levels<TAB>3
    # size<TAB>256<TAB>256
    # seed<TAB>0
    # train_fraction<TAB>0.8
    # classes<TAB>advert<TAB>form<TAB>...
    advert/advert_000.wcc<TAB>0<TAB>train
    ...
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import codec, wavelet
from .errors import (BadResolution, DuplicateStem, EmptyClass, FractionOutOfRange, ManifestError,
                     UnreadableImage, WavecompError)

log = logging.getLogger(__name__)

MANIFEST = "manifest.tsv"
DEFAULT_SIZE = (256, 256)
IMAGE_SUFFIXES = {".pgm", ".png"}
# LL bands keep the 0..255 range (the 5/3 low-pass has unit DC gain); a
# power-of-two divisor keeps normalization exact in floating point.
COEFF_SCALE = 256.0


@dataclass(frozen=True)
class Entry:
    path: str  # relative to the corpus root, forward slashes
    label: int
    split: str  # "train" or "val"


@dataclass
class LabeledCorpus:
    root: Path
    classes: list[str]
    entries: list[Entry]
    levels: int = wavelet.DEFAULT_LEVELS
    size: tuple[int, int] = DEFAULT_SIZE  # (width, height)
    seed: int = 0
    train_fraction: float = 0.8
    _streams: dict = field(default_factory=dict, repr=False, compare=False)

    def indices(self, split: str | None = None) -> list[int]:
        if split in (None, "all"):
            return list(range(len(self.entries)))
        if split not in ("train", "val"):
            raise ValueError(f"split must be train, val or all, got {split!r}")
        return [i for i, e in enumerate(self.entries) if e.split == split]

    def labels(self, indices) -> np.ndarray:
        return np.array([self.entries[i].label for i in indices], dtype=np.int64)

    def path(self, i: int) -> Path:
        return self.root / self.entries[i].path

    def stream(self, i: int) -> bytes:
        """Raw codestream bytes, read once and kept in memory."""
        if i not in self._streams:
            self._streams[i] = self.path(i).read_bytes()
        return self._streams[i]

    def verify(self) -> None:
        n = len(self.classes)
        for e in self.entries:
            if not 0 <= e.label < n:
                raise ManifestError(f"{e.path}: class index {e.label} out of range")
            p = self.root / e.path
            if not p.exists():
                raise ManifestError(f"{e.path}: file missing")
            codec.read_header(p)

    def manifest_text(self) -> str:
        w, h = self.size
        lines = [
            "# wavecomp manifest v1",
            f"# levels\t{self.levels}",
            f"# size\t{w}\t{h}",
            f"# seed\t{self.seed}",
            f"# train_fraction\t{self.train_fraction!r}",
            "# classes\t" + "\t".join(self.classes),
        ]
        lines += [f"{e.path}\t{e.label}\t{e.split}" for e in self.entries]
        return "\n".join(lines) + "\n"

    def save(self) -> Path:
        path = self.root / MANIFEST
        path.write_text(self.manifest_text(), encoding="utf-8", newline="\n")
        return path

    @classmethod
    def load(cls, path) -> "LabeledCorpus":
        """Load from a manifest file or a corpus directory."""
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
        meta: dict[str, list[str]] = {}
        entries = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            if line.startswith("#"):
                parts = line[1:].strip().split("\t")
                meta[parts[0]] = parts[1:]
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("train", "val"):
                raise ManifestError(f"{path}:{lineno}: malformed entry {line!r}")
            try:
                entries.append(Entry(parts[0], int(parts[1]), parts[2]))
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: bad class index {parts[1]!r}") from None
        if "classes" not in meta:
            raise ManifestError(f"{path}: no class header")
        try:
            corpus = cls(
                root=path.parent,
                classes=meta["classes"],
                entries=entries,
                levels=int(meta.get("levels", [wavelet.DEFAULT_LEVELS])[0]),
                size=tuple(int(v) for v in meta.get("size", DEFAULT_SIZE)),
                seed=int(meta.get("seed", [0])[0]),
                train_fraction=float(meta.get("train_fraction", [0.8])[0]),
            )
        except (ValueError, IndexError) as exc:
            raise ManifestError(f"{path}: bad header value: {exc}") from None
        for e in entries:
            if not 0 <= e.label < len(corpus.classes):
                raise ManifestError(f"{path}: {e.path} has class index {e.label} out of range")
        return corpus


def read_image(path) -> np.ndarray:
    """Load a grayscale PGM or PNG as a 2-D ``uint8`` array."""
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                arr = arr * (255.0 / max(arr.max(), 1.0))
                return np.rint(arr).astype(np.uint8)
            if im.mode != "L":
                im = im.convert("L")
            return np.asarray(im, dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise UnreadableImage(f"cannot read image {path}: {exc}") from exc


def resize(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    if img.shape == (h, w):
        return img
    return np.asarray(Image.fromarray(img).resize((w, h), Image.BILINEAR), dtype=np.uint8)


def _workers(workers: int | None) -> int:
    if workers:
        return max(1, workers)
    env = os.environ.get("WAVECOMP_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _stratified_split(labels: list[int], n_classes: int, fraction: float, seed: int) -> list[str]:
    if not 0 < fraction < 1:
        raise FractionOutOfRange(f"train fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    split = ["val"] * len(labels)
    for c in range(n_classes):
        members = [i for i, lab in enumerate(labels) if lab == c]
        n = len(members)
        if n == 0:
            continue
        n_train = math.floor(fraction * n + 0.5)
        if n >= 2:
            n_train = min(max(n_train, 1), n - 1)
        for j in rng.permutation(n)[:n_train]:
            split[members[j]] = "train"
    return split


def split_corpus(corpus: LabeledCorpus, train_fraction: float, seed: int) -> LabeledCorpus:
    """Stratified per-class train/val reassignment; returns a new corpus."""
    split = _stratified_split([e.label for e in corpus.entries], len(corpus.classes),
                              train_fraction, seed)
    entries = [replace(e, split=s) for e, s in zip(corpus.entries, split)]
    return replace(corpus, entries=entries, seed=seed, train_fraction=train_fraction,
                   _streams={})


def build_corpus(src_dir, out_dir, levels: int = wavelet.DEFAULT_LEVELS,
                 size: tuple[int, int] = DEFAULT_SIZE, seed: int = 0,
                 train_fraction: float = 0.8, workers: int | None = None) -> LabeledCorpus:
    """Encode every image under ``src_dir/<class>/`` into ``out_dir`` and write the manifest.

    Classes are ordered by subdirectory name; images by file name.
    """
    src = Path(src_dir)
    out = Path(out_dir)
    classes = sorted(p.name for p in src.iterdir() if p.is_dir()) if src.is_dir() else []
    if len(classes) < 2:
        raise EmptyClass(f"{src} must contain at least two class subdirectories")
    jobs = []
    for label, name in enumerate(classes):
        files = sorted(p for p in (src / name).iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise EmptyClass(f"class {name!r} has no PGM or PNG images")
        stems: dict[str, Path] = {}
        for f in files:
            if f.stem in stems:
                raise DuplicateStem(f"{f} and {stems[f.stem]} share the stem {f.stem!r}")
            stems[f.stem] = f
            jobs.append((f, f"{name}/{f.stem}{codec.EXTENSION}", label))

    def encode_one(job):
        f, rel, _ = job
        img = resize(read_image(f), size)
        target = out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        codec.write(codec.encode(img, levels), target)

    n_workers = _workers(workers)
    log.info("encoding %d images with %d worker(s)", len(jobs), n_workers)
    if n_workers == 1:
        for job in jobs:
            encode_one(job)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            for _ in pool.map(encode_one, jobs):
                pass
    labels = [label for _, _, label in jobs]
    split = _stratified_split(labels, len(classes), train_fraction, seed)
    entries = [Entry(rel, label, s) for (_, rel, label), s in zip(jobs, split)]
    corpus = LabeledCorpus(out, classes, entries, levels, tuple(size), seed, train_fraction)
    corpus.save()
    return corpus


def normalize(ll: np.ndarray, dtype=np.float32) -> np.ndarray:
    return (ll / COEFF_SCALE).astype(dtype)


def decode_tensor(stream, r: int, dtype=np.float32):
    """Decode one stream at resolution ``r`` (``levels + 1`` = full image)."""
    header = codec.read_header(stream)
    if r == header.levels + 1:
        grid = codec.decode_full(stream)
    else:
        grid, _ = codec.decode_partial(stream, r)
    return normalize(grid, dtype)


def decode_grid(stream, r: int) -> tuple[np.ndarray, int]:
    """Integer grid at resolution ``r`` plus codestream bytes consumed."""
    header = codec.read_header(stream)
    if r == header.levels + 1:
        return codec.decode_full(stream), header.total_size
    return codec.decode_partial(stream, r)


def load_batch(corpus: LabeledCorpus, indices, r: int, dtype=np.float32):
    """Decode ``indices`` at resolution ``r`` into an NHWC batch plus one-hot labels.

    ``r = corpus.levels + 1`` decodes the full-resolution image.
    """
    indices = list(indices)
    if not 1 <= r <= corpus.levels + 1:
        raise BadResolution(f"resolution must be in [1, {corpus.levels + 1}], got {r}")
    grids = []
    for i in indices:
        try:
            grids.append(decode_tensor(corpus.stream(i), r, dtype))
        except WavecompError as exc:
            raise type(exc)(f"{corpus.entries[i].path}: {exc}") from exc
    if grids:
        shapes = {g.shape for g in grids}
        if len(shapes) != 1:
            raise ManifestError(f"images in batch differ in geometry: {sorted(shapes)}")
        x = np.stack(grids)[..., None]
    else:
        h, w = input_dims(corpus, r)
        x = np.zeros((0, h, w, 1), dtype=dtype)
    y = np.eye(len(corpus.classes), dtype=dtype)[corpus.labels(indices)]
    return x, y


def input_dims(corpus: LabeledCorpus, r: int) -> tuple[int, int]:
    """(height, width) of the tensors ``load_batch`` produces at resolution ``r``."""
    w, h = corpus.size
    return wavelet.ll_shape(h, w, corpus.levels - r + 1)
