"""Timing harness, speedup and the analytic DWT buffer model.

Decode time (DT) is measured around partial or full decoding of streams that
are already in memory, classification time (CLT) around forward passes only,
and CT = DT + CLT is the sum of the two stored medians.
"""

from __future__ import annotations

import csv
import logging
import os
import platform
import re
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import archive, classifier, nn
from .archive import LabeledCorpus
from .errors import BadLevel, ConfigError, NonPositiveTime

log = logging.getLogger(__name__)

DEFAULT_IMAGES = 25
DEFAULT_REPETITIONS = 5
FULL = "full"


def speedup(ct_full: float, ct_partial: float) -> float:
    if not (ct_full > 0 and ct_partial > 0):
        raise NonPositiveTime(f"times must be positive, got {ct_full} and {ct_partial}")
    return ct_full / ct_partial


@dataclass(frozen=True)
class MemoryModel:
    levels: int
    width: float
    unit: float
    terms: tuple[float, ...]  # buffer for coefficient level l = 0 .. L-1

    @property
    def total(self) -> float:
        return float(sum(self.terms))

    @property
    def closed_form(self) -> float:
        L = self.levels
        return (2.0 * 2.0 ** L + 2.0 ** -L - 3.0) * self.width * self.unit


def memory_model(levels: int, width: float, unit: float = 1.0) -> MemoryModel:
    """Line-buffer estimate of an ``levels``-deep decomposition of a ``width``-wide image."""
    if not isinstance(levels, (int, np.integer)) or levels < 1:
        raise BadLevel(f"levels must be an integer >= 1, got {levels!r}")
    if not (width > 0 and unit > 0):
        raise ValueError(f"width and unit must be positive, got {width}, {unit}")
    L = int(levels)
    terms = tuple(3.0 * (2.0 ** (L - l) - 1.0) * unit * 2.0 ** (-l - 1) * width for l in range(L))
    return MemoryModel(L, float(width), float(unit), terms)


@dataclass(frozen=True)
class BenchRow:
    resolution: str  # "1" .. str(D), or "full"
    n_images: int
    dt: float
    clt: float
    ct: float
    speedup: float
    bytes_read: int


@dataclass
class BenchReport:
    rows: list[BenchRow]
    memory: MemoryModel
    note: str = ""
    repetitions: int = DEFAULT_REPETITIONS
    samples: dict = field(default_factory=dict, repr=False)  # resolution -> [(dt, clt), ...]

    def row(self, resolution) -> BenchRow:
        key = str(resolution)
        for r in self.rows:
            if r.resolution == key:
                return r
        raise KeyError(resolution)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["resolution", "n_images", "dt_s", "clt_s", "ct_s", "speedup", "bytes_read"])
            for r in self.rows:
                w.writerow([r.resolution, r.n_images, f"{r.dt:.9f}", f"{r.clt:.9f}",
                            f"{r.ct:.9f}", f"{r.speedup:.6f}", r.bytes_read])

    def format(self) -> str:
        lines = [f"{'res':>5} {'images':>6} {'DT s':>10} {'CLT s':>10} {'CT s':>10} "
                 f"{'speedup':>8} {'bytes':>10}"]
        for r in self.rows:
            lines.append(f"{r.resolution:>5} {r.n_images:>6} {r.dt:>10.5f} {r.clt:>10.5f} "
                         f"{r.ct:>10.5f} {r.speedup:>8.2f} {r.bytes_read:>10}")
        m = self.memory
        lines.append(f"memory model L={m.levels} Z={m.width:g} S={m.unit:g}: "
                     + " + ".join(f"{t:g}" for t in m.terms) + f" = {m.total:g}")
        if self.note:
            lines.append(self.note)
        return "\n".join(lines)


def read_bench_csv(path) -> list[BenchRow]:
    with open(path, newline="") as fh:
        return [BenchRow(row["resolution"], int(row["n_images"]), float(row["dt_s"]),
                         float(row["clt_s"]), float(row["ct_s"]), float(row["speedup"]),
                         int(row["bytes_read"]))
                for row in csv.DictReader(fh)]


def environment_note() -> str:
    return (f"python {platform.python_version()}, numpy {np.__version__}, "
            f"{platform.machine()} {platform.system()}, {os.cpu_count()} cpu(s)")


def pick_images(corpus: LabeledCorpus, n: int) -> list[int]:
    """``n`` entries evenly spaced through the manifest, so every class is represented."""
    total = len(corpus.entries)
    if total == 0:
        raise ConfigError("corpus has no entries")
    n = min(n, total)
    return sorted({int(round(v)) for v in np.linspace(0, total - 1, n)})


def _pin():
    """Restrict to one CPU where supported; returns the previous affinity."""
    if not hasattr(os, "sched_getaffinity"):
        return None
    try:
        old = os.sched_getaffinity(0)
        os.sched_setaffinity(0, {min(old)})
        return old
    except OSError:
        return None


def _time_once(streams, r, net, batch_size):
    t0 = time.perf_counter()
    grids = [archive.decode_grid(s, r)[0] for s in streams]
    dt = time.perf_counter() - t0
    x = np.stack([archive.normalize(g, net.dtype) for g in grids])[..., None]
    t0 = time.perf_counter()
    for s in range(0, len(x), batch_size):
        net.forward(x[s:s + batch_size], training=False)
    clt = time.perf_counter() - t0
    return dt, clt


def run_bench(corpus: LabeledCorpus, checkpoints: dict, n_images: int = DEFAULT_IMAGES,
              repetitions: int = DEFAULT_REPETITIONS, batch_size: int = 32,
              pin: bool = True) -> BenchReport:
    """Median DT/CLT/CT per resolution and for full decoding.

    ``checkpoints`` maps ``1 .. D`` (and optionally ``"full"``) to networks or
    checkpoint paths. Without a full-resolution model, a freshly initialized
    one is used; its timing is valid even though its predictions are not.
    """
    if repetitions < 1:
        raise ConfigError(f"repetitions must be >= 1, got {repetitions}")
    D = corpus.levels
    nets = {}
    for key in list(range(1, D + 1)) + [FULL]:
        src = checkpoints.get(key, checkpoints.get(str(key)))
        if src is None:
            if key != FULL:
                raise ConfigError(f"no checkpoint for resolution {key}")
            h, w = archive.input_dims(corpus, D + 1)
            src = classifier.build_model(len(corpus.classes), (h, w),
                                         meta={"resolution": D + 1})
        net = src if isinstance(src, nn.Network) else nn.load_checkpoint(src)
        r = D + 1 if key == FULL else key
        classifier.check_geometry(net, corpus, r)
        nets[key] = (r, net)

    idx = pick_images(corpus, n_images)
    streams = [corpus.stream(i) for i in idx]
    nbytes = {key: sum(archive.decode_grid(s, r)[1] for s in streams) for key, (r, _) in nets.items()}
    samples = {key: [] for key in nets}
    old = _pin() if pin else None
    try:
        for key, (r, net) in nets.items():  # warm-up
            _time_once(streams[:1], r, net, batch_size)
        for _ in range(repetitions):
            for key, (r, net) in nets.items():
                samples[key].append(_time_once(streams, r, net, batch_size))
    finally:
        if old is not None:
            os.sched_setaffinity(0, old)

    medians = {}
    for key, s in samples.items():
        dt = statistics.median(v[0] for v in s)
        clt = statistics.median(v[1] for v in s)
        medians[key] = (dt, clt, dt + clt)
    ct_full = medians[FULL][2]
    rows = [BenchRow(str(key), len(idx), dt, clt, ct, speedup(ct_full, ct), nbytes[key])
            for key, (dt, clt, ct) in medians.items()]
    report = BenchReport(rows, memory_model(D, corpus.size[0]), environment_note(), repetitions,
                         {str(k): v for k, v in samples.items()})
    log.info("bench finished over %d images x %d repetitions", len(idx), repetitions)
    return report


# plot data for gnuplot

def _resolution_of(path: Path) -> int:
    """Resolution of an epoch CSV: from a sibling checkpoint if present, else ``r<digits>`` in its name."""
    stem = path.name
    for suffix in (".epochs.csv", ".csv"):
        if stem.endswith(suffix):
            stem = stem[:-len(suffix)]
            break
    ckpt = path.with_name(stem + nn.CKPT_SUFFIX)
    if ckpt.exists():
        meta = nn.read_checkpoint_meta(ckpt)
        if "resolution" in meta.get("meta", {}):
            return int(meta["meta"]["resolution"])
    m = re.search(r"(?:^|[^a-z])r(\d+)", stem, re.IGNORECASE)
    if m:
        return int(m.group(1))
    raise ConfigError(f"{path}: cannot tell the resolution (no checkpoint beside it, no r<N> in name)")


def render_report(inputs, out_dir) -> list[Path]:
    """Turn epoch and bench CSVs into whitespace-separated ``.dat`` files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    acc_rows = []
    bench_rows = []
    for p in map(Path, inputs):
        with open(p, newline="") as fh:
            header = fh.readline().strip().split(",")
        if header[:2] == ["epoch", "train_acc"]:
            records = classifier.read_epoch_csv(p)
            if not records:
                raise ConfigError(f"{p}: no epochs")
            best = max(records, key=lambda r: (r.val_acc, -r.val_loss))
            acc_rows.append((_resolution_of(p), best.val_acc, best.epoch, records[-1].train_acc))
        elif header[:1] == ["resolution"]:
            bench_rows.extend(read_bench_csv(p))
        else:
            raise ConfigError(f"{p}: neither an epoch CSV nor a bench report")
    written = []
    if acc_rows:
        path = out / "accuracy_vs_resolution.dat"
        lines = ["# resolution best_val_acc best_epoch final_train_acc"]
        lines += [f"{r} {a:.6f} {e} {t:.6f}" for r, a, e, t in sorted(acc_rows)]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    if bench_rows:
        path = out / "speedup_vs_resolution.dat"
        lines = ["# resolution speedup ct_s dt_s clt_s bytes_read"]
        numeric = [r for r in bench_rows if r.resolution != FULL]
        full = [r for r in bench_rows if r.resolution == FULL]
        for r in sorted(numeric, key=lambda r: int(r.resolution)) + full:
            label = r.resolution if r.resolution != FULL else str(len(numeric) + 1)
            lines.append(f"{label} {r.speedup:.6f} {r.ct:.9f} {r.dt:.9f} {r.clt:.9f} {r.bytes_read}")
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
        path = out / "memory_model.dat"
        lines = ["# levels total_buffer_per_width"]
        lines += [f"{L} {memory_model(L, 1.0).total:.6f}" for L in range(1, 9)]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written
