"""Command-line entry point: ``wavecomp <subcommand> ...``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error. Logs go to
stderr; tables and reports go to stdout or files.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__, archive, bench, classifier, codec, metrics, nn, synthetic, wavelet
from .errors import WavecompError

log = logging.getLogger("wavecomp")


class UsageError(Exception):
    """A flag value that parses but is invalid; maps to exit code 2."""


def _size(text: str) -> tuple[int, int]:
    """``256`` or ``WxH``."""
    parts = text.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or WxH, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected N or WxH with positive values, got {text!r}")
    return vals[0], vals[1]


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
        return v
    return parse


# subcommands

def cmd_compress(args):
    img = archive.read_image(args.input)
    stream = codec.encode(img, args.levels)
    codec.write(stream, args.output)
    log.info("%s: %dx%d, %d levels, %d -> %d bytes", args.output, img.shape[1], img.shape[0],
             args.levels, img.size, len(stream))


def _view(grid: np.ndarray) -> np.ndarray:
    """8-bit view of a coefficient grid: as is when it fits, else min-max stretched."""
    lo, hi = int(grid.min()), int(grid.max())
    if lo >= 0 and hi <= 255:
        return grid.astype(np.uint8)
    scaled = (grid.astype(np.float64) - lo) * (255.0 / max(hi - lo, 1))
    return np.rint(scaled).astype(np.uint8)


def cmd_decompress(args):
    data = Path(args.input).read_bytes()
    header = codec.read_header(data)
    out = Path(args.output)
    if args.resolution is None:
        img = codec.decode_full(data)
        Image.fromarray(img).save(out, format=_image_format(out))
        return
    if not 1 <= args.resolution <= header.levels:
        raise UsageError(f"--resolution must be in [1, {header.levels}] for this stream, "
                         f"got {args.resolution}")
    grid, nbytes = codec.decode_partial(data, args.resolution)
    Image.fromarray(_view(grid)).save(out, format=_image_format(out))
    dump = out.with_suffix(".npy")
    np.save(dump, grid)
    log.info("resolution %d: %dx%d grid from %d of %d bytes; coefficients in %s",
             args.resolution, grid.shape[1], grid.shape[0], nbytes, len(data), dump)


def _image_format(path: Path) -> str:
    return "PNG" if path.suffix.lower() == ".png" else "PPM"


def cmd_inspect(args):
    print(codec.inspect(args.input).format())


def cmd_synth(args):
    try:
        synthetic.make_synthetic_corpus(args.out, classes=args.classes, per_class=args.per_class,
                                        size=args.size, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    log.info("wrote %d x %d images to %s", args.classes, args.per_class, args.out)


def cmd_build_corpus(args):
    c = archive.build_corpus(args.src, args.out, levels=args.levels, size=args.size,
                             seed=args.seed, train_fraction=args.train_fraction,
                             workers=args.workers)
    log.info("corpus %s: %d images, %d classes, %d train / %d val", args.out, len(c.entries),
             len(c.classes), len(c.indices("train")), len(c.indices("val")))


def _train_config(args, corpus) -> classifier.TrainConfig:
    cfg = classifier.TrainConfig.from_file(args.config) if args.config else classifier.TrainConfig(
        resolution=corpus.levels)
    flags = {"resolution": "--resolution", "epochs": "--epochs", "batch_size": "--batch",
             "lr": "--lr", "seed": "--seed", "train_fraction": "--train-fraction",
             "dtype": "--dtype"}
    for attr in flags:
        v = getattr(args, attr)
        if v is not None:
            setattr(cfg, attr, v)
    cfg.size = tuple(corpus.size)
    if not 1 <= cfg.resolution <= corpus.levels:
        raise UsageError(f"--resolution must be in [1, {corpus.levels}] for this corpus, "
                         f"got {cfg.resolution}")
    if cfg.train_fraction is not None and not 0 < cfg.train_fraction < 1:
        raise UsageError(f"--train-fraction must be in (0, 1), got {cfg.train_fraction}")
    try:
        cfg.validate(corpus.levels)
    except WavecompError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def cmd_train(args):
    corpus = archive.LabeledCorpus.load(args.corpus)
    cfg = _train_config(args, corpus)
    out = Path(args.out)
    csv_path = Path(args.epochs_csv) if args.epochs_csv else out.with_name(out.stem + ".epochs.csv")
    res = classifier.train(corpus, cfg)
    classifier.save_result(res, out, csv_path)
    best = res.records[res.best_epoch - 1]
    log.info("best epoch %d: val acc %.4f, val loss %.4f; wrote %s and %s",
             best.epoch, best.val_acc, best.val_loss, out, csv_path)


def cmd_eval(args):
    net = nn.load_checkpoint(args.ckpt)
    corpus = archive.LabeledCorpus.load(args.corpus)
    ev = classifier.evaluate(net, corpus, args.split)
    rows = metrics.precision_recall_f1(ev.confusion)
    print(metrics.format_table(rows))
    ckpt = Path(args.ckpt)
    cm_path = Path(args.cm_out) if args.cm_out else ckpt.with_name(f"{ckpt.stem}.{args.split}.confusion.csv")
    ev.confusion.to_csv(cm_path)
    if args.metrics_out:
        metrics.write_metrics_csv(rows, args.metrics_out)
    log.info("CA_MC %.4f, plain accuracy %.4f over %d images; DT %.4fs CLT %.4fs CT %.4fs",
             metrics.accuracy_mc(ev.confusion), metrics.plain_accuracy(ev.confusion),
             ev.n_images, ev.dt, ev.clt, ev.ct)
    log.info("confusion matrix written to %s", cm_path)


def find_checkpoints(ckpt_dir, levels: int) -> dict:
    """Map resolution (or ``"full"``) to checkpoint path, read from checkpoint metadata."""
    found = {}
    for p in sorted(Path(ckpt_dir).glob("*" + nn.CKPT_SUFFIX)):
        r = nn.read_checkpoint_meta(p).get("meta", {}).get("resolution")
        if r is None:
            log.warning("%s: no resolution in metadata, skipped", p)
            continue
        key = bench.FULL if r == levels + 1 else int(r)
        if key in found:
            raise WavecompError(f"{found[key]} and {p} both hold resolution {r}")
        found[key] = p
    return found


def cmd_bench(args):
    corpus = archive.LabeledCorpus.load(args.corpus)
    ckpts = find_checkpoints(args.ckpt_dir, corpus.levels)
    missing = [r for r in range(1, corpus.levels + 1) if r not in ckpts]
    if missing:
        raise WavecompError(f"{args.ckpt_dir}: no checkpoint for resolution(s) {missing}")
    if bench.FULL not in ckpts:
        log.info("no full-resolution checkpoint; timing an untrained full-size model")
    rep = bench.run_bench(corpus, ckpts, n_images=args.n, repetitions=args.repetitions)
    rep.write_csv(args.out)
    print(rep.format())
    log.info("wrote %s", args.out)


def cmd_report(args):
    for p in bench.render_report(args.inputs, args.out):
        print(p)


# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavecomp", description="Wavelet document codec and "
                                "compressed-domain classifier.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("compress", help="encode a PGM/PNG image")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--levels", type=int, default=wavelet.DEFAULT_LEVELS,
                   choices=range(0, wavelet.MAX_LEVELS + 1), metavar="D")
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("decompress", help="decode fully, or the LL band at a resolution")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--resolution", type=int, metavar="R")
    s.set_defaults(func=cmd_decompress)

    s = sub.add_parser("inspect", help="print header and packet table")
    s.add_argument("input")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("synth", help="generate a synthetic document corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=50)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build-corpus", help="encode a class-per-directory image tree")
    s.add_argument("src")
    s.add_argument("out")
    s.add_argument("--levels", type=int, default=wavelet.DEFAULT_LEVELS,
                   choices=range(1, wavelet.MAX_LEVELS + 1), metavar="D")
    s.add_argument("--size", type=_size, default=archive.DEFAULT_SIZE, help="N or WxH")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-fraction", type=float, default=0.8)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_build_corpus)

    s = sub.add_parser("train", help="train one model at one resolution")
    s.add_argument("--corpus", required=True, help="manifest or corpus directory")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--config", help="key = value file; flags override it")
    s.add_argument("--resolution", type=int, help="default: the corpus depth")
    s.add_argument("--epochs", type=_positive(int))
    s.add_argument("--batch", dest="batch_size", type=_positive(int))
    s.add_argument("--lr", type=_positive(float))
    s.add_argument("--seed", type=int)
    s.add_argument("--train-fraction", type=float)
    s.add_argument("--dtype", choices=["float32", "float64"])
    s.add_argument("--epochs-csv", help="default: <out stem>.epochs.csv")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-class metrics and confusion matrix")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--split", choices=["train", "val", "all"], default="val")
    s.add_argument("--cm-out", help="default: <ckpt stem>.<split>.confusion.csv")
    s.add_argument("--metrics-out", help="optional per-class metrics CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="time partial and full decoding plus classification")
    s.add_argument("--corpus", required=True)
    s.add_argument("--ckpt-dir", required=True)
    s.add_argument("--n", type=_positive(int), default=bench.DEFAULT_IMAGES)
    s.add_argument("--repetitions", type=_positive(int), default=bench.DEFAULT_REPETITIONS)
    s.add_argument("--out", default="bench_report.csv")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("report", help="turn epoch and bench CSVs into gnuplot data")
    s.add_argument("--in", dest="inputs", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def _origin(exc: BaseException) -> str:
    """Dotted name of the innermost toolkit module the error came from."""
    name = "wavecomp"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("wavecomp.") and mod not in ("wavecomp.errors", "wavecomp.cli"):
            name = mod
    return name


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"wavecomp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except WavecompError as exc:
        print(f"error: {_origin(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
