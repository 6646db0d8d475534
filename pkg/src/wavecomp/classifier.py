"""Compressed-domain CNN: build, train and evaluate on partially decoded LL bands.

The network is five blocks of 3x3 convolution (16, 32, 64, 128, 256
channels), ReLU, 2x2 max pooling and dropout (0.10 ... 0.30), then a
512-unit fully connected layer with ReLU and a softmax classification head.
One model is trained per resolution.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import archive, nn, wavelet
from .archive import LabeledCorpus
from .errors import ConfigError, GeometryMismatch, InputTooSmall, NonFiniteLoss
from .metrics import ConfusionMatrix

log = logging.getLogger(__name__)

CONV_CHANNELS = (16, 32, 64, 128, 256)
DROPOUT_RATES = (0.10, 0.15, 0.20, 0.25, 0.30)
KERNEL = 3
FC_UNITS = 512


def layer_specs(num_classes: int, input_dims: tuple[int, int],
                fc_units: int = FC_UNITS) -> list[dict]:
    if num_classes < 2:
        raise ValueError(f"need at least two classes, got {num_classes}")
    h, w = input_dims
    if h < 1 or w < 1:
        raise InputTooSmall(f"input extent {h}x{w} cannot be pooled five times")
    specs = []
    cin = 1
    for cout, rate in zip(CONV_CHANNELS, DROPOUT_RATES):
        specs += [
            {"kind": "conv", "kernel": KERNEL, "in": cin, "out": cout, "stride": 1,
             "padding": "same"},
            {"kind": "relu"},
            {"kind": "maxpool", "size": 2, "stride": 2},
            {"kind": "dropout", "rate": rate},
        ]
        cin = cout
        h, w = (h + 1) // 2, (w + 1) // 2
    specs += [
        {"kind": "flatten"},
        {"kind": "dense", "in": h * w * cin, "units": fc_units},
        {"kind": "relu"},
        {"kind": "dense", "in": fc_units, "units": num_classes},
    ]
    return specs


def build_model(num_classes: int, input_dims: tuple[int, int], fc_units: int = FC_UNITS,
                seed: int = 0, dtype=np.float32, meta: dict | None = None) -> nn.Network:
    specs = layer_specs(num_classes, input_dims, fc_units)
    net = nn.Network.from_spec(specs, (input_dims[0], input_dims[1], 1), dtype=dtype,
                               seed=seed, meta=meta)
    # zero head: the untrained model predicts 1/C for every class
    net.layers[-1].w[...] = 0
    return net


@dataclass
class TrainConfig:
    resolution: int = wavelet.DEFAULT_LEVELS
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.001
    seed: int = 0
    train_fraction: float | None = None  # None keeps the corpus split
    size: tuple[int, int] = archive.DEFAULT_SIZE
    fc_units: int = FC_UNITS
    dtype: str = "float32"

    def validate(self, levels: int | None = None) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.train_fraction is not None and not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        if levels is not None and not 1 <= self.resolution <= levels:
            raise ConfigError(f"resolution must be in [1, {levels}], got {self.resolution}")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = {"batch": "batch_size"}.get(key, key)
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
        return cls.from_strings(values)

    @classmethod
    def from_strings(cls, values: dict[str, str]) -> "TrainConfig":
        out = {}
        for key, value in values.items():
            try:
                if key in ("resolution", "epochs", "batch_size", "seed", "fc_units"):
                    out[key] = int(value)
                elif key in ("lr", "train_fraction"):
                    out[key] = float(value)
                elif key == "size":
                    parts = value.lower().replace("x", " ").split()
                    out[key] = (int(parts[0]), int(parts[-1]))
                else:
                    out[key] = value
            except (ValueError, IndexError):
                raise ConfigError(f"bad value for {key}: {value!r}") from None
        return cls(**out)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_acc: float
    train_loss: float
    val_acc: float
    val_loss: float


@dataclass
class TrainResult:
    network: nn.Network
    records: list[EpochRecord]
    best_epoch: int
    config: TrainConfig = field(default_factory=TrainConfig)


def write_epoch_csv(records: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_acc", "train_loss", "val_acc", "val_loss"])
        for r in records:
            w.writerow([r.epoch, f"{r.train_acc:.6f}", f"{r.train_loss:.6f}",
                        f"{r.val_acc:.6f}", f"{r.val_loss:.6f}"])


def read_epoch_csv(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        return [EpochRecord(int(row["epoch"]), float(row["train_acc"]), float(row["train_loss"]),
                            float(row["val_acc"]), float(row["val_loss"]))
                for row in csv.DictReader(fh)]


def _batched_eval(net: nn.Network, x: np.ndarray, y: np.ndarray, batch: int):
    """Eval-mode loss and accuracy over ``x`` in fixed-order chunks."""
    if len(x) == 0:
        return 0.0, 0.0
    loss_sum = 0.0
    correct = 0
    for s in range(0, len(x), batch):
        prob = net.predict_proba(x[s:s + batch])
        yb = y[s:s + batch]
        loss_sum += nn.cross_entropy(yb, prob) * len(yb)
        correct += int(np.sum(prob.argmax(1) == yb.argmax(1)))
    return correct / len(x), loss_sum / len(x)


def uniform_loss(num_classes: int) -> float:
    """Loss of a predictor that outputs 1/C for every class."""
    c = num_classes
    p = np.full(c, 1.0 / c)
    return nn.cross_entropy(np.eye(c)[0], p)


def train(corpus: LabeledCorpus, config: TrainConfig,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train one network at ``config.resolution``; keeps the best-validation weights.

    The best epoch has the highest validation accuracy, ties going to the
    lower validation loss.
    """
    config.validate(corpus.levels)
    if config.train_fraction is not None and config.train_fraction != corpus.train_fraction:
        corpus = archive.split_corpus(corpus, config.train_fraction, corpus.seed)
    r = config.resolution
    dtype = np.dtype(config.dtype)
    train_idx = corpus.indices("train")
    val_idx = corpus.indices("val")
    if not train_idx or not val_idx:
        raise ConfigError("corpus needs at least one training and one validation entry")
    x_train, y_train = archive.load_batch(corpus, train_idx, r, dtype)
    x_val, y_val = archive.load_batch(corpus, val_idx, r, dtype)

    init_ss, shuffle_ss, drop_ss = np.random.SeedSequence(config.seed).spawn(3)
    dims = archive.input_dims(corpus, r)
    meta = {
        "classes": list(corpus.classes),
        "resolution": r,
        "levels": corpus.levels,
        "size": list(corpus.size),
        "seed": config.seed,
    }
    net = build_model(len(corpus.classes), dims, config.fc_units,
                      seed=int(init_ss.generate_state(1)[0]), dtype=dtype, meta=meta)
    opt = nn.Adam(lr=config.lr)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)

    records: list[EpochRecord] = []
    best = None
    best_key = None
    n = len(x_train)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            logits = net.forward(xb, training=True, rng=drop_rng)
            loss, dlogits, prob = nn.loss_and_grad(yb, logits)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite training loss at epoch {epoch}", epoch)
            net.backward(dlogits)
            opt.step(net.params(), net.grads())
            loss_sum += loss * len(idx)
            correct += int(np.sum(prob.argmax(1) == yb.argmax(1)))
        val_acc, val_loss = _batched_eval(net, x_val, y_val, config.batch_size)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}", epoch)
        rec = EpochRecord(epoch, correct / n, loss_sum / n, val_acc, val_loss)
        records.append(rec)
        log.info("epoch %d  train acc %.4f loss %.4f  val acc %.4f loss %.4f",
                 epoch, rec.train_acc, rec.train_loss, rec.val_acc, rec.val_loss)
        key = (val_acc, -val_loss)
        if best_key is None or key > best_key:
            best_key = key
            best = (epoch, net.copy_params())
        if on_epoch is not None:
            on_epoch(rec)
    best_epoch, params = best
    net.set_params(params)
    net.meta["best_epoch"] = best_epoch
    return TrainResult(net, records, best_epoch, config)


@dataclass
class EvalResult:
    confusion: ConfusionMatrix
    dt: float  # seconds spent decoding
    clt: float  # seconds spent in forward passes
    ct: float
    n_images: int
    bytes_read: int


def check_geometry(net: nn.Network, corpus: LabeledCorpus, r: int) -> None:
    h, w = archive.input_dims(corpus, r)
    if net.input_shape[:2] != (h, w):
        raise GeometryMismatch(
            f"model expects {net.input_shape[0]}x{net.input_shape[1]} inputs but the corpus "
            f"yields {h}x{w} at resolution {r}")
    n_out = net.layers[-1].spec["units"]
    if n_out != len(corpus.classes):
        raise GeometryMismatch(f"model has {n_out} outputs, corpus has {len(corpus.classes)} classes")


def evaluate(net: nn.Network, corpus: LabeledCorpus, split: str = "val", r: int | None = None,
             batch_size: int = 32) -> EvalResult:
    """Confusion matrix over ``split`` plus decode (DT) and classification (CLT) time."""
    if r is None:
        r = int(net.meta.get("resolution", corpus.levels))
    check_geometry(net, corpus, r)
    idx = corpus.indices(split)
    streams = [corpus.stream(i) for i in idx]  # file reads stay outside the timers
    grids = []
    nbytes = 0
    t0 = time.perf_counter()
    for s in streams:
        g, nb = archive.decode_grid(s, r)
        grids.append(g)
        nbytes += nb
    dt = time.perf_counter() - t0
    x = np.stack([archive.normalize(g, net.dtype) for g in grids])[..., None] if grids else \
        np.zeros((0,) + net.input_shape, dtype=net.dtype)
    preds = []
    t0 = time.perf_counter()
    for s in range(0, len(x), batch_size):
        preds.append(net.forward(x[s:s + batch_size], training=False).argmax(1))
    clt = time.perf_counter() - t0
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    cm = ConfusionMatrix.from_labels(corpus.labels(idx), pred, corpus.classes)
    return EvalResult(cm, dt, clt, dt + clt, len(idx), nbytes)


def save_result(result: TrainResult, ckpt_path, csv_path=None) -> None:
    nn.save_checkpoint(result.network, ckpt_path)
    if csv_path is not None:
        write_epoch_csv(result.records, csv_path)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
