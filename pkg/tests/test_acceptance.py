"""Acceptance suite: one test per top-level criterion.

Each test records a ``criterion`` and a measured ``detail`` before asserting;
``conftest.py`` prints them as PASS/FAIL lines at the end of the run.
"""

import time
from fractions import Fraction

import numpy as np
import pytest
from PIL import Image

from oracles import numeric_grad, pair_count_metrics, rel_error
from wavecomp import archive, bench, classifier, codec, nn, synthetic, wavelet
from wavecomp.metrics import ConfusionMatrix, accuracy_mc, precision_recall_f1


def report(record_property, criterion, detail):
    record_property("criterion", criterion)
    record_property("detail", detail)
    print(f"{criterion}: {detail}")


# 1. lossless codec

def corpus_images(rng):
    """Noise, constants, ramps, sparse and two-tone pages over assorted sizes."""
    fixed = [(1, 1), (17, 31), (31, 17), (1, 9), (9, 1), (2, 2), (3, 5), (64, 64), (33, 65)]
    sizes = fixed + [tuple(int(v) for v in rng.integers(1, 97, size=2)) for _ in range(71)]
    kinds = ["noise", "const", "ramp", "sparse", "twotone"]
    for k, (h, w) in enumerate(sizes):
        kind = kinds[k % len(kinds)]
        if kind == "noise":
            img = rng.integers(0, 256, (h, w))
        elif kind == "const":
            img = np.full((h, w), [0, 255, int(rng.integers(0, 256))][k % 3])
        elif kind == "ramp":
            img = (np.add.outer(np.arange(h) * 3, np.arange(w) * 5) + int(rng.integers(0, 256))) % 256
        elif kind == "sparse":
            img = np.where(rng.random((h, w)) < 0.05, 0, 255)
        else:
            img = np.where(rng.random((h, w)) < 0.5, 20, 235)
        yield kind, img.astype(np.uint8)


def test_1_lossless_codec(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    checked = mismatched = 0
    kinds = set()
    has = {"1x1": False, "31x17": False}
    for levels in (1, 2, 3):
        for kind, img in corpus_images(rng):
            back = codec.decode_full(codec.encode(img, levels))
            checked += 1
            mismatched += not (back.dtype == np.uint8 and np.array_equal(back, img))
            kinds.add(kind)
            has["1x1"] |= img.shape == (1, 1)
            has["31x17"] |= img.shape == (17, 31)
    elapsed = time.perf_counter() - t0
    report(record_property, "lossless codec round trip",
           f"{checked} images ({', '.join(sorted(kinds))}), D in {{1,2,3}}, {mismatched} mismatches, "
           f"{elapsed:.1f}s")
    assert checked >= 200 and all(has.values())
    assert mismatched == 0
    assert elapsed < 60


# 2. partial-decode equivalence

def test_2_partial_decode_equivalence(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    D = 3
    cases = mismatched = 0
    for _ in range(60):
        h, w = (int(v) for v in rng.integers(8, 129, size=2))
        img = rng.integers(0, 256, (h, w), dtype=np.uint8)
        stream = codec.encode(img, D)
        header = codec.read_header(stream)
        pyramid = wavelet.forward_dwt(img, D)
        for r in range(1, D + 1):
            # a physically shorter copy: the bytes past this prefix do not exist
            prefix = bytes(stream[:header.prefix_size(r)])
            got, nbytes = codec.decode_partial(prefix, r)
            want = wavelet.reconstruct_ll(pyramid, r)
            cases += 1
            mismatched += not (np.array_equal(got, want) and nbytes == len(prefix))
    elapsed = time.perf_counter() - t0
    report(record_property, "partial decode equals reconstruct_ll",
           f"60 images x r in 1..3 = {cases} cases from truncated copies, {mismatched} mismatches, "
           f"{elapsed:.1f}s")
    assert mismatched == 0
    assert elapsed < 60


# 3. gradient correctness

GRAD_SEEDS = range(20)
GRAD_TOL = 1e-4


def _layer_check(layer, x, rng, train_seed=None):
    """Max relative error of a layer's input and parameter gradients against central differences."""
    def run():
        r = np.random.default_rng(train_seed) if train_seed is not None else None
        return layer.forward(x, training=train_seed is not None, rng=r)

    probe = rng.standard_normal(run().shape)

    def f():
        return float(np.sum(run() * probe))

    run()
    dx = layer.backward(probe)
    errors = [rel_error(dx, numeric_grad(f, x))]
    for p, g in zip(layer.params(), getattr(layer, "grads", [])):
        errors.append(rel_error(g, numeric_grad(f, p)))
    return max(errors)


def _off_kink(rng, shape):
    x = rng.standard_normal(shape)
    x[np.abs(x) < 1e-3] = 0.5
    return x


def _distinct(rng, shape):
    return rng.permutation(np.arange(int(np.prod(shape)), dtype=np.float64)).reshape(shape) * 0.1


def test_3_gradient_correctness(record_property):
    t0 = time.perf_counter()
    worst = {}
    for seed in GRAD_SEEDS:
        rng = np.random.default_rng(seed)
        B, H, W = int(rng.integers(1, 3)), int(rng.integers(2, 6)), int(rng.integers(2, 6))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        checks = {
            "conv": (nn.Conv2D(cin, cout, dtype=np.float64, rng=rng), rng.standard_normal((B, H, W, cin)), None),
            "relu": (nn.ReLU(), _off_kink(rng, (B, H, W, cin)), None),
            "maxpool": (nn.MaxPool2x2(), _distinct(rng, (B, H + 1, W, cin)), None),
            "dropout": (nn.Dropout(0.25), rng.standard_normal((B, H, W, cin)), seed),
            "flatten": (nn.Flatten(), rng.standard_normal((B, H, W, cin)), None),
            "dense": (nn.Dense(H * W, cout + 1, dtype=np.float64, rng=rng),
                      rng.standard_normal((B, H * W)), None),
        }
        for name, (layer, x, train_seed) in checks.items():
            if name == "conv":
                layer.b[...] = rng.standard_normal(layer.b.shape)
            if name == "dense":
                layer.b[...] = rng.standard_normal(layer.b.shape)
            err = _layer_check(layer, x, rng, train_seed)
            worst[name] = max(worst.get(name, 0.0), err)

        C = int(rng.integers(2, 8))
        actual = np.eye(C)[rng.integers(0, C, size=B + 1)]
        logits = rng.standard_normal((B + 1, C)) * 2
        _, dlogits, _ = nn.loss_and_grad(actual, logits)
        err = rel_error(dlogits, numeric_grad(lambda: nn.cross_entropy(actual, nn.softmax(logits)), logits))
        worst["loss(logits)"] = max(worst.get("loss(logits)", 0.0), err)
        prob = rng.uniform(0.05, 0.95, size=(B + 1, C))
        err = rel_error(nn.cross_entropy_grad(actual, prob),
                        numeric_grad(lambda: nn.cross_entropy(actual, prob), prob))
        worst["loss(prob)"] = max(worst.get("loss(prob)", 0.0), err)
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(record_property, "gradient checks (float64, 20 seeds each)",
           f"max rel error {detail}; tolerance {GRAD_TOL:g}; {elapsed:.1f}s")
    assert all(v < GRAD_TOL for v in worst.values())
    assert elapsed < 120


# 4. metric oracle

def exact_metrics(true, pred, n):
    """Per-class (precision, recall, f1) and accuracy_mc as exact fractions from pair counts."""
    counts = pair_count_metrics(true, pred, n)
    total = len(true)
    rows = []
    for tp, fp, fn, tn in counts:
        p = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        r = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f = 2 * p * r / (p + r) if p + r else Fraction(0)
        rows.append((p, r, f, Fraction(tp + tn, total)))
    acc = sum(Fraction(tp + tn, tp + tn + fp + fn) for tp, fp, fn, tn in counts) / n
    return rows, acc


def test_4_metric_oracle(record_property):
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(2, 17))
        size = int(rng.integers(1, 200))
        true = rng.integers(0, n, size=size)
        # skew predictions toward the truth so matrices are not all noise
        pred = np.where(rng.random(size) < 0.5, true, rng.integers(0, n, size=size))
        cm = ConfusionMatrix.from_labels(true, pred, [f"c{i}" for i in range(n)])
        rows, acc = exact_metrics(true.tolist(), pred.tolist(), n)
        got = precision_recall_f1(cm)
        ok = accuracy_mc(cm) == float(acc)
        for g, (p, r, f, a) in zip(got, rows):
            ok &= (g.precision, g.recall, g.f1, g.accuracy) == (float(p), float(r), float(f), float(a))
        mismatches += not ok
    diag_ok = True
    for n in range(2, 17):
        cm = ConfusionMatrix(np.diag(rng.integers(1, 50, size=n)), [])
        diag_ok &= accuracy_mc(cm) == 1.0
        diag_ok &= all((m.precision, m.recall, m.f1, m.accuracy) == (1.0, 1.0, 1.0, 1.0)
                       for m in precision_recall_f1(cm))
    report(record_property, "metrics vs pair-counting oracle",
           f"1000 matrices, N in [2,16], {mismatches} inexact; diagonal all 1.0: {diag_ok}")
    assert mismatches == 0 and diag_ok


# 5. memory model

def test_5_memory_model(record_property):
    worst = 0.0
    for L in range(1, 9):
        for Z, S in ((1.0, 1.0), (256.0, 1.0), (1200.0, 1.0), (1575.0, 3.0)):
            m = bench.memory_model(L, Z, S)
            worst = max(worst, abs(m.total - m.closed_form) / m.closed_form)
    report(record_property, "memory model summation vs closed form",
           f"L = 1..8, max relative difference {worst:.2e} (tolerance 1e-12)")
    assert worst <= 1e-12


# shared synthetic corpus for the trend criteria

TREND_SEEDS = range(5)
TREND_EPOCHS = 30


@pytest.fixture(scope="module")
def synth_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    synthetic.make_synthetic_corpus(root / "src", classes=4, per_class=50, size=256, seed=0)
    return archive.build_corpus(root / "src", root / "corpus", levels=3, size=(256, 256))


@pytest.fixture(scope="module")
def trend_runs(synth_corpus):
    """Train r = 1, 2, 3 per seed until three seeds agree on the outcome."""
    runs = []
    passes = fails = 0
    t0 = time.perf_counter()
    for seed in TREND_SEEDS:
        accs, nets = {}, {}
        for r in (1, 2, 3):
            res = classifier.train(synth_corpus, classifier.TrainConfig(
                resolution=r, epochs=TREND_EPOCHS, seed=seed))
            accs[r] = res.records[res.best_epoch - 1].val_acc
            nets[r] = res.network
        ok = accs[3] >= accs[2] >= accs[1] - 0.02 and accs[3] >= 0.80
        runs.append((seed, accs, ok, nets))
        passes += ok
        fails += not ok
        if passes >= 3 or fails >= 3:
            break
    return runs, time.perf_counter() - t0


def test_6_accuracy_trend(record_property, trend_runs):
    runs, elapsed = trend_runs
    passes = sum(ok for _, _, ok, _ in runs)
    per_seed = "; ".join(f"seed {s}: " + " ".join(f"r{r}={a:.3f}" for r, a in accs.items())
                         + (" ok" if ok else " no") for s, accs, ok, _ in runs)
    skipped = len(TREND_SEEDS) - len(runs)
    note = f" ({skipped} seed(s) not needed, outcome already decided)" if skipped else ""
    report(record_property, "accuracy rises with resolution (4 classes, 200 images, 30 epochs)",
           f"{passes}/{len(runs)} seeds satisfy acc3>=acc2>=acc1-0.02 and acc3>=0.80{note}; "
           f"{per_seed}; {elapsed:.0f}s")
    assert passes >= 3
    assert elapsed < 15 * 60


def test_7_speedup_trend(record_property, synth_corpus, trend_runs):
    runs, _ = trend_runs
    nets = runs[0][3]
    t0 = time.perf_counter()
    rep = bench.run_bench(synth_corpus, nets, n_images=25, repetitions=5)
    elapsed = time.perf_counter() - t0
    s = [rep.row(r).speedup for r in (1, 2, 3)]
    b = [rep.row(r).bytes_read for r in ("1", "2", "3", "full")]
    report(record_property, "speedup falls with resolution (25 images, median of 5)",
           f"S1={s[0]:.2f} S2={s[1]:.2f} S3={s[2]:.2f}; bytes_read {b}; {elapsed:.1f}s")
    assert s[0] > s[1] > s[2] > 1.0
    assert b[0] < b[1] < b[2] < b[3]
    assert elapsed < 5 * 60


# 8. overfit sanity

def test_8_overfit_sanity(record_property, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    for name in ("form", "text"):
        (tmp_path / "src" / name).mkdir(parents=True)
        for i in range(6):
            Image.fromarray(synthetic.render(name, rng, 64)).save(tmp_path / "src" / name / f"{name}{i}.pgm")
    # 5 of 6 per class train: a 10-sample training set
    corpus = archive.build_corpus(tmp_path / "src", tmp_path / "corpus", levels=3, size=(64, 64),
                                  train_fraction=5 / 6)
    n_train = len(corpus.indices("train"))
    res = classifier.train(corpus, classifier.TrainConfig(resolution=3, epochs=200, seed=0))
    reached = next((r.epoch for r in res.records if r.train_acc >= 0.95), None)
    elapsed = time.perf_counter() - t0
    report(record_property, "overfit a 10-sample corpus",
           f"{n_train} training samples; training accuracy >= 0.95 first at epoch {reached}, "
           f"final {res.records[-1].train_acc:.2f}; {elapsed:.1f}s")
    assert n_train == 10
    assert reached is not None and reached <= 200
    assert elapsed < 120
