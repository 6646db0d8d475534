import csv
import hashlib

import numpy as np
import pytest

from wavecomp import archive, bench, classifier, nn, synthetic
from wavecomp.bench import memory_model, speedup
from wavecomp.errors import BadLevel, ConfigError, GeometryMismatch, NonPositiveTime


class TestSpeedup:

    def test_two_decimal_values(self):
        assert round(speedup(2353.24, 1235.62), 2) == 1.90
        assert round(speedup(2353.24, 489.18), 2) == 4.81

    def test_equal(self):
        assert speedup(3.5, 3.5) == 1.0

    @pytest.mark.parametrize("a,b", [(0, 1), (1, 0), (-1, 1), (1, -2)])
    def test_non_positive(self, a, b):
        with pytest.raises(NonPositiveTime):
            speedup(a, b)


class TestMemoryModel:

    def test_one_level(self):
        m = memory_model(1, 1.0)
        assert m.terms == (1.5,) and m.closed_form == 1.5

    def test_three_levels(self):
        m = memory_model(3, 1.0)
        assert m.closed_form == 13.125
        assert m.total == pytest.approx(13.125, rel=1e-15)

    @pytest.mark.parametrize("L", range(1, 9))
    @pytest.mark.parametrize("Z,S", [(1.0, 1.0), (256.0, 1.0), (1200.0, 2.5)])
    def test_sum_equals_closed_form(self, L, Z, S):
        m = memory_model(L, Z, S)
        assert abs(m.total - m.closed_form) <= 1e-12 * abs(m.closed_form)

    def test_monotone_in_levels(self):
        totals = [memory_model(L, 1.0).total for L in range(1, 9)]
        assert all(b > a for a, b in zip(totals, totals[1:]))

    @pytest.mark.parametrize("L", [0, -1, 1.5])
    def test_bad_level(self, L):
        with pytest.raises(BadLevel):
            memory_model(L, 1.0)


class TestSynthetic:

    def test_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            synthetic.make_synthetic_corpus(tmp_path / d, per_class=10, size=64, seed=11)
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.pgm"))
        assert len(files_a) == 40
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_classes_separate(self, tmp_path):
        synthetic.make_synthetic_corpus(tmp_path, per_class=20, size=128, seed=0)
        feats = {name: np.array([synthetic.page_features(archive.read_image(p))
                                 for p in sorted((tmp_path / name).glob("*.pgm"))])
                 for name in synthetic.CLASS_NAMES}
        assert synthetic.separability(feats) > 1.0

    def test_per_class_minimum(self, tmp_path):
        with pytest.raises(ValueError):
            synthetic.make_synthetic_corpus(tmp_path, per_class=9)

    def test_seed_changes_output(self, tmp_path):
        synthetic.make_synthetic_corpus(tmp_path / "a", classes=2, per_class=10, size=32, seed=1)
        synthetic.make_synthetic_corpus(tmp_path / "b", classes=2, per_class=10, size=32, seed=2)
        digest = lambda d: hashlib.sha256(b"".join(p.read_bytes() for p in sorted(d.rglob("*.pgm"))))
        assert digest(tmp_path / "a").digest() != digest(tmp_path / "b").digest()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    synthetic.make_synthetic_corpus(root / "src", per_class=10, size=128, seed=0)
    return archive.build_corpus(root / "src", root / "out", size=(128, 128))


def fresh(corpus):
    return {r: classifier.build_model(4, archive.input_dims(corpus, r)) for r in (1, 2, 3)}


class TestRunBench:

    def test_report(self, corpus, tmp_path):
        rep = bench.run_bench(corpus, fresh(corpus), n_images=8, repetitions=3)
        assert [r.resolution for r in rep.rows] == ["1", "2", "3", "full"]
        for r in rep.rows:
            assert r.ct == r.dt + r.clt and r.speedup > 0 and r.n_images == 8
        assert rep.row("full").speedup == 1.0
        sizes = [rep.row(k).bytes_read for k in ("1", "2", "3", "full")]
        assert sizes == sorted(set(sizes))
        assert len(rep.samples["1"]) == 3
        rep.write_csv(tmp_path / "bench_report.csv")
        with open(tmp_path / "bench_report.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["resolution", "n_images", "dt_s", "clt_s", "ct_s", "speedup", "bytes_read"]
        assert len(rows) == 5
        assert "memory model" in rep.format()

    def test_full_bytes_is_file_size(self, corpus):
        rep = bench.run_bench(corpus, fresh(corpus), n_images=3, repetitions=1)
        idx = bench.pick_images(corpus, 3)
        assert rep.row("full").bytes_read == sum(corpus.path(i).stat().st_size for i in idx)

    def test_pick_images_spans_classes(self, corpus):
        idx = bench.pick_images(corpus, 25)
        assert len(idx) == 25 and set(corpus.labels(idx)) == {0, 1, 2, 3}
        assert bench.pick_images(corpus, 500) == list(range(40))

    def test_checkpoint_paths(self, corpus, tmp_path):
        paths = {}
        for r, net in fresh(corpus).items():
            paths[r] = tmp_path / f"r{r}.wcnn"
            nn.save_checkpoint(net, paths[r])
        rep = bench.run_bench(corpus, paths, n_images=2, repetitions=1)
        assert len(rep.rows) == 4

    def test_errors(self, corpus):
        nets = fresh(corpus)
        del nets[2]
        with pytest.raises(ConfigError):
            bench.run_bench(corpus, nets, n_images=2, repetitions=1)
        nets = fresh(corpus)
        nets[1], nets[2] = nets[2], nets[1]
        with pytest.raises(GeometryMismatch):
            bench.run_bench(corpus, nets, n_images=2, repetitions=1)
        with pytest.raises(ConfigError):
            bench.run_bench(corpus, fresh(corpus), repetitions=0)


class TestReport:

    def test_render(self, corpus, tmp_path):
        rep = bench.run_bench(corpus, fresh(corpus), n_images=2, repetitions=1)
        rep.write_csv(tmp_path / "bench_report.csv")
        for r in (1, 2):
            res = classifier.train(corpus, classifier.TrainConfig(resolution=r, epochs=2))
            classifier.save_result(res, tmp_path / f"model{r}.wcnn", tmp_path / f"model{r}.epochs.csv")
        classifier.write_epoch_csv(res.records, tmp_path / "run_r3.csv")
        written = bench.render_report([tmp_path / "model2.epochs.csv", tmp_path / "model1.epochs.csv",
                                       tmp_path / "run_r3.csv", tmp_path / "bench_report.csv"],
                                      tmp_path / "plots")
        names = sorted(p.name for p in written)
        assert names == ["accuracy_vs_resolution.dat", "memory_model.dat", "speedup_vs_resolution.dat"]
        acc = (tmp_path / "plots" / "accuracy_vs_resolution.dat").read_text().splitlines()
        assert [line.split()[0] for line in acc[1:]] == ["1", "2", "3"]
        sp = (tmp_path / "plots" / "speedup_vs_resolution.dat").read_text().splitlines()
        assert [line.split()[0] for line in sp[1:]] == ["1", "2", "3", "4"]

    def test_unknown_csv(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ConfigError):
            bench.render_report([tmp_path / "x.csv"], tmp_path / "o")
        (tmp_path / "plain.csv").write_text("epoch,train_acc,train_loss,val_acc,val_loss\n1,1,0,1,0\n")
        with pytest.raises(ConfigError, match="resolution"):
            bench.render_report([tmp_path / "plain.csv"], tmp_path / "o")
