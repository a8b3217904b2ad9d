import numpy as np
import pytest

from haludet.baselines import logistic_train, predictive_entropy, token_nll
from haludet.features import save_dataset
from haludet.metrics import auroc
from haludet.synth import SynthConfig, generate


class TestGenerate:
    def test_output_passes_validation(self):
        ds = generate(SynthConfig(n_records=50, seed=1))
        ds.validate()  # raises on any broken invariant

    def test_hallucination_rate_close_to_target(self):
        cfg = SynthConfig(n_records=2000, seed=2, hallucination_rate=0.35)
        rate = generate(cfg).labels().mean()
        assert abs(rate - 0.35) < 0.03

    def test_lengths_in_range(self):
        ds = generate(SynthConfig(n_records=300, seed=3, l_max=50))
        lens = np.array([r.true_len for r in ds.records])
        assert lens.min() >= 3 and lens.max() <= 50

    def test_same_seed_byte_identical_file(self, tmp_path):
        cfg = SynthConfig(n_records=120, seed=4)
        p1, p2 = tmp_path / "a.hfj", tmp_path / "b.hfj"
        save_dataset(generate(cfg), p1)
        save_dataset(generate(cfg), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        p1, p2 = tmp_path / "a.hfj", tmp_path / "b.hfj"
        save_dataset(generate(SynthConfig(n_records=20, seed=5)), p1)
        save_dataset(generate(SynthConfig(n_records=20, seed=6)), p2)
        assert p1.read_bytes() != p2.read_bytes()

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            SynthConfig(n_records=10, separability=1.5)
        with pytest.raises(ValueError):
            SynthConfig(n_records=10, hallucination_rate=0.0)
        with pytest.raises(ValueError):
            SynthConfig(n_records=-1)


class TestSeparability:
    def test_null_case_baselines_near_chance(self):
        ds = generate(SynthConfig(n_records=2000, seed=7, separability=0.0))
        labels = ds.labels()
        pe = np.array([predictive_entropy(r) for r in ds.records])
        nll = np.array([token_nll(r) for r in ds.records])
        assert 0.45 <= auroc(pe, labels) <= 0.55
        assert 0.45 <= auroc(nll, labels) <= 0.55

    def test_full_separability_logistic_strong(self):
        train = generate(SynthConfig(n_records=2000, seed=8, separability=1.0))
        test = generate(SynthConfig(n_records=1000, seed=9, separability=1.0))
        lm = logistic_train(train)
        assert auroc(lm.score_dataset(test), test.labels()) >= 0.9

    def test_auroc_monotone_in_separability_on_average(self):
        seps = (0.0, 0.5, 1.0)
        seeds = (31, 32, 33, 34, 35)
        means = {"pe": [], "tnll": [], "logistic": []}
        for sep in seps:
            values = {k: [] for k in means}
            for seed in seeds:
                ds = generate(SynthConfig(n_records=400, seed=seed, separability=sep))
                labels = ds.labels()
                values["pe"].append(auroc([predictive_entropy(r) for r in ds.records], labels))
                values["tnll"].append(auroc([token_nll(r) for r in ds.records], labels))
                values["logistic"].append(auroc(logistic_train(ds).score_dataset(ds), labels))
            for k in means:
                means[k].append(np.mean(values[k]))
        for k, series in means.items():
            assert series[0] <= series[1] + 1e-9 <= series[2] + 2e-9, (k, series)

    def test_embedding_carries_label_signal_scalars_cannot_see(self):
        ds = generate(SynthConfig(n_records=600, seed=10, separability=1.0))
        proto_diff = []
        for label in (0, 1):
            rows = [r.embeddings[:r.true_len].mean(axis=0)
                    for r in ds.records if r.label == label]
            proto_diff.append(np.mean(rows, axis=0))
        gap = np.linalg.norm(proto_diff[1] - proto_diff[0])
        assert gap > 0.5
