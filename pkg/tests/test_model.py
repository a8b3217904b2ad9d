import numpy as np
import pytest

from haludet import nn
from haludet.features import FeatureRecord
from haludet.model import (CheckpointError, ConfigError, ModelConfig,
                           build_batch, encoders_preset, finite_difference_check,
                           forward, forward_batch, init_params, load_checkpoint,
                           param_shapes, predict, save_checkpoint)


def small_cfg(**overrides):
    base = dict(d_emb=3, features=("ll", "ent", "emb"), fusion="attention",
                l_max=8, d_conv=4, d_h=4, d_mlp=5, d_a=6)
    base.update(overrides)
    if "encoders" not in base:
        base["encoders"] = encoders_preset("all-cnn", base["features"])
    return ModelConfig(**base)


def random_record(rng: nn.Rng, cfg: ModelConfig, true_len=None, rid="r0", label=0):
    n = true_len if true_len is not None else 2 + rng.randint(cfg.l_max - 1)
    ll = np.zeros(cfg.l_max, np.float32)
    ent = np.zeros(cfg.l_max, np.float32)
    emb = np.zeros((cfg.l_max, cfg.d_emb), np.float32)
    ll[:n] = -np.abs(rng.normal(n)).astype(np.float32)
    ent[:n] = np.abs(rng.normal(n)).astype(np.float32)
    emb[:n] = rng.normal(n * cfg.d_emb).reshape(n, cfg.d_emb).astype(np.float32)
    return FeatureRecord(rid, False, n, ll, ent, emb, label)


class TestConfig:
    def test_empty_features_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_emb=4, features=())

    def test_unknown_feature_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_emb=4, features=("ll", "logits"))

    def test_cnn_requires_matching_dims(self):
        with pytest.raises(ConfigError, match="d_conv"):
            small_cfg(d_conv=8, d_h=4)

    def test_mlp_only_allows_distinct_dims(self):
        cfg = small_cfg(encoders=encoders_preset("all-mlp", ("ll", "ent", "emb")),
                        d_conv=8, d_h=4)
        assert cfg.d_h == 4

    def test_dict_roundtrip(self):
        cfg = small_cfg(fusion="concat_mlp", pooling_masked=False)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_presets(self):
        feats = ("ll", "emb")
        assert encoders_preset("all-cnn", feats) == {"ll": "cnn", "emb": "cnn"}
        assert encoders_preset("mixed", feats) == {"ll": "mlp_pool", "emb": "cnn"}
        assert encoders_preset("all-mlp", feats) == {"ll": "mlp_pool", "emb": "mlp_pool"}


class TestForward:
    def test_attention_weights_sum_to_one(self):
        cfg = small_cfg()
        params = init_params(cfg, nn.Rng(1))
        rec = random_record(nn.Rng(2), cfg)
        _, p, attn = forward(rec, params, cfg)
        assert 0.0 < p < 1.0
        assert attn.shape == (3,)
        assert abs(attn.sum() - 1.0) < 1e-6

    def test_concat_fusion_returns_no_attention(self):
        cfg = small_cfg(fusion="concat_mlp")
        params = init_params(cfg, nn.Rng(1))
        _, _, attn = forward(random_record(nn.Rng(2), cfg), params, cfg)
        assert attn is None

    def test_single_feature_attention_degenerates(self):
        cfg = small_cfg(features=("ll",), encoders={"ll": "cnn"})
        params = init_params(cfg, nn.Rng(1))
        _, _, attn = forward(random_record(nn.Rng(2), cfg), params, cfg)
        assert attn.shape == (1,) and attn[0] == 1.0

    def test_padded_garbage_does_not_change_logit(self):
        cfg = small_cfg()
        params = init_params(cfg, nn.Rng(1))
        rec = random_record(nn.Rng(2), cfg, true_len=4)
        logit_clean, _, _ = forward(rec, params, cfg)
        garbled = FeatureRecord(
            rec.id, rec.context_present, rec.true_len,
            rec.log_likelihoods.copy(), rec.entropies.copy(),
            rec.embeddings.copy(), rec.label)
        garbled.log_likelihoods[4:] = 123.0
        garbled.entropies[4:] = -55.0
        garbled.embeddings[4:] = 1e6
        logit_garbled, _, _ = forward(garbled, params, cfg)
        assert logit_clean == logit_garbled

    def test_masked_logit_independent_of_pad_region_length(self):
        cfg = small_cfg()
        params = init_params(cfg, nn.Rng(1))
        rec = random_record(nn.Rng(2), cfg, true_len=5)
        logit, _, _ = forward(rec, params, cfg)
        assert np.isfinite(logit)

    def test_unmasked_pooling_changes_output(self):
        cfg_m = small_cfg()
        cfg_u = small_cfg(pooling_masked=False)
        params = init_params(cfg_m, nn.Rng(1))
        rec = random_record(nn.Rng(2), cfg_m, true_len=3)
        lm, _, _ = forward(rec, params, cfg_m)
        lu, _, _ = forward(rec, params, cfg_u)
        assert lm != lu

    def test_forward_is_deterministic(self):
        cfg = small_cfg(fusion="concat_mlp")
        params = init_params(cfg, nn.Rng(1))
        rec = random_record(nn.Rng(2), cfg)
        l1, p1, _ = forward(rec, params, cfg)
        l2, p2, _ = forward(rec, params, cfg)
        assert l1 == l2 and p1 == p2

    def test_branch_permutation_preserves_logit_under_attention(self):
        cfg_a = small_cfg(features=("ll", "emb"),
                          encoders={"ll": "cnn", "emb": "cnn"})
        cfg_b = small_cfg(features=("emb", "ll"),
                          encoders={"emb": "cnn", "ll": "cnn"})
        params_a = init_params(cfg_a, nn.Rng(1))
        params_b = nn.ParamStore()
        for name, shape in param_shapes(cfg_b):
            params_b.add(name, params_a[name].value.copy())
        rec = random_record(nn.Rng(2), cfg_a)
        la, _, _ = forward(rec, params_a, cfg_a)
        lb, _, _ = forward(rec, params_b, cfg_b)
        assert la == pytest.approx(lb, abs=1e-5)

    def test_wrong_d_emb_rejected(self):
        cfg = small_cfg()
        params = init_params(cfg, nn.Rng(1))
        other = small_cfg(d_emb=5)
        rec = random_record(nn.Rng(2), other)
        with pytest.raises(ConfigError, match="d_emb"):
            forward(rec, params, cfg)

    @pytest.mark.parametrize("preset", ["all-cnn", "mixed", "all-mlp"])
    @pytest.mark.parametrize("fusion", ["attention", "concat_mlp"])
    def test_all_variants_run(self, preset, fusion):
        cfg = small_cfg(encoders=encoders_preset(preset, ("ll", "ent", "emb")),
                        fusion=fusion)
        params = init_params(cfg, nn.Rng(1))
        batch = build_batch([random_record(nn.Rng(s), cfg, rid=f"r{s}") for s in range(4)], cfg)
        logits, _ = forward_batch(batch, params, cfg)
        assert logits.shape == (4,) and np.isfinite(logits).all()


class TestPredict:
    def test_boundary_is_positive(self):
        assert predict(0.5) == 1

    def test_below_boundary(self):
        assert predict(0.4999) == 0

    def test_certain_positive(self):
        assert predict(1.0) == 1


class TestInitParams:
    def test_same_seed_bit_identical(self):
        cfg = small_cfg()
        a = init_params(cfg, nn.Rng(77))
        b = init_params(cfg, nn.Rng(77))
        for name in a.names():
            assert np.array_equal(a[name].value, b[name].value)

    def test_different_seeds_differ(self):
        cfg = small_cfg()
        a = init_params(cfg, nn.Rng(1))
        b = init_params(cfg, nn.Rng(2))
        assert any(not np.array_equal(a[n].value, b[n].value) for n in a.names())

    def test_biases_zero(self):
        cfg = small_cfg(fusion="concat_mlp")
        params = init_params(cfg, nn.Rng(1))
        for name in params.names():
            if name.endswith(".b"):
                assert (params[name].value == 0).all()


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        cfg = small_cfg(fusion="concat_mlp", pooling_masked=False)
        params = init_params(cfg, nn.Rng(5))
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, cfg, path)
        loaded, cfg2 = load_checkpoint(path)
        assert cfg2 == cfg
        for name in params.names():
            assert np.array_equal(loaded[name].value, params[name].value)

    def test_roundtrip_preserves_logits(self, tmp_path):
        cfg = small_cfg()
        params = init_params(cfg, nn.Rng(5))
        rec = random_record(nn.Rng(6), cfg)
        logit_before, _, _ = forward(rec, params, cfg)
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, cfg, path)
        loaded, cfg2 = load_checkpoint(path)
        logit_after, _, _ = forward(rec, loaded, cfg2)
        assert logit_before == logit_after

    def test_tampered_manifest_rejected(self, tmp_path):
        import json
        cfg = small_cfg()
        params = init_params(cfg, nn.Rng(5))
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, cfg, path)
        blob = path.read_bytes()
        nl = blob.index(b"\n")
        header = json.loads(blob[:nl])
        header["manifest"][0][1] = [9, 9, 9]
        path.write_bytes(json.dumps(header).encode() + b"\n" + blob[nl + 1:])
        with pytest.raises(CheckpointError, match="manifest"):
            load_checkpoint(path)

    def test_truncated_blob_rejected(self, tmp_path):
        cfg = small_cfg()
        params = init_params(cfg, nn.Rng(5))
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, cfg, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_bad_format_tag_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b'{"format":"something-else","version":1}\n')
        with pytest.raises(CheckpointError, match="format"):
            load_checkpoint(path)


class TestGradientCheck:
    @pytest.mark.parametrize("preset", ["all-cnn", "mixed", "all-mlp"])
    @pytest.mark.parametrize("fusion", ["attention", "concat_mlp"])
    def test_small_configs_pass(self, preset, fusion):
        cfg = ModelConfig(d_emb=3, features=("ll", "ent", "emb"),
                          encoders=encoders_preset(preset, ("ll", "ent", "emb")),
                          fusion=fusion, l_max=6, d_conv=3, d_h=3, d_mlp=4, d_a=4)
        errs = finite_difference_check(cfg, seed=31)
        assert max(errs.values()) < 1e-4

    def test_unmasked_pooling_config_passes(self):
        cfg = ModelConfig(d_emb=3, features=("ll", "emb"),
                          encoders={"ll": "mlp_pool", "emb": "cnn"},
                          fusion="attention", l_max=6, d_conv=3, d_h=3,
                          d_mlp=4, d_a=4, pooling_masked=False)
        errs = finite_difference_check(cfg, seed=32)
        assert max(errs.values()) < 1e-4
