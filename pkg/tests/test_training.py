import math

import numpy as np
import pytest

from conftest import toy_model
from gradcheck import check_params
from raseq.data import SyntheticSpec, batch_padding, build_vocab, encode_corpus, generate_synthetic
from raseq.errors import ContractError, FormatError, NumericError, TrainingError
from raseq.model import ModelConfig, Seq2Seq, sentence_loss, with_params
from raseq.training import (
    REPORT_HEADER, TrainConfig, clip_gradients, global_norm, lr_schedule, perplexity, sgd_step, train,
)
from raseq import checkpoint


EN_DE = TrainConfig(halve_start_epoch=8, halve_every=1, total_epochs=12)
ZH_EN = TrainConfig(halve_start_epoch=10, halve_every=2, total_epochs=18)


class TestSchedule:
    def test_english_german(self):
        assert [lr_schedule(e, EN_DE) for e in range(1, 9)] == [0.7] * 8
        assert lr_schedule(9, EN_DE) == pytest.approx(0.35)
        assert lr_schedule(12, EN_DE) == pytest.approx(0.04375)

    def test_chinese_english(self):
        assert lr_schedule(10, ZH_EN) == 0.7
        assert lr_schedule(11, ZH_EN) == pytest.approx(0.35)
        assert lr_schedule(12, ZH_EN) == pytest.approx(0.35)
        assert lr_schedule(13, ZH_EN) == pytest.approx(0.175)

    def test_first_epoch(self):
        assert lr_schedule(1, TrainConfig(lr_initial=0.3, halve_start_epoch=0)) == 0.3 * 0.5

    def test_non_increasing(self):
        rates = [lr_schedule(e, ZH_EN) for e in range(1, 19)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_epoch_zero(self):
        with pytest.raises(ContractError):
            lr_schedule(0, EN_DE)


class TestClipping:
    def test_below_threshold_unchanged(self):
        g = {"a": np.array([2.0, 0.0])}
        assert clip_gradients(g, 3.0)["a"].tolist() == [2.0, 0.0]

    def test_rescales(self):
        out = clip_gradients({"a": np.array([6.0, 8.0])}, 3.0)
        np.testing.assert_allclose(out["a"], [1.8, 2.4])

    def test_random_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            g = {str(i): rng.normal(scale=rng.uniform(0.1, 5), size=rng.integers(1, 6, size=2)) for i in range(3)}
            before = global_norm(g)
            assert global_norm(clip_gradients(g, 3.0)) == pytest.approx(min(before, 3.0), rel=1e-5)

    def test_non_finite_names_parameter(self):
        with pytest.raises(NumericError, match="dec.W"):
            clip_gradients({"dec.W": np.array([np.nan])}, 3.0)

    def test_bad_threshold(self):
        with pytest.raises(ContractError):
            clip_gradients({"a": np.ones(2)}, 0.0)


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.lr_initial, cfg.clip_norm, cfg.max_len) == (128, 0.7, 3.0, 50)

    @pytest.mark.parametrize("kw", [{"clip_norm": 0}, {"lr_initial": -1}, {"max_len": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ContractError):
            TrainConfig(**kw)

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# recipe\nbatch_size = 32\nlr_initial=0.5  # tuned\nuse_dyn = false\n\n", encoding="utf-8")
        cfg = TrainConfig.from_file(path, lr_initial=0.9, k=None)
        assert (cfg.batch_size, cfg.lr_initial, cfg.use_dyn, cfg.k) == (32, 0.9, False, 0)

    def test_file_roundtrip(self, tmp_path):
        cfg = TrainConfig(k=5, use_dyn=False, lr_initial=0.25)
        (tmp_path / "c.cfg").write_text(cfg.to_text(), encoding="utf-8")
        assert TrainConfig.from_file(tmp_path / "c.cfg") == cfg

    @pytest.mark.parametrize("text", ["colour = 3\n", "batch_size = many\n", "batch_size\n"])
    def test_bad_file(self, tmp_path, text):
        (tmp_path / "c.cfg").write_text(text, encoding="utf-8")
        with pytest.raises(FormatError, match="c.cfg:1"):
            TrainConfig.from_file(tmp_path / "c.cfg")


class TestSentenceLoss:
    def test_uniform_model(self, dyn_model):
        m = with_params(dyn_model, W_2=np.zeros((5, 4)))
        target = [4, 3, 4]
        assert sentence_loss(m, [3, 4], target).item() == pytest.approx(4 * math.log(5))

    def test_non_negative(self):
        for seed in range(10):
            assert sentence_loss(toy_model(seed=seed, scale=2.0), [3, 4, 4], [4, 3]).item() >= 0

    def test_gradient(self, dyn_model):
        errors = check_params(lambda: sentence_loss(dyn_model, [3, 4], [4, 3]), dyn_model.params)
        assert max(errors.values()) < 1e-3, errors


def _copy_pairs(n, seed=0, **kw):
    corpus = generate_synthetic(SyntheticSpec("copy", n, seed=seed, **kw))
    v = build_vocab(corpus.sources, 100)
    return encode_corpus(corpus, v, v), v


def _small(vocab, use_dyn=True, k=0, seed=0):
    return Seq2Seq.initialize(ModelConfig(len(vocab), len(vocab), emb=8, hidden=8, mem=4, k=k, use_dyn=use_dyn),
                              seed=seed)


class TestLoop:
    def test_zero_epochs_returns_initial_model(self):
        pairs, v = _copy_pairs(10)
        model = _small(v)
        before = checkpoint.dumps(model)
        trained, report = train(pairs, TrainConfig(total_epochs=0), model)
        assert checkpoint.dumps(trained) == before
        assert report.epochs == []

    def test_report_and_checkpoints(self, tmp_path):
        pairs, v = _copy_pairs(12)
        cfg = TrainConfig(total_epochs=3, batch_size=4, halve_start_epoch=1)
        _, report = train(pairs, cfg, _small(v), valid=pairs[:3], out_dir=tmp_path, vocabs=(v, v))
        assert report.learning_rates == [lr_schedule(e, cfg) for e in (1, 2, 3)]
        rows = (tmp_path / "report.tsv").read_text(encoding="utf-8").splitlines()
        assert rows[0] + "\n" == REPORT_HEADER
        assert [r.split("\t")[0] for r in rows[1:]] == ["1", "2", "3"]
        assert all(math.isfinite(float(r.split("\t")[3])) for r in rows[1:])
        assert sorted(p.name for p in tmp_path.glob("*.ckpt")) == [
            "epoch001.ckpt", "epoch002.ckpt", "epoch003.ckpt", "model.ckpt"]
        assert (tmp_path / "model.ckpt").read_bytes() == (tmp_path / "epoch003.ckpt").read_bytes()

    def test_bit_deterministic(self):
        pairs, v = _copy_pairs(20)
        cfg = TrainConfig(total_epochs=2, batch_size=6, k=1)
        a, _ = train(pairs, cfg, _small(v, k=1))
        b, _ = train(pairs, cfg, _small(v, k=1))
        assert checkpoint.dumps(a) == checkpoint.dumps(b)

    def test_single_pair_loss_decreases(self):
        pairs, v = _copy_pairs(1, min_len=4, max_len=4)
        model = Seq2Seq.initialize(ModelConfig(len(v), len(v)), seed=0)
        batch = batch_padding(pairs)
        losses = [sgd_step(model, batch, 0.05, 3.0) for _ in range(10)]
        assert all(a >= b for a, b in zip(losses, losses[1:])), losses

    def test_length_filter(self):
        pairs, v = _copy_pairs(10, min_len=6, max_len=6)
        with pytest.raises(ContractError, match="empty after length filtering"):
            train(pairs, TrainConfig(max_len=5, total_epochs=1), _small(v))

    def test_non_finite_loss_names_batch(self):
        pairs, v = _copy_pairs(4)
        model = _small(v)
        model.params["W_2"].data[0, 0] = np.inf
        with pytest.raises(TrainingError, match="batch 0"):
            sgd_step(model, batch_padding(pairs), 0.1, 3.0)

    def test_perplexity_of_uniform_model(self):
        pairs, v = _copy_pairs(6)
        model = _small(v)
        model.params["W_2"].data[...] = 0
        assert perplexity(model, pairs) == pytest.approx(len(v), rel=1e-5)

    @pytest.mark.slow
    def test_fifty_pair_copy_converges(self):
        # desk layer sizes, 30 epochs; one pair per update gives the most steps
        pairs, v = _copy_pairs(50)
        model = Seq2Seq.initialize(ModelConfig(len(v), len(v)), seed=0)
        cfg = TrainConfig(batch_size=1, lr_initial=0.7, total_epochs=30, halve_start_epoch=30)
        _, report = train(pairs, cfg, model)
        assert report.final_nll < 0.1
