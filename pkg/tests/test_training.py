import math

import numpy as np
import pytest

from sslreg import autodiff as ad
from sslreg.autodiff import Tape, Tensor
from sslreg.masking import mask_tokens
from sslreg.model import EncoderConfig, ModelParams
from sslreg.synthetic import make_task, sample_examples
from sslreg.text import StopwordSet, build_vocab, encode, make_lexicon
from sslreg.training import (AdamW, TrainConfig, classification_loss, combine_losses,
                             joint_loss, lr_at, mtp_loss, satp_loss, train)

NO_STOP = StopwordSet(frozenset())


def small_setup(dtype=np.float64, seed=0, num_layers=1):
    words = [f"w{i}" for i in range(20)]
    vocab = build_vocab([words], min_freq=1)
    cfg = EncoderConfig(vocab_size=len(vocab), num_layers=num_layers, num_heads=2,
                        d_model=16, d_ff=32, max_len=16, dropout=0.0)
    params = ModelParams.init(cfg, 2, 4, np.random.default_rng(seed), dtype)
    return vocab, cfg, params


class TestLrSchedule:
    def test_peak_at_warmup_end(self):
        assert lr_at(6, 100, 0.06, 2e-5) == 2e-5

    def test_zero_at_final_step(self):
        assert lr_at(100, 100, 0.06, 2e-5) == 0.0

    def test_linear_midpoint_of_decay(self):
        # (100 - 53) / (100 - 6) = 0.5
        assert lr_at(53, 100, 0.06, 1.0) == pytest.approx(0.5, rel=1e-12)

    def test_ramp_is_linear(self):
        assert lr_at(3, 100, 0.06, 1.0) == pytest.approx(0.5, rel=1e-12)
        assert lr_at(0, 100, 0.06, 1.0) == 0.0

    def test_no_warmup_starts_at_peak(self):
        assert lr_at(0, 50, 0.0, 1.0) == 1.0

    def test_beyond_total_is_zero(self):
        assert lr_at(120, 100, 0.06, 1.0) == 0.0


class TestAdamW:
    def test_single_step_oracle(self):
        # g=1, beta=(0.9, 0.98): mhat = vhat = 1, update = lr / (1 + eps)
        w = Tensor(np.array([1.0]), dtype=np.float64)
        w.grad = np.array([1.0])
        opt = AdamW({"w": w}, beta1=0.9, beta2=0.98, eps=1e-6, weight_decay=0.0)
        opt.step(lr=0.1)
        expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-6)
        assert w.data[0] == pytest.approx(expected, abs=1e-15)
        assert abs(w.data[0] - 0.9) < 1e-6

    def test_decay_only_when_gradient_zero(self):
        w = Tensor(np.array([2.0]), dtype=np.float64)
        w.grad = np.array([0.0])
        opt = AdamW({"w": w}, weight_decay=0.1)
        opt.step(lr=0.5)
        assert w.data[0] == pytest.approx(2.0 * (1 - 0.5 * 0.1), abs=1e-15)

    def test_bias_and_layernorm_exempt_from_decay(self):
        b = Tensor(np.array([2.0]), dtype=np.float64, name="layers.0.ln1.b")
        b.grad = np.array([0.0])
        opt = AdamW({"layers.0.ln1.b": b}, weight_decay=0.1)
        opt.step(lr=0.5)
        assert b.data[0] == 2.0

    def test_params_without_grad_untouched(self):
        w = Tensor(np.array([2.0]), dtype=np.float64)
        opt = AdamW({"w": w}, weight_decay=0.1)
        opt.step(lr=0.5)
        assert w.data[0] == 2.0

    def test_ten_steps_bitwise_reproducible(self):
        def run():
            _, _, params = small_setup()
            opt = AdamW(params, weight_decay=0.1)
            rng = np.random.default_rng(7)
            ids = [2, 7, 8, 9]
            for step in range(10):
                tape = Tape()
                loss = classification_loss(params, [(ids, step % 2)], False, tape)
                tape.backward(loss)
                opt.step(0.01)
                params.zero_grads()
            return {n: t.data.copy() for n, t in params.tensors.items()}

        a, b = run(), run()
        for name in a:
            assert a[name].tobytes() == b[name].tobytes()


class TestLosses:
    def test_uniform_classification_loss_is_log2(self):
        vocab, cfg, params = small_setup()
        for name in ("head.cls.w1", "head.cls.b1", "head.cls.w2", "head.cls.b2"):
            params[name].data[:] = 0.0
        loss = classification_loss(params, [([2, 7], 0), ([2, 8], 1)])
        assert loss.item() == pytest.approx(math.log(2), rel=1e-12)

    def test_batch_mean_matches_hand_computation(self):
        vocab, cfg, params = small_setup()
        items = [([2, 7], 0), ([2, 8], 1), ([2, 9, 10], 1)]
        loss = classification_loss(params, items)
        from sslreg.model import classification_logits
        expected = 0.0
        for ids, label in items:
            logits = classification_logits(params, ids).data[0]
            p = np.exp(logits - logits.max())
            p /= p.sum()
            expected += -math.log(p[label])
        assert loss.item() == pytest.approx(expected / 3, rel=1e-10)

    def test_untrained_mtp_loss_near_log_vocab(self):
        vocab, cfg, params = small_setup()
        rng = np.random.default_rng(1)
        ids = encode([f"w{i}" for i in range(10)], vocab, 16)
        instances = [mask_tokens(ids, 0.3, vocab, rng) for _ in range(6)]
        loss = mtp_loss(params, instances)
        logv = math.log(len(vocab))
        assert abs(loss.item() - logv) < 0.06 * logv

    def test_mtp_single_position_hand_computed(self):
        vocab, cfg, params = small_setup()
        ids = encode(["w3", "w4"], vocab, 16)
        rng = np.random.default_rng(2)
        inst = mask_tokens(ids, 0.4, vocab, rng)
        loss = mtp_loss(params, [inst])
        from sslreg.model import encode as enc_fwd, mtp_head
        hidden = enc_fwd(params, inst.input_ids)
        logits = mtp_head(params, hidden, inst.mask_positions).data
        expected = 0.0
        for row, pos in zip(logits, sorted(inst.mask_positions)):
            p = np.exp(row - row.max())
            p /= p.sum()
            expected += -math.log(p[inst.target_ids[pos]])
        assert loss.item() == pytest.approx(expected / len(inst.mask_positions), rel=1e-10)

    def test_mtp_all_skips_returns_none(self):
        _, _, params = small_setup()
        assert mtp_loss(params, [None, None]) is None

    def test_mtp_loss_ignores_unmasked_rows(self):
        # zero-layer encoder: no attention path, so an unmasked token's
        # embedding cannot influence the masked positions' logits
        vocab, _, _ = small_setup()
        cfg = EncoderConfig(vocab_size=len(vocab), num_layers=0, num_heads=2,
                            d_model=16, d_ff=32, max_len=16, dropout=0.0)
        params = ModelParams.init(cfg, 2, 4, np.random.default_rng(0), np.float64)
        from sslreg.masking import MaskedInstance
        inst = MaskedInstance((2, vocab.mask_id, 9), (2, 8, 9), (1,))
        before = mtp_loss(params, [inst]).item()
        params["tok_emb"].data[9] += 5.0  # unmasked position's embedding
        after = mtp_loss(params, [inst]).item()
        assert before == after

    def test_satp_loss_uniform_at_zero_head(self):
        vocab, cfg, params = small_setup()
        for name in ("head.satp.w1", "head.satp.b1", "head.satp.w2", "head.satp.b2"):
            params[name].data[:] = 0.0
        items = [([2, 7, 8], 0), ([2, 9], 3)]
        loss = satp_loss(params, items)
        assert loss.item() == pytest.approx(math.log(4), rel=1e-12)


class TestJointObjective:
    def test_combine_arithmetic(self):
        lc = Tensor(np.asarray(2.0), dtype=np.float64)
        lp = Tensor(np.asarray(3.0), dtype=np.float64)
        assert combine_losses(lc, lp, 0.1).item() == pytest.approx(2.3, rel=1e-12)

    def test_lambda_zero_skips_ssl_branch_entirely(self):
        vocab, cfg, params = small_setup()

        class Exploding:
            def __getattr__(self, name):
                raise AssertionError("ssl branch must not run at lambda=0")

        total, lc, lp = joint_loss(params, [([2, 7], 0)], Exploding(), 0.0, "mtp")
        assert lp == 0.0 and total.item() == lc

    def test_negative_lambda_rejected(self):
        vocab, cfg, params = small_setup()
        with pytest.raises(ValueError):
            joint_loss(params, [([2, 7], 0)], [], -0.1, "mtp")

    def _grads_at(self, lambda_, seed=3):
        vocab, cfg, params = small_setup()
        rng = np.random.default_rng(seed)
        ids = encode([f"w{i}" for i in range(8)], vocab, 16)
        inst = mask_tokens(ids, 0.25, vocab, np.random.default_rng(9))
        tape = Tape()
        total, _, _ = joint_loss(params, [(ids, 1)], [inst], lambda_, "mtp", False, tape)
        tape.backward(total)
        return {n: (t.grad.copy() if t.grad is not None else None)
                for n, t in params.tensors.items()}

    def test_classification_head_gradient_independent_of_lambda(self):
        g1 = self._grads_at(0.3)
        g2 = self._grads_at(0.6)
        for name in ("head.cls.w1", "head.cls.w2", "head.cls.b2"):
            np.testing.assert_allclose(g1[name], g2[name], rtol=1e-12)

    def test_ssl_head_gradient_scales_linearly_in_lambda(self):
        g1 = self._grads_at(0.3)
        g2 = self._grads_at(0.6)
        for name in ("head.mtp.w", "head.mtp.b"):
            np.testing.assert_allclose(2.0 * g1[name], g2[name], rtol=1e-6)

    def test_joint_gradient_is_lambda_weighted_sum(self):
        lam = 0.37
        joint = self._grads_at(lam)
        vocab, cfg, params = small_setup()
        ids = encode([f"w{i}" for i in range(8)], vocab, 16)
        inst = mask_tokens(ids, 0.25, vocab, np.random.default_rng(9))

        tape_c = Tape()
        tape_c.backward(classification_loss(params, [(ids, 1)], False, tape_c))
        gc = {n: (t.grad.copy() if t.grad is not None else 0) for n, t in params.tensors.items()}
        params.zero_grads()
        tape_p = Tape()
        tape_p.backward(mtp_loss(params, [inst], False, tape_p))
        gp = {n: (t.grad.copy() if t.grad is not None else 0) for n, t in params.tensors.items()}

        for name, g in joint.items():
            if g is None:
                continue
            np.testing.assert_allclose(g, gc[name] + lam * gp[name], rtol=1e-6, atol=1e-12)


class TestConfigValidation:
    def test_unknown_regime(self):
        with pytest.raises(ValueError, match="regime"):
            TrainConfig(regime="nope").validate()

    def test_lambda_with_unregularized_rejected(self):
        with pytest.raises(ValueError, match="lambda"):
            TrainConfig(regime="unregularized", lambda_=0.1).validate()

    def test_lambda_with_tapt_rejected(self):
        with pytest.raises(ValueError, match="lambda"):
            TrainConfig(regime="tapt", lambda_=0.5).validate()

    def test_lambda_zero_with_ssl_regime_allowed(self):
        TrainConfig(regime="ssl_reg_mtp", lambda_=0.0).validate()

    def test_tapt_plus_ssl_reg_takes_lambda(self):
        TrainConfig(regime="tapt_plus_ssl_reg", lambda_=0.3).validate()

    def test_bounds(self):
        with pytest.raises(ValueError):
            TrainConfig(warmup_proportion=1.0).validate()
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0).validate()
        with pytest.raises(ValueError):
            TrainConfig(p_mask=1.0).validate()
        with pytest.raises(ValueError):
            TrainConfig(active_ops=()).validate()


@pytest.fixture(scope="module")
def tiny_data():
    task = make_task(2, 60)
    train_examples = sample_examples(task, 48, 0.4, np.random.default_rng(10), 5, 9)
    dev_examples = sample_examples(task, 24, 0.4, np.random.default_rng(11), 5, 9)
    vocab = build_vocab([list(e.tokens) for e in train_examples], 1)
    enc = EncoderConfig(vocab_size=len(vocab), num_layers=1, num_heads=2,
                        d_model=16, d_ff=32, max_len=12, dropout=0.1)
    return task, train_examples, dev_examples, vocab, enc


class TestTrainLoop:
    def test_learning_reduces_loss(self, tiny_data):
        task, tr, dev, vocab, enc = tiny_data
        cfg = TrainConfig(regime="unregularized", lr_max=3e-3, epochs=3,
                          batch_size=16, seed=0)
        result = train(tr, dev, vocab, enc, cfg)
        records = result.history.records
        assert len(records) == 3
        assert records[-1].loss_c < records[0].loss_c

    def test_lambda_zero_matches_unregularized_bitwise(self, tiny_data):
        task, tr, dev, vocab, enc = tiny_data
        base = dict(lr_max=3e-3, epochs=2, batch_size=16, seed=5)
        r1 = train(tr, dev, vocab, enc, TrainConfig(regime="unregularized", **base))
        r2 = train(tr, dev, vocab, enc, TrainConfig(regime="ssl_reg_mtp", lambda_=0.0, **base))
        assert r1.history.to_jsonl() == r2.history.to_jsonl()
        for name, t in r1.params.tensors.items():
            assert t.data.tobytes() == r2.params.tensors[name].data.tobytes()

    def test_fixed_seed_reproduces_history_bitwise(self, tiny_data):
        task, tr, dev, vocab, enc = tiny_data
        cfg = TrainConfig(regime="ssl_reg_mtp", lambda_=0.2, lr_max=3e-3,
                          epochs=2, batch_size=16, seed=3)
        h1 = train(tr, dev, vocab, enc, cfg).history.to_jsonl()
        h2 = train(tr, dev, vocab, enc, cfg).history.to_jsonl()
        assert h1 == h2

    def test_gradient_accumulation_matches_single_batch(self, tiny_data):
        # one epoch, full-batch step, float64: k micro-batches == one big step.
        # Dropout off: chunking reorders dropout draws, which is orthogonal
        # to the accumulation arithmetic being checked here.
        task, tr, dev, vocab, enc = tiny_data
        enc = EncoderConfig(vocab_size=enc.vocab_size, num_layers=enc.num_layers,
                            num_heads=enc.num_heads, d_model=enc.d_model,
                            d_ff=enc.d_ff, max_len=enc.max_len, dropout=0.0)
        results = []
        for accum in (1, 4):
            cfg = TrainConfig(regime="ssl_reg_mtp", lambda_=0.3, lr_max=1e-3,
                              epochs=1, batch_size=48, grad_accum_steps=accum, seed=2)
            r = train(tr, dev, vocab, enc, cfg, dtype=np.float64)
            results.append(r.params)
        for name, t in results[0].tensors.items():
            np.testing.assert_allclose(t.data, results[1].tensors[name].data,
                                       rtol=1e-6, atol=1e-12)

    def test_satp_regime_runs_and_learns(self, tiny_data):
        task, tr, dev, vocab, enc = tiny_data
        cfg = TrainConfig(regime="ssl_reg_satp", lambda_=0.3, lr_max=3e-3,
                          epochs=3, batch_size=16, seed=0)
        result = train(tr, dev, vocab, enc, cfg, lexicon=task.lexicon,
                       stopwords=StopwordSet(frozenset()))
        assert result.history.records[-1].loss_p > 0

    def test_tapt_phases_and_head_reinit(self, tiny_data):
        task, tr, dev, vocab, enc = tiny_data
        cfg = TrainConfig(regime="tapt", lr_max=3e-3, epochs=2, tapt_epochs=2,
                          batch_size=16, seed=1)
        result = train(tr, dev, vocab, enc, cfg)
        phases = [r.phase for r in result.history.records]
        assert phases == ["pretrain", "pretrain", "finetune", "finetune"]
        pre = [r for r in result.history.records if r.phase == "pretrain"]
        assert all(r.dev is None for r in pre)
        assert all(r.loss_p > 0 and r.loss_c == 0.0 for r in pre)
        fin = [r for r in result.history.records if r.phase == "finetune"]
        assert all(r.dev is not None and r.loss_c > 0 for r in fin)

    def test_tapt_plus_ssl_reg_regularizes_finetuning(self, tiny_data):
        task, tr, dev, vocab, enc = tiny_data
        cfg = TrainConfig(regime="tapt_plus_ssl_reg", lambda_=0.2, lr_max=3e-3,
                          epochs=2, tapt_epochs=1, batch_size=16, seed=1)
        result = train(tr, dev, vocab, enc, cfg)
        fin = [r for r in result.history.records if r.phase == "finetune"]
        assert all(r.loss_p > 0 and r.lambda_ == 0.2 for r in fin)

    def test_best_dev_checkpoint_tracked(self, tiny_data):
        task, tr, dev, vocab, enc = tiny_data
        cfg = TrainConfig(regime="unregularized", lr_max=3e-3, epochs=3,
                          batch_size=16, seed=0)
        result = train(tr, dev, vocab, enc, cfg)
        best_rec = result.history.records[result.best_epoch - 1]
        assert best_rec.dev["macro_f1"] == max(r.dev["macro_f1"]
                                               for r in result.history.records)

    def test_empty_split_rejected(self, tiny_data):
        task, tr, dev, vocab, enc = tiny_data
        with pytest.raises(ValueError):
            train([], dev, vocab, enc, TrainConfig())
