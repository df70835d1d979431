import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from pydantic import ValidationError

from action_rnn import checkpoint
from action_rnn.datapipe import Batch, EncodedSequence, build_vocab, prepare, step_mask
from action_rnn.errors import ConfigError, ContractViolation, NumericError, TrainingDiverged
from action_rnn.evaluation import evaluate
from action_rnn.grad import backward, sequence_loss
from action_rnn.model import PARAM_ORDER, Variant, init_params
from action_rnn.numkernel import make_rng
from action_rnn.training import (
    GRAD_CHUNK, TrainConfig, TrainHistory, batch_gradients, lr_schedule, nll_loss,
    require_click_steps, train,
)


def small_config(**overrides):
    values = dict(d=6, k=6, batch_size=8, iterations=40, log_every=10, seed=0)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture(scope="module")
def corpus(small_corpus):
    sessions, _ = small_corpus
    vocab = build_vocab(sessions, min_count=2)
    return prepare(sessions, vocab), vocab.size


class TestSchedule:
    def test_endpoints_are_exact(self):
        config = TrainConfig()
        assert lr_schedule(config, 0) == 0.01
        assert lr_schedule(config, 10000) == 0.001

    def test_strictly_decreasing(self):
        config = TrainConfig()
        lrs = [lr_schedule(config, s) for s in range(0, 10001, 50)]
        assert all(a > b for a, b in zip(lrs, lrs[1:]))

    def test_inverse_square_root_shape(self):
        config = TrainConfig()
        # 1/lr^2 is linear in the step
        inv = [lr_schedule(config, s) ** -2 for s in (0, 2500, 5000)]
        assert inv[1] - inv[0] == pytest.approx(inv[2] - inv[1])

    def test_step_out_of_range(self):
        with pytest.raises(ContractViolation):
            lr_schedule(TrainConfig(iterations=10), 11)


class TestConfig:
    def test_defaults(self):
        config = TrainConfig()
        assert (config.d, config.k, config.batch_size) == (40, 40, 64)
        assert config.variant == Variant.LATE

    def test_learning_rates_ordered(self):
        with pytest.raises(ValidationError):
            TrainConfig(lr_start=0.001, lr_end=0.01)

    def test_unknown_variant(self):
        with pytest.raises(ValidationError):
            TrainConfig(variant="mid")

    def test_clicks_trains_on_clicks_only(self):
        assert TrainConfig(variant=Variant.CLICKS).mask_mode == "clicks_only"


class TestLoss:
    def test_uniform_logits(self):
        assert nll_loss(np.zeros((3, 20)), [1, 2, 3], [True] * 3) == pytest.approx(math.log(20))

    def test_mask_excludes_steps(self):
        logits = np.array([[5.0, 0.0], [0.0, 5.0]])
        full = nll_loss(logits, [0, 0], [True, True])
        masked = nll_loss(logits, [0, 0], [True, False])
        assert masked < full

    def test_everything_masked(self):
        with pytest.raises(ContractViolation):
            nll_loss(np.zeros((2, 3)), [0, 1], [False, False])


class TestHistory:
    def test_iterations_must_increase(self):
        history = TrainHistory()
        history.record(0, 1.0, 0.01, 0.0)
        with pytest.raises(ContractViolation):
            history.record(0, 1.0, 0.01, 0.0)

    def test_csv(self, tmp_path):
        history = TrainHistory()
        history.record(0, 2.5, 0.01, 0.0)
        history.record(1, 2.25, 0.009, 1.23456)
        history.to_csv(tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().splitlines() == [
            "iteration,loss,lr,seconds",
            "0,2.5,0.01,0.000",
            "1,2.25,0.009,1.235",
        ]


class TestTrain:
    def test_loss_goes_down(self, corpus):
        seqs, V_x = corpus
        config = small_config(iterations=1000, batch_size=16, log_every=100)
        _, history = train(config, seqs, V_x=V_x, clock=None)
        assert len(history) == 1000
        assert history.mean_loss(900, 1000) < history.mean_loss(0, 100)
        assert history.mean_loss(900, 1000) < 0.8 * history.loss[0]

    def test_deterministic(self, corpus, tmp_path):
        seqs, V_x = corpus
        a_params, a_hist = train(small_config(), seqs, V_x=V_x, clock=None)
        b_params, b_hist = train(small_config(), seqs, V_x=V_x, clock=None)
        a_hist.to_csv(tmp_path / "a.csv")
        b_hist.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        for name in PARAM_ORDER:
            np.testing.assert_array_equal(getattr(a_params, name), getattr(b_params, name))

    def test_thread_count_does_not_change_the_result(self, corpus):
        seqs, V_x = corpus
        one, _ = train(small_config(threads=1), seqs, V_x=V_x, clock=None)
        four, _ = train(small_config(threads=4), seqs, V_x=V_x, clock=None)
        for name in PARAM_ORDER:
            np.testing.assert_array_equal(getattr(one, name), getattr(four, name))

    def test_history_follows_schedule(self, corpus):
        seqs, V_x = corpus
        config = small_config(iterations=20)
        _, history = train(config, seqs, V_x=V_x, clock=None)
        assert history.iteration == list(range(20))
        assert history.lr == [lr_schedule(config, i) for i in range(20)]
        assert set(history.seconds) == {0.0}

    def test_clicks_variant_needs_clicks(self):
        seqs = [EncodedSequence(items=(1, 2, 3), recs=((), (), ()))] * 4
        with pytest.raises(ConfigError, match="variant"):
            train(small_config(variant=Variant.CLICKS), seqs, V_x=5, clock=None)

    def test_click_step_count(self, corpus, rec_sequence, plain_sequence):
        seqs, _ = corpus
        n = require_click_steps(small_config(variant=Variant.CLICKS), seqs)
        assert n == sum(sum(s.click_target) for s in seqs) > 0
        assert require_click_steps(small_config(), [plain_sequence]) == 0
        assert require_click_steps(small_config(), [rec_sequence, plain_sequence]) == 1

    def test_clicks_variant_trains(self, corpus):
        seqs, V_x = corpus
        params, history = train(small_config(variant=Variant.CLICKS), seqs, V_x=V_x, clock=None)
        assert np.isfinite(history.loss).all()
        assert params.V_x == V_x

    def test_checkpoints(self, corpus, tmp_path):
        seqs, V_x = corpus
        params, _ = train(
            small_config(iterations=20, eval_every=10), seqs, seqs[:5], V_x=V_x,
            checkpoint_dir=tmp_path, clock=None,
        )
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "model.ckpt", "model_10.ckpt", "model_20.ckpt",
        ]
        loaded, variant = checkpoint.load(tmp_path / "model.ckpt")
        assert variant == Variant.LATE
        np.testing.assert_array_equal(loaded.W_out, params.W_out)

    def test_divergence_keeps_last_good_model(self, corpus, tmp_path, monkeypatch):
        seqs, V_x = corpus

        def explode(*args):
            raise NumericError("non-finite logits at step 0")

        monkeypatch.setattr("action_rnn.training.batch_backward", explode)
        with pytest.raises(TrainingDiverged) as exc:
            train(small_config(), seqs, V_x=V_x, checkpoint_dir=tmp_path, clock=None)
        assert exc.value.iteration == 0
        assert exc.value.last_good is not None
        assert (tmp_path / "model.ckpt").exists()


class TestRandomScorer:
    """An untrained model should rank like chance."""

    @pytest.fixture(scope="class")
    def random_sequences(self):
        rng = np.random.default_rng(123)
        return [
            EncodedSequence(items=tuple(int(i) for i in rng.integers(0, 100, 11)), recs=((),) * 11)
            for _ in range(1000)
        ]

    def test_initial_nll_near_log_v(self, random_sequences):
        params = init_params(make_rng(0), V_x=100)
        mask = [True] * 10
        total = sum(sequence_loss(params, s, Variant.NAVIGATION, mask) for s in random_sequences)
        assert total / 10000 == pytest.approx(math.log(100), rel=0.05)

    def test_precision_at_10_near_chance(self, random_sequences):
        params = init_params(make_rng(0), V_x=100)
        _, report = evaluate(params, Variant.NAVIGATION, random_sequences, K=10, n_boot=5)
        assert report.counts["global"] == 10000
        assert report.precision_global == pytest.approx(0.10, abs=0.02)


class TestBatchGradients:
    @pytest.fixture
    def batch(self, corpus):
        seqs, _ = corpus
        chosen = list(seqs[: 2 * GRAD_CHUNK + 3])
        return Batch(sequences=chosen, loss_mask=[step_mask(s) for s in chosen])

    def test_chunks_add_up_to_single_sequences(self, corpus, batch):
        _, V_x = corpus
        params = init_params(make_rng(4), V_x=V_x, d=6, k=6)
        loss, grads = batch_gradients(params, batch, Variant.EARLY)
        expected_loss = 0.0
        expected = {name: np.zeros_like(t) for name, t in params.items()}
        for seq, mask in zip(batch.sequences, batch.loss_mask):
            l, g = backward(params, seq, Variant.EARLY, mask)
            expected_loss += l
            for name in PARAM_ORDER:
                expected[name] += getattr(g, name)
        assert loss == pytest.approx(expected_loss, rel=1e-12)
        for name in PARAM_ORDER:
            np.testing.assert_allclose(getattr(grads, name), expected[name], atol=1e-12)

    def test_pool_gives_identical_sums(self, corpus, batch):
        _, V_x = corpus
        params = init_params(make_rng(4), V_x=V_x, d=6, k=6)
        serial = batch_gradients(params, batch, Variant.LATE)
        with ThreadPoolExecutor(max_workers=3) as pool:
            pooled = batch_gradients(params, batch, Variant.LATE, pool)
        assert serial[0] == pooled[0]
        for name in PARAM_ORDER:
            np.testing.assert_array_equal(getattr(serial[1], name), getattr(pooled[1], name))
