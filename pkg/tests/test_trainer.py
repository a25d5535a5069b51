"""Tests for the alternating training loop."""

import io
import json

import numpy as np
import pytest

from xmhash import ndcore as nd
from xmhash.datamodel import synth_dataset
from xmhash.errors import ContractError, DivergenceError
from xmhash.trainer import (
    TrainConfig,
    adversary_phase,
    consolidate_codes,
    epoch_batches,
    evaluate_adversarial,
    generator_phase,
    init_state,
    train,
)


@pytest.fixture(scope="module")
def micro_dataset():
    return synth_dataset(n=12, c=3, d_v=5, d_t=9, noise=0.1, seed=3)


def micro_config(**overrides):
    base = dict(
        code_length=4,
        batch_size=6,
        lr=1e-3,
        t_max=2,
        width_factor=1.0 / 256.0,
        seed=1,
    )
    base.update(overrides)
    return TrainConfig(**base)


def param_snapshot(params):
    return [p.value.tobytes() for p in params]


class TestConfig:
    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.code_length == 16
        assert cfg.batch_size == 128
        assert cfg.lr == 1e-4
        assert cfg.alpha == 1.0 and cfg.gamma == 1.0
        assert cfg.eta == 1e-4 and cfg.beta == 1e-4

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"code_length": 0},
            {"lr": 0.0},
            {"lr": -1e-4},
            {"batch_size": 0},
            {"t_max": -1},
            {"inner_iters": 0},
            {"width_factor": 0.0},
            {"eta": -1.0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ContractError):
            TrainConfig(**kwargs)


class TestBatches:
    def test_partition_covers_all_indices(self):
        rng = np.random.default_rng(0)
        batches = epoch_batches(11, 4, rng)
        assert [len(b) for b in batches] == [4, 4, 3]
        merged = np.concatenate(batches)
        assert sorted(merged.tolist()) == list(range(11))

    def test_batch_larger_than_n(self):
        rng = np.random.default_rng(0)
        batches = epoch_batches(3, 100, rng)
        assert len(batches) == 1 and len(batches[0]) == 3


class TestInitState:
    def test_zero_epochs_returns_initial_state(self, micro_dataset):
        state = train(micro_dataset, micro_config(t_max=0))
        assert state.epoch == 0
        assert state.history == []
        assert state.codes.shape == (micro_dataset.n, 4)
        assert np.isin(state.codes, (-1.0, 1.0)).all()

    def test_initial_codes_match_manual_consolidation(self, micro_dataset):
        cfg = micro_config()
        state = init_state(micro_dataset, cfg)
        tape = nd.Tape()
        labels = micro_dataset.labels.astype(np.float64)
        h_l = state.models.labnet.forward(tape, labels, trainable=False).hash_real.value
        h_v = state.models.imgnet.forward(tape, micro_dataset.images, trainable=False).hash_real.value
        h_t = state.models.txtnet.forward(tape, micro_dataset.texts, trainable=False).hash_real.value
        expected = np.where(h_v + h_t + h_l >= 0.0, 1.0, -1.0)
        np.testing.assert_array_equal(state.codes, expected)


class TestPhaseIsolation:
    def assert_only_changed(self, state, changed_params, frozen_params, before_changed, before_frozen):
        after_changed = param_snapshot(changed_params)
        after_frozen = param_snapshot(frozen_params)
        assert any(a != b for a, b in zip(after_changed, before_changed))
        assert all(a == b for a, b in zip(after_frozen, before_frozen))

    def run_phase(self, micro_dataset, which):
        cfg = micro_config()
        state = init_state(micro_dataset, cfg)
        m = state.models
        groups = {
            "lab": m.labnet.params(),
            "img": m.imgnet.params(),
            "txt": m.txtnet.params(),
            "disc": m.disc_img.params() + m.disc_txt.params(),
        }
        changed = groups.pop(which)
        frozen = [p for group in groups.values() for p in group]
        before_changed = param_snapshot(changed)
        before_frozen = param_snapshot(frozen)
        batches = epoch_batches(micro_dataset.n, cfg.batch_size, np.random.default_rng(0))
        if which == "disc":
            adversary_phase(state, micro_dataset, batches, cfg)
        else:
            generator_phase(state, micro_dataset, batches, which, cfg)
        self.assert_only_changed(state, changed, frozen, before_changed, before_frozen)

    def test_lab_phase_touches_only_labnet(self, micro_dataset):
        self.run_phase(micro_dataset, "lab")

    def test_img_phase_touches_only_imgnet(self, micro_dataset):
        self.run_phase(micro_dataset, "img")

    def test_txt_phase_touches_only_txtnet(self, micro_dataset):
        self.run_phase(micro_dataset, "txt")

    def test_adversary_phase_touches_only_discriminators(self, micro_dataset):
        self.run_phase(micro_dataset, "disc")

    def test_unknown_phase_rejected(self, micro_dataset):
        cfg = micro_config()
        state = init_state(micro_dataset, cfg)
        with pytest.raises(ContractError):
            generator_phase(state, micro_dataset, [], "bogus", cfg)

    def test_adversarial_gradient_reaches_generator(self, micro_dataset):
        # With all objective weights zero, only the adversarial term can move
        # the generator, and it must flow through the frozen discriminator.
        cfg = micro_config(alpha=0.0, gamma=0.0, eta=0.0, beta=0.0)
        state = init_state(micro_dataset, cfg)
        before = param_snapshot(state.models.imgnet.params())
        batches = [np.arange(micro_dataset.n)]
        generator_phase(state, micro_dataset, batches, "img", cfg)
        after = param_snapshot(state.models.imgnet.params())
        assert any(a != b for a, b in zip(after, before))


class TestAdversaryPhase:
    def test_single_step_decreases_adversarial_loss(self, micro_dataset):
        cfg = micro_config()
        state = init_state(micro_dataset, cfg)
        idx = np.arange(micro_dataset.n)
        before = sum(evaluate_adversarial(state, micro_dataset, idx))
        adversary_phase(state, micro_dataset, [idx], cfg)
        after = sum(evaluate_adversarial(state, micro_dataset, idx))
        assert after < before

    def test_inner_iters_repeat_steps(self, micro_dataset):
        idx = np.arange(micro_dataset.n)
        results = []
        for iters in (1, 3):
            cfg = micro_config(inner_iters=iters)
            state = init_state(micro_dataset, cfg)
            adversary_phase(state, micro_dataset, [idx], cfg)
            results.append(sum(evaluate_adversarial(state, micro_dataset, idx)))
        assert results[1] < results[0]


class TestTrain:
    def test_two_runs_bitwise_identical(self, micro_dataset):
        cfg = micro_config()
        a = train(micro_dataset, cfg)
        b = train(micro_dataset, cfg)
        for pa, pb in zip(a.models.all_params(), b.models.all_params()):
            assert pa.value.tobytes() == pb.value.tobytes()
        np.testing.assert_array_equal(a.codes, b.codes)
        for ma, mb in zip(a.history, b.history):
            assert ma.to_json_dict().keys() == mb.to_json_dict().keys()
            assert ma.l_gen == mb.l_gen and ma.l_adv == mb.l_adv

    def test_epoch_count_and_history(self, micro_dataset):
        cfg = micro_config(t_max=3)
        state = train(micro_dataset, cfg)
        assert state.epoch == 3
        assert [m.epoch for m in state.history] == [1, 2, 3]
        for m in state.history:
            assert np.isfinite(m.l_gen) and np.isfinite(m.l_adv)
            assert m.wall_ms > 0.0
            assert m.l_gen == pytest.approx(m.lab.total + m.img.total + m.txt.total)
            assert m.l_adv == pytest.approx(m.adv_v + m.adv_t)

    def test_codes_consolidated_after_training(self, micro_dataset):
        cfg = micro_config()
        state = train(micro_dataset, cfg)
        assert np.isin(state.codes, (-1.0, 1.0)).all()
        np.testing.assert_array_equal(
            state.codes, consolidate_codes(state.models, micro_dataset)
        )

    def test_jsonl_log(self, micro_dataset):
        cfg = micro_config(t_max=2)
        stream = io.StringIO()
        state = train(micro_dataset, cfg, log_stream=stream)
        lines = stream.getvalue().strip().split("\n")
        assert len(lines) == 2
        expected_keys = {"epoch", "adv_v", "adv_t", "l_gen", "l_adv", "wall_ms"}
        for name in ("lab", "img", "txt"):
            for part in ("j1", "j2", "j3", "j4", "total"):
                expected_keys.add(f"{name}_{part}")
        for line, metrics in zip(lines, state.history):
            record = json.loads(line)
            assert set(record.keys()) == expected_keys
            assert record["epoch"] == metrics.epoch
            assert record["l_gen"] == metrics.l_gen
            assert record["lab_j1"] == metrics.lab.j1


class TestDivergence:
    def test_generator_phase_reports_nan(self, micro_dataset):
        cfg = micro_config()
        state = init_state(micro_dataset, cfg)
        state.models.labnet.params()[0].value[0, 0] = np.nan
        batches = [np.arange(micro_dataset.n)]
        with np.errstate(invalid="ignore"):
            with pytest.raises(DivergenceError, match=r"epoch 0, phase lab, term"):
                generator_phase(state, micro_dataset, batches, "lab", cfg)

    def test_adversary_phase_reports_nan(self, micro_dataset):
        cfg = micro_config()
        state = init_state(micro_dataset, cfg)
        state.models.disc_img.params()[0].value[0, 0] = np.nan
        with pytest.raises(DivergenceError, match=r"phase adversary, term adv_v"):
            adversary_phase(state, micro_dataset, [np.arange(micro_dataset.n)], cfg)

    def test_train_names_epoch(self, micro_dataset):
        # Non-finite dataset values poison the very first phase of epoch 1.
        bad = synth_dataset(n=12, c=3, d_v=5, d_t=9, noise=0.1, seed=3)
        bad.images[0, 0] = np.inf
        with np.errstate(invalid="ignore"):
            with pytest.raises(DivergenceError, match=r"epoch 1"):
                train(bad, micro_config(t_max=1))
