import itertools
import math
import struct

import numpy as np
import pytest

from autodiff import Parameter
from model import DlclTransformer, ForwardContext, sequence_loss
from training import (
    BOS_ID,
    EOS_ID,
    Adam,
    AdamState,
    Batch,
    BeamConfig,
    Checkpoint,
    CheckpointError,
    NonFiniteGradient,
    SchedulerConfig,
    TaskKind,
    TaskSpec,
    TaskStream,
    TrainConfig,
    accumulate_gradients,
    adam_step,
    average_checkpoints,
    beam_search_decode,
    beta2_for,
    checkpoint_from_model,
    divergence_reason,
    generate_task_batch,
    greedy_decode,
    length_penalty,
    load_checkpoint,
    lr_at,
    restore_model,
    save_checkpoint,
    score,
    train_loop,
    transform_payload,
)

from .conftest import tiny_config

HASH = bytes(range(32))


# schedule

def test_schedule_peaks_exactly_at_warmup():
    cfg = SchedulerConfig(lr_max=7e-4, warmup=160, lr_init=1e-7)
    assert lr_at(160, cfg) == 7e-4
    assert lr_at(640, cfg) == 7e-4 / 2
    assert lr_at(1, cfg) == pytest.approx(1e-7 + (7e-4 - 1e-7) / 160)
    ramp = [lr_at(step, cfg) for step in range(1, 161)]
    assert ramp == sorted(ramp)


def test_schedule_rejects_bad_arguments():
    with pytest.raises(ValueError):
        lr_at(0, SchedulerConfig())
    with pytest.raises(ValueError):
        SchedulerConfig(warmup=0)
    with pytest.raises(ValueError):
        SchedulerConfig(lr_max=1e-3, lr_init=1e-3)


# optimizer

def test_beta2_follows_placement():
    assert beta2_for("post") == 0.98
    assert beta2_for("pre") == 0.997


def test_zero_gradient_is_a_fixpoint():
    p = Parameter("w", np.array([0.5, -2.0]))
    p.grad = np.zeros(2)
    state = AdamState()
    for _ in range(3):
        adam_step([p], state, 1e-3)
    np.testing.assert_array_equal(p.data, [0.5, -2.0])
    assert state.t == 3


def test_first_step_moves_by_lr_times_sign():
    p = Parameter("w", np.array([1.0, 1.0, 1.0]))
    p.grad = np.array([0.5, -3.0, 1e-2])
    grad = p.grad.copy()
    adam_step([p], AdamState(eps=1e-8), 0.1)
    np.testing.assert_allclose(p.data, 1.0 - 0.1 * grad / (np.abs(grad) + 1e-8), rtol=1e-12)


def test_identical_parameters_follow_identical_trajectories(rng):
    grads = rng.normal(size=(5, 3))
    first, second = Parameter("a", np.ones(3)), Parameter("b", np.ones(3))
    opt_a, opt_b = Adam([first], beta2=0.997), Adam([second], beta2=0.997)
    for g in grads:
        first.grad, second.grad = g.copy(), g.copy()
        opt_a.step(1e-2)
        opt_b.step(1e-2)
    np.testing.assert_array_equal(first.data, second.data)


def test_non_finite_gradient_aborts_before_any_update():
    good = Parameter("good", np.ones(2))
    bad = Parameter("bad", np.ones(2))
    good.grad = np.ones(2)
    bad.grad = np.array([1.0, np.inf])
    state = AdamState()
    with pytest.raises(NonFiniteGradient) as info:
        adam_step([good, bad], state, 0.1)
    assert info.value.names == ["bad"]
    np.testing.assert_array_equal(good.data, np.ones(2))
    assert state.t == 0 and state.m == {}


def test_frozen_parameters_are_not_updated():
    frozen = Parameter("encoder.dlcl.1.0", np.array([1.0]), trainable=False)
    frozen.grad = np.array([5.0])
    adam_step([frozen], AdamState(), 0.1)
    assert frozen.item() == 1.0


# gradient accumulation

def _grads(model):
    return {p.name: p.grad.copy() for p in model.parameters()}


def test_accumulation_matches_concatenated_batch(tiny_batch, other_batch):
    model = DlclTransformer(tiny_config(aggregation="learned"), seed=4)
    model.zero_grad()
    split = accumulate_gradients([tiny_batch, other_batch], model)
    split_grads = _grads(model)

    model.zero_grad()
    joined = accumulate_gradients([Batch.concat([tiny_batch, other_batch])], model)
    assert split.tokens == joined.tokens == tiny_batch.tokens + other_batch.tokens
    assert split.loss == pytest.approx(joined.loss, abs=1e-9)
    for name, grad in _grads(model).items():
        np.testing.assert_allclose(split_grads[name], grad, rtol=1e-9, atol=1e-12)


def test_single_micro_batch_matches_plain_loss(tiny_batch):
    model = DlclTransformer(tiny_config(), seed=0)
    model.zero_grad()
    step = accumulate_gradients([tiny_batch], model)
    loss = sequence_loss(model, tiny_batch.src, tiny_batch.tgt_in, tiny_batch.tgt_out, 0.1).loss.item()
    assert abs(step.loss - loss) <= 1e-9
    assert step.tokens == tiny_batch.tokens


def test_accumulation_needs_a_batch(tiny_cfg):
    with pytest.raises(ValueError):
        accumulate_gradients([], DlclTransformer(tiny_cfg))


# synthetic tasks

def test_payload_transforms():
    payload = [5, 3, 4]
    assert transform_payload(TaskKind.COPY, payload) == [5, 3, 4]
    assert transform_payload("reverse", payload) == [4, 3, 5]
    assert transform_payload("sort", payload) == [3, 4, 5]


def test_batches_frame_targets_and_avoid_special_ids():
    spec = TaskSpec(kind="reverse", vocab_size=12, min_len=3, max_len=6)
    batch = generate_task_batch(spec, 40, np.random.default_rng(0))
    assert batch.tokens >= 40
    assert (batch.tgt[:, 0] == BOS_ID).all()
    for src_row, tgt_row in zip(batch.src, batch.tgt):
        payload = [int(t) for t in src_row if t]
        assert 3 <= len(payload) <= 6
        assert min(payload) >= 3
        framed = [int(t) for t in tgt_row if t]
        assert framed == [BOS_ID] + payload[::-1] + [EOS_ID]


def test_task_stream_is_deterministic():
    spec = TaskSpec(vocab_size=10, seed=9)
    first = list(itertools.islice(TaskStream(spec, 20), 4))
    second = list(itertools.islice(TaskStream(spec, 20), 4))
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.src, b.src)
        np.testing.assert_array_equal(a.tgt, b.tgt)


def test_task_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(vocab_size=3)
    with pytest.raises(ValueError):
        TaskSpec(min_len=5, max_len=4)


# checkpoints

def test_checkpoint_round_trip_is_bit_identical(tmp_path, tiny_cfg, tiny_batch):
    model = DlclTransformer(tiny_cfg, seed=1)
    path = save_checkpoint(checkpoint_from_model(model, 42), tmp_path / "a.ckpt")
    loaded = load_checkpoint(path)
    assert loaded.step == 42
    raw = path.read_bytes()
    assert raw[:4] == b"DLCL"
    assert raw[6:38] == tiny_cfg.config_hash()
    assert struct.unpack_from("<Q", raw, 38)[0] == 42
    assert loaded.config_hash == tiny_cfg.config_hash()
    for name, array in model.state_dict().items():
        assert loaded.arrays[name].tobytes() == array.tobytes()
    again = save_checkpoint(loaded, tmp_path / "b.ckpt")
    assert again.read_bytes() == path.read_bytes()

    restored = DlclTransformer(tiny_cfg, seed=2)
    restore_model(restored, loaded)
    before = sequence_loss(model, tiny_batch.src, tiny_batch.tgt_in, tiny_batch.tgt_out).loss.item()
    after = sequence_loss(restored, tiny_batch.src, tiny_batch.tgt_in, tiny_batch.tgt_out).loss.item()
    assert before == after


def test_averaging_identical_checkpoints_is_identity(tmp_path, rng):
    arrays = {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}
    paths = [save_checkpoint(Checkpoint(step, HASH, arrays), tmp_path / f"{step}.ckpt") for step in (3, 7)]
    averaged = average_checkpoints(paths)
    assert averaged.step == 7
    for name, array in arrays.items():
        np.testing.assert_array_equal(averaged.arrays[name], array)


def test_averaging_opposite_checkpoints_gives_zeros(tmp_path, rng):
    w = rng.normal(size=(2, 2))
    plus = save_checkpoint(Checkpoint(1, HASH, {"w": w}), tmp_path / "plus.ckpt")
    minus = save_checkpoint(Checkpoint(2, HASH, {"w": -w}), tmp_path / "minus.ckpt")
    np.testing.assert_array_equal(average_checkpoints([plus, minus]).arrays["w"], np.zeros((2, 2)))


def test_averaging_rejects_mismatches(tmp_path):
    first = save_checkpoint(Checkpoint(1, HASH, {"w": np.ones(2)}), tmp_path / "first.ckpt")
    other_hash = save_checkpoint(Checkpoint(1, bytes(32), {"w": np.ones(2)}), tmp_path / "hash.ckpt")
    other_names = save_checkpoint(Checkpoint(1, HASH, {"v": np.ones(2)}), tmp_path / "names.ckpt")
    with pytest.raises(CheckpointError):
        average_checkpoints([first, other_hash])
    with pytest.raises(CheckpointError):
        average_checkpoints([first, other_names])
    with pytest.raises(CheckpointError):
        average_checkpoints([])


def test_restore_checks_hash_and_names(tiny_cfg):
    model = DlclTransformer(tiny_cfg)
    with pytest.raises(CheckpointError):
        restore_model(model, Checkpoint(0, bytes(32), model.state_dict()))
    state = model.state_dict()
    state.pop("decoder.projection.bias")
    with pytest.raises(CheckpointError):
        restore_model(model, Checkpoint(0, tiny_cfg.config_hash(), state))


def test_corrupt_files_are_rejected(tmp_path):
    path = save_checkpoint(Checkpoint(5, HASH, {"w": np.arange(4.0)}), tmp_path / "w.ckpt")
    raw = path.read_bytes()
    truncated = tmp_path / "truncated.ckpt"
    truncated.write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(truncated)
    header_only = tmp_path / "header.ckpt"
    header_only.write_bytes(raw[:20])
    with pytest.raises(CheckpointError):
        load_checkpoint(header_only)
    foreign = tmp_path / "foreign.ckpt"
    foreign.write_bytes(b"PK\x03\x04" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(foreign)
    trailing = tmp_path / "trailing.ckpt"
    trailing.write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(trailing)


# decoding

class PrefixOracle:
    """Three-token model (0, 1, eos=2) whose next-token distribution depends only on the prefix"""

    TABLE = {
        (): (0.6, 0.35, 0.05),
        (0,): (0.1, 0.1, 0.8),
        (1,): (0.05, 0.05, 0.9),
    }
    LATER = (0.3, 0.3, 0.4)

    def encode(self, src_ids):
        return None

    def next_log_probs(self, memory, prefix):
        generated = tuple(prefix[1:])
        return np.log(np.array(self.TABLE.get(generated, self.LATER)))


def _brute_force(model, cfg):
    """Score every sequence reachable within max_len and return the best tokens"""
    best = None
    for length in range(1, cfg.max_len + 1):
        for body in itertools.product((0, 1), repeat=length - 1):
            for last in (0, 1, EOS_ID):
                tokens = body + (last,)
                log_prob = sum(
                    float(model.next_log_probs(None, (BOS_ID,) + tokens[:i])[t]) for i, t in enumerate(tokens)
                )
                if last != EOS_ID:
                    if length < cfg.max_len:
                        continue
                    tokens = tokens + (EOS_ID,)
                key = (-score(log_prob, length, cfg.alpha), length, tokens)
                best = key if best is None or key < best else best
    return best[2]


def _oracle_cfg(**kwargs):
    return BeamConfig(bos_id=BOS_ID, eos_id=EOS_ID, **kwargs)


@pytest.mark.parametrize("alpha", [0.0, 0.6])
def test_beam_search_matches_brute_force(alpha):
    cfg = _oracle_cfg(beam_size=4, alpha=alpha, max_len=3)
    oracle = PrefixOracle()
    best = beam_search_decode(oracle, [3], cfg)
    assert best.tokens == _brute_force(oracle, cfg) == (0, EOS_ID)
    assert best.log_prob == pytest.approx(math.log(0.48))
    assert best.payload == [0]


def test_beam_of_one_equals_greedy():
    cfg = _oracle_cfg(beam_size=1, alpha=0.6, max_len=3)
    assert beam_search_decode(PrefixOracle(), [3], cfg).tokens == greedy_decode(PrefixOracle(), [3], cfg).tokens


def test_beam_of_one_equals_greedy_on_a_model(tiny_cfg):
    model = DlclTransformer(tiny_cfg, seed=3)
    cfg = BeamConfig(beam_size=1, alpha=0.6, max_len=6)
    for src in ([3, 4, 5], [9], [6, 6, 7, 8]):
        assert beam_search_decode(model, src, cfg).tokens == greedy_decode(model, src, cfg).tokens


def test_forced_finish_appends_unscored_eos():
    cfg = _oracle_cfg(beam_size=2, alpha=0.0, max_len=1)
    hyp = greedy_decode(PrefixOracle(), [3], cfg)
    assert hyp.forced
    assert hyp.tokens == (0, EOS_ID)
    assert hyp.log_prob == pytest.approx(math.log(0.6))
    beam = beam_search_decode(PrefixOracle(), [3], cfg)
    assert beam.tokens == (0, EOS_ID) and beam.forced


def test_length_penalty():
    assert length_penalty(1, 0.6) == 1.0
    assert length_penalty(7, 1.0) == 2.0
    assert score(-1.2, 4, 0.0) == -1.2


def test_beam_config_validation():
    with pytest.raises(ValueError):
        BeamConfig(beam_size=0)
    with pytest.raises(ValueError):
        BeamConfig(max_len=0)


# training loop

def _loop(tmp_path, steps, **train_overrides):
    """Tiny run on a one-symbol copy task, so every batch is identical"""
    model = DlclTransformer(tiny_config(src_vocab=4, tgt_vocab=4, aggregation="learned"), seed=0)
    task = TaskSpec(vocab_size=4, min_len=3, max_len=3, seed=0)
    sched = SchedulerConfig(lr_max=1e-3, warmup=4, lr_init=1e-7)
    values = dict(steps=steps, batch_tokens=8, checkpoint_every=1, keep_checkpoints=5, log_every=1)
    values.update(train_overrides)
    return model, train_loop(model, task, sched, Adam(model.parameters()), TrainConfig(**values), tmp_path)


def test_zero_steps_keeps_only_the_initial_checkpoint(tmp_path):
    model, result = _loop(tmp_path, 0)
    assert result.metrics == []
    assert result.average_path is None
    assert sorted(p.name for p in tmp_path.iterdir()) == ["checkpoint_000000.ckpt", "metrics.csv"]
    assert (tmp_path / "metrics.csv").read_text().strip() == "step,loss,token_acc,lr,grad_norm"
    np.testing.assert_array_equal(
        load_checkpoint(tmp_path / "checkpoint_000000.ckpt").arrays["encoder.embedding.table"],
        model.encoder.embedding.table.data,
    )


def test_training_is_deterministic(tmp_path):
    _, first = _loop(tmp_path / "a", 3)
    _, second = _loop(tmp_path / "b", 3)
    assert [m.loss for m in first.metrics] == [m.loss for m in second.metrics]
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert first.average_path.read_bytes() == second.average_path.read_bytes()


def test_checkpoint_retention_and_average(tmp_path):
    _, result = _loop(tmp_path, 4, keep_checkpoints=2)
    assert not result.diverged
    assert [p.name for p in result.checkpoints] == ["checkpoint_000003.ckpt", "checkpoint_000004.ckpt"]
    names = sorted(p.name for p in tmp_path.glob("*.ckpt"))
    assert names == ["average.ckpt", "checkpoint_000003.ckpt", "checkpoint_000004.ckpt"]
    assert load_checkpoint(result.average_path).step == 4
    assert result.metrics[-1].loss < result.metrics[0].loss


def test_dropout_rates_apply_only_in_training():
    ctx = ForwardContext(training=True, rng=np.random.default_rng(1))
    assert ctx.rate(0.1) == 0.1
    assert ForwardContext().rate(0.1) == 0.0


def test_divergence_rule():
    assert divergence_reason([float("nan")], 10).startswith("non-finite")
    assert divergence_reason([2.0], 10) is None
    assert divergence_reason([2.0, 1.5], 10) is None
    assert divergence_reason([2.0, 3.0], 10) is not None
    # before 20% of the run only non-finite losses count
    assert divergence_reason([2.0, 3.0], 100) is None
    assert divergence_reason([2.0] + [1.0] * 18 + [2.5], 100) is None


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(steps=-1)
    with pytest.raises(ValueError):
        TrainConfig(accumulation=0)


@pytest.mark.slow
def test_deep_prenorm_dlcl_learns_the_copy_task(tmp_path):
    from config import load_run_config

    run = load_run_config("dlcl-prenorm-12L", None, {}, env={})
    model = DlclTransformer(run.model, seed=run.train.seed)
    result = train_loop(
        model, run.task, run.scheduler, Adam(model.parameters(), beta2=run.beta2), run.train, tmp_path
    )
    assert not result.diverged, result.reason
    assert result.final.token_acc >= 0.99
